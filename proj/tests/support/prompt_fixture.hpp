#pragma once

// Canonical fixture query for the golden-file prompt checks.

#include "manyopt/prompt.hpp"

namespace manyopt::testkit {

inline ModelQuery canonical_query(prompt::TemplateId id) {
  using prompt::TemplateId;
  ModelQuery q;
  q.text = "So I just put my top-up into the card and it hasn't changed.";
  q.options = {"pending_top_up", "top_up_failed", "topping_up_by_card", "card_not_working",
               "balance_not_updated_after_bank_transfer"};
  const Exemplar pending{"I topped up but it isn't in my account", "pending_top_up",
                         "The statement is about a user's concern regarding a top-up that has not "
                         "been reflected in their account, which is related to a pending "
                         "transaction or issue with their account balance."};
  const Exemplar failed{"Why has my top up failed?", "top_up_failed",
                        "The statement directly mentions a failed top-up, indicating that there "
                        "was an issue with adding additional funds or credits to something."};
  const Exemplar failed2{"My top-up didn't go through", "top_up_failed", std::nullopt};
  const Exemplar pending2{"why isn't my top-up going through?", "pending_top_up", std::nullopt};

  switch (id) {
    case TemplateId::reduce_standard:
      q.kind = QueryKind::reduce_topk;
      q.top_k = 5;
      break;
    case TemplateId::zs:
      q.kind = QueryKind::full_choice;
      break;
    case TemplateId::zs_cot:
      q.kind = QueryKind::full_choice;
      q.cot = true;
      break;
    case TemplateId::fs:
      q.kind = QueryKind::full_choice;
      q.demonstrations = std::vector<Exemplar>{pending, failed};
      break;
    case TemplateId::fs_cot:
      q.kind = QueryKind::full_choice;
      q.cot = true;
      q.demonstrations = std::vector<Exemplar>{pending, failed};
      break;
    case TemplateId::fs_cot_explain_gen:
      q.kind = QueryKind::explanation_gen;
      q.text = "I topped up but it isn't in my account";
      q.options = {"pending_top_up"};
      break;
    case TemplateId::pair_zs:
    case TemplateId::pair_zs_cot:
    case TemplateId::pair_fs:
    case TemplateId::pair_fs_cot:
      q.kind = QueryKind::pairwise_choice;
      q.options = {"top_up_failed", "pending_top_up"};
      q.cot = id == TemplateId::pair_zs_cot || id == TemplateId::pair_fs_cot;
      if (id == TemplateId::pair_fs || id == TemplateId::pair_fs_cot)
        q.demonstrations = std::vector<Exemplar>{failed, pending};
      break;
    case TemplateId::pcc_instruction:
    case TemplateId::pcc_similarity:
    case TemplateId::pcc_difference:
    case TemplateId::pcc_decide:
      q.kind = id == TemplateId::pcc_instruction || id == TemplateId::pcc_similarity
                   ? QueryKind::similarity_analysis
               : id == TemplateId::pcc_difference ? QueryKind::difference_analysis
                                                  : QueryKind::pairwise_decide;
      q.options = {"top_up_failed", "pending_top_up"};
      q.cot = true;
      q.demonstrations = std::vector<Exemplar>{failed2, pending2};
      if (q.kind != QueryKind::similarity_analysis)
        q.thoughts.push_back("- Mention of \"top-up\" or \"top up\"");
      if (q.kind == QueryKind::pairwise_decide)
        q.thoughts.push_back("The key element that sets them apart is the specific focus.");
      break;
  }
  return q;
}

}  // namespace manyopt::testkit
