#pragma once

// Prompt templates for reduction, full-option, pairwise and contrastive
// pairwise queries. The canonical plain-text renderings are frozen as golden
// files under tests/fixtures/golden; those files are the byte-level authority.

#include <array>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "manyopt/error.hpp"
#include "manyopt/query.hpp"
#include "manyopt/text.hpp"

namespace manyopt::prompt {

enum class TemplateId {
  reduce_standard,
  zs,
  zs_cot,
  fs,
  fs_cot,
  fs_cot_explain_gen,
  pair_zs,
  pair_zs_cot,
  pair_fs,
  pair_fs_cot,
  pcc_instruction,
  pcc_similarity,
  pcc_difference,
  pcc_decide,
};

inline constexpr std::array<TemplateId, 14> kAllTemplates = {
    TemplateId::reduce_standard, TemplateId::zs,           TemplateId::zs_cot,
    TemplateId::fs,              TemplateId::fs_cot,       TemplateId::fs_cot_explain_gen,
    TemplateId::pair_zs,         TemplateId::pair_zs_cot,  TemplateId::pair_fs,
    TemplateId::pair_fs_cot,     TemplateId::pcc_instruction, TemplateId::pcc_similarity,
    TemplateId::pcc_difference,  TemplateId::pcc_decide,
};

inline std::string_view name(TemplateId id) {
  switch (id) {
    case TemplateId::reduce_standard: return "reduce_standard";
    case TemplateId::zs: return "zs";
    case TemplateId::zs_cot: return "zs_cot";
    case TemplateId::fs: return "fs";
    case TemplateId::fs_cot: return "fs_cot";
    case TemplateId::fs_cot_explain_gen: return "fs_cot_explain_gen";
    case TemplateId::pair_zs: return "pair_zs";
    case TemplateId::pair_zs_cot: return "pair_zs_cot";
    case TemplateId::pair_fs: return "pair_fs";
    case TemplateId::pair_fs_cot: return "pair_fs_cot";
    case TemplateId::pcc_instruction: return "pcc_instruction";
    case TemplateId::pcc_similarity: return "pcc_similarity";
    case TemplateId::pcc_difference: return "pcc_difference";
    case TemplateId::pcc_decide: return "pcc_decide";
  }
  return "?";
}

/// Template bodies. {demonstrations} expands to the formatted exemplar block.
inline std::string_view body(TemplateId id) {
  switch (id) {
    case TemplateId::reduce_standard:
      return "Consider the sentence: \"{text}\"\n"
             "Please select {top_k} most possible topic from following OPTIONS: {options} .\n"
             "CHOICE:";
    case TemplateId::zs:
      return "Given the sentence: \"{text}\"\n"
             "Please select the most possible topic from the following OPTIONS: {options}\n"
             "CHOICE: ";
    case TemplateId::zs_cot:
      return "Given the sentence: \"{text}\"\n"
             "Please select the most possible topic from the following OPTIONS: {options}\n"
             "Let's think step by step and give your explanation to verify your answer: ";
    case TemplateId::fs:
      return "Below is a text classification problem, Note that you can only select the label "
             "in {options}\n"
             "{demonstrations}"
             "SENTENCE: {text}\n"
             "LABEL:";
    case TemplateId::fs_cot:
      return "Below is a text classification problem, Note that you can only select the label "
             "in {options}. Let's think step by step and give your explanation to verify the "
             "answer.\n"
             "{demonstrations}"
             "SENTENCE: {text}\n"
             "EXPLANATION:";
    case TemplateId::fs_cot_explain_gen:
      return "Below is a text classification problem. Let's think step by step and give your "
             "explanation to verify the SENTENCE label:\n"
             "SENTENCE: Fears for T N pension after talks Unions representing workers at Turner "
             "Newall say they are 'disappointed' after talks with stricken parent firm Federal "
             "Mogul.\n"
             "LABEL: Business \n"
             "EXPLANATION: The statement discusses talks between unions and a parent firm, which "
             "relates to business-related negotiations and concerns regarding pensions. \n"
             "\n"
             "SENTENCE: {text}\n"
             "LABEL: {label}\n"
             "EXPLANATION:";
    case TemplateId::pair_zs:
      return "Which term is more likely to represent the topic of \"{text}\" - \"{label1}\" or "
             "\"{label2}\"? ";
    case TemplateId::pair_zs_cot:
      return "Which term is more likely to represent the topic of  \"{text}\" - \"{label1}\" or "
             "\"{label2}\"? \n"
             "Let's think step by step and give your explanation to verify your answer: ";
    case TemplateId::pair_fs:
      return "Below is a text classification problem, please complete the sentence by "
             "\"{label1}\" or \"{label2}\":\n"
             "{demonstrations}"
             "SENTENCE: {text}\n"
             "LABEL:";
    case TemplateId::pair_fs_cot:
      return "Below is a text classification problem. Let's think step by step and give your "
             "explanation to verify which term is more likely to represent the label of the "
             "sentence - \"{label1}\" or \"{label2}\":\n"
             "{demonstrations}"
             "SENTENCE: {text}\n"
             "EXPLANATION:";
    case TemplateId::pcc_instruction:
      return "Below is a text classification problem:\n"
             "{demonstrations}";
    case TemplateId::pcc_similarity:
      return "The phrases can often be mistaken for \"{label1}\" and \"{label2}\", due to "
             "certain shared characteristics.\n"
             "SHARED ASPECTS: ";
    case TemplateId::pcc_difference:
      return "Next, diligently contrast the deviations between these two topics, putting aside "
             "the mentioned shared characteristics. Concisely explain, what is the key element "
             "that sets them apart? \n"
             "CONTRASTING POINTS: ";
    case TemplateId::pcc_decide:
      return "After scrutinizing the presented SHARED ASPECTS and CONTRASTING POINTS, which term "
             "- \"{label1}\" or \"{label2}\" - would be a more accurate representation for the "
             "label of {text}? Provide the final label in the format \"LABEL: a\". ";
  }
  return {};
}

/// Single-pass substitution; substituted values are never rescanned.
inline std::string substitute(std::string_view tmpl,
                              const std::map<std::string, std::string, std::less<>>& values) {
  std::string out;
  out.reserve(tmpl.size() + 256);
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      auto close = tmpl.find('}', i);
      if (close != std::string_view::npos) {
        auto key = tmpl.substr(i + 1, close - i - 1);
        auto it = values.find(key);
        if (it == values.end())
          throw ValidationError("missing value for placeholder {" + std::string(key) + "}");
        out += it->second;
        i = close + 1;
        continue;
      }
    }
    out += tmpl[i++];
  }
  return out;
}

enum class DemoStyle { blocks, blocks_cot, compact };

/// blocks:     "SENTENCE: t\nLABEL: l\n\n" per exemplar
/// blocks_cot: "SENTENCE: t\nEXPLANATION: e\nLABEL: l\n\n" per exemplar
/// compact:    "SENTENCE: t\nLABEL: l" lines joined by "\n"; exemplars of the
///             second pair label use "SENTENCE:" with no space.
inline std::string format_demonstrations(const std::vector<Exemplar>& demos, DemoStyle style,
                                         std::string_view second_label = {}) {
  std::string out;
  for (std::size_t i = 0; i < demos.size(); ++i) {
    const auto& d = demos[i];
    switch (style) {
      case DemoStyle::blocks:
        out += "SENTENCE: " + d.text + "\nLABEL: " + d.label + "\n\n";
        break;
      case DemoStyle::blocks_cot:
        if (!d.explanation)
          throw ValidationError("missing value for placeholder {explain" + std::to_string(i + 1) +
                                "}");
        out += "SENTENCE: " + d.text + "\nEXPLANATION: " + *d.explanation + "\nLABEL: " +
               d.label + "\n\n";
        break;
      case DemoStyle::compact:
        if (i) out += '\n';
        out += (!second_label.empty() && d.label == second_label) ? "SENTENCE:" : "SENTENCE: ";
        out += d.text + "\nLABEL: " + d.label;
        break;
    }
  }
  return out;
}

/// Template used for the user turn a query ends with.
inline TemplateId template_for(const ModelQuery& q) {
  const bool few_shot = q.demonstrations.has_value();
  switch (q.kind) {
    case QueryKind::reduce_topk: return TemplateId::reduce_standard;
    case QueryKind::full_choice:
      if (few_shot) return q.cot ? TemplateId::fs_cot : TemplateId::fs;
      return q.cot ? TemplateId::zs_cot : TemplateId::zs;
    case QueryKind::pairwise_choice:
      if (few_shot) return q.cot ? TemplateId::pair_fs_cot : TemplateId::pair_fs;
      return q.cot ? TemplateId::pair_zs_cot : TemplateId::pair_zs;
    case QueryKind::similarity_analysis: return TemplateId::pcc_similarity;
    case QueryKind::difference_analysis: return TemplateId::pcc_difference;
    case QueryKind::pairwise_decide: return TemplateId::pcc_decide;
    case QueryKind::explanation_gen: return TemplateId::fs_cot_explain_gen;
  }
  throw ValidationError("unmapped query kind");
}

namespace detail {

inline const std::vector<Exemplar>& demos_of(const ModelQuery& q) {
  static const std::vector<Exemplar> kNone;
  return q.demonstrations ? *q.demonstrations : kNone;
}

inline void require_pair(TemplateId id, const ModelQuery& q) {
  if (q.options.size() != 2)
    throw ValidationError(std::string(name(id)) + ": pairwise template needs exactly 2 options, got " +
                          std::to_string(q.options.size()));
}

}  // namespace detail

/// Renders one template body from the fields of `q`.
inline std::string render_template(TemplateId id, const ModelQuery& q) {
  std::map<std::string, std::string, std::less<>> v;
  v["text"] = q.text;
  switch (id) {
    case TemplateId::reduce_standard:
      if (!q.top_k) throw ValidationError("missing value for placeholder {top_k}");
      v["top_k"] = std::to_string(*q.top_k);
      v["options"] = text::join(q.options, ", ");
      break;
    case TemplateId::zs:
    case TemplateId::zs_cot:
      v["options"] = text::join(q.options, ", ");
      break;
    case TemplateId::fs:
      v["options"] = text::join(q.options, ", ");
      v["demonstrations"] = format_demonstrations(detail::demos_of(q), DemoStyle::blocks);
      break;
    case TemplateId::fs_cot:
      v["options"] = text::join(q.options, ", ");
      v["demonstrations"] = format_demonstrations(detail::demos_of(q), DemoStyle::blocks_cot);
      break;
    case TemplateId::fs_cot_explain_gen:
      if (q.options.empty()) throw ValidationError("missing value for placeholder {label}");
      v["label"] = q.options.front();
      break;
    case TemplateId::pair_zs:
    case TemplateId::pair_zs_cot:
    case TemplateId::pcc_similarity:
    case TemplateId::pcc_decide:
      detail::require_pair(id, q);
      v["label1"] = q.options[0];
      v["label2"] = q.options[1];
      break;
    case TemplateId::pair_fs:
      detail::require_pair(id, q);
      v["label1"] = q.options[0];
      v["label2"] = q.options[1];
      v["demonstrations"] = format_demonstrations(detail::demos_of(q), DemoStyle::blocks);
      break;
    case TemplateId::pair_fs_cot:
      detail::require_pair(id, q);
      v["label1"] = q.options[0];
      v["label2"] = q.options[1];
      v["demonstrations"] = format_demonstrations(detail::demos_of(q), DemoStyle::blocks_cot);
      break;
    case TemplateId::pcc_instruction:
      detail::require_pair(id, q);
      v["demonstrations"] =
          format_demonstrations(detail::demos_of(q), DemoStyle::compact, q.options[1]);
      break;
    case TemplateId::pcc_difference:
      break;
  }
  return substitute(body(id), v);
}

struct ChatMessage {
  std::string role;  // "user" or "assistant"
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

namespace detail {

inline std::vector<ChatMessage> render_messages_unbudgeted(const ModelQuery& q) {
  switch (q.kind) {
    case QueryKind::similarity_analysis:
    case QueryKind::difference_analysis:
    case QueryKind::pairwise_decide: {
      std::vector<ChatMessage> msgs;
      msgs.push_back({"user", render_template(TemplateId::pcc_instruction, q) + "\n" +
                                  render_template(TemplateId::pcc_similarity, q)});
      if (q.kind == QueryKind::similarity_analysis) return msgs;
      if (q.thoughts.empty())
        throw ValidationError("difference analysis needs the similarity analysis reply");
      msgs.push_back({"assistant", q.thoughts[0]});
      msgs.push_back({"user", render_template(TemplateId::pcc_difference, q)});
      if (q.kind == QueryKind::difference_analysis) return msgs;
      if (q.thoughts.size() < 2)
        throw ValidationError("decision needs the difference analysis reply");
      msgs.push_back({"assistant", q.thoughts[1]});
      msgs.push_back({"user", render_template(TemplateId::pcc_decide, q)});
      return msgs;
    }
    default:
      return {{"user", render_template(template_for(q), q)}};
  }
}

inline std::size_t total_chars(const std::vector<ChatMessage>& msgs) {
  std::size_t n = 0;
  for (const auto& m : msgs) n += m.content.size();
  return n;
}

}  // namespace detail

/// Chat turns for `q`. Contrastive pairwise kinds render as a running
/// transcript: instruction + similarity, then each prior reply followed by
/// the next prompt. With a character budget, whole exemplars are dropped
/// from the end until the prompt fits.
inline std::vector<ChatMessage> render_messages(const ModelQuery& q) {
  auto msgs = detail::render_messages_unbudgeted(q);
  if (!q.prompt_budget_chars || !q.demonstrations) return msgs;
  ModelQuery trimmed = q;
  while (detail::total_chars(msgs) > *q.prompt_budget_chars && !trimmed.demonstrations->empty()) {
    trimmed.demonstrations->pop_back();
    msgs = detail::render_messages_unbudgeted(trimmed);
  }
  return msgs;
}

/// Flattened prompt text: turn contents joined by a blank line.
inline std::string render(const ModelQuery& q) {
  validate(q);
  auto msgs = render_messages(q);
  std::string out;
  for (std::size_t i = 0; i < msgs.size(); ++i) {
    if (i) out += "\n\n";
    out += msgs[i].content;
  }
  return out;
}

}  // namespace manyopt::prompt
