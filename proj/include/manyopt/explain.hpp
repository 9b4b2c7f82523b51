#pragma once

#include <string>
#include <vector>

#include "manyopt/core.hpp"
#include "manyopt/gateway.hpp"

namespace manyopt {

struct ExplanationReport {
  std::size_t annotated = 0;
  std::size_t calls = 0;
  std::vector<std::string> failures;
};

/// Annotates every exemplar lacking an explanation through the explanation
/// generation prompt, conditioned on the exemplar's gold label. Exemplars
/// that already carry one are skipped; backend failures leave the exemplar
/// unannotated and are reported.
inline ExplanationReport generate_explanations(DemonstrationStore& store, Gateway& gw,
                                               int max_tokens = 512) {
  ExplanationReport rep;
  for (auto& [label, list] : store.all()) {
    for (auto& ex : list) {
      if (ex.explanation) continue;
      ModelQuery q;
      q.kind = QueryKind::explanation_gen;
      q.text = ex.text;
      q.options = {ex.label};
      q.decoding.max_tokens = max_tokens;
      ++rep.calls;
      try {
        ex.explanation = std::string(text::trim(gw.complete(q).text));
        ++rep.annotated;
      } catch (const std::exception& e) {
        rep.failures.push_back(label + ": \"" + ex.text + "\": " + e.what());
      }
    }
  }
  return rep;
}

}  // namespace manyopt
