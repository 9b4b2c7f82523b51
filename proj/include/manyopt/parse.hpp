#pragma once

// Extracting label choices from free-form model replies.

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "manyopt/core.hpp"
#include "manyopt/text.hpp"

namespace manyopt {

namespace detail {

struct Mention {
  std::size_t begin;  // in match-form coordinates, excluding the padding space
  std::size_t end;
  std::size_t candidate;
};

/// Non-overlapping candidate mentions, longest match first, sorted by
/// position. Candidates that normalize identically are treated as the first
/// of them.
inline std::vector<Mention> find_mentions(const std::string& haystack_form,
                                          const std::vector<LabelId>& candidates) {
  std::vector<Mention> all;
  std::vector<std::string> forms;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    auto f = text::match_form(candidates[c]);
    if (f.size() <= 2 || std::find(forms.begin(), forms.end(), f) != forms.end()) {
      forms.push_back(f);
      continue;
    }
    forms.push_back(f);
    for (auto pos = haystack_form.find(f); pos != std::string::npos;
         pos = haystack_form.find(f, pos + 1))
      all.push_back({pos + 1, pos + f.size() - 1, c});
  }
  std::stable_sort(all.begin(), all.end(), [](const Mention& a, const Mention& b) {
    return (a.end - a.begin) > (b.end - b.begin);
  });
  std::vector<Mention> kept;
  for (const auto& m : all) {
    bool clash = std::any_of(kept.begin(), kept.end(), [&](const Mention& k) {
      return m.begin < k.end && k.begin < m.end;
    });
    if (!clash) kept.push_back(m);
  }
  std::sort(kept.begin(), kept.end(),
            [](const Mention& a, const Mention& b) { return a.begin < b.begin; });
  return kept;
}

}  // namespace detail

/// Candidates mentioned in `reply`, in first-occurrence order, truncated to
/// k. Matching ignores case and punctuation; overlapping mentions resolve to
/// the longest candidate. Empty when nothing matches.
inline std::vector<LabelId> parse_topk_reply(const std::string& reply,
                                             const std::vector<LabelId>& candidates,
                                             std::size_t k) {
  std::vector<LabelId> out;
  for (const auto& m : detail::find_mentions(text::match_form(reply), candidates)) {
    const auto& label = candidates[m.candidate];
    if (std::find(out.begin(), out.end(), label) == out.end()) out.push_back(label);
    if (out.size() == k) break;
  }
  return out;
}

/// Single label choice. The text after the last "LABEL:" marker wins when it
/// names a candidate; otherwise the last candidate mentioned anywhere.
/// nullopt when no candidate is mentioned.
inline std::optional<LabelId> parse_label_choice(const std::string& reply,
                                                 const std::vector<LabelId>& candidates) {
  const auto lower = text::to_lower(reply);
  if (auto marker = lower.rfind("label:"); marker != std::string::npos) {
    auto tail = detail::find_mentions(text::match_form(reply.substr(marker + 6)), candidates);
    if (!tail.empty()) return candidates[tail.front().candidate];
  }
  auto all = detail::find_mentions(text::match_form(reply), candidates);
  if (all.empty()) return std::nullopt;
  return candidates[all.back().candidate];
}

}  // namespace manyopt
