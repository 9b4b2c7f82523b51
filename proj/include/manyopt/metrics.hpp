#pragma once

// Accuracy, HIT@K, confusion matrices, token-bias ratios, prediction
// margins and call accounting.

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "manyopt/core.hpp"
#include "manyopt/error.hpp"

namespace manyopt {

using Prediction = std::optional<LabelId>;  // nullopt = abstain

inline double accuracy(const std::vector<Prediction>& predictions, const std::vector<LabelId>& golds) {
  if (predictions.size() != golds.size())
    throw ValidationError("accuracy: " + std::to_string(predictions.size()) + " predictions for " +
                          std::to_string(golds.size()) + " golds");
  if (golds.empty()) throw ValidationError("accuracy: no instances");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < golds.size(); ++i)
    if (predictions[i] && *predictions[i] == golds[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(golds.size());
}

inline double hit_at_k(const std::vector<std::vector<LabelId>>& reduced_sets,
                       const std::vector<LabelId>& golds, std::size_t k) {
  if (reduced_sets.size() != golds.size())
    throw ValidationError("hit_at_k: " + std::to_string(reduced_sets.size()) + " sets for " +
                          std::to_string(golds.size()) + " golds");
  if (golds.empty()) throw ValidationError("hit_at_k: no instances");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < golds.size(); ++i) {
    if (reduced_sets[i].size() > k)
      throw ValidationError("hit_at_k: reduced set larger than k=" + std::to_string(k));
    if (std::find(reduced_sets[i].begin(), reduced_sets[i].end(), golds[i]) != reduced_sets[i].end())
      ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(golds.size());
}

/// counts[gold][predicted] in catalog order; the extra last column counts
/// abstentions.
struct ConfusionMatrix {
  std::vector<LabelId> labels;
  std::vector<std::vector<std::size_t>> counts;

  std::size_t abstain_column() const { return labels.size(); }

  std::size_t row_sum(std::size_t g) const {
    std::size_t s = 0;
    for (auto c : counts[g]) s += c;
    return s;
  }

  std::size_t column_sum(std::size_t p) const {
    std::size_t s = 0;
    for (const auto& row : counts) s += row[p];
    return s;
  }

  std::size_t total() const {
    std::size_t s = 0;
    for (std::size_t g = 0; g < counts.size(); ++g) s += row_sum(g);
    return s;
  }
};

inline ConfusionMatrix confusion(const std::vector<Prediction>& predictions,
                                 const std::vector<LabelId>& golds, const LabelCatalog& catalog) {
  if (predictions.size() != golds.size())
    throw ValidationError("confusion: predictions and golds differ in length");
  ConfusionMatrix cm;
  cm.labels = catalog.labels();
  cm.counts.assign(catalog.size(), std::vector<std::size_t>(catalog.size() + 1, 0));
  for (std::size_t i = 0; i < golds.size(); ++i) {
    const auto g = catalog.index_of(golds[i]);
    if (!predictions[i]) {
      ++cm.counts[g][cm.abstain_column()];
      continue;
    }
    if (!catalog.contains(*predictions[i]))
      throw ValidationError("confusion: predicted label not in catalog: " + *predictions[i]);
    ++cm.counts[g][catalog.index_of(*predictions[i])];
  }
  return cm;
}

struct TokenBiasEntry {
  LabelId label;
  std::size_t predicted = 0;
  std::size_t gold = 0;
  double ratio = 0.0;  // +inf when gold == 0 and predicted > 0
  bool infinite = false;
};

/// ratio = predicted marginal / gold marginal, sorted by ratio descending
/// (ties in catalog order).
inline std::vector<TokenBiasEntry> token_bias_scores(const ConfusionMatrix& cm) {
  if (cm.labels.empty() || cm.total() == 0) throw ValidationError("token_bias_scores: empty matrix");
  std::vector<TokenBiasEntry> out;
  for (std::size_t l = 0; l < cm.labels.size(); ++l) {
    TokenBiasEntry e;
    e.label = cm.labels[l];
    e.predicted = cm.column_sum(l);
    e.gold = cm.row_sum(l);
    if (e.gold == 0) {
      e.infinite = e.predicted > 0;
      e.ratio = e.infinite ? std::numeric_limits<double>::infinity() : 0.0;
    } else {
      e.ratio = static_cast<double>(e.predicted) / static_cast<double>(e.gold);
    }
    out.push_back(e);
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const TokenBiasEntry& a, const TokenBiasEntry& b) { return a.ratio > b.ratio; });
  return out;
}

/// Largest minus second-largest probability, floored at 0.
inline double prediction_margin(const std::vector<double>& probs) {
  if (probs.empty()) throw ValidationError("margin: empty probability vector");
  double sum = 0.0;
  for (double p : probs) {
    if (p < 0.0) throw ValidationError("margin: negative probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw ValidationError("margin: probabilities do not sum to 1");
  if (probs.size() == 1) return 1.0;
  double first = -1.0, second = -1.0;
  for (double p : probs) {
    if (p > first) {
      second = first;
      first = p;
    } else if (p > second) {
      second = p;
    }
  }
  return std::max(0.0, first - second);
}

struct MarginRecord {
  std::size_t index = 0;
  std::string text;
  std::optional<LabelId> label;
  std::vector<double> probs;
  double margin = 0.0;
};

/// Lowest-margin prefix of size `count`; stable for ties. Clamps with a
/// warning when more are requested than exist.
inline std::vector<MarginRecord> challenge_sample(std::vector<MarginRecord> records, std::size_t count) {
  if (count > records.size()) {
    std::cerr << "warning: requested " << count << " challenge items, only " << records.size()
              << " available\n";
    count = records.size();
  }
  std::stable_sort(records.begin(), records.end(),
                   [](const MarginRecord& a, const MarginRecord& b) { return a.margin < b.margin; });
  records.resize(count);
  return records;
}

inline std::size_t challenge_count_for_fraction(std::size_t total, double fraction) {
  if (fraction < 0.0 || fraction > 1.0) throw ValidationError("challenge fraction outside [0,1]");
  return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(total)));
}

struct Summary {
  double mean = 0.0;
  double stddev = 0.0;  // sample (n-1); 0 for a single value
  std::size_t n = 0;
};

inline Summary summarize(const std::vector<double>& values) {
  if (values.empty()) throw ValidationError("summary of no values");
  Summary s;
  s.n = values.size();
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(s.n);
  if (s.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(s.n - 1));
  }
  return s;
}

/// Standard error of a binomial proportion.
inline double binomial_se(double p, std::size_t n) {
  return n == 0 ? 0.0 : std::sqrt(p * (1.0 - p) / static_cast<double>(n));
}

struct CallRecord {
  std::string method;
  std::size_t calls = 0;
  double latency_ms = 0.0;  // summed over the item's calls
};

struct CallAccountingRow {
  std::string method;
  std::size_t items = 0;
  double mean_calls = 0.0;
  double mean_latency_ms = 0.0;       // per call
  double time_per_1000_items_s = 0.0;  // mean latency x mean calls x 1000
};

inline std::vector<CallAccountingRow> call_accounting(const std::vector<CallRecord>& records) {
  if (records.empty()) throw ValidationError("call_accounting: no transcripts");
  std::map<std::string, std::vector<const CallRecord*>> by_method;
  for (const auto& r : records) by_method[r.method].push_back(&r);
  std::vector<CallAccountingRow> out;
  for (const auto& [method, list] : by_method) {
    CallAccountingRow row;
    row.method = method;
    row.items = list.size();
    double calls = 0.0, latency = 0.0;
    for (const auto* r : list) {
      calls += static_cast<double>(r->calls);
      latency += r->latency_ms;
    }
    row.mean_calls = calls / static_cast<double>(row.items);
    row.mean_latency_ms = calls > 0.0 ? latency / calls : 0.0;
    row.time_per_1000_items_s = row.mean_latency_ms * row.mean_calls * 1000.0 / 1000.0;
    out.push_back(row);
  }
  return out;
}

}  // namespace manyopt
