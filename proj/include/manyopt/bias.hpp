#pragma once

// Position-bias sweeps: accuracy when the gold option is pinned to a fixed
// position, relative to seeded random arrangements on the same seeds.

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "manyopt/core.hpp"
#include "manyopt/metrics.hpp"
#include "manyopt/pipeline.hpp"

namespace manyopt {

/// Classifies one instance given Y in presentation order and a seed.
using InstanceClassifier =
    std::function<Prediction(const Instance&, const std::vector<LabelId>& options, std::uint64_t seed)>;

struct PositionSweepRow {
  std::size_t position = 0;
  double accuracy = 0.0;
  std::optional<double> change_rate;  // undefined when baseline accuracy is 0
  double change_rate_se = 0.0;
  std::size_t trials = 0;
};

struct BiasReport {
  double baseline_accuracy = 0.0;
  std::vector<double> baseline_per_seed;
  std::size_t baseline_trials = 0;
  std::vector<PositionSweepRow> positions;
  std::vector<std::uint64_t> seeds;
  std::vector<TokenBiasEntry> token_bias;  // from the baseline predictions
};

inline nlohmann::json to_json(const BiasReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& p : r.positions)
    rows.push_back({{"position", p.position},
                    {"accuracy", p.accuracy},
                    {"change_rate", p.change_rate ? nlohmann::json(*p.change_rate) : nlohmann::json()},
                    {"change_rate_se", p.change_rate_se},
                    {"trials", p.trials}});
  nlohmann::json tokens = nlohmann::json::array();
  for (const auto& t : r.token_bias)
    tokens.push_back({{"label", t.label},
                      {"predicted", t.predicted},
                      {"gold", t.gold},
                      {"ratio", t.infinite ? nlohmann::json("inf") : nlohmann::json(t.ratio)}});
  return {{"baseline_accuracy", r.baseline_accuracy},
          {"baseline_per_seed", r.baseline_per_seed},
          {"baseline_trials", r.baseline_trials},
          {"positions", rows},
          {"seeds", r.seeds},
          {"token_bias", tokens}};
}

/// For each seed, a baseline pass with seeded-shuffle arrangements and one
/// pass per pinned position; the non-gold labels are shuffled with the same
/// per-instance seed in every pass.
inline BiasReport position_bias_sweep(const std::vector<Instance>& instances,
                                      const LabelCatalog& catalog,
                                      const InstanceClassifier& classify,
                                      const std::vector<std::size_t>& positions,
                                      const std::vector<std::uint64_t>& seeds,
                                      std::size_t parallelism = 1) {
  if (seeds.empty()) throw ValidationError("bias sweep needs at least one seed");
  for (auto p : positions)
    if (p >= catalog.size())
      throw ValidationError("position " + std::to_string(p) + " outside [0, " +
                            std::to_string(catalog.size()) + ")");

  auto run_pass = [&](std::uint64_t seed, std::optional<std::size_t> pinned,
                      std::vector<Prediction>& preds) {
    preds.assign(instances.size(), std::nullopt);
    parallel_for(instances.size(), parallelism, [&](std::size_t i) {
      const auto& inst = instances[i];
      const auto arrangement_seed = rng::derive(seed, "arrange-" + std::to_string(inst.index));
      const auto spec = pinned ? ArrangementSpec::gold_at(*pinned, arrangement_seed)
                               : ArrangementSpec::shuffled(arrangement_seed);
      preds[i] = classify(inst, arrange(catalog, spec, inst.gold), instance_seed(seed, inst.index));
    });
  };

  std::vector<LabelId> golds;
  for (const auto& inst : instances) golds.push_back(inst.gold);
  auto count_hits = [&](const std::vector<Prediction>& ps) {
    std::size_t h = 0;
    for (std::size_t i = 0; i < ps.size(); ++i)
      if (ps[i] && *ps[i] == golds[i]) ++h;
    return h;
  };

  BiasReport report;
  report.seeds = seeds;
  std::vector<Prediction> all_baseline;
  std::vector<LabelId> all_golds;
  std::size_t baseline_hits = 0;
  std::vector<Prediction> preds;
  for (auto seed : seeds) {
    run_pass(seed, std::nullopt, preds);
    report.baseline_per_seed.push_back(accuracy(preds, golds));
    baseline_hits += count_hits(preds);
    all_baseline.insert(all_baseline.end(), preds.begin(), preds.end());
    all_golds.insert(all_golds.end(), golds.begin(), golds.end());
  }
  report.baseline_trials = all_golds.size();
  report.baseline_accuracy = double(baseline_hits) / double(report.baseline_trials);
  report.token_bias = token_bias_scores(confusion(all_baseline, all_golds, catalog));

  const double base = report.baseline_accuracy;
  for (auto p : positions) {
    std::size_t hits = 0;
    for (auto seed : seeds) {
      run_pass(seed, p, preds);
      hits += count_hits(preds);
    }
    PositionSweepRow row;
    row.position = p;
    row.trials = golds.size() * seeds.size();
    row.accuracy = double(hits) / double(row.trials);
    if (base > 0.0) {
      row.change_rate = (row.accuracy - base) / base;
      const double var = row.accuracy * (1.0 - row.accuracy) / double(row.trials) +
                         base * (1.0 - base) / double(report.baseline_trials);
      row.change_rate_se = std::sqrt(var) / base;
    }
    report.positions.push_back(row);
  }
  return report;
}

}  // namespace manyopt
