#pragma once

// Reduce-then-compare over one instance, and a deterministic parallel map.

#include <atomic>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "manyopt/arena.hpp"
#include "manyopt/core.hpp"
#include "manyopt/gateway.hpp"
#include "manyopt/metrics.hpp"
#include "manyopt/reduction.hpp"

namespace manyopt {

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Results must be
/// written by index; the first exception is rethrown after all workers stop.
inline void parallel_for(std::size_t n, std::size_t workers,
                         const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n && !stop; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
            stop = true;
          }
        }
      });
  }
  if (error) std::rethrow_exception(error);
}

struct PipelineConfig {
  ReductionConfig reduction;
  ComparisonConfig comparison;
};

struct InstanceOutcome {
  std::size_t instance = 0;
  std::uint64_t seed = 0;
  LabelId gold;
  ReductionResult reduction;
  ComparisonTranscript comparison;

  Prediction prediction() const { return comparison.final; }
  bool correct() const { return comparison.final && *comparison.final == gold; }
};

inline nlohmann::json to_json(const InstanceOutcome& o) {
  return {{"instance", o.instance},
          {"seed", o.seed},
          {"gold", o.gold},
          {"prediction", o.comparison.final ? nlohmann::json(*o.comparison.final) : nlohmann::json()},
          {"reduction", to_json(o.reduction)},
          {"comparison", to_json(o.comparison)}};
}

inline InstanceOutcome outcome_from_json(const nlohmann::json& j) {
  InstanceOutcome o;
  o.instance = j.at("instance").get<std::size_t>();
  o.seed = j.at("seed").get<std::uint64_t>();
  o.gold = j.at("gold").get<std::string>();
  o.reduction = reduction_from_json(j.at("reduction"));
  o.comparison = transcript_from_json(j.at("comparison"));
  return o;
}

/// Stage 1 then stage 2 for one instance. Reduction and comparison may use
/// different gateways (for example a faithful reducer with a noisy judge).
class Pipeline {
public:
  Pipeline(PipelineConfig cfg, Gateway& reduce_gw, Gateway& compare_gw,
           const DemonstrationStore& store, const EmbeddingMatrix* label_embeddings = nullptr)
      : cfg_(std::move(cfg)),
        reduce_gw_(reduce_gw),
        compare_gw_(compare_gw),
        store_(store),
        label_embeddings_(label_embeddings) {
    cfg_.reduction.validate();
  }

  Pipeline(PipelineConfig cfg, Gateway& gw, const DemonstrationStore& store,
           const EmbeddingMatrix* label_embeddings = nullptr)
      : Pipeline(std::move(cfg), gw, gw, store, label_embeddings) {}

  const PipelineConfig& config() const { return cfg_; }

  /// `options` is Y in presentation order; `seed` is the per-instance seed.
  InstanceOutcome run(const Instance& inst, const std::vector<LabelId>& options,
                      std::uint64_t seed) const {
    InstanceOutcome out;
    out.instance = inst.index;
    out.seed = seed;
    out.gold = inst.gold;
    auto rcfg = cfg_.reduction;
    rcfg.seed = rng::derive(seed, "reduce");
    out.reduction = reduce(inst.text, options, rcfg, reduce_gw_, ReductionContext{label_embeddings_});
    auto ccfg = cfg_.comparison;
    ccfg.seed = rng::derive(seed, "compare");
    out.comparison = compare(inst.text, out.reduction.reduced, store_, ccfg, compare_gw_);
    return out;
  }

private:
  PipelineConfig cfg_;
  Gateway& reduce_gw_;
  Gateway& compare_gw_;
  const DemonstrationStore& store_;
  const EmbeddingMatrix* label_embeddings_;
};

/// Per-instance seed for a repeat seed.
inline std::uint64_t instance_seed(std::uint64_t repeat_seed, std::size_t instance) {
  return rng::derive(repeat_seed, static_cast<std::uint64_t>(instance));
}

}  // namespace manyopt
