#pragma once

// Stage 1: shrink the option set Y to a small candidate set R.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "manyopt/cluster.hpp"
#include "manyopt/core.hpp"
#include "manyopt/embed.hpp"
#include "manyopt/gateway.hpp"
#include "manyopt/parse.hpp"
#include "manyopt/query.hpp"
#include "manyopt/random.hpp"

namespace manyopt {

enum class ReductionStrategy { none, standard, self_consistency, itr, cbwr };

inline std::string_view to_string(ReductionStrategy s) {
  switch (s) {
    case ReductionStrategy::none: return "none";
    case ReductionStrategy::standard: return "standard";
    case ReductionStrategy::self_consistency: return "self_consistency";
    case ReductionStrategy::itr: return "itr";
    case ReductionStrategy::cbwr: return "cbwr";
  }
  return "?";
}

inline ReductionStrategy reduction_strategy_from(std::string_view s) {
  for (auto v : {ReductionStrategy::none, ReductionStrategy::standard,
                 ReductionStrategy::self_consistency, ReductionStrategy::itr,
                 ReductionStrategy::cbwr})
    if (to_string(v) == s) return v;
  throw ValidationError("unknown reduction strategy: " + std::string(s));
}

struct ReductionConfig {
  ReductionStrategy strategy = ReductionStrategy::cbwr;
  std::size_t target = 5;             // N = |R|
  std::size_t votes = 5;              // self-consistency samples
  double vote_temperature = 0.7;
  std::size_t max_steps = 10;         // CBWR step limit T
  std::size_t clusters = 5;           // CBWR K
  std::size_t per_cluster = 4;        // CBWR samples per cluster c
  std::vector<std::size_t> itr_schedule;  // empty = halving
  int max_tokens = 512;
  std::uint64_t seed = 0;

  void validate() const {
    if (target < 1) throw ValidationError("reduction target N must be >= 1");
    if (votes < 1) throw ValidationError("self-consistency votes must be >= 1");
    if (clusters < 1) throw ValidationError("CBWR cluster count K must be >= 1");
    if (per_cluster < 1) throw ValidationError("CBWR per-cluster samples c must be >= 1");
    if (strategy == ReductionStrategy::cbwr && clusters * per_cluster <= target)
      throw ValidationError("CBWR window capacity K*c must exceed N");
  }
};

struct ReductionStep {
  std::vector<LabelId> window;     // options shown, in prompt order
  std::vector<LabelId> kept;       // selection, reply order
  std::vector<LabelId> discarded;
  std::size_t top_k = 0;
  std::string reply;
  std::size_t padded = 0;          // labels filled in after a short reply
};

struct ReductionResult {
  std::vector<LabelId> reduced;
  std::size_t calls = 0;
  double latency_ms = 0.0;  // summed over calls
  std::vector<ReductionStep> trace;
  std::vector<std::string> warnings;
};

inline nlohmann::json to_json(const ReductionStep& s) {
  return {{"window", s.window},   {"kept", s.kept}, {"discarded", s.discarded},
          {"top_k", s.top_k},     {"reply", s.reply}, {"padded", s.padded}};
}

inline nlohmann::json to_json(const ReductionResult& r) {
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& s : r.trace) trace.push_back(to_json(s));
  return {{"reduced", r.reduced},       {"calls", r.calls}, {"latency_ms", r.latency_ms},
          {"trace", trace},             {"warnings", r.warnings}};
}

inline ReductionResult reduction_from_json(const nlohmann::json& j) {
  ReductionResult r;
  r.reduced = j.at("reduced").get<std::vector<LabelId>>();
  r.calls = j.at("calls").get<std::size_t>();
  r.latency_ms = j.value("latency_ms", 0.0);
  for (const auto& s : j.at("trace"))
    r.trace.push_back({s.at("window").get<std::vector<LabelId>>(),
                       s.at("kept").get<std::vector<LabelId>>(),
                       s.at("discarded").get<std::vector<LabelId>>(), s.at("top_k").get<std::size_t>(),
                       s.at("reply").get<std::string>(), s.at("padded").get<std::size_t>()});
  r.warnings = j.at("warnings").get<std::vector<std::string>>();
  return r;
}

/// Extra inputs some strategies need.
struct ReductionContext {
  const EmbeddingMatrix* label_embeddings = nullptr;  // rows keyed by label id (CBWR)
};

namespace detail {

inline std::vector<LabelId> minus(const std::vector<LabelId>& from, const std::vector<LabelId>& drop) {
  std::unordered_set<LabelId> d(drop.begin(), drop.end());
  std::vector<LabelId> out;
  for (const auto& l : from)
    if (!d.contains(l)) out.push_back(l);
  return out;
}

/// One reduce_topk call over `options` (in prompt order). Short or
/// unparseable replies are padded from `options` in order.
inline ReductionStep select_top(const std::string& text, const std::vector<LabelId>& options,
                                std::size_t k, const ReductionConfig& cfg, Gateway& gw,
                                ReductionResult& result,
                                std::optional<std::uint64_t> sample_seed = std::nullopt,
                                double temperature = 0.0) {
  ModelQuery q;
  q.kind = QueryKind::reduce_topk;
  q.text = text;
  q.options = options;
  q.top_k = k;
  q.decoding.temperature = temperature;
  q.decoding.max_tokens = cfg.max_tokens;
  q.decoding.seed = sample_seed;
  auto reply = gw.complete(q);
  ++result.calls;
  result.latency_ms += reply.latency_ms;

  ReductionStep step;
  step.window = options;
  step.top_k = k;
  step.reply = reply.text;
  step.kept = parse_topk_reply(reply.text, options, k);
  const std::size_t want = std::min(k, options.size());
  for (const auto& o : options) {
    if (step.kept.size() >= want) break;
    if (std::find(step.kept.begin(), step.kept.end(), o) == step.kept.end()) {
      step.kept.push_back(o);
      ++step.padded;
    }
  }
  if (step.padded)
    result.warnings.push_back("reply named " + std::to_string(want - step.padded) + " of " +
                              std::to_string(want) + " labels; padded from prompt order");
  step.discarded = minus(options, step.kept);
  return step;
}

}  // namespace detail

/// Single top-N call over all of Y.
inline ReductionResult reduce_standard(const std::string& x, const std::vector<LabelId>& labels,
                                       const ReductionConfig& cfg, Gateway& gw) {
  ReductionResult r;
  if (labels.size() <= cfg.target) {
    r.reduced = labels;
    return r;
  }
  auto step = detail::select_top(x, labels, cfg.target, cfg, gw, r);
  r.reduced = step.kept;
  r.trace.push_back(std::move(step));
  return r;
}

/// v sampled top-N calls, then a vote. Ties: better mean rank, then order in Y.
inline ReductionResult reduce_self_consistency(const std::string& x,
                                               const std::vector<LabelId>& labels,
                                               const ReductionConfig& cfg, Gateway& gw) {
  ReductionResult r;
  if (labels.size() <= cfg.target) {
    r.reduced = labels;
    return r;
  }
  struct Tally {
    std::size_t votes = 0;
    double rank_sum = 0.0;
  };
  std::map<LabelId, Tally> tally;
  std::size_t parsed_calls = 0;
  for (std::size_t v = 0; v < cfg.votes; ++v) {
    ModelQuery q;
    q.kind = QueryKind::reduce_topk;
    q.text = x;
    q.options = labels;
    q.top_k = cfg.target;
    q.decoding.temperature = cfg.vote_temperature;
    q.decoding.max_tokens = cfg.max_tokens;
    q.decoding.seed = rng::derive(cfg.seed, v);
    auto reply = gw.complete(q);
    ++r.calls;
    r.latency_ms += reply.latency_ms;
    ReductionStep step;
    step.window = labels;
    step.top_k = cfg.target;
    step.reply = reply.text;
    step.kept = parse_topk_reply(reply.text, labels, cfg.target);
    step.discarded = detail::minus(labels, step.kept);
    if (!step.kept.empty()) ++parsed_calls;
    for (std::size_t i = 0; i < step.kept.size(); ++i) {
      auto& t = tally[step.kept[i]];
      ++t.votes;
      t.rank_sum += static_cast<double>(i);
    }
    r.trace.push_back(std::move(step));
  }
  if (parsed_calls == 0)
    throw Error("self-consistency: none of the " + std::to_string(cfg.votes) +
                " replies named a candidate label");

  std::vector<std::size_t> order(labels.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  auto key = [&](std::size_t i) {
    auto it = tally.find(labels[i]);
    if (it == tally.end()) return std::pair<std::size_t, double>{0, 0.0};
    return std::pair<std::size_t, double>{it->second.votes,
                                          it->second.rank_sum / double(it->second.votes)};
  };
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    auto ka = key(a), kb = key(b);
    if (ka.first != kb.first) return ka.first > kb.first;
    if (ka.first == 0) return false;
    return ka.second < kb.second;
  });
  std::size_t voted = 0;
  for (std::size_t i = 0; i < cfg.target; ++i) {
    r.reduced.push_back(labels[order[i]]);
    if (key(order[i]).first > 0) ++voted;
  }
  if (voted < cfg.target)
    r.warnings.push_back("only " + std::to_string(voted) +
                         " labels received votes; padded from catalog order");
  return r;
}

/// Halving schedule: k1 = max(N, ceil(|Y|/2)), k_{t+1} = max(N, ceil(k_t/2)),
/// ending at N. Empty when |Y| <= N.
inline std::vector<std::size_t> halving_schedule(std::size_t options, std::size_t target) {
  std::vector<std::size_t> out;
  if (options <= target) return out;
  std::size_t k = std::max(target, (options + 1) / 2);
  out.push_back(k);
  while (k > target) {
    k = std::max(target, (k + 1) / 2);
    out.push_back(k);
  }
  return out;
}

/// Iterative top reduction: each step keeps k_t of the previous survivors.
inline ReductionResult reduce_itr(const std::string& x, const std::vector<LabelId>& labels,
                                  const ReductionConfig& cfg, Gateway& gw) {
  ReductionResult r;
  if (labels.size() <= cfg.target) {
    r.reduced = labels;
    return r;
  }
  auto schedule = cfg.itr_schedule.empty() ? halving_schedule(labels.size(), cfg.target)
                                            : cfg.itr_schedule;
  std::size_t prev = labels.size();
  for (auto k : schedule) {
    if (k >= prev) throw ValidationError("ITR schedule must be strictly decreasing below |Y|");
    prev = k;
  }
  if (schedule.back() != cfg.target) throw ValidationError("ITR schedule must end at N");

  std::vector<LabelId> pool = labels;
  for (auto k : schedule) {
    auto step = detail::select_top(x, pool, k, cfg, gw, r);
    pool = step.kept;
    r.trace.push_back(std::move(step));
  }
  r.reduced = pool;
  return r;
}

/// Window for one CBWR step: all of S when it fits in K*c, otherwise up to c
/// per cluster drawn round-robin, then round-robin backfill to K*c.
inline std::vector<LabelId> cbwr_window(const std::vector<LabelId>& survivors,
                                        const ReductionConfig& cfg,
                                        const EmbeddingMatrix& label_embeddings,
                                        std::uint64_t step_seed) {
  const std::size_t capacity = cfg.clusters * cfg.per_cluster;
  if (survivors.size() <= capacity) return survivors;
  std::vector<std::size_t> rows;
  for (const auto& l : survivors) rows.push_back(label_embeddings.index_of(l));
  const auto sub = label_embeddings.subset(rows);
  const std::size_t k = std::min(cfg.clusters, survivors.size());
  auto assignment = kmeans(sub, k, rng::derive(step_seed, "kmeans"));
  auto members = assignment.members();
  for (std::size_t c = 0; c < members.size(); ++c) {
    rng::Stream s(rng::derive(step_seed, 1000 + c));
    s.shuffle(std::span(members[c]));
  }
  std::vector<LabelId> window;
  auto draw_round = [&](std::size_t r) {
    for (const auto& m : members) {
      if (window.size() >= capacity) return;
      if (r < m.size()) window.push_back(survivors[m[r]]);
    }
  };
  for (std::size_t r = 0; r < cfg.per_cluster; ++r) draw_round(r);
  for (std::size_t r = cfg.per_cluster; window.size() < capacity; ++r) draw_round(r);
  return window;
}

/// Cluster-based window reduction.
inline ReductionResult reduce_cbwr(const std::string& x, const std::vector<LabelId>& labels,
                                   const ReductionConfig& cfg, Gateway& gw,
                                   const ReductionContext& ctx) {
  ReductionResult r;
  if (labels.size() <= cfg.target) {
    r.reduced = labels;
    return r;
  }
  cfg.validate();
  std::vector<LabelId> survivors = labels;
  std::vector<LabelId> last;
  std::size_t step_no = 0;
  while (survivors.size() > cfg.target && step_no < cfg.max_steps) {
    const auto step_seed = rng::derive(cfg.seed, step_no);
    if (survivors.size() > cfg.clusters * cfg.per_cluster && !ctx.label_embeddings)
      throw ValidationError("CBWR needs label embeddings");
    auto window = cbwr_window(survivors, cfg,
                              ctx.label_embeddings ? *ctx.label_embeddings : EmbeddingMatrix{},
                              step_seed);
    rng::Stream s(rng::derive(step_seed, "present"));
    s.shuffle(std::span(window));
    auto step = detail::select_top(x, window, cfg.target, cfg, gw, r);
    survivors = detail::minus(survivors, step.discarded);
    last = step.kept;
    r.trace.push_back(std::move(step));
    ++step_no;
  }
  if (survivors.size() > cfg.target) {
    auto window = survivors;
    rng::Stream s(rng::derive(cfg.seed, "final"));
    s.shuffle(std::span(window));
    auto step = detail::select_top(x, window, cfg.target, cfg, gw, r);
    last = step.kept;
    r.trace.push_back(std::move(step));
  }
  r.reduced = last;
  return r;
}

/// Closed-form CBWR call count for |Y| options.
inline std::size_t cbwr_call_count(std::size_t options, const ReductionConfig& cfg) {
  if (options <= cfg.target) return 0;
  const std::size_t capacity = cfg.clusters * cfg.per_cluster;
  std::size_t s = options;
  std::size_t steps = 0;
  while (s > cfg.target && steps < cfg.max_steps) {
    s = s <= capacity ? cfg.target : s - (capacity - cfg.target);
    ++steps;
  }
  return steps + (s > cfg.target ? 1 : 0);
}

inline ReductionResult reduce(const std::string& x, const std::vector<LabelId>& labels,
                              const ReductionConfig& cfg, Gateway& gw,
                              const ReductionContext& ctx = {}) {
  if (labels.empty()) throw ValidationError("reduction needs at least one option");
  cfg.validate();
  switch (cfg.strategy) {
    case ReductionStrategy::none: {
      ReductionResult r;
      r.reduced = labels;
      return r;
    }
    case ReductionStrategy::standard: return reduce_standard(x, labels, cfg, gw);
    case ReductionStrategy::self_consistency: return reduce_self_consistency(x, labels, cfg, gw);
    case ReductionStrategy::itr: return reduce_itr(x, labels, cfg, gw);
    case ReductionStrategy::cbwr: return reduce_cbwr(x, labels, cfg, gw, ctx);
  }
  throw ValidationError("unknown reduction strategy");
}

}  // namespace manyopt
