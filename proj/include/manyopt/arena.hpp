#pragma once

// Stage 2: resolve the candidate set R to one label. Pairwise methods run a
// winner-stays single-elimination tournament: the first two labels of the
// pool meet, the winner goes back to the front, and the next label
// challenges it, for |R| - 1 comparisons in total.

#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "manyopt/core.hpp"
#include "manyopt/gateway.hpp"
#include "manyopt/parse.hpp"
#include "manyopt/query.hpp"
#include "manyopt/random.hpp"

namespace manyopt {

enum class ComparisonMethod {
  full_zs,
  full_zs_cot,
  full_fs,
  full_fs_cot,
  pair_zs,
  pair_zs_cot,
  pair_fs,
  pair_fs_cot,
  pc_cot,
};

inline constexpr ComparisonMethod kAllMethods[] = {
    ComparisonMethod::full_zs, ComparisonMethod::full_zs_cot, ComparisonMethod::full_fs,
    ComparisonMethod::full_fs_cot, ComparisonMethod::pair_zs, ComparisonMethod::pair_zs_cot,
    ComparisonMethod::pair_fs, ComparisonMethod::pair_fs_cot, ComparisonMethod::pc_cot,
};

inline std::string_view to_string(ComparisonMethod m) {
  switch (m) {
    case ComparisonMethod::full_zs: return "full_zs";
    case ComparisonMethod::full_zs_cot: return "full_zs_cot";
    case ComparisonMethod::full_fs: return "full_fs";
    case ComparisonMethod::full_fs_cot: return "full_fs_cot";
    case ComparisonMethod::pair_zs: return "pair_zs";
    case ComparisonMethod::pair_zs_cot: return "pair_zs_cot";
    case ComparisonMethod::pair_fs: return "pair_fs";
    case ComparisonMethod::pair_fs_cot: return "pair_fs_cot";
    case ComparisonMethod::pc_cot: return "pc_cot";
  }
  return "?";
}

inline ComparisonMethod comparison_method_from(std::string_view s) {
  for (auto m : kAllMethods)
    if (to_string(m) == s) return m;
  throw ValidationError("unknown comparison method: " + std::string(s));
}

inline bool is_full_option(ComparisonMethod m) {
  return m == ComparisonMethod::full_zs || m == ComparisonMethod::full_zs_cot ||
         m == ComparisonMethod::full_fs || m == ComparisonMethod::full_fs_cot;
}

inline bool uses_cot(ComparisonMethod m) {
  return m == ComparisonMethod::full_zs_cot || m == ComparisonMethod::full_fs_cot ||
         m == ComparisonMethod::pair_zs_cot || m == ComparisonMethod::pair_fs_cot ||
         m == ComparisonMethod::pc_cot;
}

inline bool uses_demonstrations(ComparisonMethod m) {
  return m == ComparisonMethod::full_fs || m == ComparisonMethod::full_fs_cot ||
         m == ComparisonMethod::pair_fs || m == ComparisonMethod::pair_fs_cot ||
         m == ComparisonMethod::pc_cot;
}

inline bool needs_explanations(ComparisonMethod m) {
  return m == ComparisonMethod::full_fs_cot || m == ComparisonMethod::pair_fs_cot;
}

enum class PairOrder { reduction_rank_fifo, seeded_shuffle };

struct ComparisonConfig {
  ComparisonMethod method = ComparisonMethod::pc_cot;
  std::size_t shots = 3;  // demonstrations per label
  PairOrder pair_order = PairOrder::reduction_rank_fifo;
  bool randomize_pair_positions = true;
  std::uint64_t seed = 0;
  int max_tokens = 512;
  std::optional<std::size_t> prompt_budget_chars;
};

struct PairRecord {
  LabelId label1;
  LabelId label2;
  std::string similarity;  // z_s (PC-CoT only)
  std::string difference;  // z_d (PC-CoT only)
  std::string decision;    // raw reply that produced the verdict
  LabelId verdict;
  std::size_t retries = 0;
  bool defaulted = false;
};

struct ComparisonTranscript {
  ComparisonMethod method = ComparisonMethod::pc_cot;
  std::vector<LabelId> candidates;
  std::vector<PairRecord> pairs;
  std::string reply;  // full-option methods
  std::optional<LabelId> final;  // nullopt = abstain
  std::size_t calls = 0;
  double latency_ms = 0.0;
  std::vector<std::string> flags;
};

inline nlohmann::json to_json(const PairRecord& p) {
  return {{"label1", p.label1},         {"label2", p.label2},   {"similarity", p.similarity},
          {"difference", p.difference}, {"decision", p.decision}, {"verdict", p.verdict},
          {"retries", p.retries},       {"defaulted", p.defaulted}};
}

inline nlohmann::json to_json(const ComparisonTranscript& t) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : t.pairs) pairs.push_back(to_json(p));
  return {{"method", to_string(t.method)},
          {"candidates", t.candidates},
          {"pairs", pairs},
          {"reply", t.reply},
          {"final", t.final ? nlohmann::json(*t.final) : nlohmann::json(nullptr)},
          {"calls", t.calls},
          {"latency_ms", t.latency_ms},
          {"flags", t.flags}};
}

inline ComparisonTranscript transcript_from_json(const nlohmann::json& j) {
  ComparisonTranscript t;
  t.method = comparison_method_from(j.at("method").get<std::string>());
  t.candidates = j.at("candidates").get<std::vector<LabelId>>();
  for (const auto& p : j.at("pairs"))
    t.pairs.push_back({p.at("label1"), p.at("label2"), p.at("similarity"), p.at("difference"),
                       p.at("decision"), p.at("verdict"), p.at("retries").get<std::size_t>(),
                       p.at("defaulted").get<bool>()});
  t.reply = j.at("reply").get<std::string>();
  if (!j.at("final").is_null()) t.final = j.at("final").get<std::string>();
  t.calls = j.at("calls").get<std::size_t>();
  t.latency_ms = j.at("latency_ms").get<double>();
  t.flags = j.at("flags").get<std::vector<std::string>>();
  return t;
}

namespace detail {

inline ModelReply call(Gateway& gw, const ModelQuery& q, ComparisonTranscript& t) {
  auto r = gw.complete(q);
  ++t.calls;
  t.latency_ms += r.latency_ms;
  return r;
}

inline std::vector<Exemplar> pair_demos(const DemonstrationStore& store, const LabelId& l1,
                                        const LabelId& l2, std::size_t m, std::uint64_t seed,
                                        const std::string& exclude) {
  std::vector<Exemplar> out;
  if (m == 0) return out;
  for (const auto& l : {l1, l2}) {
    auto d = sample_demonstrations(store, l, m, seed, exclude);
    out.insert(out.end(), d.begin(), d.end());
  }
  return out;
}

/// Parse a pairwise verdict; one retry with a fresh sample seed on failure.
inline std::optional<LabelId> decide_with_retry(Gateway& gw, ModelQuery q, PairRecord& rec,
                                                ComparisonTranscript& t, std::uint64_t seed) {
  const std::vector<LabelId> pair{rec.label1, rec.label2};
  auto reply = call(gw, q, t);
  rec.decision = reply.text;
  if (auto v = parse_label_choice(reply.text, pair)) return v;
  q.decoding.seed = rng::derive(seed, "retry");
  reply = call(gw, q, t);
  ++rec.retries;
  rec.decision = reply.text;
  return parse_label_choice(reply.text, pair);
}

template <typename Resolve>
void run_tournament(const std::vector<LabelId>& reduced, const ComparisonConfig& cfg,
                    ComparisonTranscript& t, Resolve&& resolve) {
  if (reduced.empty()) throw ValidationError("tournament needs at least one candidate");
  std::deque<LabelId> pool(reduced.begin(), reduced.end());
  if (cfg.pair_order == PairOrder::seeded_shuffle) {
    std::vector<LabelId> v(pool.begin(), pool.end());
    rng::Stream s(rng::derive(cfg.seed, "pair-order"));
    s.shuffle(std::span(v));
    pool.assign(v.begin(), v.end());
  }
  auto rank = [&](const LabelId& l) {
    return std::find(reduced.begin(), reduced.end(), l) - reduced.begin();
  };
  std::size_t index = 0;
  while (pool.size() > 1) {
    PairRecord rec;
    rec.label1 = pool.front();
    pool.pop_front();
    rec.label2 = pool.front();
    pool.pop_front();
    const auto pair_seed = rng::derive(cfg.seed, index);
    if (cfg.randomize_pair_positions && rng::Stream(rng::derive(pair_seed, "slots")).coin())
      std::swap(rec.label1, rec.label2);
    auto verdict = resolve(rec, pair_seed);
    if (!verdict) {
      rec.verdict = rank(rec.label1) <= rank(rec.label2) ? rec.label1 : rec.label2;
      rec.defaulted = true;
      t.flags.push_back("pair " + std::to_string(index) + ": unparseable verdict, defaulted to " +
                        rec.verdict);
    } else {
      rec.verdict = *verdict;
    }
    pool.push_front(rec.verdict);
    t.pairs.push_back(std::move(rec));
    ++index;
  }
  t.final = pool.front();
}

}  // namespace detail

/// Contrastive pairwise chain of thought: per pair a similarity analysis, a
/// difference analysis conditioned on it, and a decision conditioned on both.
inline ComparisonTranscript run_pc_cot(const std::string& x, const std::vector<LabelId>& reduced,
                                       const DemonstrationStore& store,
                                       const ComparisonConfig& cfg, Gateway& gw) {
  ComparisonTranscript t;
  t.method = ComparisonMethod::pc_cot;
  t.candidates = reduced;
  detail::run_tournament(reduced, cfg, t, [&](PairRecord& rec, std::uint64_t seed) {
    ModelQuery q;
    q.text = x;
    q.options = {rec.label1, rec.label2};
    q.cot = true;
    q.demonstrations = detail::pair_demos(store, rec.label1, rec.label2, cfg.shots, seed, x);
    q.decoding.max_tokens = cfg.max_tokens;
    q.prompt_budget_chars = cfg.prompt_budget_chars;

    q.kind = QueryKind::similarity_analysis;
    rec.similarity = detail::call(gw, q, t).text;
    q.kind = QueryKind::difference_analysis;
    q.thoughts = {rec.similarity};
    rec.difference = detail::call(gw, q, t).text;
    q.kind = QueryKind::pairwise_decide;
    q.thoughts = {rec.similarity, rec.difference};
    return detail::decide_with_retry(gw, q, rec, t, seed);
  });
  return t;
}

/// Same tournament, one call per pair with a pairwise baseline prompt.
inline ComparisonTranscript run_pairwise_baseline(const std::string& x,
                                                  const std::vector<LabelId>& reduced,
                                                  const DemonstrationStore& store,
                                                  const ComparisonConfig& cfg, Gateway& gw) {
  ComparisonTranscript t;
  t.method = cfg.method;
  t.candidates = reduced;
  detail::run_tournament(reduced, cfg, t, [&](PairRecord& rec, std::uint64_t seed) {
    ModelQuery q;
    q.kind = QueryKind::pairwise_choice;
    q.text = x;
    q.options = {rec.label1, rec.label2};
    q.cot = uses_cot(cfg.method);
    if (uses_demonstrations(cfg.method))
      q.demonstrations = detail::pair_demos(store, rec.label1, rec.label2, cfg.shots, seed, x);
    q.decoding.max_tokens = cfg.max_tokens;
    q.prompt_budget_chars = cfg.prompt_budget_chars;
    return detail::decide_with_retry(gw, q, rec, t, seed);
  });
  return t;
}

/// One call choosing directly among `options`. Unparseable replies abstain.
inline ComparisonTranscript run_full_option_baseline(const std::string& x,
                                                     const std::vector<LabelId>& options,
                                                     const DemonstrationStore& store,
                                                     const ComparisonConfig& cfg, Gateway& gw) {
  if (options.empty()) throw ValidationError("full-option baseline needs at least one option");
  ComparisonTranscript t;
  t.method = cfg.method;
  t.candidates = options;
  ModelQuery q;
  q.kind = QueryKind::full_choice;
  q.text = x;
  q.options = options;
  q.cot = uses_cot(cfg.method);
  q.decoding.max_tokens = cfg.max_tokens;
  q.prompt_budget_chars = cfg.prompt_budget_chars;
  if (uses_demonstrations(cfg.method)) {
    std::vector<Exemplar> demos;
    for (const auto& l : options) {
      if (store.exemplars(l).empty() || cfg.shots == 0) continue;
      auto d = sample_demonstrations(store, l, cfg.shots, rng::derive(cfg.seed, "full"), x);
      demos.insert(demos.end(), d.begin(), d.end());
    }
    q.demonstrations = std::move(demos);
  }
  auto reply = detail::call(gw, q, t);
  t.reply = reply.text;
  t.final = parse_label_choice(reply.text, options);
  if (!t.final) t.flags.push_back("unparseable reply; abstained");
  return t;
}

inline ComparisonTranscript compare(const std::string& x, const std::vector<LabelId>& candidates,
                                    const DemonstrationStore& store, const ComparisonConfig& cfg,
                                    Gateway& gw) {
  if (is_full_option(cfg.method)) return run_full_option_baseline(x, candidates, store, cfg, gw);
  if (cfg.method == ComparisonMethod::pc_cot) return run_pc_cot(x, candidates, store, cfg, gw);
  return run_pairwise_baseline(x, candidates, store, cfg, gw);
}

/// Closed-form call count for |R| candidates, assuming no verdict retries.
inline std::size_t comparison_call_count(ComparisonMethod m, std::size_t candidates) {
  if (is_full_option(m)) return 1;
  const std::size_t pairs = candidates == 0 ? 0 : candidates - 1;
  return m == ComparisonMethod::pc_cot ? 3 * pairs : pairs;
}

}  // namespace manyopt
