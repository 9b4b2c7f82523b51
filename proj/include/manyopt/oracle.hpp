#pragma once

// Deterministic synthetic backend. It reads the structured query directly
// and answers in the textual shapes the reply parsers expect, while
// reproducing three measured failure modes of chat models on many-option
// classification: accuracy decaying with option count, preference for
// certain option positions, and preference for certain label tokens.
//
// Per option i the oracle scores
//   u_i = g*[i is gold] + s*sim(y_i, gold) + tau(y_i) + beta(position_i) + lambda*G_i
// with G_i a standard Gumbel draw, and picks the argmax (top-k for
// reduce_topk). g is solved per call so that with beta = tau = 0 the gold
// label wins with probability a(k), k = number of options.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "manyopt/gateway.hpp"
#include "manyopt/hash.hpp"
#include "manyopt/query.hpp"
#include "manyopt/random.hpp"
#include "manyopt/text.hpp"

namespace manyopt {

/// Accuracy as a function of option count, log-linear between anchors and
/// held flat outside them. One option is always answered correctly.
class CountCurve {
public:
  CountCurve() = default;

  explicit CountCurve(std::map<std::size_t, double> anchors) : anchors_(std::move(anchors)) {
    double prev = 1.0;
    for (const auto& [k, a] : anchors_) {
      if (k < 1) throw ValidationError("count curve anchors must be >= 1");
      if (a < 0.0 || a > 1.0) throw ValidationError("count curve value outside [0,1]");
      if (a > prev) throw ValidationError("count curve must be non-increasing in option count");
      prev = a;
    }
  }

  /// a(2) = 0.9429 and a(60) = 0.3251: the two full-option zero-shot
  /// accuracies reported for gpt-3.5-turbo.
  static CountCurve gpt35_default() { return CountCurve({{2, 0.9429}, {60, 0.3251}}); }

  static CountCurve constant(double a) { return CountCurve({{2, a}}); }

  double at(std::size_t k) const {
    if (k <= 1 || anchors_.empty()) return 1.0;
    auto hi = anchors_.lower_bound(k);
    if (hi == anchors_.end()) return std::prev(hi)->second;
    if (hi->first == k || hi == anchors_.begin()) return hi->second;
    auto lo = std::prev(hi);
    const double t = (std::log(double(k)) - std::log(double(lo->first))) /
                     (std::log(double(hi->first)) - std::log(double(lo->first)));
    return lo->second + t * (hi->second - lo->second);
  }

  const std::map<std::size_t, double>& anchors() const { return anchors_; }

private:
  std::map<std::size_t, double> anchors_;
};

struct ScriptedOracleConfig {
  CountCurve count_curve = CountCurve::gpt35_default();
  std::vector<double> position_bias;                    // beta by option index
  std::map<LabelId, double> token_pref;                 // tau by label
  std::map<std::pair<LabelId, LabelId>, double> similarity;  // symmetric, diagonal 1
  double similarity_weight = 0.0;                       // s
  double sharpness = 1.0;                               // lambda
  double noise_free_margin = 1.0;                       // g when lambda == 0
  std::uint64_t seed = 0;
  double latency_ms = 0.0;
  std::string explanation_text = "The sentence matches the label's topic.";

  /// Noise-free and bias-free: always names the gold label when present.
  static ScriptedOracleConfig faithful() {
    ScriptedOracleConfig c;
    c.sharpness = 0.0;
    return c;
  }

  void set_similarity(const LabelId& a, const LabelId& b, double v) {
    if (v < 0.0 || v > 1.0) throw ValidationError("similarity must lie in [0,1]");
    if (a == b) return;
    similarity[{a, b}] = v;
    similarity[{b, a}] = v;
  }

  double sim(const LabelId& a, const LabelId& b) const {
    if (a == b) return 1.0;
    auto it = similarity.find({a, b});
    return it == similarity.end() ? 0.0 : it->second;
  }

  double beta(std::size_t position) const {
    return position < position_bias.size() ? position_bias[position] : 0.0;
  }

  double tau(const LabelId& l) const {
    auto it = token_pref.find(l);
    return it == token_pref.end() ? 0.0 : it->second;
  }
};

inline nlohmann::json to_json(const ScriptedOracleConfig& c) {
  nlohmann::json curve = nlohmann::json::object();
  for (const auto& [k, a] : c.count_curve.anchors()) curve[std::to_string(k)] = a;
  nlohmann::json sim = nlohmann::json::array();
  for (const auto& [pair, v] : c.similarity)
    if (pair.first < pair.second) sim.push_back({pair.first, pair.second, v});
  return {{"count_curve", curve},
          {"position_bias", c.position_bias},
          {"token_pref", c.token_pref},
          {"similarity", sim},
          {"similarity_weight", c.similarity_weight},
          {"sharpness", c.sharpness},
          {"noise_free_margin", c.noise_free_margin},
          {"seed", c.seed},
          {"latency_ms", c.latency_ms},
          {"explanation_text", c.explanation_text}};
}

inline ScriptedOracleConfig oracle_config_from_json(const nlohmann::json& j) {
  ScriptedOracleConfig c;
  if (j.contains("count_curve")) {
    std::map<std::size_t, double> anchors;
    for (auto it = j["count_curve"].begin(); it != j["count_curve"].end(); ++it)
      anchors[std::stoul(it.key())] = it.value().get<double>();
    c.count_curve = CountCurve(std::move(anchors));
  }
  if (j.contains("position_bias")) c.position_bias = j["position_bias"].get<std::vector<double>>();
  if (j.contains("token_pref")) c.token_pref = j["token_pref"].get<std::map<LabelId, double>>();
  if (j.contains("similarity"))
    for (const auto& e : j["similarity"])
      c.set_similarity(e.at(0).get<std::string>(), e.at(1).get<std::string>(),
                       e.at(2).get<double>());
  c.similarity_weight = j.value("similarity_weight", c.similarity_weight);
  c.sharpness = j.value("sharpness", c.sharpness);
  c.noise_free_margin = j.value("noise_free_margin", c.noise_free_margin);
  c.seed = j.value("seed", c.seed);
  c.latency_ms = j.value("latency_ms", c.latency_ms);
  c.explanation_text = j.value("explanation_text", c.explanation_text);
  if (c.sharpness < 0.0) throw ValidationError("oracle sharpness must be non-negative");
  return c;
}

using GoldLookup = std::unordered_map<std::string, LabelId>;

namespace detail {

/// Noise key: depends on the option set, not its order, so rearranging the
/// options changes scores only through the position bias.
inline std::uint64_t noise_key(const ScriptedOracleConfig& c, const ModelQuery& q) {
  std::vector<std::string> sorted = q.options;
  std::sort(sorted.begin(), sorted.end());
  std::uint64_t h = rng::fnv1a(to_string(q.kind));
  h = rng::fnv1a("\x1f", h);
  h = rng::fnv1a(q.text, h);
  for (const auto& o : sorted) {
    h = rng::fnv1a("\x1e", h);
    h = rng::fnv1a(o, h);
  }
  if (q.decoding.seed) h = rng::derive(h, *q.decoding.seed);
  return rng::derive(c.seed, h);
}

}  // namespace detail

/// Chosen option(s) for a choice-type query: one label, or top_k labels in
/// descending score order for reduce_topk.
inline std::vector<LabelId> oracle_decide(const ScriptedOracleConfig& c, const GoldLookup& golds,
                                          const ModelQuery& q) {
  const std::size_t k = q.options.size();
  std::optional<LabelId> gold;
  if (auto it = golds.find(q.text); it != golds.end()) gold = it->second;
  std::optional<std::size_t> gold_idx;
  if (gold) {
    auto pos = std::find(q.options.begin(), q.options.end(), *gold);
    if (pos != q.options.end()) gold_idx = static_cast<std::size_t>(pos - q.options.begin());
  }

  const double s = c.similarity_weight;
  const double lambda = c.sharpness;
  std::vector<double> score(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    if (gold) score[i] += s * c.sim(q.options[i], *gold);
    score[i] += c.tau(q.options[i]) + c.beta(i);
  }

  if (gold_idx) {
    double g;
    const double a = c.count_curve.at(k);
    if (lambda == 0.0) {
      g = c.noise_free_margin;
    } else if (a >= 1.0) {
      g = std::numeric_limits<double>::infinity();
    } else if (a <= 0.0) {
      g = -std::numeric_limits<double>::infinity();
    } else {
      double others = 0.0;
      for (std::size_t i = 0; i < k; ++i)
        if (i != *gold_idx) others += std::exp(s * c.sim(q.options[i], *gold) / lambda);
      g = lambda * std::log(a / (1.0 - a) * others) - s;
    }
    score[*gold_idx] += g;
  }

  if (lambda > 0.0) {
    const auto key = detail::noise_key(c, q);
    for (std::size_t i = 0; i < k; ++i)
      score[i] += lambda * rng::gumbel(rng::derive(key, q.options[i]));
  }

  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return score[x] > score[y]; });
  const std::size_t take = q.kind == QueryKind::reduce_topk ? std::min(k, q.top_k.value_or(1)) : 1;
  std::vector<LabelId> out;
  for (std::size_t i = 0; i < take; ++i) out.push_back(q.options[order[i]]);
  return out;
}

class ScriptedOracle final : public Backend {
public:
  ScriptedOracle(ScriptedOracleConfig config, GoldLookup golds)
      : config_(std::move(config)), golds_(std::move(golds)) {
    id_ = "scripted-" + sha256_hex(to_json(config_).dump()).substr(0, 16);
  }

  static GoldLookup golds_from(const std::vector<Instance>& instances) {
    GoldLookup g;
    for (const auto& inst : instances) g.emplace(inst.text, inst.gold);
    return g;
  }

  std::string id() const override { return id_; }

  std::string cache_material(const ModelQuery& q) const override { return to_json(q).dump(); }

  ModelReply complete(const ModelQuery& q) override {
    ModelReply r;
    r.backend_id = id_;
    r.latency_ms = config_.latency_ms;
    r.text = answer(q);
    return r;
  }

  const ScriptedOracleConfig& config() const { return config_; }

private:
  std::string answer(const ModelQuery& q) const {
    switch (q.kind) {
      case QueryKind::reduce_topk:
        return "CHOICE: " + text::join(oracle_decide(config_, golds_, q), ", ");
      case QueryKind::full_choice:
      case QueryKind::pairwise_choice:
      case QueryKind::pairwise_decide: {
        const auto pick = oracle_decide(config_, golds_, q).front();
        if (q.cot || q.kind == QueryKind::pairwise_decide)
          return "Weighing the options against the sentence, one topic fits best.\nLABEL: " + pick;
        return "LABEL: " + pick;
      }
      case QueryKind::similarity_analysis:
        return "- Both \"" + q.options[0] + "\" and \"" + q.options[1] +
               "\" describe closely related requests.";
      case QueryKind::difference_analysis:
        return "- \"" + q.options[0] + "\" and \"" + q.options[1] +
               "\" differ in the specific situation they describe.";
      case QueryKind::explanation_gen:
        return config_.explanation_text;
    }
    return {};
  }

  ScriptedOracleConfig config_;
  GoldLookup golds_;
  std::string id_;
};

}  // namespace manyopt
