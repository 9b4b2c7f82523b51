#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "manyopt/core.hpp"
#include "manyopt/error.hpp"

namespace manyopt {

enum class QueryKind {
  reduce_topk,
  full_choice,
  pairwise_choice,
  similarity_analysis,
  difference_analysis,
  pairwise_decide,
  explanation_gen,
};

inline std::string_view to_string(QueryKind k) {
  switch (k) {
    case QueryKind::reduce_topk: return "reduce_topk";
    case QueryKind::full_choice: return "full_choice";
    case QueryKind::pairwise_choice: return "pairwise_choice";
    case QueryKind::similarity_analysis: return "similarity_analysis";
    case QueryKind::difference_analysis: return "difference_analysis";
    case QueryKind::pairwise_decide: return "pairwise_decide";
    case QueryKind::explanation_gen: return "explanation_gen";
  }
  return "?";
}

inline bool is_choice_kind(QueryKind k) {
  return k == QueryKind::reduce_topk || k == QueryKind::full_choice ||
         k == QueryKind::pairwise_choice || k == QueryKind::pairwise_decide;
}

inline bool is_pairwise_kind(QueryKind k) {
  return k == QueryKind::pairwise_choice || k == QueryKind::similarity_analysis ||
         k == QueryKind::difference_analysis || k == QueryKind::pairwise_decide;
}

struct Decoding {
  double temperature = 0.0;
  int max_tokens = 512;
  std::optional<std::uint64_t> seed;

  bool operator==(const Decoding&) const = default;
};

/// Structured request handed to a backend. For pairwise kinds options are
/// (label1, label2) in slot order. For explanation_gen options holds the
/// exemplar's gold label. thoughts carries z_s, then z_d.
struct ModelQuery {
  QueryKind kind = QueryKind::full_choice;
  std::string text;
  std::vector<LabelId> options;
  std::optional<std::size_t> top_k;
  std::optional<std::vector<Exemplar>> demonstrations;
  std::vector<std::string> thoughts;
  bool cot = false;
  Decoding decoding;
  std::optional<std::size_t> prompt_budget_chars;

  bool operator==(const ModelQuery&) const = default;
};

inline void validate(const ModelQuery& q) {
  const std::string kind(to_string(q.kind));
  if (q.options.empty()) throw ValidationError(kind + ": options must be non-empty");
  if (is_pairwise_kind(q.kind) && q.options.size() != 2)
    throw ValidationError(kind + ": pairwise query requires exactly 2 options, got " +
                          std::to_string(q.options.size()));
  if (q.kind == QueryKind::reduce_topk && (!q.top_k || *q.top_k < 1))
    throw ValidationError(kind + ": top_k must be >= 1");
  if (q.kind == QueryKind::difference_analysis && q.thoughts.empty())
    throw ValidationError(kind + ": requires the prior similarity analysis");
  if (q.kind == QueryKind::pairwise_decide && q.thoughts.size() < 2)
    throw ValidationError(kind + ": requires similarity and difference analyses");
  if (q.decoding.temperature < 0.0) throw ValidationError(kind + ": negative temperature");
}

inline nlohmann::json to_json(const Exemplar& e) {
  nlohmann::json j{{"text", e.text}, {"label", e.label}};
  if (e.explanation) j["explanation"] = *e.explanation;
  return j;
}

inline Exemplar exemplar_from_json(const nlohmann::json& j) {
  Exemplar e{j.at("text").get<std::string>(), j.at("label").get<std::string>(), std::nullopt};
  if (j.contains("explanation") && j["explanation"].is_string())
    e.explanation = j["explanation"].get<std::string>();
  return e;
}

/// Canonical encoding; stable key order (nlohmann sorts object keys).
inline nlohmann::json to_json(const ModelQuery& q) {
  nlohmann::json j{{"kind", to_string(q.kind)},
                   {"text", q.text},
                   {"options", q.options},
                   {"cot", q.cot},
                   {"thoughts", q.thoughts},
                   {"temperature", q.decoding.temperature},
                   {"max_tokens", q.decoding.max_tokens}};
  if (q.top_k) j["top_k"] = *q.top_k;
  if (q.decoding.seed) j["seed"] = *q.decoding.seed;
  if (q.prompt_budget_chars) j["prompt_budget_chars"] = *q.prompt_budget_chars;
  if (q.demonstrations) {
    auto demos = nlohmann::json::array();
    for (const auto& d : *q.demonstrations) demos.push_back(to_json(d));
    j["demonstrations"] = std::move(demos);
  }
  return j;
}

struct TokenUsage {
  std::int64_t prompt = 0;
  std::int64_t completion = 0;

  bool operator==(const TokenUsage&) const = default;
};

struct ModelReply {
  std::string text;
  double latency_ms = 0.0;
  std::optional<TokenUsage> usage;
  std::string backend_id;

  bool operator==(const ModelReply&) const = default;
};

inline nlohmann::json to_json(const ModelReply& r) {
  nlohmann::json j{{"text", r.text}, {"latency_ms", r.latency_ms}, {"backend_id", r.backend_id}};
  if (r.usage) j["usage"] = {{"prompt", r.usage->prompt}, {"completion", r.usage->completion}};
  return j;
}

inline ModelReply reply_from_json(const nlohmann::json& j) {
  ModelReply r;
  r.text = j.at("text").get<std::string>();
  r.latency_ms = j.at("latency_ms").get<double>();
  r.backend_id = j.at("backend_id").get<std::string>();
  if (j.contains("usage"))
    r.usage = TokenUsage{j["usage"].at("prompt").get<std::int64_t>(),
                         j["usage"].at("completion").get<std::int64_t>()};
  return r;
}

}  // namespace manyopt
