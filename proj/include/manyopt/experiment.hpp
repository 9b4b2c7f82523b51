#pragma once

// Experiment runner: declarative config, validation before any call, run
// directories with resumable transcripts, and report emission.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "manyopt/arena.hpp"
#include "manyopt/bias.hpp"
#include "manyopt/cluster.hpp"
#include "manyopt/core.hpp"
#include "manyopt/embed.hpp"
#include "manyopt/explain.hpp"
#include "manyopt/gateway.hpp"
#include "manyopt/http_backend.hpp"
#include "manyopt/metrics.hpp"
#include "manyopt/oracle.hpp"
#include "manyopt/pipeline.hpp"
#include "manyopt/prompt.hpp"
#include "manyopt/reduction.hpp"

namespace manyopt {

namespace fs = std::filesystem;

enum class Command { ingest, reduce, classify, bias_sweep, sample_challenge, report };

inline std::string_view to_string(Command c) {
  switch (c) {
    case Command::ingest: return "ingest";
    case Command::reduce: return "reduce";
    case Command::classify: return "classify";
    case Command::bias_sweep: return "bias-sweep";
    case Command::sample_challenge: return "sample-challenge";
    case Command::report: return "report";
  }
  return "?";
}

/// CLI flags applied on top of the config file.
struct ConfigOverrides {
  std::optional<std::string> backend;
  std::optional<std::string> strategy;
  std::optional<std::string> method;
  std::optional<std::size_t> repeats;
  std::optional<std::uint64_t> seed;
  std::optional<std::vector<std::size_t>> positions;
  std::optional<std::string> cache_dir;
  std::optional<std::string> out_dir;
};

struct EmbeddingSpec {
  std::string kind = "hashed";  // hashed | file | http
  std::size_t dim = 64;
  std::string path;
  HttpBackendConfig http;
};

struct ExperimentConfig {
  std::string catalog;
  std::string dataset;
  std::string train;
  std::string margins;

  std::string backend_kind = "scripted";  // scripted | http
  std::size_t parallelism = 4;
  HttpBackendConfig http;
  ScriptedOracleConfig oracle;
  std::optional<ScriptedOracleConfig> reduction_oracle;  // stage-1 judge, scripted only
  EmbeddingSpec embeddings;

  ReductionConfig reduction;
  ComparisonConfig comparison;

  std::optional<std::size_t> demos_per_label;
  std::uint64_t demos_seed = 0;

  bool shuffle_options = false;  // arrangement of Y per instance
  std::size_t repeats = 1;
  std::vector<std::uint64_t> seeds;
  std::vector<std::size_t> positions;
  std::optional<std::size_t> challenge_count;
  std::optional<double> challenge_fraction;
  std::optional<std::size_t> limit;  // first n dataset instances

  std::string cache_dir;
  bool cache_enabled = true;
  std::string out_dir;

  nlohmann::json snapshot;  // resolved config as written to the run directory
  std::vector<std::string> problems;  // parse-time findings, raised with the input checks
};

namespace detail {

/// Replaces ${NAME} with the environment value; unset names are reported.
inline std::string interpolate(const std::string& s, std::vector<std::string>& errors) {
  static const std::regex var(R"(\$\{([A-Za-z_][A-Za-z0-9_]*)\})");
  std::string out;
  auto begin = std::sregex_iterator(s.begin(), s.end(), var);
  std::size_t last = 0;
  for (auto it = begin; it != std::sregex_iterator(); ++it) {
    out += s.substr(last, static_cast<std::size_t>(it->position()) - last);
    const auto name = (*it)[1].str();
    if (const char* v = std::getenv(name.c_str())) {
      out += v;
    } else {
      errors.push_back("environment variable " + name + " is not set");
    }
    last = static_cast<std::size_t>(it->position() + it->length());
  }
  out += s.substr(last);
  return out;
}

inline void interpolate_all(nlohmann::json& j, std::vector<std::string>& errors) {
  if (j.is_string()) {
    j = interpolate(j.get<std::string>(), errors);
  } else if (j.is_structured()) {
    for (auto& v : j) interpolate_all(v, errors);
  }
}

inline std::string resolve_path(const fs::path& base, const std::string& p) {
  if (p.empty()) return p;
  fs::path path(p);
  return (path.is_absolute() ? path : base / path).lexically_normal().string();
}

template <typename T, typename F>
void field(const nlohmann::json& j, const char* key, T& out, std::vector<std::string>& errors,
           const std::string& where, F&& convert) {
  if (!j.contains(key) || j[key].is_null()) return;
  try {
    out = convert(j[key]);
  } catch (const std::exception& e) {
    errors.push_back(where + "." + key + ": " + e.what());
  }
}

template <typename T>
void field(const nlohmann::json& j, const char* key, T& out, std::vector<std::string>& errors,
           const std::string& where) {
  field(j, key, out, errors, where, [](const nlohmann::json& v) { return v.get<T>(); });
}

inline void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                       const std::string& where, std::vector<std::string>& errors) {
  if (!j.is_object()) {
    errors.push_back(where + " must be an object");
    return;
  }
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.contains(it.key())) errors.push_back(where + ": unknown key \"" + it.key() + "\"");
}

inline std::string join_errors(const std::vector<std::string>& errors) {
  std::string msg = std::to_string(errors.size()) + " configuration problem(s):";
  for (const auto& e : errors) msg += "\n  - " + e;
  return msg;
}

}  // namespace detail

/// Parses a config document. `base_dir` anchors relative paths. Problems are
/// collected in `problems` and raised by validate_inputs together with the
/// file checks.
inline ExperimentConfig parse_config(nlohmann::json raw, const fs::path& base_dir,
                                     const ConfigOverrides& ov = {}) {
  std::vector<std::string> errors;
  detail::check_keys(raw,
                     {"catalog", "dataset", "train", "margins", "backend", "oracle",
                      "reduction_oracle", "embeddings", "reduction", "comparison", "demonstrations",
                      "arrangement", "repeats", "seed", "seeds", "positions", "challenge", "limit",
                      "cache_dir", "cache", "out_dir"},
                     "config", errors);
  if (!raw.is_object()) throw ValidationError(detail::join_errors(errors));

  // CLI overrides, applied to the document so the snapshot shows them.
  if (ov.backend) raw["backend"]["kind"] = *ov.backend;
  if (ov.strategy) raw["reduction"]["strategy"] = *ov.strategy;
  if (ov.method) raw["comparison"]["method"] = *ov.method;
  if (ov.seed) {
    raw["seed"] = *ov.seed;
    raw.erase("seeds");
  }
  if (ov.repeats) {
    raw["repeats"] = *ov.repeats;
    if (raw.contains("seeds") && raw["seeds"].is_array() && raw["seeds"].size() != *ov.repeats)
      raw.erase("seeds");
  }
  if (ov.positions) raw["positions"] = *ov.positions;
  if (ov.cache_dir) raw["cache_dir"] = *ov.cache_dir;
  if (ov.out_dir) raw["out_dir"] = *ov.out_dir;

  detail::interpolate_all(raw, errors);

  ExperimentConfig c;
  auto path_field = [&](const char* key, std::string& out) {
    detail::field(raw, key, out, errors, "config");
    out = detail::resolve_path(base_dir, out);
    if (!out.empty()) raw[key] = out;
  };
  path_field("catalog", c.catalog);
  path_field("dataset", c.dataset);
  path_field("train", c.train);
  path_field("margins", c.margins);
  path_field("cache_dir", c.cache_dir);
  path_field("out_dir", c.out_dir);
  detail::field(raw, "cache", c.cache_enabled, errors, "config");

  if (raw.contains("backend")) {
    const auto& b = raw["backend"];
    detail::check_keys(b,
                       {"kind", "parallelism", "base_url", "model", "api_key_env", "timeout_s",
                        "attempts", "backoff_ms"},
                       "backend", errors);
    detail::field(b, "kind", c.backend_kind, errors, "backend");
    detail::field(b, "parallelism", c.parallelism, errors, "backend");
    detail::field(b, "base_url", c.http.base_url, errors, "backend");
    detail::field(b, "model", c.http.model, errors, "backend");
    detail::field(b, "api_key_env", c.http.api_key_env, errors, "backend");
    detail::field(b, "timeout_s", c.http.timeout_s, errors, "backend");
    detail::field(b, "attempts", c.http.attempts, errors, "backend");
    detail::field(b, "backoff_ms", c.http.backoff_ms, errors, "backend");
  }
  if (c.backend_kind != "scripted" && c.backend_kind != "http")
    errors.push_back("backend.kind must be \"scripted\" or \"http\", got \"" + c.backend_kind + "\"");
  if (c.parallelism < 1) errors.push_back("backend.parallelism must be >= 1");
  if (c.backend_kind == "http") {
    try {
      HttpEndpoint::parse(c.http.base_url);
    } catch (const std::exception& e) {
      errors.push_back(std::string("backend.base_url: ") + e.what());
    }
  }
  if (c.backend_kind == "http" && raw.contains("reduction_oracle"))
    errors.push_back("reduction_oracle applies to the scripted backend only");

  auto oracle_field = [&](const char* key) -> std::optional<ScriptedOracleConfig> {
    if (!raw.contains(key)) return std::nullopt;
    try {
      if (raw[key].is_string() && raw[key] == "faithful") return ScriptedOracleConfig::faithful();
      return oracle_config_from_json(raw[key]);
    } catch (const std::exception& e) {
      errors.push_back(std::string(key) + ": " + e.what());
      return std::nullopt;
    }
  };
  if (auto o = oracle_field("oracle")) c.oracle = *o;
  c.reduction_oracle = oracle_field("reduction_oracle");

  if (raw.contains("embeddings")) {
    const auto& e = raw["embeddings"];
    detail::check_keys(e, {"kind", "dim", "path", "base_url", "model", "api_key_env", "timeout_s"},
                       "embeddings", errors);
    detail::field(e, "kind", c.embeddings.kind, errors, "embeddings");
    detail::field(e, "dim", c.embeddings.dim, errors, "embeddings");
    detail::field(e, "path", c.embeddings.path, errors, "embeddings");
    c.embeddings.path = detail::resolve_path(base_dir, c.embeddings.path);
    c.embeddings.http = c.http;
    c.embeddings.http.model = "text-embedding-3-small";
    detail::field(e, "base_url", c.embeddings.http.base_url, errors, "embeddings");
    detail::field(e, "model", c.embeddings.http.model, errors, "embeddings");
    detail::field(e, "api_key_env", c.embeddings.http.api_key_env, errors, "embeddings");
    detail::field(e, "timeout_s", c.embeddings.http.timeout_s, errors, "embeddings");
    if (!c.embeddings.path.empty()) raw["embeddings"]["path"] = c.embeddings.path;
  }
  if (c.embeddings.kind != "hashed" && c.embeddings.kind != "file" && c.embeddings.kind != "http")
    errors.push_back("embeddings.kind must be hashed, file or http");
  if (c.embeddings.kind == "file" && c.embeddings.path.empty())
    errors.push_back("embeddings.path is required for kind \"file\"");

  if (raw.contains("reduction")) {
    const auto& r = raw["reduction"];
    detail::check_keys(r,
                       {"strategy", "target", "votes", "vote_temperature", "max_steps", "clusters",
                        "per_cluster", "itr_schedule", "max_tokens"},
                       "reduction", errors);
    detail::field(r, "strategy", c.reduction.strategy, errors, "reduction",
                  [](const nlohmann::json& v) { return reduction_strategy_from(v.get<std::string>()); });
    detail::field(r, "target", c.reduction.target, errors, "reduction");
    detail::field(r, "votes", c.reduction.votes, errors, "reduction");
    detail::field(r, "vote_temperature", c.reduction.vote_temperature, errors, "reduction");
    detail::field(r, "max_steps", c.reduction.max_steps, errors, "reduction");
    detail::field(r, "clusters", c.reduction.clusters, errors, "reduction");
    detail::field(r, "per_cluster", c.reduction.per_cluster, errors, "reduction");
    detail::field(r, "itr_schedule", c.reduction.itr_schedule, errors, "reduction");
    detail::field(r, "max_tokens", c.reduction.max_tokens, errors, "reduction");
  }
  try {
    c.reduction.validate();
  } catch (const std::exception& e) {
    errors.push_back(std::string("reduction: ") + e.what());
  }

  if (raw.contains("comparison")) {
    const auto& m = raw["comparison"];
    detail::check_keys(m,
                       {"method", "shots", "pair_order", "randomize_pair_positions", "max_tokens",
                        "prompt_budget_chars"},
                       "comparison", errors);
    detail::field(m, "method", c.comparison.method, errors, "comparison",
                  [](const nlohmann::json& v) { return comparison_method_from(v.get<std::string>()); });
    detail::field(m, "shots", c.comparison.shots, errors, "comparison");
    detail::field(m, "pair_order", c.comparison.pair_order, errors, "comparison",
                  [](const nlohmann::json& v) {
                    const auto s = v.get<std::string>();
                    if (s == "reduction_rank") return PairOrder::reduction_rank_fifo;
                    if (s == "shuffled") return PairOrder::seeded_shuffle;
                    throw ValidationError("expected reduction_rank or shuffled, got " + s);
                  });
    detail::field(m, "randomize_pair_positions", c.comparison.randomize_pair_positions, errors,
                  "comparison");
    detail::field(m, "max_tokens", c.comparison.max_tokens, errors, "comparison");
    detail::field(m, "prompt_budget_chars", c.comparison.prompt_budget_chars, errors, "comparison",
                  [](const nlohmann::json& v) { return std::optional<std::size_t>(v.get<std::size_t>()); });
  }

  if (raw.contains("demonstrations")) {
    const auto& d = raw["demonstrations"];
    detail::check_keys(d, {"per_label", "seed"}, "demonstrations", errors);
    detail::field(d, "per_label", c.demos_per_label, errors, "demonstrations",
                  [](const nlohmann::json& v) { return std::optional<std::size_t>(v.get<std::size_t>()); });
    detail::field(d, "seed", c.demos_seed, errors, "demonstrations");
  }

  std::string arrangement = "as_is";
  detail::field(raw, "arrangement", arrangement, errors, "config");
  if (arrangement != "as_is" && arrangement != "shuffled")
    errors.push_back("arrangement must be \"as_is\" or \"shuffled\"");
  c.shuffle_options = arrangement == "shuffled";

  detail::field(raw, "repeats", c.repeats, errors, "config");
  std::uint64_t seed = 1;
  detail::field(raw, "seed", seed, errors, "config");
  if (raw.contains("seeds")) {
    detail::field(raw, "seeds", c.seeds, errors, "config");
  } else {
    for (std::size_t i = 0; i < c.repeats; ++i) c.seeds.push_back(seed + i);
    raw["seeds"] = c.seeds;
  }
  if (c.repeats < 1) errors.push_back("repeats must be >= 1");
  if (c.seeds.size() != c.repeats)
    errors.push_back("seeds lists " + std::to_string(c.seeds.size()) + " values for " +
                     std::to_string(c.repeats) + " repeats");
  if (std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() != c.seeds.size())
    errors.push_back("seeds must be distinct");

  detail::field(raw, "positions", c.positions, errors, "config");
  detail::field(raw, "limit", c.limit, errors, "config",
                [](const nlohmann::json& v) { return std::optional<std::size_t>(v.get<std::size_t>()); });
  if (raw.contains("challenge")) {
    const auto& ch = raw["challenge"];
    detail::check_keys(ch, {"count", "fraction"}, "challenge", errors);
    detail::field(ch, "count", c.challenge_count, errors, "challenge",
                  [](const nlohmann::json& v) { return std::optional<std::size_t>(v.get<std::size_t>()); });
    detail::field(ch, "fraction", c.challenge_fraction, errors, "challenge",
                  [](const nlohmann::json& v) { return std::optional<double>(v.get<double>()); });
    if (c.challenge_count && c.challenge_fraction)
      errors.push_back("challenge: give count or fraction, not both");
  }

  c.problems = std::move(errors);
  c.snapshot = std::move(raw);
  return c;
}

inline ExperimentConfig load_config(const std::string& path, const ConfigOverrides& ov = {}) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file: " + path);
  nlohmann::json raw;
  try {
    in >> raw;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("config " + path + ": " + e.what());
  }
  return parse_config(std::move(raw), fs::absolute(path).parent_path(), ov);
}

/// Files and data a command needs, loaded and checked before any call.
struct ExperimentInputs {
  LabelCatalog catalog;
  std::vector<Instance> dataset;
  std::vector<Instance> train;
  DemonstrationStore store;
};

/// Loads every input the command touches and checks cross-field rules. All
/// problems are raised together.
inline ExperimentInputs validate_inputs(const ExperimentConfig& c, Command cmd) {
  std::vector<std::string> errors = c.problems;
  ExperimentInputs in;
  const bool runs_model = cmd == Command::reduce || cmd == Command::classify ||
                          cmd == Command::bias_sweep;

  auto need_file = [&](const std::string& path, const char* what) {
    if (path.empty()) {
      errors.push_back(std::string(what) + " path is not set");
      return false;
    }
    if (!fs::is_regular_file(path)) {
      errors.push_back(std::string(what) + " file not found: " + path);
      return false;
    }
    return true;
  };

  if (cmd != Command::report && c.out_dir.empty()) errors.push_back("out_dir is not set");

  bool have_catalog = false;
  if (need_file(c.catalog, "catalog")) {
    try {
      in.catalog = load_catalog(c.catalog);
      have_catalog = true;
    } catch (const std::exception& e) {
      errors.push_back(e.what());
    }
  }
  if (cmd != Command::report && need_file(c.dataset, "dataset") && have_catalog) {
    try {
      in.dataset = load_dataset(c.dataset, in.catalog);
      if (c.limit && *c.limit < in.dataset.size()) in.dataset.resize(*c.limit);
    } catch (const std::exception& e) {
      errors.push_back("dataset " + c.dataset + ": " + e.what());
    }
  }
  if (cmd == Command::sample_challenge) {
    need_file(c.margins, "margins");
    if (!c.challenge_count && !c.challenge_fraction)
      errors.push_back("challenge.count or challenge.fraction is required");
  }

  const auto method = c.comparison.method;
  const bool full = is_full_option(method);
  const bool wants_demos = cmd == Command::classify || cmd == Command::bias_sweep;
  if (!c.train.empty() && need_file(c.train, "train") && have_catalog) {
    try {
      in.train = load_dataset(c.train, in.catalog);
      in.store = DemonstrationStore::from_instances(in.train, in.catalog, c.demos_per_label,
                                                    c.demos_seed);
    } catch (const std::exception& e) {
      errors.push_back("train " + c.train + ": " + e.what());
    }
  }
  if (wants_demos && uses_demonstrations(method) && c.comparison.shots > 0) {
    if (c.train.empty()) {
      errors.push_back("comparison.method " + std::string(to_string(method)) +
                       " uses demonstrations; set \"train\" or comparison.shots = 0");
    } else if (have_catalog && !full && in.store.total() > 0) {
      std::vector<std::string> missing;
      for (const auto& l : in.catalog.labels())
        if (in.store.exemplars(l).empty()) missing.push_back(l);
      if (!missing.empty())
        errors.push_back("train has no exemplars for " + std::to_string(missing.size()) +
                         " label(s), first: " + missing.front());
    }
  }

  if (runs_model && have_catalog) {
    const auto strategy = full ? ReductionStrategy::none : c.reduction.strategy;
    const bool needs_embeddings =
        (cmd == Command::reduce || !full) && strategy == ReductionStrategy::cbwr &&
        in.catalog.size() > c.reduction.clusters * c.reduction.per_cluster;
    if (needs_embeddings && c.embeddings.kind == "file") need_file(c.embeddings.path, "embeddings");
  }
  if (cmd == Command::bias_sweep && have_catalog) {
    if (c.positions.empty()) errors.push_back("bias-sweep needs at least one position");
    for (auto p : c.positions)
      if (p >= in.catalog.size())
        errors.push_back("position " + std::to_string(p) + " outside [0, " +
                         std::to_string(in.catalog.size()) + ")");
  }
  if (c.reduction_oracle && c.backend_kind != "scripted")
    errors.push_back("reduction_oracle requires the scripted backend");

  if (!errors.empty()) throw ValidationError(detail::join_errors(errors));
  return in;
}

/// Replaces the configured backends, for tests and embedding.
struct ExperimentHooks {
  std::shared_ptr<Backend> backend;
  std::shared_ptr<Backend> reduction_backend;
  std::shared_ptr<EmbeddingSource> embeddings;
};

struct CommandResult {
  std::vector<fs::path> written;
  std::size_t backend_calls = 0;
  std::size_t cache_hits = 0;
  std::size_t processed = 0;  // instances run in this invocation
  std::size_t resumed = 0;    // instances found already complete
  std::string summary;
};

namespace detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

inline void write_file(const fs::path& p, const std::string& content) {
  fs::create_directories(p.parent_path());
  const auto tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp);
    out << content;
  }
  fs::rename(tmp, p);
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Renders prompts instead of sending them; replies come from a noise-free
/// oracle so multi-step flows proceed.
class DryRunBackend final : public Backend {
public:
  explicit DryRunBackend(GoldLookup golds)
      : inner_(ScriptedOracleConfig::faithful(), std::move(golds)) {}

  std::string id() const override { return "dry-run"; }
  std::string cache_material(const ModelQuery& q) const override { return to_json(q).dump(); }

  ModelReply complete(const ModelQuery& q) override {
    std::lock_guard lock(mutex_);
    log_ += "### call " + std::to_string(++count_) + " (" + std::string(to_string(q.kind)) + ")\n";
    log_ += prompt::render(q) + "\n\n";
    return inner_.complete(q);
  }

  std::string log() const { return log_; }
  std::size_t count() const { return count_; }

private:
  ScriptedOracle inner_;
  std::mutex mutex_;
  std::string log_;
  std::size_t count_ = 0;
};

}  // namespace detail

/// Key of one persisted outcome.
inline std::string transcript_key(Command cmd, std::uint64_t seed, std::size_t instance,
                                  std::string_view method, std::string_view strategy) {
  return std::string(to_string(cmd)) + "/" + std::to_string(seed) + "/" + std::to_string(instance) +
         "/" + std::string(method) + "/" + std::string(strategy);
}

struct TranscriptLine {
  std::string key;
  Command command = Command::classify;
  std::size_t repeat = 0;
  std::uint64_t repeat_seed = 0;
  InstanceOutcome outcome;
};

inline nlohmann::json to_json(const TranscriptLine& t) {
  return {{"key", t.key},
          {"command", to_string(t.command)},
          {"repeat", t.repeat},
          {"repeat_seed", t.repeat_seed},
          {"outcome", to_json(t.outcome)}};
}

inline TranscriptLine transcript_line_from_json(const nlohmann::json& j) {
  TranscriptLine t;
  t.key = j.at("key").get<std::string>();
  t.command = j.at("command") == "reduce" ? Command::reduce : Command::classify;
  t.repeat = j.at("repeat").get<std::size_t>();
  t.repeat_seed = j.at("repeat_seed").get<std::uint64_t>();
  t.outcome = outcome_from_json(j.at("outcome"));
  return t;
}

/// Reads transcripts.jsonl; a truncated trailing line from an interrupted
/// write is dropped with a warning.
inline std::vector<TranscriptLine> read_transcripts(const fs::path& path) {
  std::vector<TranscriptLine> out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    try {
      out.push_back(transcript_line_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      std::cerr << "warning: " << path.string() << " line " << lineno
                << " unreadable, will be recomputed: " << e.what() << '\n';
    }
  }
  return out;
}

namespace detail {

inline bool line_order(const TranscriptLine& a, const TranscriptLine& b) {
  return std::tie(a.command, a.repeat, a.outcome.instance, a.key) <
         std::tie(b.command, b.repeat, b.outcome.instance, b.key);
}

inline nlohmann::json summary_json(const Summary& s) {
  return {{"mean", s.mean}, {"std", s.stddev}, {"n", s.n}};
}

inline nlohmann::json accounting_json(const std::vector<CallAccountingRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows)
    out.push_back({{"stage", r.method},
                   {"items", r.items},
                   {"mean_calls", r.mean_calls},
                   {"mean_latency_ms", r.mean_latency_ms},
                   {"time_per_1000_items_s", r.time_per_1000_items_s}});
  return out;
}

inline std::string accounting_csv(const std::vector<CallAccountingRow>& rows) {
  std::string csv = "stage,items,mean_calls,mean_latency_ms,time_per_1000_items_s\n";
  for (const auto& r : rows)
    csv += csv_field(r.method) + "," + std::to_string(r.items) + "," + fmt(r.mean_calls) + "," +
           fmt(r.mean_latency_ms) + "," + fmt(r.time_per_1000_items_s) + "\n";
  return csv;
}

}  // namespace detail

/// Aggregates persisted transcripts into report files. Pure function of the
/// transcripts and the config snapshot; makes no calls.
inline std::vector<fs::path> write_reports(const fs::path& run_dir, const nlohmann::json& snapshot,
                                           std::vector<TranscriptLine> lines) {
  std::stable_sort(lines.begin(), lines.end(), detail::line_order);
  std::vector<fs::path> written;
  const auto reports = run_dir / "reports";

  for (Command cmd : {Command::reduce, Command::classify}) {
    std::map<std::size_t, std::vector<const TranscriptLine*>> by_repeat;
    for (const auto& l : lines)
      if (l.command == cmd) by_repeat[l.repeat].push_back(&l);
    if (by_repeat.empty()) continue;

    const std::size_t k = snapshot.contains("reduction")
                              ? snapshot["reduction"].value("target", std::size_t{5})
                              : std::size_t{5};
    nlohmann::json per_repeat = nlohmann::json::array();
    std::vector<double> accs, hits;
    std::vector<std::uint64_t> seeds;
    std::vector<CallRecord> calls;
    std::string acc_csv = "repeat,seed,instances,accuracy,hit_at_k\n";
    std::size_t abstained = 0, defaulted = 0, padded = 0;
    bool hit_defined = true;
    for (const auto& [repeat, list] : by_repeat) {
      std::vector<Prediction> preds;
      std::vector<LabelId> golds;
      std::vector<std::vector<LabelId>> reduced;
      for (const auto* l : list) {
        const auto& o = l->outcome;
        golds.push_back(o.gold);
        preds.push_back(o.prediction());
        reduced.push_back(o.reduction.reduced);
        if (o.reduction.reduced.size() > k) hit_defined = false;
        if (cmd == Command::classify && !o.prediction()) ++abstained;
        for (const auto& p : o.comparison.pairs) defaulted += p.defaulted ? 1 : 0;
        for (const auto& s : o.reduction.trace) padded += s.padded > 0 ? 1 : 0;
        calls.push_back({"reduce:" + l->key.substr(l->key.rfind('/') + 1), o.reduction.calls,
                         o.reduction.latency_ms});
        if (cmd == Command::classify) {
          const std::string m(to_string(o.comparison.method));
          calls.push_back({"compare:" + m, o.comparison.calls, o.comparison.latency_ms});
          calls.push_back({"total", o.reduction.calls + o.comparison.calls,
                           o.reduction.latency_ms + o.comparison.latency_ms});
        }
      }
      nlohmann::json row{{"repeat", repeat},
                         {"seed", list.front()->repeat_seed},
                         {"instances", list.size()}};
      seeds.push_back(list.front()->repeat_seed);
      std::optional<double> acc, hit;
      if (cmd == Command::classify) {
        acc = accuracy(preds, golds);
        accs.push_back(*acc);
        row["accuracy"] = *acc;
      }
      if (hit_defined) {
        hit = hit_at_k(reduced, golds, k);
        hits.push_back(*hit);
        row["hit_at_k"] = *hit;
      }
      per_repeat.push_back(row);
      acc_csv += std::to_string(repeat) + "," + std::to_string(list.front()->repeat_seed) + "," +
                 std::to_string(list.size()) + "," + (acc ? detail::fmt(*acc) : "") + "," +
                 (hit ? detail::fmt(*hit) : "") + "\n";
    }
    const auto accounting = call_accounting(calls);
    nlohmann::json report{{"command", to_string(cmd)},
                          {"config", snapshot},
                          {"seeds", seeds},
                          {"k", k},
                          {"repeats", per_repeat},
                          {"calls", detail::accounting_json(accounting)},
                          {"abstained", abstained},
                          {"defaulted_pairs", defaulted},
                          {"padded_reduction_steps", padded}};
    if (!accs.empty()) report["accuracy"] = detail::summary_json(summarize(accs));
    if (hit_defined && !hits.empty()) report["hit_at_k"] = detail::summary_json(summarize(hits));
    if (!hit_defined) report["hit_at_k"] = nullptr;

    const std::string name(to_string(cmd));
    const auto json_path = reports / (name + ".json");
    detail::write_file(json_path, report.dump(2) + "\n");
    written.push_back(json_path);
    const auto table = reports / (cmd == Command::classify ? "accuracy.csv" : "hit_at_k.csv");
    detail::write_file(table, acc_csv);
    written.push_back(table);
    const auto calls_path = reports / (name + "_calls.csv");
    detail::write_file(calls_path, detail::accounting_csv(accounting));
    written.push_back(calls_path);

    // Silhouette against accuracy, when ingest measured the dataset.
    const auto sil_path = reports / "silhouette.json";
    if (cmd == Command::classify && !accs.empty() && fs::exists(sil_path)) {
      const auto sil = nlohmann::json::parse(detail::read_file(sil_path));
      const auto acc = summarize(accs);
      const auto out = reports / "silhouette_accuracy.csv";
      detail::write_file(out, "dataset,silhouette,accuracy_mean,accuracy_std\n" +
                                  detail::csv_field(sil.value("dataset", std::string())) + "," +
                                  detail::fmt(sil.at("mean").get<double>()) + "," +
                                  detail::fmt(acc.mean) + "," + detail::fmt(acc.stddev) + "\n");
      written.push_back(out);
    }
  }
  return written;
}

/// One configured experiment bound to a run directory.
class Experiment {
public:
  Experiment(ExperimentConfig cfg, ExperimentHooks hooks = {})
      : cfg_(std::move(cfg)), hooks_(std::move(hooks)), run_dir_(cfg_.out_dir) {}

  const ExperimentConfig& config() const { return cfg_; }
  const fs::path& run_dir() const { return run_dir_; }

  CommandResult run(Command cmd, bool dry_run = false) {
    const auto start = std::chrono::steady_clock::now();
    CommandResult res;
    if (cmd == Command::report) {
      res = report();
    } else {
      auto in = validate_inputs(cfg_, cmd);
      check_run_dir();
      if (dry_run) {
        res = dry(cmd, in);
      } else {
        switch (cmd) {
          case Command::ingest: res = ingest(in); break;
          case Command::reduce:
          case Command::classify: res = run_instances(cmd, in); break;
          case Command::bias_sweep: res = bias_sweep(in); break;
          case Command::sample_challenge: res = sample_challenge(in); break;
          case Command::report: break;
        }
      }
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!dry_run && cmd != Command::report) record_timing(cmd, secs, res);
    return res;
  }

private:
  fs::path transcripts_path() const { return run_dir_ / "transcripts.jsonl"; }

  /// Writes the config snapshot, or refuses a directory holding a different run.
  void check_run_dir() {
    fs::create_directories(run_dir_);
    const auto path = run_dir_ / "config.json";
    const auto text = cfg_.snapshot.dump(2) + "\n";
    if (fs::exists(path)) {
      if (detail::read_file(path) != text)
        throw ValidationError("run directory " + run_dir_.string() +
                              " holds a run with a different config; choose another out_dir");
      return;
    }
    detail::write_file(path, text);
  }

  void record_timing(Command cmd, double secs, const CommandResult& res) {
    const auto path = run_dir_ / "timing.json";
    nlohmann::json t = nlohmann::json::object();
    if (fs::exists(path)) {
      try {
        t = nlohmann::json::parse(detail::read_file(path));
      } catch (...) {
        t = nlohmann::json::object();
      }
    }
    t[std::string(to_string(cmd))] = {{"wall_seconds", secs},
                                      {"backend_calls", res.backend_calls},
                                      {"cache_hits", res.cache_hits},
                                      {"processed", res.processed},
                                      {"resumed", res.resumed}};
    detail::write_file(path, t.dump(2) + "\n");
  }

  GatewayOptions gateway_options() const {
    GatewayOptions o;
    if (!cfg_.cache_dir.empty()) o.cache_dir = cfg_.cache_dir;
    o.cache_enabled = cfg_.cache_enabled;
    o.parallelism = cfg_.parallelism;
    return o;
  }

  struct Backends {
    std::unique_ptr<Gateway> judge;
    std::unique_ptr<Gateway> reducer;  // null: judge reduces too
    Gateway& reduce_gw() { return reducer ? *reducer : *judge; }
    std::size_t calls() const {
      return judge->stats().backend_calls + (reducer ? reducer->stats().backend_calls : 0);
    }
    std::size_t hits() const {
      return judge->stats().cache_hits + (reducer ? reducer->stats().cache_hits : 0);
    }
  };

  Backends make_backends(const ExperimentInputs& in) const {
    Backends b;
    auto golds = ScriptedOracle::golds_from(in.dataset);
    for (const auto& t : in.train) golds.emplace(t.text, t.gold);
    std::shared_ptr<Backend> judge = hooks_.backend;
    if (!judge) {
      if (cfg_.backend_kind == "http")
        judge = std::make_shared<HttpChatBackend>(cfg_.http);
      else
        judge = std::make_shared<ScriptedOracle>(cfg_.oracle, golds);
    }
    b.judge = std::make_unique<Gateway>(judge, gateway_options());
    std::shared_ptr<Backend> reducer = hooks_.reduction_backend;
    if (!reducer && cfg_.reduction_oracle)
      reducer = std::make_shared<ScriptedOracle>(*cfg_.reduction_oracle, golds);
    if (reducer) b.reducer = std::make_unique<Gateway>(reducer, gateway_options());
    return b;
  }

  std::shared_ptr<EmbeddingSource> embedding_source() const {
    if (hooks_.embeddings) return hooks_.embeddings;
    if (cfg_.embeddings.kind == "file")
      return std::make_shared<FileEmbeddingSource>(cfg_.embeddings.path);
    if (cfg_.embeddings.kind == "http")
      return std::make_shared<HttpEmbeddingSource>(cfg_.embeddings.http);
    return std::make_shared<HashedNgramSource>(cfg_.embeddings.dim);
  }

  ReductionStrategy effective_strategy() const {
    return is_full_option(cfg_.comparison.method) ? ReductionStrategy::none
                                                  : cfg_.reduction.strategy;
  }

  PipelineConfig pipeline_config(Command cmd) const {
    PipelineConfig p{cfg_.reduction, cfg_.comparison};
    if (cmd != Command::reduce) p.reduction.strategy = effective_strategy();
    return p;
  }

  std::optional<EmbeddingMatrix> label_embeddings(const ExperimentInputs& in,
                                                  ReductionStrategy s) const {
    if (s != ReductionStrategy::cbwr ||
        in.catalog.size() <= cfg_.reduction.clusters * cfg_.reduction.per_cluster)
      return std::nullopt;
    auto src = embedding_source();
    return embed(in.catalog.labels(), *src);
  }

  std::vector<LabelId> options_for(const ExperimentInputs& in, const Instance& inst,
                                   std::uint64_t iseed) const {
    const auto spec = cfg_.shuffle_options
                          ? ArrangementSpec::shuffled(rng::derive(iseed, "arrange"))
                          : ArrangementSpec::as_is();
    return arrange(in.catalog, spec, inst.gold);
  }

  /// Fills in explanations for CoT few-shot methods; cached and idempotent.
  void prepare_demonstrations(ExperimentInputs& in, Gateway& gw, CommandResult& res) const {
    if (!needs_explanations(cfg_.comparison.method) || cfg_.comparison.shots == 0) return;
    auto rep = generate_explanations(in.store, gw, cfg_.comparison.max_tokens);
    if (!rep.failures.empty())
      throw BackendError("explanation generation failed for " +
                             std::to_string(rep.failures.size()) + " exemplar(s); first: " +
                             rep.failures.front(),
                         1, true);
    res.summary += "explanations generated: " + std::to_string(rep.annotated) + "\n";
  }

  CommandResult ingest(ExperimentInputs& in) {
    CommandResult res;
    std::map<LabelId, std::size_t> counts;
    for (const auto& inst : in.dataset) ++counts[inst.gold];
    nlohmann::json per_label = nlohmann::json::object();
    for (const auto& l : in.catalog.labels()) per_label[l] = counts[l];
    nlohmann::json summary{{"config", cfg_.snapshot},
                           {"labels", in.catalog.size()},
                           {"instances", in.dataset.size()},
                           {"train_instances", in.train.size()},
                           {"per_label", per_label}};
    const auto reports = run_dir_ / "reports";
    auto path = reports / "ingest.json";

    // Silhouette of sentence embeddings grouped by gold label.
    if (counts.size() >= 2) {
      std::vector<std::string> texts, classes;
      for (const auto& inst : in.dataset) {
        texts.push_back(inst.text);
        classes.push_back(inst.gold);
      }
      auto src = embedding_source();
      const auto m = embed(texts, *src);
      const auto sil = silhouette(m, classes);
      nlohmann::json sj{{"dataset", fs::path(cfg_.dataset).filename().string()},
                        {"embeddings", cfg_.embeddings.kind},
                        {"mean", sil.mean},
                        {"instances", sil.scores.size()}};
      detail::write_file(reports / "silhouette.json", sj.dump(2) + "\n");
      res.written.push_back(reports / "silhouette.json");
      std::string csv = "index,label,silhouette\n";
      for (std::size_t i = 0; i < sil.scores.size(); ++i)
        csv += std::to_string(in.dataset[i].index) + "," + detail::csv_field(classes[i]) + "," +
               detail::fmt(sil.scores[i]) + "\n";
      detail::write_file(reports / "silhouette.csv", csv);
      res.written.push_back(reports / "silhouette.csv");
      summary["silhouette"] = sil.mean;
    }

    if (!in.train.empty() && needs_explanations(cfg_.comparison.method)) {
      auto b = make_backends(in);
      prepare_demonstrations(in, *b.judge, res);
      std::string lines;
      for (const auto& [label, list] : in.store.all())
        for (const auto& ex : list) lines += to_json(ex).dump() + "\n";
      detail::write_file(run_dir_ / "demonstrations.jsonl", lines);
      res.written.push_back(run_dir_ / "demonstrations.jsonl");
      res.backend_calls = b.calls();
      res.cache_hits = b.hits();
    }
    detail::write_file(path, summary.dump(2) + "\n");
    res.written.push_back(path);
    res.summary += std::to_string(in.dataset.size()) + " instances over " +
                   std::to_string(in.catalog.size()) + " labels\n";
    return res;
  }

  CommandResult run_instances(Command cmd, ExperimentInputs& in) {
    CommandResult res;
    auto backends = make_backends(in);
    if (cmd == Command::classify) prepare_demonstrations(in, *backends.judge, res);
    const auto pcfg = pipeline_config(cmd);
    const auto strategy = pcfg.reduction.strategy;
    const auto embeddings = label_embeddings(in, strategy);
    const EmbeddingMatrix* emb = embeddings ? &*embeddings : nullptr;
    Pipeline pipeline(pcfg, backends.reduce_gw(), *backends.judge, in.store, emb);
    const std::string method(cmd == Command::classify ? to_string(cfg_.comparison.method) : "-");
    const std::string strat(to_string(strategy));

    auto existing = read_transcripts(transcripts_path());
    std::set<std::string> done;
    for (const auto& l : existing) done.insert(l.key);
    // Drop a torn tail before appending, or the next record lands on it.
    if (fs::exists(transcripts_path())) {
      std::string kept;
      for (const auto& l : existing) kept += to_json(l).dump() + "\n";
      detail::write_file(transcripts_path(), kept);
    }

    struct Job {
      std::size_t repeat;
      std::uint64_t seed;
      const Instance* inst;
      std::string key;
    };
    std::vector<Job> jobs;
    for (std::size_t r = 0; r < cfg_.seeds.size(); ++r)
      for (const auto& inst : in.dataset) {
        auto key = transcript_key(cmd, cfg_.seeds[r], inst.index, method, strat);
        if (done.contains(key)) {
          ++res.resumed;
          continue;
        }
        jobs.push_back({r, cfg_.seeds[r], &inst, std::move(key)});
      }

    std::mutex out_mutex;
    {
      std::ofstream out(transcripts_path(), std::ios::app | std::ios::binary);
      if (!out) throw Error("cannot append to " + transcripts_path().string());
      parallel_for(jobs.size(), cfg_.parallelism, [&](std::size_t j) {
        const auto& job = jobs[j];
        const auto iseed = instance_seed(job.seed, job.inst->index);
        const auto options = options_for(in, *job.inst, iseed);
        TranscriptLine line;
        line.key = job.key;
        line.command = cmd;
        line.repeat = job.repeat;
        line.repeat_seed = job.seed;
        if (cmd == Command::classify) {
          line.outcome = pipeline.run(*job.inst, options, iseed);
        } else {
          auto rcfg = pcfg.reduction;
          rcfg.seed = rng::derive(iseed, "reduce");
          line.outcome.instance = job.inst->index;
          line.outcome.seed = iseed;
          line.outcome.gold = job.inst->gold;
          line.outcome.reduction = reduce(job.inst->text, options, rcfg, backends.reduce_gw(),
                                          ReductionContext{emb});
          line.outcome.comparison.final = std::nullopt;
        }
        const auto text = to_json(line).dump() + "\n";
        std::lock_guard lock(out_mutex);
        out << text;
        out.flush();
      });
    }
    res.processed = jobs.size();
    res.backend_calls = backends.calls();
    res.cache_hits = backends.hits();

    // Canonical order so reruns are byte-identical.
    auto all = read_transcripts(transcripts_path());
    std::map<std::string, TranscriptLine> unique;
    for (auto& l : all) unique.insert_or_assign(l.key, std::move(l));
    std::vector<TranscriptLine> sorted;
    for (auto& [_, l] : unique) sorted.push_back(std::move(l));
    std::stable_sort(sorted.begin(), sorted.end(), detail::line_order);
    std::string text;
    for (const auto& l : sorted) text += to_json(l).dump() + "\n";
    detail::write_file(transcripts_path(), text);
    res.written.push_back(transcripts_path());

    // Report only the slice this config produces.
    std::vector<TranscriptLine> mine;
    for (const auto& l : sorted)
      if (l.command == cmd && l.key.ends_with("/" + method + "/" + strat)) mine.push_back(l);
    auto reports = write_reports(run_dir_, cfg_.snapshot, std::move(mine));
    res.written.insert(res.written.end(), reports.begin(), reports.end());
    res.summary += std::string(to_string(cmd)) + ": " + std::to_string(res.processed) +
                   " instance runs, " + std::to_string(res.resumed) + " resumed, " +
                   std::to_string(res.backend_calls) + " backend calls\n";
    return res;
  }

  CommandResult bias_sweep(ExperimentInputs& in) {
    CommandResult res;
    auto backends = make_backends(in);
    prepare_demonstrations(in, *backends.judge, res);
    const auto pcfg = pipeline_config(Command::bias_sweep);
    const auto embeddings = label_embeddings(in, pcfg.reduction.strategy);
    Pipeline pipeline(pcfg, backends.reduce_gw(), *backends.judge, in.store,
                      embeddings ? &*embeddings : nullptr);
    auto classify = [&](const Instance& inst, const std::vector<LabelId>& options,
                        std::uint64_t seed) { return pipeline.run(inst, options, seed).prediction(); };
    const auto report = position_bias_sweep(in.dataset, in.catalog, classify, cfg_.positions,
                                            cfg_.seeds, cfg_.parallelism);
    auto j = to_json(report);
    j["config"] = cfg_.snapshot;
    const auto reports = run_dir_ / "reports";
    detail::write_file(reports / "bias.json", j.dump(2) + "\n");
    std::string sweep = "position,accuracy,change_rate,change_rate_se,trials\n";
    for (const auto& p : report.positions)
      sweep += std::to_string(p.position) + "," + detail::fmt(p.accuracy) + "," +
               (p.change_rate ? detail::fmt(*p.change_rate) : "") + "," +
               detail::fmt(p.change_rate_se) + "," + std::to_string(p.trials) + "\n";
    detail::write_file(reports / "sweep.csv", sweep);
    std::string tokens = "label,predicted,gold,ratio\n";
    for (const auto& t : report.token_bias)
      tokens += detail::csv_field(t.label) + "," + std::to_string(t.predicted) + "," +
                std::to_string(t.gold) + "," + (t.infinite ? "inf" : detail::fmt(t.ratio)) + "\n";
    detail::write_file(reports / "token_ratio.csv", tokens);
    res.written = {reports / "bias.json", reports / "sweep.csv", reports / "token_ratio.csv"};
    res.processed = in.dataset.size() * cfg_.seeds.size() * (1 + cfg_.positions.size());
    res.backend_calls = backends.calls();
    res.cache_hits = backends.hits();
    res.summary += "baseline accuracy " + detail::fmt(report.baseline_accuracy) + " over " +
                   std::to_string(report.baseline_trials) + " trials\n";
    return res;
  }

  CommandResult sample_challenge(ExperimentInputs& in) {
    CommandResult res;
    std::unordered_map<std::string, LabelId> by_text;
    for (const auto& inst : in.dataset) by_text.emplace(inst.text, inst.gold);
    std::ifstream file(cfg_.margins);
    std::vector<MarginRecord> records;
    std::vector<std::string> errors;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(file, line)) {
      ++lineno;
      if (text::trim(line).empty()) continue;
      const std::string where = "margins line " + std::to_string(lineno) + ": ";
      try {
        const auto j = nlohmann::json::parse(line);
        MarginRecord r;
        r.index = records.size();
        r.text = j.at("text").get<std::string>();
        r.probs = j.at("probs").get<std::vector<double>>();
        if (r.probs.size() != in.catalog.size()) {
          errors.push_back(where + std::to_string(r.probs.size()) + " probabilities for " +
                           std::to_string(in.catalog.size()) + " labels");
          continue;
        }
        if (j.contains("label")) {
          r.label = std::string(text::trim(j["label"].get<std::string>()));
          if (!in.catalog.contains(*r.label)) {
            errors.push_back(where + "unknown label \"" + *r.label + "\"");
            continue;
          }
        } else if (auto it = by_text.find(r.text); it != by_text.end()) {
          r.label = it->second;
        } else {
          errors.push_back(where + "no label and text not found in the dataset");
          continue;
        }
        r.margin = prediction_margin(r.probs);
        records.push_back(std::move(r));
      } catch (const std::exception& e) {
        errors.push_back(where + e.what());
      }
    }
    if (!errors.empty()) throw ValidationError(detail::join_errors(errors));
    const auto count = cfg_.challenge_count
                           ? *cfg_.challenge_count
                           : challenge_count_for_fraction(records.size(), *cfg_.challenge_fraction);
    const auto picked = challenge_sample(records, count);
    std::string out;
    for (const auto& r : picked)
      out += nlohmann::json{{"text", r.text}, {"label", *r.label}, {"margin", r.margin}}.dump() + "\n";
    detail::write_file(run_dir_ / "challenge.jsonl", out);
    res.written.push_back(run_dir_ / "challenge.jsonl");
    res.processed = picked.size();
    res.summary += "challenge subset: " + std::to_string(picked.size()) + " of " +
                   std::to_string(records.size()) + " records\n";
    return res;
  }

  CommandResult report() {
    CommandResult res;
    const auto cfg_path = run_dir_ / "config.json";
    if (!fs::exists(cfg_path)) throw ValidationError("no run found in " + run_dir_.string());
    const auto snapshot = nlohmann::json::parse(detail::read_file(cfg_path));
    auto lines = read_transcripts(transcripts_path());
    if (lines.empty()) throw ValidationError("no transcripts in " + run_dir_.string());
    res.written = write_reports(run_dir_, snapshot, std::move(lines));
    res.summary = "reports rewritten from persisted transcripts\n";
    return res;
  }

  /// Renders the prompts of the first instance under the first seed; the
  /// configured backend is never contacted.
  CommandResult dry(Command cmd, ExperimentInputs& in) {
    CommandResult res;
    if (cmd == Command::ingest || cmd == Command::sample_challenge) {
      res.summary = std::string(to_string(cmd)) + " makes no model calls; inputs are valid\n";
      return res;
    }
    auto golds = ScriptedOracle::golds_from(in.dataset);
    auto backend = std::make_shared<detail::DryRunBackend>(golds);
    Gateway gw(backend, GatewayOptions{std::nullopt, false, 1});
    for (auto& [label, list] : in.store.all())
      for (auto& ex : list)
        if (!ex.explanation && needs_explanations(cfg_.comparison.method))
          ex.explanation = "(explanation generated at run time)";
    const auto pcfg = pipeline_config(cmd);
    const auto embeddings = label_embeddings(in, pcfg.reduction.strategy);
    Pipeline pipeline(pcfg, gw, in.store, embeddings ? &*embeddings : nullptr);
    if (!in.dataset.empty()) {
      const auto& inst = in.dataset.front();
      const auto iseed = instance_seed(cfg_.seeds.front(), inst.index);
      std::vector<LabelId> options = options_for(in, inst, iseed);
      if (cmd == Command::bias_sweep)
        options = arrange(in.catalog, ArrangementSpec::gold_at(cfg_.positions.front(), iseed),
                          inst.gold);
      if (cmd == Command::reduce) {
        auto rcfg = pcfg.reduction;
        rcfg.seed = rng::derive(iseed, "reduce");
        reduce(inst.text, options, rcfg, gw, ReductionContext{embeddings ? &*embeddings : nullptr});
      } else {
        pipeline.run(inst, options, iseed);
      }
    }
    const auto path = run_dir_ / "dry_run_prompts.txt";
    detail::write_file(path, backend->log());
    res.written.push_back(path);
    res.summary = "dry run: " + std::to_string(backend->count()) +
                  " prompts rendered for the first instance, 0 backend calls\n";
    return res;
  }

  ExperimentConfig cfg_;
  ExperimentHooks hooks_;
  fs::path run_dir_;
};

}  // namespace manyopt
