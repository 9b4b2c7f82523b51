#pragma once

// Datasets, label catalogs, demonstration stores and option arrangement.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "manyopt/error.hpp"
#include "manyopt/random.hpp"
#include "manyopt/text.hpp"

namespace manyopt {

using LabelId = std::string;

/// Ordered option set. A label id is the dataset's surface string with outer
/// whitespace trimmed, so id and display form coincide.
class LabelCatalog {
public:
  LabelCatalog() = default;

  explicit LabelCatalog(std::vector<std::string> labels,
                        std::optional<std::string> domain_tag = std::nullopt)
      : domain_tag_(std::move(domain_tag)) {
    if (labels.empty()) throw ValidationError("label catalog is empty");
    labels_.reserve(labels.size());
    for (auto& raw : labels) {
      std::string id(text::trim(raw));
      if (id.empty()) throw ValidationError("label catalog contains an empty label");
      if (!index_.emplace(id, labels_.size()).second)
        throw ValidationError("duplicate label in catalog: " + id);
      labels_.push_back(std::move(id));
    }
  }

  std::size_t size() const noexcept { return labels_.size(); }
  bool empty() const noexcept { return labels_.empty(); }
  const std::vector<LabelId>& labels() const noexcept { return labels_; }
  const LabelId& operator[](std::size_t i) const { return labels_.at(i); }
  const std::optional<std::string>& domain_tag() const noexcept { return domain_tag_; }

  bool contains(const LabelId& id) const { return index_.contains(id); }

  std::size_t index_of(const LabelId& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw ValidationError("label not in catalog: " + id);
    return it->second;
  }

  nlohmann::json to_json() const { return labels_; }

  static LabelCatalog from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw ValidationError("catalog must be a JSON array of label strings");
    std::vector<std::string> labels;
    for (const auto& v : j) {
      if (!v.is_string()) throw ValidationError("catalog entries must be strings");
      labels.push_back(v.get<std::string>());
    }
    return LabelCatalog(std::move(labels));
  }

private:
  std::vector<LabelId> labels_;
  std::unordered_map<LabelId, std::size_t> index_;
  std::optional<std::string> domain_tag_;
};

inline LabelCatalog load_catalog(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open catalog file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("catalog " + path + ": " + e.what());
  }
  return LabelCatalog::from_json(j);
}

struct Instance {
  std::size_t index = 0;  // 0-based position in the source file
  std::string text;
  LabelId gold;
  std::optional<double> margin;

  bool operator==(const Instance&) const = default;
};

namespace detail {

inline Instance parse_record(const std::string& line, std::size_t lineno,
                             const LabelCatalog& catalog, std::size_t index) {
  auto fail = [&](const std::string& why) -> ValidationError {
    return ValidationError("line " + std::to_string(lineno) + ": " + why);
  };
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw fail(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw fail("record is not an object");
  if (!j.contains("text") || !j["text"].is_string()) throw fail("missing string field 'text'");
  if (!j.contains("label") || !j["label"].is_string()) throw fail("missing string field 'label'");
  Instance inst;
  inst.index = index;
  inst.text = j["text"].get<std::string>();
  if (text::trim(inst.text).empty()) throw fail("empty text");
  inst.gold = std::string(text::trim(j["label"].get<std::string>()));
  if (!catalog.contains(inst.gold)) throw fail("unknown label \"" + inst.gold + "\"");
  if (j.contains("margin") && !j["margin"].is_null()) {
    if (!j["margin"].is_number()) throw fail("margin must be a number");
    double m = j["margin"].get<double>();
    if (m < 0.0 || m > 1.0) throw fail("margin outside [0,1]");
    inst.margin = m;
  }
  return inst;
}

}  // namespace detail

/// Reads a JSON-Lines dataset ({text, label, margin?} per line). Blank lines
/// are skipped; diagnostics use 1-based line numbers.
inline std::vector<Instance> parse_dataset(std::istream& in, const LabelCatalog& catalog) {
  std::vector<Instance> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    out.push_back(detail::parse_record(line, lineno, catalog, out.size()));
  }
  if (out.empty()) throw ValidationError("dataset is empty");
  return out;
}

inline std::vector<Instance> load_dataset(const std::string& path, const LabelCatalog& catalog) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open dataset file: " + path);
  try {
    return parse_dataset(in, catalog);
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

inline nlohmann::json to_json(const Instance& inst) {
  nlohmann::json j{{"text", inst.text}, {"label", inst.gold}};
  if (inst.margin) j["margin"] = *inst.margin;
  return j;
}

inline std::string serialize_dataset(const std::vector<Instance>& instances) {
  std::string out;
  for (const auto& inst : instances) {
    out += to_json(inst).dump();
    out += '\n';
  }
  return out;
}

struct Exemplar {
  std::string text;
  LabelId label;
  std::optional<std::string> explanation;

  bool operator==(const Exemplar&) const = default;
};

/// Per-label exemplars drawn from a training split.
class DemonstrationStore {
public:
  DemonstrationStore() = default;

  void add(const LabelCatalog& catalog, Exemplar ex) {
    if (!catalog.contains(ex.label))
      throw ValidationError("demonstration label not in catalog: " + ex.label);
    by_label_[ex.label].push_back(std::move(ex));
  }

  /// Keeps at most `per_label` exemplars per label, chosen by a seeded draw
  /// (file order when everything fits).
  static DemonstrationStore from_instances(const std::vector<Instance>& train,
                                           const LabelCatalog& catalog,
                                           std::optional<std::size_t> per_label = std::nullopt,
                                           std::uint64_t seed = 0) {
    DemonstrationStore store;
    for (const auto& inst : train) store.add(catalog, Exemplar{inst.text, inst.gold, std::nullopt});
    if (per_label) {
      for (auto& [label, list] : store.by_label_) {
        if (list.size() <= *per_label) continue;
        rng::Stream s(rng::derive(seed, label));
        std::vector<std::size_t> idx(list.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        s.shuffle(std::span(idx));
        idx.resize(*per_label);
        std::sort(idx.begin(), idx.end());
        std::vector<Exemplar> kept;
        for (auto i : idx) kept.push_back(list[i]);
        list = std::move(kept);
      }
    }
    return store;
  }

  const std::vector<Exemplar>& exemplars(const LabelId& label) const {
    static const std::vector<Exemplar> kEmpty;
    auto it = by_label_.find(label);
    return it == by_label_.end() ? kEmpty : it->second;
  }

  std::vector<Exemplar>& mutable_exemplars(const LabelId& label) { return by_label_[label]; }

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& [_, list] : by_label_) n += list.size();
    return n;
  }

  const std::map<LabelId, std::vector<Exemplar>>& all() const noexcept { return by_label_; }
  std::map<LabelId, std::vector<Exemplar>>& all() noexcept { return by_label_; }

  bool operator==(const DemonstrationStore&) const = default;

private:
  std::map<LabelId, std::vector<Exemplar>> by_label_;
};

/// Without replacement, min(m, available), deterministic per seed. Exemplars
/// whose text equals `exclude_text` are never returned.
inline std::vector<Exemplar> sample_demonstrations(const DemonstrationStore& store,
                                                   const LabelId& label, std::size_t m,
                                                   std::uint64_t seed,
                                                   std::string_view exclude_text = {}) {
  const auto& pool = store.exemplars(label);
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < pool.size(); ++i)
    if (exclude_text.empty() || pool[i].text != exclude_text) idx.push_back(i);
  if (idx.empty()) throw ValidationError("no demonstrations available for label: " + label);
  rng::Stream s(rng::derive(seed, label));
  s.shuffle(std::span(idx));
  idx.resize(std::min(m, idx.size()));
  std::vector<Exemplar> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(pool[i]);
  return out;
}

enum class ArrangementMode { as_is, seeded_shuffle, gold_at_position };

struct ArrangementSpec {
  ArrangementMode mode = ArrangementMode::as_is;
  std::size_t position = 0;  // used by gold_at_position
  std::uint64_t seed = 0;

  static ArrangementSpec as_is() { return {}; }
  static ArrangementSpec shuffled(std::uint64_t seed) {
    return {ArrangementMode::seeded_shuffle, 0, seed};
  }
  static ArrangementSpec gold_at(std::size_t p, std::uint64_t seed) {
    return {ArrangementMode::gold_at_position, p, seed};
  }
};

/// Permutes the catalog. gold_at_position places `gold` at the given index and
/// fills the remaining slots with the other labels in seeded-shuffled order.
inline std::vector<LabelId> arrange(const LabelCatalog& catalog, const ArrangementSpec& spec,
                                    const LabelId& gold) {
  if (!catalog.contains(gold)) throw ValidationError("gold label not in catalog: " + gold);
  std::vector<LabelId> out = catalog.labels();
  switch (spec.mode) {
    case ArrangementMode::as_is:
      return out;
    case ArrangementMode::seeded_shuffle: {
      rng::Stream s(spec.seed);
      s.shuffle(std::span(out));
      return out;
    }
    case ArrangementMode::gold_at_position: {
      if (spec.position >= out.size())
        throw ValidationError("gold position " + std::to_string(spec.position) +
                              " out of range for " + std::to_string(out.size()) + " options");
      out.erase(out.begin() + static_cast<std::ptrdiff_t>(catalog.index_of(gold)));
      rng::Stream s(spec.seed);
      s.shuffle(std::span(out));
      out.insert(out.begin() + static_cast<std::ptrdiff_t>(spec.position), gold);
      return out;
    }
  }
  return out;
}

}  // namespace manyopt
