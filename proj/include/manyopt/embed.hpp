#pragma once

#include <cmath>
#include <fstream>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "manyopt/error.hpp"
#include "manyopt/random.hpp"

namespace manyopt {

struct EmbeddingMatrix {
  std::vector<std::vector<double>> rows;
  std::size_t dim = 0;
  std::vector<std::string> item_ids;
  bool normalized = false;

  std::size_t size() const { return rows.size(); }

  /// Rows selected by index, in the given order.
  EmbeddingMatrix subset(const std::vector<std::size_t>& idx) const {
    EmbeddingMatrix out;
    out.dim = dim;
    out.normalized = normalized;
    for (auto i : idx) {
      out.rows.push_back(rows.at(i));
      out.item_ids.push_back(item_ids.at(i));
    }
    return out;
  }

  std::size_t index_of(const std::string& id) const {
    for (std::size_t i = 0; i < item_ids.size(); ++i)
      if (item_ids[i] == id) return i;
    throw ValidationError("embedding has no item: " + id);
  }
};

inline void normalize_rows(EmbeddingMatrix& m) {
  for (auto& r : m.rows) {
    double n = 0.0;
    for (double v : r) n += v * v;
    n = std::sqrt(n);
    if (n == 0.0) throw ValidationError("cannot normalize a zero embedding vector");
    for (double& v : r) v /= n;
  }
  m.normalized = true;
}

class EmbeddingSource {
public:
  virtual ~EmbeddingSource() = default;
  virtual std::vector<std::vector<double>> vectors(const std::vector<std::string>& items) = 0;
};

/// One L2-normalized vector per item, order preserved. Repeated item strings
/// get distinct ids ("x", "x#2", ...).
inline EmbeddingMatrix embed(const std::vector<std::string>& items, EmbeddingSource& source) {
  EmbeddingMatrix m;
  m.rows = source.vectors(items);
  if (m.rows.size() != items.size())
    throw Error("embedding source returned " + std::to_string(m.rows.size()) + " vectors for " +
                std::to_string(items.size()) + " items");
  std::unordered_map<std::string, std::size_t> seen;
  for (const auto& item : items) {
    auto n = ++seen[item];
    m.item_ids.push_back(n == 1 ? item : item + "#" + std::to_string(n));
  }
  m.dim = m.rows.empty() ? 0 : m.rows.front().size();
  for (const auto& r : m.rows)
    if (r.size() != m.dim) throw Error("embedding rows have inconsistent dimensions");
  normalize_rows(m);
  return m;
}

/// Local matrix file: {"dim": d, "items": [{"id": ..., "vec": [...]}]}.
class FileEmbeddingSource final : public EmbeddingSource {
public:
  explicit FileEmbeddingSource(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open embedding file: " + path);
    nlohmann::json j;
    in >> j;
    dim_ = j.at("dim").get<std::size_t>();
    for (const auto& item : j.at("items")) {
      auto vec = item.at("vec").get<std::vector<double>>();
      if (vec.size() != dim_)
        throw ValidationError("embedding for \"" + item.at("id").get<std::string>() +
                              "\" has dimension " + std::to_string(vec.size()) + ", expected " +
                              std::to_string(dim_));
      table_[item.at("id").get<std::string>()] = std::move(vec);
    }
  }

  std::vector<std::vector<double>> vectors(const std::vector<std::string>& items) override {
    std::vector<std::vector<double>> out;
    for (const auto& item : items) {
      auto it = table_.find(item);
      if (it == table_.end()) throw ValidationError("embedding file has no vector for item: " + item);
      out.push_back(it->second);
    }
    return out;
  }

private:
  std::size_t dim_ = 0;
  std::unordered_map<std::string, std::vector<double>> table_;
};

/// Offline feature hashing of character trigrams (with word-boundary
/// markers). Strings sharing substrings land near each other.
class HashedNgramSource final : public EmbeddingSource {
public:
  explicit HashedNgramSource(std::size_t dim = 64) : dim_(dim) {
    if (dim_ == 0) throw ValidationError("hashed embedding dimension must be > 0");
  }

  std::vector<std::vector<double>> vectors(const std::vector<std::string>& items) override {
    std::vector<std::vector<double>> out;
    for (const auto& item : items) {
      std::vector<double> v(dim_, 0.0);
      const std::string padded = "#" + item + "#";
      for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
        const auto h = rng::fnv1a(std::string_view(padded).substr(i, 3));
        v[h % dim_] += ((h >> 32) & 1) ? 1.0 : -1.0;
      }
      // Bias term keeps short or colliding strings away from the zero vector.
      v[rng::fnv1a(item) % dim_] += 0.5;
      bool zero = true;
      for (double x : v) zero = zero && x == 0.0;
      if (zero) v[0] = 1.0;
      out.push_back(std::move(v));
    }
    return out;
  }

private:
  std::size_t dim_;
};

inline nlohmann::json to_json(const EmbeddingMatrix& m) {
  nlohmann::json items = nlohmann::json::array();
  for (std::size_t i = 0; i < m.size(); ++i)
    items.push_back({{"id", m.item_ids[i]}, {"vec", m.rows[i]}});
  return {{"dim", m.dim}, {"items", items}};
}

}  // namespace manyopt
