#pragma once

// Uniform access to decision backends, with a content-addressed reply cache
// and call accounting.

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "manyopt/error.hpp"
#include "manyopt/hash.hpp"
#include "manyopt/query.hpp"

namespace manyopt {

class Backend {
public:
  virtual ~Backend() = default;

  virtual std::string id() const = 0;

  /// The bytes that identify a request for caching: the rendered prompt for
  /// text backends, the canonical query encoding for structured ones.
  virtual std::string cache_material(const ModelQuery& q) const = 0;

  virtual ModelReply complete(const ModelQuery& q) = 0;
};

struct GatewayOptions {
  std::optional<std::filesystem::path> cache_dir;
  bool cache_enabled = true;
  std::size_t parallelism = 4;
};

struct GatewayStats {
  std::size_t invocations = 0;
  std::size_t cache_hits = 0;
  std::size_t backend_calls = 0;
  std::size_t failures = 0;
};

class Gateway {
public:
  explicit Gateway(std::shared_ptr<Backend> backend, GatewayOptions opts = {})
      : backend_(std::move(backend)),
        opts_(std::move(opts)),
        slots_(static_cast<std::ptrdiff_t>(std::max<std::size_t>(1, opts_.parallelism))) {
    if (!backend_) throw Error("gateway needs a backend");
    if (caching()) std::filesystem::create_directories(*opts_.cache_dir);
  }

  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  const Backend& backend() const { return *backend_; }
  bool caching() const { return opts_.cache_enabled && opts_.cache_dir.has_value(); }

  /// Hash of (backend id, request material, decoding parameters).
  std::string cache_key(const ModelQuery& q) const {
    nlohmann::json decoding{{"temperature", q.decoding.temperature},
                            {"max_tokens", q.decoding.max_tokens}};
    if (q.decoding.seed) decoding["seed"] = *q.decoding.seed;
    std::string material = backend_->id();
    material += '\n';
    material += backend_->cache_material(q);
    material += '\n';
    material += decoding.dump();
    return sha256_hex(material);
  }

  /// Cached completion. A hit returns the stored reply without a backend call.
  ModelReply complete(const ModelQuery& q) {
    validate(q);
    invocations_.fetch_add(1, std::memory_order_relaxed);
    std::string key;
    if (caching()) {
      key = cache_key(q);
      if (auto hit = load(key)) {
        cache_hits_.fetch_add(1, std::memory_order_relaxed);
        return *hit;
      }
    }
    ModelReply reply;
    {
      slots_.acquire();
      struct Release {
        std::counting_semaphore<>& s;
        ~Release() { s.release(); }
      } release{slots_};
      backend_calls_.fetch_add(1, std::memory_order_relaxed);
      try {
        reply = backend_->complete(q);
      } catch (...) {
        failures_.fetch_add(1, std::memory_order_relaxed);
        throw;
      }
    }
    if (caching()) store(key, reply);
    return reply;
  }

  GatewayStats stats() const {
    return {invocations_.load(), cache_hits_.load(), backend_calls_.load(), failures_.load()};
  }

  void reset_stats() {
    invocations_ = 0;
    cache_hits_ = 0;
    backend_calls_ = 0;
    failures_ = 0;
  }

private:
  std::filesystem::path path_for(const std::string& key) const {
    return *opts_.cache_dir / key.substr(0, 2) / (key + ".json");
  }

  std::optional<ModelReply> load(const std::string& key) const {
    auto path = path_for(key);
    std::ifstream in(path);
    if (!in) return std::nullopt;
    try {
      nlohmann::json j;
      in >> j;
      if (j.at("key").get<std::string>() != key) throw Error("key mismatch");
      return reply_from_json(j.at("reply"));
    } catch (const std::exception& e) {
      std::cerr << "warning: ignoring corrupt cache entry " << path << ": " << e.what() << '\n';
      return std::nullopt;
    }
  }

  void store(const std::string& key, const ModelReply& reply) {
    nlohmann::json j{{"key", key}, {"reply", to_json(reply)}};
    auto path = path_for(key);
    std::lock_guard lock(write_mutex_);
    std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      out << j.dump();
    }
    std::filesystem::rename(tmp, path);
  }

  std::shared_ptr<Backend> backend_;
  GatewayOptions opts_;
  std::counting_semaphore<> slots_;
  std::mutex write_mutex_;
  std::atomic<std::size_t> invocations_{0};
  std::atomic<std::size_t> cache_hits_{0};
  std::atomic<std::size_t> backend_calls_{0};
  std::atomic<std::size_t> failures_{0};
};

}  // namespace manyopt
