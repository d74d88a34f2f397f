#pragma once

// HTTP client for a remote embedding/generation backend speaking the bridge
// wire protocol:
//
//   GET  /health                              -> {"ok": true, "dim": d}
//   POST /embed_text  {"text": s}             -> {"embedding": [d numbers]}
//   POST /embed_image {"image_b64": s}        -> {"embedding": [d numbers]}
//   POST /generate    {"prompt": s, "seed": n}-> {"status": "blocked"|"black"|"ok", "image_b64"?: s}
//
// One client instance serves one attack run; it is not safe for concurrent use.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include <httplib.h>
#include <json.hpp>

#include "rtsearch/embedding.hpp"
#include "rtsearch/error.hpp"
#include "rtsearch/victim.hpp"

namespace rtsearch {

struct BridgeOptions {
  std::chrono::milliseconds timeout{30000};
  std::size_t max_retries = 3;
  double norm_tolerance = 1e-3;
};

struct GenerateResponse {
  OutcomeKind kind = OutcomeKind::Blocked;
  std::optional<std::string> image_b64;
};

class BridgeClient {
 public:
  explicit BridgeClient(std::string base_url, BridgeOptions options = {})
      : base_url_(std::move(base_url)), options_(options), http_(std::make_unique<httplib::Client>(base_url_)) {
    if (!http_->is_valid()) throw Error(ErrorCode::Config, "invalid bridge URL '" + base_url_ + "'");
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(options_.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(options_.timeout - secs);
    http_->set_connection_timeout(secs.count(), usecs.count());
    http_->set_read_timeout(secs.count(), usecs.count());
    http_->set_write_timeout(secs.count(), usecs.count());
  }

  [[nodiscard]] const std::string& base_url() const noexcept { return base_url_; }
  [[nodiscard]] std::size_t transport_retries() const noexcept { return retries_used_; }

  /// Embedding dimension reported by /health.
  std::size_t health() {
    auto body = request("GET", "/health", nullptr);
    if (!body.contains("ok") || !body["ok"].is_boolean() || !body["ok"].get<bool>())
      throw Error(ErrorCode::Protocol, "/health did not report ok=true");
    if (!body.contains("dim") || !body["dim"].is_number_unsigned() || body["dim"].get<std::size_t>() == 0)
      throw Error(ErrorCode::Protocol, "/health 'dim' missing or not a positive integer");
    dim_ = body["dim"].get<std::size_t>();
    return *dim_;
  }

  /// Fails unless /health reports `expected` dimensions.
  void require_dim(std::size_t expected) {
    const auto got = health();
    if (got != expected)
      throw Error(ErrorCode::Config, "bridge reports dim " + std::to_string(got) + ", engine expects " +
                                         std::to_string(expected));
  }

  EmbeddingVector embed_text(std::string_view text) {
    nlohmann::json req = {{"text", std::string(text)}};
    return parse_embedding(request("POST", "/embed_text", &req), "/embed_text");
  }

  EmbeddingVector embed_image(std::string_view image_b64) {
    nlohmann::json req = {{"image_b64", std::string(image_b64)}};
    return parse_embedding(request("POST", "/embed_image", &req), "/embed_image");
  }

  GenerateResponse generate(std::string_view prompt, std::uint64_t seed) {
    nlohmann::json req = {{"prompt", std::string(prompt)}, {"seed", seed}};
    auto body = request("POST", "/generate", &req);
    if (!body.contains("status") || !body["status"].is_string())
      throw Error(ErrorCode::Protocol, "/generate response lacks a string 'status'");
    const auto status = body["status"].get<std::string>();
    GenerateResponse out;
    if (status == "blocked") {
      out.kind = OutcomeKind::Blocked;
    } else if (status == "black") {
      out.kind = OutcomeKind::BlackImage;
    } else if (status == "ok") {
      if (!body.contains("image_b64") || !body["image_b64"].is_string() ||
          body["image_b64"].get_ref<const std::string&>().empty())
        throw Error(ErrorCode::Protocol, "/generate status ok without image_b64");
      out.kind = OutcomeKind::Image;
      out.image_b64 = body["image_b64"].get<std::string>();
    } else {
      throw Error(ErrorCode::Protocol, "/generate returned unknown status '" + status + "'");
    }
    return out;
  }

 private:
  nlohmann::json request(std::string_view method, const std::string& path, const nlohmann::json* payload) {
    std::string last_failure;
    for (std::size_t attempt = 0; attempt <= options_.max_retries; ++attempt) {
      httplib::Result res = method == "GET"
                                ? http_->Get(path)
                                : http_->Post(path, payload->dump(), "application/json");
      if (!res) {
        last_failure = httplib::to_string(res.error());
      } else if (res->status >= 500) {
        last_failure = "HTTP " + std::to_string(res->status);
      } else if (res->status != 200) {
        throw Error(ErrorCode::Protocol, path + " returned HTTP " + std::to_string(res->status));
      } else {
        try {
          return nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::parse_error& e) {
          throw Error(ErrorCode::Protocol, path + " returned malformed JSON: " + e.what());
        }
      }
      if (attempt < options_.max_retries) ++retries_used_;
    }
    throw Error(ErrorCode::Transport, base_url_ + path + ": " + last_failure + " after " +
                                          std::to_string(options_.max_retries + 1) + " attempts");
  }

  EmbeddingVector parse_embedding(const nlohmann::json& body, std::string_view endpoint) const {
    const std::string where(endpoint);
    if (!body.contains("embedding") || !body["embedding"].is_array())
      throw Error(ErrorCode::Protocol, where + " response lacks an 'embedding' array");
    std::vector<double> values;
    values.reserve(body["embedding"].size());
    for (const auto& x : body["embedding"]) {
      if (!x.is_number()) throw Error(ErrorCode::Protocol, where + " embedding has a non-numeric entry");
      values.push_back(x.get<double>());
    }
    if (dim_ && values.size() != *dim_)
      throw Error(ErrorCode::Protocol, where + " embedding has " + std::to_string(values.size()) +
                                           " entries, /health reported " + std::to_string(*dim_));
    EmbeddingVector v;
    try {
      v = EmbeddingVector(std::move(values));
    } catch (const Error&) {
      throw Error(ErrorCode::Protocol, where + " embedding has non-finite entries");
    }
    if (v.dim() == 0 || std::abs(v.norm() - 1.0) > options_.norm_tolerance)
      throw Error(ErrorCode::Protocol, where + " embedding is not unit norm");
    return v;
  }

  std::string base_url_;
  BridgeOptions options_;
  std::unique_ptr<httplib::Client> http_;
  std::optional<std::size_t> dim_;
  std::size_t retries_used_ = 0;
};

/// Text oracle backed by /embed_text.
class BridgeTextOracle {
 public:
  BridgeTextOracle(BridgeClient& client, std::size_t dim) : client_(&client), dim_(dim) {}
  [[nodiscard]] std::size_t dim() const noexcept { return dim_; }
  [[nodiscard]] EmbeddingVector embed(std::string_view text) const { return client_->embed_text(text); }

 private:
  BridgeClient* client_;
  std::size_t dim_;
};

/// Image oracle: encoded images go to /embed_image, feature payloads pass through.
class BridgeImageOracle {
 public:
  BridgeImageOracle(BridgeClient& client, std::size_t dim) : client_(&client), dim_(dim) {}
  [[nodiscard]] std::size_t dim() const noexcept { return dim_; }
  [[nodiscard]] EmbeddingVector embed(const ImagePayload& payload) const {
    if (const auto* img = std::get_if<EncodedImage>(&payload)) return client_->embed_image(img->base64);
    return std::get<EmbeddingVector>(payload).normalized();
  }

 private:
  BridgeClient* client_;
  std::size_t dim_;
};

/// Remote defended pipeline. Delivered images are embedded through
/// /embed_image before being returned.
class BridgeVictim {
 public:
  explicit BridgeVictim(BridgeClient& client) : client_(&client) {}

  VictimOutcome query(std::string_view prompt, std::uint64_t seed) const {
    auto res = client_->generate(prompt, seed);
    switch (res.kind) {
      case OutcomeKind::Blocked: return VictimOutcome::blocked();
      case OutcomeKind::BlackImage: return VictimOutcome::black_image();
      case OutcomeKind::Image: return VictimOutcome::image(client_->embed_image(*res.image_b64));
    }
    throw Error(ErrorCode::Protocol, "unreachable outcome kind");
  }

 private:
  BridgeClient* client_;
};

/// Remote undefended generator. The endpoint must not refuse.
class BridgeSurrogate {
 public:
  explicit BridgeSurrogate(BridgeClient& client) : client_(&client) {}

  ImagePayload generate(std::string_view prompt, std::uint64_t seed) const {
    auto res = client_->generate(prompt, seed);
    if (res.kind != OutcomeKind::Image)
      throw Error(ErrorCode::Protocol, "surrogate endpoint refused to generate (status " +
                                           std::string(to_string(res.kind)) + ")");
    return EncodedImage{*res.image_b64};
  }

 private:
  BridgeClient* client_;
};

inline VictimOutcome bridge_query(std::string_view prompt, std::uint64_t seed, BridgeClient& client) {
  return BridgeVictim(client).query(prompt, seed);
}

static_assert(TextEmbeddingOracle<BridgeTextOracle>);
static_assert(ImageEmbeddingOracle<BridgeImageOracle>);
static_assert(VictimPipeline<BridgeVictim>);
static_assert(SurrogateGenerator<BridgeSurrogate>);

}  // namespace rtsearch
