#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "rtsearch/error.hpp"
#include "rtsearch/random.hpp"
#include "rtsearch/text.hpp"

namespace rtsearch {

class EmbeddingVector {
 public:
  EmbeddingVector() = default;
  explicit EmbeddingVector(std::vector<double> components) : components_(std::move(components)) {
    for (double c : components_)
      if (!std::isfinite(c)) throw Error(ErrorCode::Format, "embedding component is not finite");
  }

  [[nodiscard]] std::size_t dim() const noexcept { return components_.size(); }
  [[nodiscard]] std::span<const double> components() const noexcept { return components_; }
  [[nodiscard]] double operator[](std::size_t i) const noexcept { return components_[i]; }

  [[nodiscard]] double norm() const noexcept {
    double s = 0.0;
    for (double c : components_) s += c * c;
    return std::sqrt(s);
  }

  [[nodiscard]] EmbeddingVector normalized() const {
    const double n = norm();
    if (n == 0.0) throw Error(ErrorCode::ZeroVector, "cannot normalize a zero vector");
    std::vector<double> out(components_.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = components_[i] / n;
    return EmbeddingVector(std::move(out));
  }

  friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;

 private:
  std::vector<double> components_;
};

/// Image payload handed to an image oracle: either feature vectors from the
/// mock generator or a base64-encoded image from a remote backend.
struct EncodedImage {
  std::string base64;
  friend bool operator==(const EncodedImage&, const EncodedImage&) = default;
};
using ImagePayload = std::variant<EmbeddingVector, EncodedImage>;

/// Cosine similarity, summed in ascending index order and clamped to [-1, 1].
inline double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.dim() != b.dim())
    throw Error(ErrorCode::DimensionMismatch,
                "dimensions " + std::to_string(a.dim()) + " and " + std::to_string(b.dim()));
  double dot = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) {
    dot += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) throw Error(ErrorCode::ZeroVector, "cosine of a zero vector");
  return std::clamp(dot / (std::sqrt(aa) * std::sqrt(bb)), -1.0, 1.0);
}

template <class T>
concept TextEmbeddingOracle = requires(const T& oracle, std::string_view text) {
  { oracle.embed(text) } -> std::convertible_to<EmbeddingVector>;
  { oracle.dim() } -> std::convertible_to<std::size_t>;
};

template <class T>
concept ImageEmbeddingOracle = requires(const T& oracle, const ImagePayload& payload) {
  { oracle.embed(payload) } -> std::convertible_to<EmbeddingVector>;
  { oracle.dim() } -> std::convertible_to<std::size_t>;
};

/// Reference text embedder: signed feature hashing of character trigrams.
///
/// The text is trimmed, NFC-normalized and lowercased, then wrapped in '^' and
/// '$'. Each code-point trigram is hashed with 64-bit FNV-1a over its UTF-8
/// bytes; the low bits pick the bucket and bit 63 picks the sign.
class TrigramEmbedder {
 public:
  static constexpr std::size_t kDefaultDim = 256;

  explicit TrigramEmbedder(std::size_t dim = kDefaultDim) : dim_(dim) {
    if (dim_ == 0) throw Error(ErrorCode::Config, "embedding dimension must be positive");
  }

  [[nodiscard]] std::size_t dim() const noexcept { return dim_; }

  [[nodiscard]] EmbeddingVector embed(std::string_view raw) const {
    auto trimmed = text::trim(raw);
    if (trimmed.empty()) throw Error(ErrorCode::EmptyText, "text is empty");
    std::string padded = "^" + text::fold(trimmed) + "$";
    auto cps = text::code_points(padded);

    std::vector<double> signed_counts(dim_, 0.0);
    std::vector<double> counts(dim_, 0.0);
    for (std::size_t i = 0; i + 2 < cps.size(); ++i) {
      std::uint64_t h = fnv1a64(cps[i]);
      h = fnv1a64(cps[i + 1], h);
      h = fnv1a64(cps[i + 2], h);
      const auto bucket = static_cast<std::size_t>(h % dim_);
      signed_counts[bucket] += (h >> 63) ? -1.0 : 1.0;
      counts[bucket] += 1.0;
    }
    EmbeddingVector v(std::move(signed_counts));
    // Signs cancelled out completely: fall back to unsigned counts.
    if (v.norm() == 0.0) v = EmbeddingVector(std::move(counts));
    return v.normalized();
  }

 private:
  std::size_t dim_;
};

/// Image oracle for the feature-space mock: features pass through, normalized.
class FeatureImageOracle {
 public:
  explicit FeatureImageOracle(std::size_t dim = TrigramEmbedder::kDefaultDim) : dim_(dim) {}

  [[nodiscard]] std::size_t dim() const noexcept { return dim_; }

  [[nodiscard]] EmbeddingVector embed(const ImagePayload& payload) const {
    const auto* features = std::get_if<EmbeddingVector>(&payload);
    if (features == nullptr)
      throw Error(ErrorCode::Protocol, "feature oracle cannot decode an encoded image");
    if (features->dim() != dim_)
      throw Error(ErrorCode::DimensionMismatch, "image features have dim " + std::to_string(features->dim()));
    return features->normalized();
  }

 private:
  std::size_t dim_;
};

static_assert(TextEmbeddingOracle<TrigramEmbedder>);
static_assert(ImageEmbeddingOracle<FeatureImageOracle>);

}  // namespace rtsearch
