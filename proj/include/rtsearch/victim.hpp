#pragma once

// The defended pipeline under attack (prompt checker -> generator -> image
// checker), the undefended surrogate used for reference images, and the
// deterministic feature-space mocks of both.

#include <cmath>
#include <concepts>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rtsearch/embedding.hpp"
#include "rtsearch/error.hpp"
#include "rtsearch/random.hpp"
#include "rtsearch/text.hpp"

namespace rtsearch {

enum class OutcomeKind { Blocked, BlackImage, Image };
enum class DefenseStage { PromptChecker, ImageChecker, None };

constexpr std::string_view to_string(OutcomeKind k) noexcept {
  switch (k) {
    case OutcomeKind::Blocked: return "blocked";
    case OutcomeKind::BlackImage: return "black";
    case OutcomeKind::Image: return "image";
  }
  return "?";
}

class VictimOutcome {
 public:
  static VictimOutcome blocked() { return VictimOutcome(OutcomeKind::Blocked, DefenseStage::PromptChecker, {}); }
  static VictimOutcome black_image() {
    return VictimOutcome(OutcomeKind::BlackImage, DefenseStage::ImageChecker, {});
  }
  static VictimOutcome image(ImagePayload features) {
    return VictimOutcome(OutcomeKind::Image, DefenseStage::None, std::move(features));
  }

  [[nodiscard]] OutcomeKind kind() const noexcept { return kind_; }
  [[nodiscard]] DefenseStage stage() const noexcept { return stage_; }
  [[nodiscard]] bool delivered() const noexcept { return kind_ == OutcomeKind::Image; }
  /// Present iff kind() == Image.
  [[nodiscard]] const std::optional<ImagePayload>& features() const noexcept { return features_; }

 private:
  VictimOutcome(OutcomeKind kind, DefenseStage stage, std::optional<ImagePayload> features)
      : kind_(kind), stage_(stage), features_(std::move(features)) {}

  OutcomeKind kind_;
  DefenseStage stage_;
  std::optional<ImagePayload> features_;
};

template <class T>
concept VictimPipeline = requires(T& victim, std::string_view prompt, std::uint64_t seed) {
  { victim.query(prompt, seed) } -> std::same_as<VictimOutcome>;
};

template <class T>
concept SurrogateGenerator = requires(T& gen, std::string_view prompt, std::uint64_t seed) {
  { gen.generate(prompt, seed) } -> std::convertible_to<ImagePayload>;
};

/// Centroid plus cosine threshold; a checker fires when cosine > threshold.
struct ThresholdChecker {
  EmbeddingVector centroid;
  double threshold = 1.1;

  [[nodiscard]] bool fires(const EmbeddingVector& v) const { return cosine(v, centroid) > threshold; }
};

struct MockWorldConfig {
  std::vector<std::string> prompt_blocklist;  // folded on construction of MockVictim
  std::optional<ThresholdChecker> semantic_block;
  std::optional<ThresholdChecker> image_block;
  double noise_sigma = 0.0;

  void validate() const {
    auto check = [](const std::optional<ThresholdChecker>& c, std::string_view name) {
      if (c && !std::isfinite(c->threshold))
        throw Error(ErrorCode::Config, std::string(name) + " threshold is not finite");
    };
    check(semantic_block, "semantic_block");
    check(image_block, "image_block");
    if (!std::isfinite(noise_sigma) || noise_sigma < 0.0)
      throw Error(ErrorCode::Config, "noise_sigma must be finite and non-negative");
  }
};

/// Feature-space generator: normalize(embed(prompt) + sigma * g), where g is a
/// unit-length Gaussian direction seeded by hash(prompt, seed).
class MockGenerator {
 public:
  explicit MockGenerator(double sigma = 0.0, TrigramEmbedder embedder = TrigramEmbedder())
      : sigma_(sigma), embedder_(embedder) {}

  [[nodiscard]] double sigma() const noexcept { return sigma_; }
  [[nodiscard]] std::size_t dim() const noexcept { return embedder_.dim(); }

  [[nodiscard]] ImagePayload generate(std::string_view prompt, std::uint64_t seed) const {
    EmbeddingVector base = embedder_.embed(prompt);
    if (sigma_ == 0.0) return base;

    std::mt19937_64 stream(splitmix64(fnv1a64(prompt) ^ splitmix64(seed)));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> g(base.dim());
    double norm_sq = 0.0;
    for (auto& x : g) {
      x = normal(stream);
      norm_sq += x * x;
    }
    const double scale = sigma_ / std::sqrt(norm_sq);
    std::vector<double> out(base.dim());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = base[i] + scale * g[i];
    return EmbeddingVector(std::move(out)).normalized();
  }

 private:
  double sigma_;
  TrigramEmbedder embedder_;
};

static_assert(SurrogateGenerator<MockGenerator>);

template <SurrogateGenerator Generator = MockGenerator>
class MockVictim {
 public:
  MockVictim(MockWorldConfig world, Generator generator, TrigramEmbedder embedder = TrigramEmbedder())
      : world_(std::move(world)), generator_(std::move(generator)), embedder_(embedder) {
    world_.validate();
    for (auto& w : world_.prompt_blocklist) w = text::fold(w);
  }

  [[nodiscard]] const MockWorldConfig& world() const noexcept { return world_; }
  [[nodiscard]] const Generator& generator() const noexcept { return generator_; }

  [[nodiscard]] VictimOutcome query(std::string_view prompt, std::uint64_t seed) const {
    if (text::trim(prompt).empty()) throw Error(ErrorCode::EmptyText, "prompt is empty");
    if (prompt_checker_fires(prompt)) return VictimOutcome::blocked();
    ImagePayload features = generator_.generate(prompt, seed);
    if (world_.image_block) {
      const auto* vec = std::get_if<EmbeddingVector>(&features);
      if (vec == nullptr) throw Error(ErrorCode::Protocol, "mock image checker needs feature payloads");
      if (world_.image_block->fires(*vec)) return VictimOutcome::black_image();
    }
    return VictimOutcome::image(std::move(features));
  }

  [[nodiscard]] bool prompt_checker_fires(std::string_view prompt) const {
    if (!world_.prompt_blocklist.empty()) {
      auto folded = text::fold(prompt);
      for (const auto& w : world_.prompt_blocklist)
        if (!w.empty() && folded.find(w) != std::string::npos) return true;
    }
    return world_.semantic_block && world_.semantic_block->fires(embedder_.embed(prompt));
  }

 private:
  MockWorldConfig world_;
  Generator generator_;
  TrigramEmbedder embedder_;
};

static_assert(VictimPipeline<const MockVictim<>>);

/// K reference embeddings of the undefended surrogate's output for `target`,
/// generated with seeds 0..K-1.
template <SurrogateGenerator Surrogate, ImageEmbeddingOracle ImageOracle>
std::vector<EmbeddingVector> surrogate_references(std::string_view target, std::size_t k, Surrogate& surrogate,
                                                  const ImageOracle& image_oracle) {
  if (k == 0) throw Error(ErrorCode::InvalidK, "reference count K must be at least 1");
  std::vector<EmbeddingVector> refs;
  refs.reserve(k);
  for (std::size_t i = 0; i < k; ++i)
    refs.push_back(image_oracle.embed(surrogate.generate(target, static_cast<std::uint64_t>(i))));
  return refs;
}

}  // namespace rtsearch
