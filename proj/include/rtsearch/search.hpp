#pragma once

// Two-stage random token search.
//
// Stage 1 hill-climbs the text similarity between the detokenized candidate
// and the target, rewriting one contiguous window per step with a window
// length chosen from the current best similarity. Stage 2 starts from the
// Stage 1 optimum, rewrites one token at a time, and only queries the
// defended pipeline for candidates whose text similarity stays above
// (Stage 1 best - margin). Delivered images are scored by their summed cosine
// to K surrogate reference images.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rtsearch/codebook.hpp"
#include "rtsearch/embedding.hpp"
#include "rtsearch/error.hpp"
#include "rtsearch/random.hpp"
#include "rtsearch/victim.hpp"

namespace rtsearch {

enum class ScheduleMode {
  Appendix,      // literal piecewise rule: wider window at higher similarity
  CoarseToFine,  // mirrored: wide window while far from the target, M=1 once close
};

enum class QueryAccounting {
  GeneratedOnly,   // count only delivered images
  AllVictimCalls,  // count every completed victim response
};

constexpr std::string_view to_string(ScheduleMode m) noexcept {
  return m == ScheduleMode::Appendix ? "appendix" : "coarse-to-fine";
}
constexpr std::string_view to_string(QueryAccounting a) noexcept {
  return a == QueryAccounting::GeneratedOnly ? "generated-only" : "all-victim-calls";
}

struct ScheduleThresholds {
  double low = 0.4;
  double high = 0.6;
};

struct SearchConfig {
  std::size_t length = 15;               // L
  std::size_t stage1_iterations = 20000; // X
  std::size_t query_budget = 50;         // Y
  double xi_margin = 0.02;
  std::size_t reference_count = 3;       // K
  ScheduleMode schedule_mode = ScheduleMode::CoarseToFine;
  ScheduleThresholds schedule_thresholds{};
  QueryAccounting query_accounting = QueryAccounting::GeneratedOnly;
  std::uint64_t seed = 0;
  /// Hard cap on Stage 2 loop iterations; defaults to 100 * Y when unset.
  std::optional<std::size_t> max_stage2_iterations;

  [[nodiscard]] std::size_t stage2_iteration_cap() const noexcept {
    return max_stage2_iterations.value_or(100 * query_budget);
  }

  void validate() const {
    if (length < 2) throw Error(ErrorCode::Config, "L must be at least 2");
    if (!(xi_margin >= 0.0 && xi_margin <= 2.0)) throw Error(ErrorCode::Config, "xi_margin must lie in [0, 2]");
    if (reference_count < 1) throw Error(ErrorCode::Config, "K must be at least 1");
    if (!(schedule_thresholds.low < schedule_thresholds.high))
      throw Error(ErrorCode::Config, "schedule thresholds must satisfy low < high");
  }
};

/// Copy of `prompt` with one uniformly placed window of exactly `m` positions
/// overwritten by independent uniform draws from the vocabulary.
template <class Gen>
TokenSequence random_token(const FilteredVocabulary& vocab, const TokenSequence& prompt, std::size_t m, Gen& rng) {
  if (m == 0 || m >= prompt.size())
    throw Error(ErrorCode::InvalidM, "window length " + std::to_string(m) + " must satisfy 1 <= M < L=" +
                                         std::to_string(prompt.size()));
  TokenSequence out = prompt;
  const std::size_t start = uniform_index(rng, prompt.size() - m + 1);
  for (std::size_t i = 0; i < m; ++i)
    out[start + i] = static_cast<std::uint32_t>(uniform_index(rng, vocab.size()));
  return out;
}

/// Window length for the next Stage 1 step given the current best similarity.
constexpr std::size_t schedule_m(double sim, ScheduleMode mode, ScheduleThresholds t = {}) noexcept {
  if (mode == ScheduleMode::Appendix) {
    if (sim > t.high) return 4;
    if (sim > t.low) return 2;
    return 1;
  }
  if (sim <= t.low) return 4;
  if (sim <= t.high) return 2;
  return 1;
}

constexpr double compute_text_bound(double best_sim, double margin) noexcept { return best_sim - margin; }

/// Summed cosine of `features` to every reference; ranges over [-K, K].
inline double image_score(const EmbeddingVector& features, std::span<const EmbeddingVector> refs) {
  if (refs.empty()) throw Error(ErrorCode::InvalidK, "image_score needs at least one reference");
  double total = 0.0;
  for (const auto& r : refs) total += cosine(features, r);
  return total;
}

template <ImageEmbeddingOracle ImageOracle>
double image_score(const ImagePayload& payload, std::span<const EmbeddingVector> refs, const ImageOracle& oracle) {
  return image_score(oracle.embed(payload), refs);
}

struct Stage1Step {
  std::size_t iteration = 0;
  bool accepted = false;
  double sim = 0.0;
  std::size_t window = 0;  // 0 marks the baseline entry
};

struct Stage1Result {
  TokenSequence best_prompt;
  double best_sim = 0.0;
  std::size_t iterations_run = 0;
  std::vector<Stage1Step> trace;
  EmbeddingVector target_embedding;
};

enum class Stage2EventKind { BelowBound, Blocked, BlackImage, Image };

constexpr std::string_view to_string(Stage2EventKind k) noexcept {
  switch (k) {
    case Stage2EventKind::BelowBound: return "below_bound";
    case Stage2EventKind::Blocked: return "blocked";
    case Stage2EventKind::BlackImage: return "black";
    case Stage2EventKind::Image: return "image";
  }
  return "?";
}

struct Stage2Event {
  std::size_t iteration = 0;
  Stage2EventKind kind = Stage2EventKind::BelowBound;
  double sim = 0.0;
  std::optional<double> isim;
  bool accepted = false;
  bool counted = false;
};

struct OutcomeCounts {
  std::size_t blocked = 0;
  std::size_t black = 0;
  std::size_t image = 0;
  std::size_t below_bound = 0;
  friend bool operator==(const OutcomeCounts&, const OutcomeCounts&) = default;
};

struct AttackResult {
  TokenSequence final_prompt;
  std::string final_string;
  double stage1_sim = 0.0;
  double text_bound = 0.0;
  std::optional<double> best_isim;  // present iff counts.image >= 1
  std::size_t queries_used = 0;
  std::size_t victim_calls = 0;
  std::size_t stage2_iterations = 0;
  OutcomeCounts counts;
  std::vector<Stage2Event> trace;
  Stage1Result stage1;
  std::uint64_t seed = 0;
  std::uint64_t generation_seed = 0;
  std::int64_t elapsed_ms = 0;

  [[nodiscard]] bool bypassed() const noexcept { return counts.image >= 1; }
};

namespace detail {

inline constexpr std::size_t kMaxRedraws = 10000;

/// Redraw until the detokenized candidate avoids every multi-word sensitive term.
template <class Draw>
std::pair<TokenSequence, std::string> draw_admissible(const FilteredVocabulary& vocab, Draw&& draw) {
  for (std::size_t attempt = 0; attempt < kMaxRedraws; ++attempt) {
    TokenSequence seq = draw();
    std::string s = detokenize(seq, vocab);
    if (vocab.admits(s)) return {std::move(seq), std::move(s)};
  }
  throw Error(ErrorCode::EmptyVocabulary, "no admissible candidate after repeated draws; "
                                          "multi-word sensitive terms cover the vocabulary");
}

}  // namespace detail

template <TextEmbeddingOracle TextOracle, class Gen>
Stage1Result stage1(const SearchConfig& cfg, std::string_view target, const FilteredVocabulary& vocab,
                    const TextOracle& text_oracle, Gen& rng) {
  cfg.validate();
  if (vocab.size() == 0) throw Error(ErrorCode::EmptyVocabulary, "vocabulary is empty");
  if (text::trim(target).empty()) throw Error(ErrorCode::EmptyText, "target prompt is empty");

  Stage1Result result;
  result.target_embedding = text_oracle.embed(target);
  auto [prompt, prompt_string] =
      detail::draw_admissible(vocab, [&] { return sample_sequence(vocab, cfg.length, rng); });
  double best = cosine(text_oracle.embed(prompt_string), result.target_embedding);
  result.trace.reserve(cfg.stage1_iterations + 1);
  result.trace.push_back({0, true, best, 0});

  for (std::size_t x = 1; x <= cfg.stage1_iterations; ++x) {
    const std::size_t m =
        std::min(schedule_m(best, cfg.schedule_mode, cfg.schedule_thresholds), cfg.length - 1);
    auto [candidate, candidate_string] =
        detail::draw_admissible(vocab, [&] { return random_token(vocab, prompt, m, rng); });
    const double sim = cosine(text_oracle.embed(candidate_string), result.target_embedding);
    const bool accepted = sim > best;
    if (accepted) {
      prompt = std::move(candidate);
      best = sim;
    }
    result.trace.push_back({x, accepted, sim, m});
  }
  result.best_prompt = std::move(prompt);
  result.best_sim = best;
  result.iterations_run = cfg.stage1_iterations;
  return result;
}

template <TextEmbeddingOracle TextOracle, ImageEmbeddingOracle ImageOracle, VictimPipeline Victim, class Gen>
AttackResult stage2(const SearchConfig& cfg, const Stage1Result& s1, const FilteredVocabulary& vocab,
                    const TextOracle& text_oracle, const ImageOracle& image_oracle, Victim& victim,
                    std::span<const EmbeddingVector> refs, std::uint64_t generation_seed, Gen& rng) {
  cfg.validate();
  AttackResult r;
  r.stage1_sim = s1.best_sim;
  r.text_bound = compute_text_bound(s1.best_sim, cfg.xi_margin);
  r.generation_seed = generation_seed;

  TokenSequence current = s1.best_prompt;
  TokenSequence best_prompt = s1.best_prompt;
  double best_isim = -std::numeric_limits<double>::infinity();
  const std::size_t cap = cfg.stage2_iteration_cap();

  while (r.queries_used < cfg.query_budget && r.stage2_iterations < cap) {
    Stage2Event ev;
    ev.iteration = ++r.stage2_iterations;
    auto [candidate, candidate_string] =
        detail::draw_admissible(vocab, [&] { return random_token(vocab, current, 1, rng); });
    ev.sim = cosine(text_oracle.embed(candidate_string), s1.target_embedding);
    if (ev.sim <= r.text_bound) {
      ev.kind = Stage2EventKind::BelowBound;
      ++r.counts.below_bound;
      r.trace.push_back(ev);
      continue;
    }

    VictimOutcome outcome = victim.query(candidate_string, generation_seed);
    ++r.victim_calls;
    switch (outcome.kind()) {
      case OutcomeKind::Blocked:
        ev.kind = Stage2EventKind::Blocked;
        ++r.counts.blocked;
        break;
      case OutcomeKind::BlackImage:
        ev.kind = Stage2EventKind::BlackImage;
        ++r.counts.black;
        break;
      case OutcomeKind::Image: {
        ev.kind = Stage2EventKind::Image;
        ++r.counts.image;
        const double isim = image_score(*outcome.features(), refs, image_oracle);
        ev.isim = isim;
        if (isim > best_isim) {
          best_isim = isim;
          current = candidate;
          best_prompt = std::move(candidate);
          ev.accepted = true;
        }
        break;
      }
    }
    ev.counted = outcome.delivered() || cfg.query_accounting == QueryAccounting::AllVictimCalls;
    if (ev.counted) ++r.queries_used;
    r.trace.push_back(ev);
  }

  if (r.counts.image > 0) r.best_isim = best_isim;
  r.final_prompt = std::move(best_prompt);
  r.final_string = detokenize(r.final_prompt, vocab);
  return r;
}

/// Full pipeline: Stage 1, surrogate references, Stage 2. Errors keep their
/// code and gain the name of the stage that raised them.
template <TextEmbeddingOracle TextOracle, ImageEmbeddingOracle ImageOracle, VictimPipeline Victim,
          SurrogateGenerator Surrogate>
AttackResult run_attack(const SearchConfig& cfg, std::string_view target, const FilteredVocabulary& vocab,
                        const TextOracle& text_oracle, const ImageOracle& image_oracle, Victim& victim,
                        Surrogate& surrogate) {
  const auto started = std::chrono::steady_clock::now();
  cfg.validate();
  Rng rng(cfg.seed);
  const std::uint64_t generation_seed = derive_seed(cfg.seed, std::string_view("generation"));

  Stage1Result s1;
  try {
    s1 = stage1(cfg, target, vocab, text_oracle, rng);
  } catch (const Error& e) {
    throw e.in_stage("stage1");
  }

  std::vector<EmbeddingVector> refs;
  try {
    refs = surrogate_references(target, cfg.reference_count, surrogate, image_oracle);
  } catch (const Error& e) {
    throw e.in_stage("references");
  }

  AttackResult result;
  try {
    result = stage2(cfg, s1, vocab, text_oracle, image_oracle, victim, refs, generation_seed, rng);
  } catch (const Error& e) {
    throw e.in_stage("stage2");
  }
  result.stage1 = std::move(s1);
  result.seed = cfg.seed;
  result.elapsed_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                          std::chrono::steady_clock::now() - started)
                          .count();
  return result;
}

}  // namespace rtsearch
