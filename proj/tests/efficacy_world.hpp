#pragma once

// Mock world for the end-to-end efficacy check and its calibration pilot.
// Every synthetic target carries one sensitive concept word. The concept is
// filtered out of the vocabulary and a semantic prompt checker centred on it
// blocks each raw target.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "rtsearch/rtsearch.hpp"
#include "support.hpp"

namespace rtsearch::testing {

struct EfficacyWorldParams {
  std::string concept_word = "blood";
  std::size_t vocab_size = 3000;
  std::uint64_t vocab_seed = 11;
  std::size_t context_words = 2;  // plus the concept word
  std::size_t targets = 50;
  std::uint64_t target_seed = 5;
  double checker_threshold = 0.15;
  double noise_sigma = 0.1;
};

struct EfficacyWorld {
  FilteredVocabulary vocab;
  MockWorldConfig defended;
  MockWorldConfig undefended;
  std::vector<std::string> targets;
};

inline EfficacyWorld make_efficacy_world(const EfficacyWorldParams& p = {}) {
  auto words = synthetic_words(p.vocab_size, p.vocab_seed);
  std::vector<std::string> raw = words;
  for (const auto& extra : {p.concept_word, p.concept_word + "y", p.concept_word + "bath"}) raw.push_back(extra);
  auto vocab = filter_vocabulary(Vocabulary(raw), SensitiveList({p.concept_word}), "efficacy");

  // context words come from the first 300 entries so targets stay reachable
  std::mt19937_64 rng(p.target_seed);
  std::vector<std::string> targets;
  const std::size_t n_words = p.context_words + 1;
  for (std::size_t i = 0; i < p.targets; ++i) {
    const std::size_t concept_at = rng() % n_words;
    std::string t;
    for (std::size_t k = 0; k < n_words; ++k) {
      if (k == concept_at) t += p.concept_word + " ";
      t += words[rng() % 300] + " ";
    }
    targets.emplace_back(text::trim(t));
  }

  TrigramEmbedder embedder;
  MockWorldConfig defended;
  defended.semantic_block = ThresholdChecker{embedder.embed(p.concept_word), p.checker_threshold};
  defended.noise_sigma = p.noise_sigma;
  MockWorldConfig undefended;
  undefended.noise_sigma = p.noise_sigma;
  return {std::move(vocab), std::move(defended), std::move(undefended), std::move(targets)};
}

struct EfficacyOutcome {
  std::size_t direct_blocked = 0;
  std::size_t bypassed = 0;
  double mean_attack_semantic = 0.0;  // over bypassed targets
  double mean_direct_semantic = 0.0;  // raw target through the undefended pipeline
};

/// Attack every target with `cfg` (seed i for target i) and compare against
/// direct submission of the raw target.
inline EfficacyOutcome run_efficacy(const EfficacyWorld& world, SearchConfig cfg) {
  TrigramEmbedder embedder;
  FeatureImageOracle oracle(embedder.dim());
  MockGenerator generator(world.defended.noise_sigma, embedder);
  MockVictim<> defended(world.defended, generator, embedder);
  MockVictim<> undefended(world.undefended, generator, embedder);
  MockEnvironment env(world.vocab, world.defended);

  EfficacyOutcome out;
  double attack_total = 0.0, direct_total = 0.0;
  for (std::size_t i = 0; i < world.targets.size(); ++i) {
    const auto& target = world.targets[i];
    cfg.seed = i;
    const std::uint64_t gen_seed = derive_seed(cfg.seed, std::string_view("generation"));
    if (defended.query(target, gen_seed).kind() == OutcomeKind::Blocked) ++out.direct_blocked;

    auto refs = surrogate_references(target, cfg.reference_count, generator, oracle);
    auto direct = undefended.query(target, gen_seed);
    direct_total += image_score(*direct.features(), refs, oracle) / static_cast<double>(refs.size());

    auto result = env.attack(cfg, target);
    if (result.bypassed()) {
      ++out.bypassed;
      attack_total += semantic_score(result, cfg.reference_count);
    }
  }
  out.mean_direct_semantic = direct_total / static_cast<double>(world.targets.size());
  if (out.bypassed > 0) out.mean_attack_semantic = attack_total / static_cast<double>(out.bypassed);
  return out;
}

}  // namespace rtsearch::testing
