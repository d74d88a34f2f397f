#pragma once

// Shared fixtures for the unit, integration and acceptance suites.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "rtsearch/codebook.hpp"
#include "rtsearch/embedding.hpp"
#include "rtsearch/search.hpp"
#include "rtsearch/victim.hpp"

namespace rtsearch::testing {

class TempDir {
 public:
  TempDir() {
    static std::atomic<unsigned> counter{0};
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("rtsearch-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  [[nodiscard]] const std::filesystem::path& path() const noexcept { return path_; }

  std::filesystem::path write(const std::string& name, std::string_view contents) const {
    auto p = path_ / name;
    std::ofstream(p, std::ios::binary) << contents;
    return p;
  }

 private:
  std::filesystem::path path_;
};

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Generator that replays a fixed script of raw 64-bit outputs.
class ScriptedGen {
 public:
  using result_type = std::uint64_t;
  explicit ScriptedGen(std::vector<std::uint64_t> script) : script_(std::move(script)) {}
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()() { return script_.at(pos_++); }
  [[nodiscard]] std::size_t consumed() const noexcept { return pos_; }

 private:
  std::vector<std::uint64_t> script_;
  std::size_t pos_ = 0;
};

inline FilteredVocabulary make_vocab(std::vector<std::string> words,
                                     const std::vector<std::string>& sensitive = {}) {
  return filter_vocabulary(Vocabulary(std::move(words)), SensitiveList(sensitive), "test");
}

/// Twelve-word vocabulary for exhaustive-search checks.
inline std::vector<std::string> small_world_words() {
  return {"red", "apple", "tree", "blue", "river", "stone", "green", "light", "house", "cold", "night", "bird"};
}

/// Deterministic synthetic vocabulary of pronounceable words.
inline std::vector<std::string> synthetic_words(std::size_t n, std::uint64_t seed = 7) {
  static constexpr std::string_view consonants = "bcdfghjklmnprstvwz";
  static constexpr std::string_view vowels = "aeiou";
  std::mt19937_64 rng(seed);
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  while (out.size() < n) {
    const std::size_t syllables = 1 + rng() % 3;
    std::string w;
    for (std::size_t s = 0; s < syllables; ++s) {
      w.push_back(consonants[rng() % consonants.size()]);
      w.push_back(vowels[rng() % vowels.size()]);
      if (rng() % 3 == 0) w.push_back(consonants[rng() % consonants.size()]);
    }
    if (seen.insert(w).second) out.push_back(w);
  }
  return out;
}

/// Exhaustive maximum of cosine(embed(detokenize(seq)), embed(target)) over
/// all |V|^L sequences.
inline double brute_force_best(const FilteredVocabulary& vocab, std::size_t length, std::string_view target,
                               const TrigramEmbedder& embedder) {
  const auto target_vec = embedder.embed(target);
  TokenSequence seq(length, 0);
  double best = -2.0;
  while (true) {
    best = std::max(best, cosine(embedder.embed(detokenize(seq, vocab)), target_vec));
    std::size_t pos = 0;
    while (pos < length && ++seq[pos] == vocab.size()) seq[pos++] = 0;
    if (pos == length) break;
  }
  return best;
}

/// Generator wrapper that counts calls and records every prompt it saw.
template <SurrogateGenerator Inner = MockGenerator>
class CountingGenerator {
 public:
  explicit CountingGenerator(Inner inner) : inner_(std::move(inner)), log_(std::make_shared<Log>()) {}

  ImagePayload generate(std::string_view prompt, std::uint64_t seed) const {
    {
      std::lock_guard lock(log_->mutex);
      log_->prompts.emplace_back(prompt);
    }
    return inner_.generate(prompt, seed);
  }

  [[nodiscard]] std::size_t calls() const {
    std::lock_guard lock(log_->mutex);
    return log_->prompts.size();
  }
  [[nodiscard]] std::vector<std::string> prompts() const {
    std::lock_guard lock(log_->mutex);
    return log_->prompts;
  }

 private:
  struct Log {
    std::mutex mutex;
    std::vector<std::string> prompts;
  };
  Inner inner_;
  std::shared_ptr<Log> log_;
};

/// Victim wrapper logging every query it answers.
template <VictimPipeline Inner>
class LoggingVictim {
 public:
  explicit LoggingVictim(Inner& inner) : inner_(&inner) {}

  VictimOutcome query(std::string_view prompt, std::uint64_t seed) {
    calls.emplace_back(prompt);
    return inner_->query(prompt, seed);
  }

  std::vector<std::string> calls;

 private:
  Inner* inner_;
};

/// Victim that refuses every prompt.
struct BlockEverything {
  std::size_t calls = 0;
  VictimOutcome query(std::string_view, std::uint64_t) {
    ++calls;
    return VictimOutcome::blocked();
  }
};

}  // namespace rtsearch::testing
