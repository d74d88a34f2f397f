#pragma once

// Vocabulary codebook, sensitive-term list and the filtered vocabulary that
// every candidate token is drawn from.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "rtsearch/error.hpp"
#include "rtsearch/random.hpp"
#include "rtsearch/text.hpp"

namespace rtsearch {

/// Token indices into a FilteredVocabulary.
using TokenSequence = std::vector<std::uint32_t>;

namespace detail {

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  if (in.bad()) throw Error(ErrorCode::Io, "read failed for " + path.string());
  return lines;
}

}  // namespace detail

class Vocabulary {
 public:
  explicit Vocabulary(std::vector<std::string> entries) : entries_(std::move(entries)) {
    if (entries_.empty()) throw Error(ErrorCode::Format, "vocabulary is empty");
    std::unordered_set<std::string_view> seen;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& e = entries_[i];
      if (e.empty()) throw Error(ErrorCode::Format, "empty entry at index " + std::to_string(i));
      if (text::contains_whitespace(e))
        throw Error(ErrorCode::Format, "entry '" + e + "' contains whitespace");
      if (!seen.insert(e).second) throw Error(ErrorCode::Format, "duplicate entry '" + e + "'");
    }
  }

  [[nodiscard]] const std::vector<std::string>& entries() const noexcept { return entries_; }
  [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }

 private:
  std::vector<std::string> entries_;
};

/// Lowercased, deduplicated terms. Terms may span several words; those are
/// enforced on detokenized strings rather than per entry.
class SensitiveList {
 public:
  SensitiveList() = default;

  explicit SensitiveList(const std::vector<std::string>& raw_terms) {
    std::unordered_set<std::string> seen;
    for (const auto& raw : raw_terms) {
      auto squeezed = text::squeeze_spaces(raw);
      if (squeezed.empty()) throw Error(ErrorCode::Format, "sensitive term is blank");
      auto term = text::fold(squeezed);
      if (seen.insert(term).second) terms_.push_back(std::move(term));
    }
  }

  [[nodiscard]] const std::vector<std::string>& terms() const noexcept { return terms_; }
  [[nodiscard]] bool empty() const noexcept { return terms_.empty(); }

  /// First term found as a substring of an already-folded string, or nullptr.
  [[nodiscard]] const std::string* find_in(std::string_view folded) const {
    for (const auto& t : terms_)
      if (folded.find(t) != std::string_view::npos) return &t;
    return nullptr;
  }

 private:
  std::vector<std::string> terms_;
};

class FilteredVocabulary {
 public:
  FilteredVocabulary(std::vector<std::string> entries, std::vector<std::string> multiword_terms,
                     std::string origin)
      : entries_(std::move(entries)), multiword_terms_(std::move(multiword_terms)), origin_(std::move(origin)) {
    if (entries_.empty()) throw Error(ErrorCode::EmptyVocabulary, "filtered vocabulary is empty");
  }

  [[nodiscard]] const std::vector<std::string>& entries() const noexcept { return entries_; }
  [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
  [[nodiscard]] const std::string& origin() const noexcept { return origin_; }
  [[nodiscard]] const std::vector<std::string>& multiword_terms() const noexcept { return multiword_terms_; }

  /// False if joining entries synthesized one of the multi-word sensitive terms.
  [[nodiscard]] bool admits(std::string_view detokenized) const {
    if (multiword_terms_.empty()) return true;
    auto folded = text::fold(detokenized);
    return std::none_of(multiword_terms_.begin(), multiword_terms_.end(),
                        [&](const std::string& t) { return folded.find(t) != std::string::npos; });
  }

 private:
  std::vector<std::string> entries_;
  std::vector<std::string> multiword_terms_;
  std::string origin_;
};

inline constexpr std::string_view kFilterRuleVersion = "substring-nfc-lower/1";

inline Vocabulary load_vocabulary(const std::filesystem::path& path) {
  std::vector<std::string> entries;
  for (auto& line : detail::read_lines(path)) {
    if (line.empty()) continue;
    entries.push_back(std::move(line));
  }
  try {
    return Vocabulary(std::move(entries));
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.detail());
  }
}

inline SensitiveList load_sensitive_list(const std::filesystem::path& path) {
  std::vector<std::string> terms;
  for (auto& line : detail::read_lines(path)) {
    if (line.empty()) continue;
    if (text::trim(line).empty()) throw Error(ErrorCode::Format, path.string() + ": whitespace-only term line");
    terms.push_back(std::move(line));
  }
  if (terms.empty()) throw Error(ErrorCode::Format, path.string() + ": sensitive list is empty");
  return SensitiveList(terms);
}

/// Keep exactly the entries whose folded form contains no sensitive term.
inline FilteredVocabulary filter_vocabulary(const Vocabulary& vocab, const SensitiveList& sensitive,
                                            std::string origin = {}) {
  std::vector<std::string> kept;
  kept.reserve(vocab.size());
  for (const auto& e : vocab.entries()) {
    if (sensitive.find_in(text::fold(e)) == nullptr) kept.push_back(e);
  }
  std::vector<std::string> multiword;
  for (const auto& t : sensitive.terms())
    if (t.find(' ') != std::string::npos) multiword.push_back(t);
  if (origin.empty()) origin = std::string("rule ") + std::string(kFilterRuleVersion);
  if (kept.empty())
    throw Error(EmptyResult, "every vocabulary entry matched a sensitive term (" + origin + ")");
  return FilteredVocabulary(std::move(kept), std::move(multiword), std::move(origin));
}

inline FilteredVocabulary filter_vocabulary(const std::filesystem::path& vocab_path,
                                            const std::filesystem::path& sensitive_path) {
  auto vocab = load_vocabulary(vocab_path);
  SensitiveList sensitive;
  std::string sensitive_note = "none";
  if (!sensitive_path.empty()) {
    sensitive = load_sensitive_list(sensitive_path);
    sensitive_note = sensitive_path.string();
  }
  return filter_vocabulary(vocab, sensitive,
                           "vocab=" + vocab_path.string() + " sensitive=" + sensitive_note +
                               " rule=" + std::string(kFilterRuleVersion));
}

inline std::string detokenize(const TokenSequence& seq, const FilteredVocabulary& vocab) {
  std::string out;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (seq[i] >= vocab.size())
      throw Error(ErrorCode::Index, "token " + std::to_string(seq[i]) + " out of range for vocabulary of size " +
                                        std::to_string(vocab.size()));
    if (i != 0) out.push_back(' ');
    out += vocab.entries()[seq[i]];
  }
  return out;
}

template <class Gen>
TokenSequence sample_sequence(const FilteredVocabulary& vocab, std::size_t length, Gen& rng) {
  if (length == 0) throw Error(ErrorCode::InvalidLength, "sequence length must be at least 1");
  TokenSequence seq(length);
  for (auto& t : seq) t = static_cast<std::uint32_t>(uniform_index(rng, vocab.size()));
  return seq;
}

}  // namespace rtsearch
