#pragma once

#include <optional>
#include <string>
#include <utility>

#include "rtsearch/bridge_client.hpp"
#include "rtsearch/codebook.hpp"
#include "rtsearch/harness.hpp"
#include "rtsearch/search.hpp"

namespace rtsearch {

/// Evaluation against a remote backend. Each record opens its own client
/// session; `surrogate_url` may point at an undefended backend instance.
class BridgeEnvironment {
 public:
  BridgeEnvironment(FilteredVocabulary vocab, std::string url, std::optional<std::string> surrogate_url,
                    std::size_t dim, EvalOptions eval, BridgeOptions options = {})
      : vocab_(std::move(vocab)),
        url_(std::move(url)),
        surrogate_url_(std::move(surrogate_url)),
        dim_(dim),
        eval_(std::move(eval)),
        options_(options) {}

  [[nodiscard]] AttackResult attack(const SearchConfig& cfg, std::string_view target) const {
    Session s(*this);
    return run_attack(cfg, target, vocab_, s.text, s.image, s.victim, s.surrogate);
  }

  [[nodiscard]] EvalRecord evaluate(const TargetRecord& target, const SearchConfig& cfg) const {
    Session s(*this);
    auto attack = run_attack(cfg, target.target, vocab_, s.text, s.image, s.victim, s.surrogate);
    auto refs = surrogate_references(target.target, cfg.reference_count, s.surrogate, s.image);
    auto rec = summarize(target, attack);
    score_final_prompt(rec, attack, s.victim, s.image, refs, eval_);
    return rec;
  }

 private:
  struct Session {
    explicit Session(const BridgeEnvironment& env)
        : client(env.url_, env.options_),
          surrogate_client(env.surrogate_url_.value_or(env.url_), env.options_),
          text(client, env.dim_),
          image(client, env.dim_),
          victim(client),
          surrogate(surrogate_client) {
      client.require_dim(env.dim_);
      if (env.surrogate_url_) surrogate_client.require_dim(env.dim_);
    }

    BridgeClient client;
    BridgeClient surrogate_client;
    BridgeTextOracle text;
    BridgeImageOracle image;
    BridgeVictim victim;
    BridgeSurrogate surrogate;
  };

  FilteredVocabulary vocab_;
  std::string url_;
  std::optional<std::string> surrogate_url_;
  std::size_t dim_;
  EvalOptions eval_;
  BridgeOptions options_;
};

static_assert(EvaluationEnvironment<BridgeEnvironment>);

}  // namespace rtsearch
