#pragma once

// Run configuration file: schema, validation, and conversion into the
// search/world/eval settings used by the CLI.

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>
#include <openssl/evp.h>

#include "rtsearch/bridge_client.hpp"
#include "rtsearch/embedding.hpp"
#include "rtsearch/error.hpp"
#include "rtsearch/harness.hpp"
#include "rtsearch/search.hpp"
#include "rtsearch/victim.hpp"

namespace rtsearch {

inline constexpr std::string_view kVersion = "0.3.0";

inline constexpr std::string_view kRunConfigSchema = R"json({
  "$schema": "https://json-schema.org/draft/2020-12/schema",
  "title": "rtsearch run configuration",
  "type": "object",
  "additionalProperties": false,
  "required": ["vocab"],
  "properties": {
    "mode": {"enum": ["mock", "bridge"]},
    "vocab": {"type": "string"},
    "sensitive": {"type": "string"},
    "dataset": {"type": "string"},
    "output_dir": {"type": "string"},
    "bridge_url": {"type": "string"},
    "surrogate_url": {"type": "string"},
    "bridge_timeout_ms": {"type": "integer", "minimum": 1},
    "bridge_retries": {"type": "integer", "minimum": 0},
    "embedding_dim": {"type": "integer", "minimum": 1},
    "workers": {"type": "integer", "minimum": 1},
    "search": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "L": {"type": "integer", "minimum": 2},
        "X": {"type": "integer", "minimum": 0},
        "Y": {"type": "integer", "minimum": 0},
        "xi_margin": {"type": "number", "minimum": 0, "maximum": 2},
        "K": {"type": "integer", "minimum": 1},
        "schedule_mode": {"enum": ["appendix", "coarse-to-fine"]},
        "schedule_thresholds": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        "query_accounting": {"enum": ["generated-only", "all-victim-calls"]},
        "seed": {"type": "integer", "minimum": 0},
        "max_stage2_iterations": {"type": "integer", "minimum": 0}
      }
    },
    "world": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "blocklist": {"type": "array", "items": {"type": "string"}},
        "semantic_block": {"$ref": "#/$defs/checker"},
        "image_block": {"$ref": "#/$defs/checker"},
        "noise_sigma": {"type": "number", "minimum": 0}
      }
    },
    "eval": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "asr_n": {"type": "integer", "minimum": 1},
        "success": {"$ref": "#/$defs/checker"}
      }
    }
  },
  "$defs": {
    "checker": {
      "type": "object",
      "additionalProperties": false,
      "required": ["threshold"],
      "properties": {
        "text": {"type": "string"},
        "vector": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "threshold": {"type": "number"}
      }
    }
  }
})json";

namespace detail {

/// Validator for the subset of JSON Schema used by kRunConfigSchema. Throws
/// ConfigError naming the JSON pointer of the first violation.
class SchemaValidator {
 public:
  explicit SchemaValidator(nlohmann::json schema) : root_(std::move(schema)) {}

  void validate(const nlohmann::json& doc) const { check(root_, doc, ""); }

 private:
  [[noreturn]] static void fail(const std::string& path, const std::string& why) {
    throw Error(ErrorCode::Config, "schema violation at " + (path.empty() ? std::string("/") : path) + ": " + why);
  }

  const nlohmann::json& resolve(const nlohmann::json& schema) const {
    if (!schema.contains("$ref")) return schema;
    auto ref = schema["$ref"].get<std::string>();
    return root_.at(nlohmann::json::json_pointer(ref.substr(1)));
  }

  static bool type_matches(std::string_view type, const nlohmann::json& v) {
    if (type == "object") return v.is_object();
    if (type == "array") return v.is_array();
    if (type == "string") return v.is_string();
    if (type == "boolean") return v.is_boolean();
    if (type == "integer") return v.is_number_integer();
    if (type == "number") return v.is_number();
    return false;
  }

  void check(const nlohmann::json& raw_schema, const nlohmann::json& v, const std::string& path) const {
    const auto& schema = resolve(raw_schema);
    if (schema.contains("type")) {
      const auto type = schema["type"].get<std::string>();
      if (!type_matches(type, v)) fail(path, "expected " + type);
    }
    if (schema.contains("enum")) {
      bool found = false;
      for (const auto& option : schema["enum"]) found = found || option == v;
      if (!found) fail(path, "value " + v.dump() + " not in " + schema["enum"].dump());
    }
    if (v.is_number()) {
      if (schema.contains("minimum") && v.get<double>() < schema["minimum"].get<double>())
        fail(path, "below minimum " + schema["minimum"].dump());
      if (schema.contains("maximum") && v.get<double>() > schema["maximum"].get<double>())
        fail(path, "above maximum " + schema["maximum"].dump());
    }
    if (v.is_array()) {
      if (schema.contains("minItems") && v.size() < schema["minItems"].get<std::size_t>())
        fail(path, "fewer than " + schema["minItems"].dump() + " items");
      if (schema.contains("maxItems") && v.size() > schema["maxItems"].get<std::size_t>())
        fail(path, "more than " + schema["maxItems"].dump() + " items");
      if (schema.contains("items"))
        for (std::size_t i = 0; i < v.size(); ++i) check(schema["items"], v[i], path + "/" + std::to_string(i));
    }
    if (v.is_object()) {
      if (schema.contains("required"))
        for (const auto& key : schema["required"])
          if (!v.contains(key.get<std::string>())) fail(path, "missing required key '" + key.get<std::string>() + "'");
      const bool closed = schema.contains("additionalProperties") && schema["additionalProperties"] == false;
      for (const auto& [key, child] : v.items()) {
        const std::string child_path = path + "/" + key;
        if (schema.contains("properties") && schema["properties"].contains(key))
          check(schema["properties"][key], child, child_path);
        else if (closed)
          fail(child_path, "unknown key");
      }
    }
  }

  nlohmann::json root_;
};

inline std::string to_hex(const unsigned char* bytes, std::size_t n) {
  std::ostringstream os;
  for (std::size_t i = 0; i < n; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(bytes[i]);
  return os.str();
}

}  // namespace detail

inline std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error(ErrorCode::Io, "SHA-256 failed");
  return detail::to_hex(digest, len);
}

/// Canonical form: keys sorted, no insignificant whitespace.
inline std::string canonical_json(const nlohmann::json& j) { return j.dump(); }

enum class RunMode { Mock, Bridge };

/// Checker as written in the config; the centroid text is embedded by
/// whichever text oracle the run uses.
struct CheckerSpec {
  std::optional<std::string> text;
  std::optional<std::vector<double>> vector;
  double threshold = 1.1;

  template <TextEmbeddingOracle Oracle>
  [[nodiscard]] ThresholdChecker resolve(const Oracle& oracle) const {
    ThresholdChecker c;
    c.threshold = threshold;
    if (text) {
      c.centroid = oracle.embed(*text);
    } else {
      if (vector->size() != oracle.dim())
        throw Error(ErrorCode::Config, "checker vector has length " + std::to_string(vector->size()) +
                                           ", embeddings have dim " + std::to_string(oracle.dim()));
      c.centroid = EmbeddingVector(*vector).normalized();
    }
    return c;
  }
};

struct RunConfig {
  RunMode mode = RunMode::Mock;
  std::filesystem::path vocab;
  std::optional<std::filesystem::path> sensitive;
  std::optional<std::filesystem::path> dataset;
  std::optional<std::filesystem::path> output_dir;
  std::string bridge_url = "http://127.0.0.1:8765";
  std::optional<std::string> surrogate_url;
  BridgeOptions bridge;
  std::size_t embedding_dim = TrigramEmbedder::kDefaultDim;
  std::size_t workers = 1;
  SearchConfig search;

  std::vector<std::string> blocklist;
  std::optional<CheckerSpec> semantic_block;
  std::optional<CheckerSpec> image_block;
  double noise_sigma = 0.0;
  std::size_t asr_syntheses = 4;
  std::optional<CheckerSpec> success;

  nlohmann::json document;  // as loaded, for hashing

  [[nodiscard]] std::string sha256() const { return sha256_hex(canonical_json(document)); }

  template <TextEmbeddingOracle Oracle>
  [[nodiscard]] MockWorldConfig mock_world(const Oracle& oracle) const {
    MockWorldConfig w;
    w.prompt_blocklist = blocklist;
    if (semantic_block) w.semantic_block = semantic_block->resolve(oracle);
    if (image_block) w.image_block = image_block->resolve(oracle);
    w.noise_sigma = noise_sigma;
    w.validate();
    return w;
  }

  template <TextEmbeddingOracle Oracle>
  [[nodiscard]] EvalOptions eval_options(const Oracle& oracle) const {
    EvalOptions e;
    e.asr_syntheses = asr_syntheses;
    if (success) e.success = success->resolve(oracle);
    return e;
  }
};

namespace detail {

inline CheckerSpec parse_checker(const nlohmann::json& j, const std::string& path) {
  const bool has_text = j.contains("text");
  const bool has_vector = j.contains("vector");
  if (has_text == has_vector) throw Error(ErrorCode::Config, path + ": give exactly one of 'text' or 'vector'");
  CheckerSpec c;
  c.threshold = j["threshold"].get<double>();
  if (has_text) {
    c.text = j["text"].get<std::string>();
    if (text::trim(*c.text).empty()) throw Error(ErrorCode::Config, path + "/text: empty");
  } else {
    c.vector = j["vector"].get<std::vector<double>>();
  }
  return c;
}

}  // namespace detail

/// Validate `doc` against the schema and build a RunConfig. Relative paths
/// resolve against `base_dir`. RT_SEARCH_BRIDGE_URL overrides bridge_url.
inline RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {}) {
  detail::SchemaValidator(nlohmann::json::parse(kRunConfigSchema)).validate(doc);

  RunConfig cfg;
  cfg.document = doc;
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  };
  cfg.mode = doc.value("mode", std::string("mock")) == "bridge" ? RunMode::Bridge : RunMode::Mock;
  cfg.vocab = resolve(doc["vocab"].get<std::string>());
  if (doc.contains("sensitive")) cfg.sensitive = resolve(doc["sensitive"].get<std::string>());
  if (doc.contains("dataset")) cfg.dataset = resolve(doc["dataset"].get<std::string>());
  if (doc.contains("output_dir")) cfg.output_dir = resolve(doc["output_dir"].get<std::string>());
  cfg.bridge_url = doc.value("bridge_url", cfg.bridge_url);
  if (const char* env = std::getenv("RT_SEARCH_BRIDGE_URL"); env != nullptr && *env != '\0') cfg.bridge_url = env;
  if (doc.contains("surrogate_url")) cfg.surrogate_url = doc["surrogate_url"].get<std::string>();
  if (doc.contains("bridge_timeout_ms"))
    cfg.bridge.timeout = std::chrono::milliseconds(doc["bridge_timeout_ms"].get<std::int64_t>());
  cfg.bridge.max_retries = doc.value("bridge_retries", cfg.bridge.max_retries);
  cfg.embedding_dim = doc.value("embedding_dim", cfg.embedding_dim);
  cfg.workers = doc.value("workers", cfg.workers);

  if (doc.contains("search")) {
    const auto& s = doc["search"];
    auto& out = cfg.search;
    out.length = s.value("L", out.length);
    out.stage1_iterations = s.value("X", out.stage1_iterations);
    out.query_budget = s.value("Y", out.query_budget);
    out.xi_margin = s.value("xi_margin", out.xi_margin);
    out.reference_count = s.value("K", out.reference_count);
    if (s.contains("schedule_mode"))
      out.schedule_mode = s["schedule_mode"] == "appendix" ? ScheduleMode::Appendix : ScheduleMode::CoarseToFine;
    if (s.contains("schedule_thresholds"))
      out.schedule_thresholds = {s["schedule_thresholds"][0].get<double>(), s["schedule_thresholds"][1].get<double>()};
    if (s.contains("query_accounting"))
      out.query_accounting = s["query_accounting"] == "all-victim-calls" ? QueryAccounting::AllVictimCalls
                                                                           : QueryAccounting::GeneratedOnly;
    out.seed = s.value("seed", out.seed);
    if (s.contains("max_stage2_iterations")) out.max_stage2_iterations = s["max_stage2_iterations"].get<std::size_t>();
  }
  cfg.search.validate();

  if (doc.contains("world")) {
    const auto& w = doc["world"];
    cfg.blocklist = w.value("blocklist", std::vector<std::string>{});
    if (w.contains("semantic_block")) cfg.semantic_block = detail::parse_checker(w["semantic_block"], "/world/semantic_block");
    if (w.contains("image_block")) cfg.image_block = detail::parse_checker(w["image_block"], "/world/image_block");
    cfg.noise_sigma = w.value("noise_sigma", 0.0);
  }
  if (doc.contains("eval")) {
    const auto& e = doc["eval"];
    cfg.asr_syntheses = e.value("asr_n", cfg.asr_syntheses);
    if (e.contains("success")) cfg.success = detail::parse_checker(e["success"], "/eval/success");
  }
  if (cfg.mode == RunMode::Mock) {
    // Surface centroid/dimension problems before any run starts.
    const TrigramEmbedder embedder(cfg.embedding_dim);
    (void)cfg.mock_world(embedder);
    (void)cfg.eval_options(embedder);
  }
  return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open config " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::Config, path.string() + ": " + e.what());
  }
  return parse_run_config(doc, path.parent_path());
}

}  // namespace rtsearch
