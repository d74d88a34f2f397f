// rtsearch command-line entry point.
//
// Exit codes: 0 ok, 1 unexpected failure, 2 config/IO/format error,
// 3 filtered vocabulary empty, 4 attack produced no image, 5 bridge unusable.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "rtsearch/rtsearch.hpp"

namespace fs = std::filesystem;
using namespace rtsearch;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitEmptyVocabulary = 3;
constexpr int kExitNoImage = 4;
constexpr int kExitBridge = 5;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyVocabulary: return kExitEmptyVocabulary;
    case ErrorCode::Transport:
    case ErrorCode::Protocol: return kExitBridge;
    default: return kExitUsage;
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

FilteredVocabulary vocabulary_for(const RunConfig& cfg) {
  return filter_vocabulary(cfg.vocab, cfg.sensitive.value_or(fs::path()));
}

int cmd_filter_vocab(const fs::path& vocab_path, const fs::path& sensitive_path, const fs::path& out_path) {
  auto vocab = load_vocabulary(vocab_path);
  auto sensitive = load_sensitive_list(sensitive_path);
  auto filtered = filter_vocabulary(vocab, sensitive,
                                    "vocab=" + vocab_path.string() + " sensitive=" + sensitive_path.string());
  std::ofstream out(out_path, std::ios::trunc | std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + out_path.string());
  for (const auto& e : filtered.entries()) out << e << '\n';
  if (!out) throw Error(ErrorCode::Io, "write failed for " + out_path.string());
  std::cerr << "kept " << filtered.size() << " removed " << vocab.size() - filtered.size() << '\n';
  return kExitOk;
}

int cmd_attack(const fs::path& config_path, const std::string& target, std::optional<std::uint64_t> seed) {
  auto cfg = load_run_config(config_path);
  if (seed) cfg.search.seed = *seed;
  auto vocab = vocabulary_for(cfg);

  AttackResult result;
  if (cfg.mode == RunMode::Mock) {
    TrigramEmbedder embedder(cfg.embedding_dim);
    MockEnvironment env(std::move(vocab), cfg.mock_world(embedder), cfg.eval_options(embedder), cfg.embedding_dim);
    result = env.attack(cfg.search, target);
  } else {
    BridgeEnvironment env(std::move(vocab), cfg.bridge_url, cfg.surrogate_url, cfg.embedding_dim, {}, cfg.bridge);
    result = env.attack(cfg.search, target);
  }
  std::cout << to_json(result).dump() << '\n';
  if (!result.bypassed()) {
    std::cerr << "attack produced no image within the query budget\n";
    return kExitNoImage;
  }
  return kExitOk;
}

int cmd_batch(const fs::path& config_path, std::optional<fs::path> dataset_path, std::optional<fs::path> out_dir) {
  auto cfg = load_run_config(config_path);
  if (!dataset_path) dataset_path = cfg.dataset;
  if (!out_dir) out_dir = cfg.output_dir;
  if (!dataset_path) throw Error(ErrorCode::Config, "no dataset given (--dataset or config 'dataset')");
  if (!out_dir) throw Error(ErrorCode::Config, "no output directory given (--out or config 'output_dir')");

  auto dataset = load_dataset(*dataset_path);
  auto vocab = vocabulary_for(cfg);
  fs::create_directories(*out_dir);
  const fs::path results_path = *out_dir / "results.jsonl";
  BatchOptions opts{cfg.workers, results_path};

  std::vector<EvalRecord> records;
  if (cfg.mode == RunMode::Mock) {
    TrigramEmbedder embedder(cfg.embedding_dim);
    MockEnvironment env(std::move(vocab), cfg.mock_world(embedder), cfg.eval_options(embedder), cfg.embedding_dim);
    records = run_batch(dataset, cfg.search, env, opts);
  } else {
    BridgeClient probe(cfg.bridge_url, cfg.bridge);
    probe.require_dim(cfg.embedding_dim);
    BridgeTextOracle remote_text(probe, cfg.embedding_dim);
    BridgeEnvironment env(std::move(vocab), cfg.bridge_url, cfg.surrogate_url, cfg.embedding_dim,
                          cfg.eval_options(remote_text), cfg.bridge);
    records = run_batch(dataset, cfg.search, env, opts);
  }

  nlohmann::json manifest = {
      {"tool", "rtsearch"},
      {"version", std::string(kVersion)},
      {"config_path", config_path.string()},
      {"config_sha256", cfg.sha256()},
      {"dataset_path", dataset_path->string()},
      {"dataset_sha256", sha256_hex(read_file(*dataset_path))},
      {"seed", cfg.search.seed},
      {"mode", cfg.mode == RunMode::Mock ? "mock" : "bridge"},
      {"records", records.size()},
      {"json_library", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                           std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                           std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
      {"compiler", __VERSION__},
  };
  std::ofstream(*out_dir / "manifest.json") << manifest.dump(2) << '\n';

  std::size_t failures = 0;
  for (const auto& r : records) failures += r.error ? 1 : 0;
  std::cerr << "wrote " << records.size() << " records (" << failures << " failed) to " << results_path.string()
            << '\n';
  return kExitOk;
}

int cmd_eval(const fs::path& results_path, const fs::path& report_path) {
  auto records = load_results(results_path);
  auto report = render_report(records);
  std::ofstream out(report_path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + report_path.string());
  out << report;
  std::cerr << "bypass_rate " << format_metric(bypass_rate(records), 1) << " over " << records.size()
            << " records\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Query-budgeted random token search against defended text-to-image pipelines"};
  app.require_subcommand(1);

  std::string vocab_path, sensitive_path, out_path;
  auto* filter = app.add_subcommand("filter-vocab", "Remove vocabulary entries containing sensitive terms");
  filter->add_option("--vocab", vocab_path, "Vocabulary file, one entry per line")->required();
  filter->add_option("--sensitive", sensitive_path, "Sensitive term list, one term per line")->required();
  filter->add_option("--out", out_path, "Filtered vocabulary output")->required();

  std::string config_path, target;
  std::optional<std::uint64_t> seed;
  auto* attack = app.add_subcommand("attack", "Run one two-stage attack and print the result JSON");
  attack->add_option("--config", config_path, "Run configuration JSON")->required();
  attack->add_option("--target", target, "Target prompt")->required();
  attack->add_option("--seed", seed, "Override search.seed");

  std::string batch_config, dataset, out_dir;
  auto* batch = app.add_subcommand("batch", "Attack every target in a JSONL dataset");
  batch->add_option("--config", batch_config, "Run configuration JSON")->required();
  batch->add_option("--dataset", dataset, "Dataset JSONL (overrides config)");
  batch->add_option("--out", out_dir, "Output directory (overrides config)");

  std::string results_path, report_path;
  auto* eval = app.add_subcommand("eval", "Aggregate a results JSONL into a metric CSV");
  eval->add_option("--results", results_path, "Results JSONL")->required();
  eval->add_option("--report", report_path, "Report CSV output")->required();

  auto* schema = app.add_subcommand("schema", "Print the run configuration JSON schema");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*filter) return cmd_filter_vocab(vocab_path, sensitive_path, out_path);
    if (*attack) return cmd_attack(config_path, target, seed);
    if (*batch)
      return cmd_batch(batch_config, dataset.empty() ? std::nullopt : std::optional<fs::path>(dataset),
                       out_dir.empty() ? std::nullopt : std::optional<fs::path>(out_dir));
    if (*eval) return cmd_eval(results_path, report_path);
    if (*schema) {
      std::cout << kRunConfigSchema << '\n';
      return kExitOk;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kExitOk;
}
