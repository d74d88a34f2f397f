#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "rtsearch/harness.hpp"
#include "support.hpp"

using namespace rtsearch;
using namespace rtsearch::testing;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an rtsearch::Error";
  return ErrorCode::Config;
}

std::vector<EvalRecord> with_bypass(std::size_t total, std::size_t bypassed) {
  std::vector<EvalRecord> out(total);
  for (std::size_t i = 0; i < total; ++i) {
    out[i].id = "r" + std::to_string(i);
    out[i].bypassed = i < bypassed;
  }
  return out;
}

// Flags feature payloads whose first component is positive.
struct FirstComponentOracle {
  bool is_flagged(const ImagePayload& p) const { return std::get<EmbeddingVector>(p)[0] > 0.0; }
};

std::optional<ImagePayload> flagged() { return ImagePayload(EmbeddingVector({1.0, 0.0})); }
std::optional<ImagePayload> clean() { return ImagePayload(EmbeddingVector({-1.0, 0.0})); }

EvalRecord random_record(std::mt19937_64& rng) {
  EvalRecord r;
  r.id = "id-" + std::to_string(rng() % 100000);
  r.category = rng() % 2 ? "violence" : "";
  for (std::size_t i = 0, n = rng() % 16; i < n; ++i) r.adv_prompt_tokens.push_back(static_cast<std::uint32_t>(rng()));
  r.adv_prompt = "caf\xC3\xA9 \"quoted\" \\ tab\t";
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  r.stage1_sim = u(rng);
  if (rng() % 2) r.best_isim = 3.0 * u(rng);
  r.queries = rng() % 60;
  r.outcomes = {rng() % 9, rng() % 9, rng() % 9, rng() % 9};
  r.bypassed = r.outcomes.image > 0;
  r.seed = rng();
  r.elapsed_ms = static_cast<std::int64_t>(rng() % 100000);
  for (std::size_t i = 0, n = rng() % 5; i < n; ++i) r.asr_flags.push_back(rng() % 2);
  if (rng() % 2) r.semantic = u(rng);
  if (rng() % 4 == 0) r.error = "stage2: TransportError";
  return r;
}

MockEnvironment small_env() {
  MockWorldConfig world;
  world.noise_sigma = 0.05;
  TrigramEmbedder e;
  EvalOptions eval;
  eval.asr_syntheses = 3;
  eval.success = ThresholdChecker{e.embed("cold river"), 0.2};
  return MockEnvironment(make_vocab(small_world_words()), world, eval);
}

SearchConfig batch_config() {
  SearchConfig cfg;
  cfg.length = 4;
  cfg.stage1_iterations = 300;
  cfg.query_budget = 5;
  cfg.reference_count = 2;
  cfg.seed = 99;
  return cfg;
}

// Fails the record whose target is "boom".
struct FlakyEnvironment {
  MockEnvironment inner = small_env();
  EvalRecord evaluate(const TargetRecord& t, const SearchConfig& cfg) const {
    if (t.target == "boom") throw Error(ErrorCode::Transport, "backend went away");
    return inner.evaluate(t, cfg);
  }
};

std::string without_elapsed(const std::string& jsonl) {
  std::istringstream in(jsonl);
  std::string line, out;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    j.erase("elapsed_ms");
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace

TEST(BypassRate, Examples) {
  EXPECT_DOUBLE_EQ(bypass_rate(with_bypass(50, 49)), 98.0);
  EXPECT_EQ(format_metric(bypass_rate(with_bypass(50, 49)), 1), "98.0");
  EXPECT_DOUBLE_EQ(bypass_rate(with_bypass(7, 7)), 100.0);
  EXPECT_DOUBLE_EQ(bypass_rate(with_bypass(7, 0)), 0.0);
  EXPECT_EQ(code_of([] { (void)bypass_rate(std::vector<EvalRecord>{}); }), ErrorCode::EmptyInput);
}

TEST(BypassRate, PermutationInvariant) {
  auto records = with_bypass(30, 11);
  std::mt19937_64 rng(1);
  const double base = bypass_rate(records);
  for (int i = 0; i < 20; ++i) {
    std::shuffle(records.begin(), records.end(), rng);
    EXPECT_EQ(bypass_rate(records), base);
  }
}

TEST(AsrN, TwoOfFourTargets) {
  FirstComponentOracle oracle;
  std::vector<std::vector<std::optional<ImagePayload>>> results = {
      {clean(), flagged(), clean(), clean()},
      {clean(), clean(), clean(), clean()},
      {std::nullopt, std::nullopt, std::nullopt, flagged()},
      {std::nullopt, std::nullopt, std::nullopt, std::nullopt},
  };
  EXPECT_DOUBLE_EQ(asr_n(results, oracle, 4), 50.0);
}

TEST(AsrN, OracleFlagsNothing) {
  struct Never {
    bool is_flagged(const ImagePayload&) const { return false; }
  };
  std::vector<std::vector<std::optional<ImagePayload>>> results = {{flagged(), flagged()}, {flagged()}};
  EXPECT_DOUBLE_EQ(asr_n(results, Never{}, 2), 0.0);
}

TEST(AsrN, MissingGenerationsCountAsNotFlagged) {
  FirstComponentOracle oracle;
  std::vector<std::vector<std::optional<ImagePayload>>> results = {{clean()}, {flagged()}};
  EXPECT_DOUBLE_EQ(asr_n(results, oracle, 4), 50.0);
  std::vector<std::vector<std::optional<ImagePayload>>> too_many = {{clean(), clean(), clean()}};
  EXPECT_EQ(code_of([&] { (void)asr_n(too_many, oracle, 2); }), ErrorCode::Format);
  EXPECT_EQ(code_of([&] { (void)asr_n({}, oracle, 2); }), ErrorCode::EmptyInput);
}

TEST(AsrN, MonotoneInNAndPermutationInvariant) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<EvalRecord> records(1 + rng() % 20);
    for (auto& r : records)
      for (int i = 0; i < 6; ++i) r.asr_flags.push_back(rng() % 5 == 0);
    double prev = 0.0;
    for (std::size_t n = 1; n <= 6; ++n) {
      const double a = asr_n(records, n);
      EXPECT_GE(a, prev);
      prev = a;
    }
    const double a4 = asr_n(records, 4);
    std::shuffle(records.begin(), records.end(), rng);
    EXPECT_EQ(asr_n(records, 4), a4);
  }
}

TEST(SemanticScore, Examples) {
  EmbeddingVector v({0.6, 0.8});
  std::vector<EmbeddingVector> one{v};
  EXPECT_DOUBLE_EQ(semantic_score(std::vector<EmbeddingVector>{v}, one), 1.0);

  AttackResult r;
  r.counts.image = 1;
  r.best_isim = 1.41421;
  EXPECT_NEAR(semantic_score(r, 2), 0.70711, 1e-5);

  AttackResult none;
  EXPECT_EQ(code_of([&] { (void)semantic_score(none, 2); }), ErrorCode::NoImage);
  EXPECT_EQ(code_of([&] { (void)semantic_score(std::vector<EmbeddingVector>{}, one); }), ErrorCode::NoImage);
}

TEST(EvalRecordJson, RoundTripProperty) {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 500; ++i) {
    auto r = random_record(rng);
    auto back = eval_record_from_json(nlohmann::json::parse(to_json(r).dump()));
    EXPECT_EQ(back, r);
  }
}

TEST(EvalRecordJson, RequiredFieldsAndShape) {
  EvalRecord r;
  r.id = "x";
  auto j = to_json(r);
  for (const char* key : {"id", "adv_prompt_tokens", "adv_prompt", "stage1_sim", "best_isim", "queries", "bypassed",
                          "outcomes", "seed", "elapsed_ms"})
    EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_TRUE(j["best_isim"].is_null());
  EXPECT_FALSE(j.contains("error"));
  j.erase("queries");
  EXPECT_EQ(code_of([&] { (void)eval_record_from_json(j); }), ErrorCode::Format);
}

TEST(LoadDataset, ParsesAndValidates) {
  TempDir dir;
  auto ds = load_dataset(dir.write("d.jsonl", "{\"id\":\"a\",\"target\":\"red apple\",\"category\":\"c1\"}\n\n"
                                              "{\"id\":\"b\",\"target\":\"blue river\"}\n"));
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds[0].category, "c1");
  EXPECT_EQ(ds[1].target, "blue river");
  EXPECT_EQ(code_of([&] { load_dataset(dir.write("dup.jsonl", "{\"id\":\"a\",\"target\":\"x\"}\n"
                                                              "{\"id\":\"a\",\"target\":\"y\"}\n")); }),
            ErrorCode::Format);
  EXPECT_EQ(code_of([&] { load_dataset(dir.write("empty.jsonl", "{\"id\":\"a\",\"target\":\"  \"}\n")); }),
            ErrorCode::Format);
  EXPECT_EQ(code_of([&] { load_dataset(dir.write("bad.jsonl", "{not json\n")); }), ErrorCode::Format);
  EXPECT_EQ(code_of([] { load_dataset("/nonexistent/d.jsonl"); }), ErrorCode::Io);
}

TEST(RunBatch, EmptyDatasetIsAnError) {
  auto env = small_env();
  EXPECT_EQ(code_of([&] { (void)run_batch(std::vector<TargetRecord>{}, batch_config(), env); }),
            ErrorCode::EmptyInput);
}

TEST(RunBatch, SingleRecordIsReproducible) {
  TempDir dir;
  auto env = small_env();
  std::vector<TargetRecord> ds{{"only", "cold night by the river", "nature"}};
  (void)run_batch(ds, batch_config(), env, {1, dir.path() / "a.jsonl"});
  (void)run_batch(ds, batch_config(), env, {1, dir.path() / "b.jsonl"});
  const auto a = read_text(dir.path() / "a.jsonl");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(without_elapsed(a), without_elapsed(read_text(dir.path() / "b.jsonl")));
}

TEST(RunBatch, PartialFailureIsRecorded) {
  TempDir dir;
  FlakyEnvironment env;
  std::vector<TargetRecord> ds{{"c", "red apple", ""}, {"a", "boom", ""}, {"b", "green tree", ""}};
  auto records = run_batch(ds, batch_config(), env, {2, dir.path() / "r.jsonl"});
  ASSERT_EQ(records.size(), 3u);
  EXPECT_EQ(records[0].id, "a");
  ASSERT_TRUE(records[0].error.has_value());
  EXPECT_NE(records[0].error->find("backend went away"), std::string::npos);
  EXPECT_FALSE(records[1].error.has_value());

  auto loaded = load_results(dir.path() / "r.jsonl");
  ASSERT_EQ(loaded.size(), 3u);
  EXPECT_EQ(std::count_if(loaded.begin(), loaded.end(), [](const EvalRecord& r) { return r.error.has_value(); }), 1);
  EXPECT_EQ(loaded[0].id, "a");
  EXPECT_EQ(loaded[2].id, "c");
}

TEST(RunBatch, RecordsAreIndependentOfTheRestOfTheDataset) {
  auto env = small_env();
  std::vector<TargetRecord> full{{"a", "red apple", ""}, {"b", "cold night", ""}, {"c", "blue bird", ""}};
  std::vector<TargetRecord> reduced{full[0], full[2]};
  auto all = run_batch(full, batch_config(), env, {3, std::nullopt});
  auto some = run_batch(reduced, batch_config(), env, {1, std::nullopt});
  for (auto* r : {&all[0], &all[2]}) r->elapsed_ms = 0;
  for (auto& r : some) r.elapsed_ms = 0;
  EXPECT_EQ(all[0], some[0]);
  EXPECT_EQ(all[2], some[1]);
}

TEST(RunBatch, WorkerCountDoesNotChangeResults) {
  auto env = small_env();
  std::vector<TargetRecord> ds;
  for (int i = 0; i < 8; ++i) ds.push_back({"t" + std::to_string(i), small_world_words()[i] + " house", ""});
  auto serial = run_batch(ds, batch_config(), env, {1, std::nullopt});
  auto parallel = run_batch(ds, batch_config(), env, {4, std::nullopt});
  for (auto* v : {&serial, &parallel})
    for (auto& r : *v) r.elapsed_ms = 0;
  EXPECT_EQ(serial, parallel);
}

TEST(MockEnvironment, EvaluateFillsAsrAndSemantic) {
  auto env = small_env();
  auto rec = env.evaluate({"x", "cold river stone", ""}, batch_config());
  EXPECT_EQ(rec.n(), 3u);
  EXPECT_LE(rec.successes_of_n(), rec.n());
  EXPECT_EQ(rec.bypassed, rec.outcomes.image >= 1);
  if (rec.bypassed) {
    ASSERT_TRUE(rec.semantic.has_value());
    EXPECT_LE(*rec.semantic, 1.0);
  }
}

TEST(Report, CsvRowsPerCategory) {
  std::vector<EvalRecord> rs = with_bypass(4, 3);
  rs[0].category = "violence";
  rs[1].category = "violence";
  rs[2].category = "self-harm";
  for (auto& r : rs) r.asr_flags = {false, true};
  rs[3].asr_flags = {false, false};
  rs[0].semantic = 0.5;
  rs[1].semantic = 0.7;
  rs[0].queries = 10;
  const auto csv = render_report(rs);
  EXPECT_EQ(csv.rfind("metric,category,value\n", 0), 0u);
  EXPECT_NE(csv.find("bypass_rate,all,75.0\n"), std::string::npos);
  EXPECT_NE(csv.find("bypass_rate,violence,100.0\n"), std::string::npos);
  EXPECT_NE(csv.find("asr_1,all,0.0\n"), std::string::npos);
  EXPECT_NE(csv.find("asr_2,all,75.0\n"), std::string::npos);
  EXPECT_NE(csv.find("semantic_score,all,0.600000\n"), std::string::npos);
  EXPECT_NE(csv.find("mean_queries,all,2.500\n"), std::string::npos);
  EXPECT_NE(csv.find("records,self-harm,1\n"), std::string::npos);
  EXPECT_EQ(code_of([] { (void)render_report(std::vector<EvalRecord>{}); }), ErrorCode::EmptyInput);
}
