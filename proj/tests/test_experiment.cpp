#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "fakes.hpp"
#include "manyopt/experiment.hpp"
#include "synthetic.hpp"

using namespace manyopt;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

nlohmann::json without_config(const fs::path& p) {
  auto j = nlohmann::json::parse(slurp(p));
  j.erase("config");
  return j;
}

/// A scratch directory with a synthetic catalog, dataset and train split.
struct Workspace {
  fs::path root;
  LabelCatalog catalog;
  std::vector<Instance> dataset;

  Workspace(const std::string& name, std::size_t labels, std::size_t instances)
      : root(fs::temp_directory_path() / ("manyopt-exp-" + name)),
        catalog(testkit::make_catalog(labels)),
        dataset(testkit::make_dataset(catalog, instances)) {
    fs::remove_all(root);
    fs::create_directories(root);
    std::ofstream(root / "catalog.json") << nlohmann::json(catalog.labels()).dump();
    std::ofstream data(root / "test.jsonl");
    for (const auto& i : dataset) data << nlohmann::json{{"text", i.text}, {"label", i.gold}}.dump() << "\n";
    std::ofstream train(root / "train.jsonl");
    for (const auto& l : catalog.labels())
      for (int k = 0; k < 2; ++k)
        train << nlohmann::json{{"text", "train " + std::to_string(k) + " on " + l}, {"label", l}}.dump() << "\n";
  }
  ~Workspace() { fs::remove_all(root); }

  nlohmann::json config(const std::string& out = "run") const {
    return {{"catalog", "catalog.json"},
            {"dataset", "test.jsonl"},
            {"train", "train.jsonl"},
            {"backend", {{"kind", "scripted"}, {"parallelism", 3}}},
            {"oracle", "faithful"},
            {"embeddings", {{"kind", "hashed"}, {"dim", 32}}},
            {"reduction", {{"strategy", "cbwr"}, {"target", 5}, {"clusters", 5}, {"per_cluster", 4}}},
            {"comparison", {{"method", "pc_cot"}, {"shots", 1}}},
            {"repeats", 2},
            {"seed", 1},
            {"out_dir", out}};
  }

  ExperimentConfig parsed(const nlohmann::json& j, const ConfigOverrides& ov = {}) const {
    return parse_config(j, root, ov);
  }
};

}  // namespace

TEST(Config, OverridesAndDerivedSeeds) {
  Workspace w("cfg", 12, 4);
  ConfigOverrides ov;
  ov.method = "pair_zs";
  ov.repeats = 3;
  ov.seed = 10;
  auto c = w.parsed(w.config(), ov);
  EXPECT_TRUE(c.problems.empty()) << c.problems.front();
  EXPECT_EQ(c.comparison.method, ComparisonMethod::pair_zs);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{10, 11, 12}));
  EXPECT_EQ(c.catalog, (w.root / "catalog.json").string());
  EXPECT_EQ(c.snapshot["comparison"]["method"], "pair_zs");
  EXPECT_EQ(c.oracle.sharpness, 0.0);
}

TEST(Config, EnvironmentInterpolation) {
  Workspace w("env", 12, 4);
  auto j = w.config();
  j["out_dir"] = "${MANYOPT_TEST_OUT}/run";
  ::setenv("MANYOPT_TEST_OUT", "/tmp/somewhere", 1);
  EXPECT_EQ(w.parsed(j).out_dir, "/tmp/somewhere/run");
  j["out_dir"] = "${MANYOPT_SURELY_UNSET_VAR}";
  ::unsetenv("MANYOPT_SURELY_UNSET_VAR");
  auto c = w.parsed(j);
  ASSERT_EQ(c.problems.size(), 1u);
  EXPECT_NE(c.problems[0].find("MANYOPT_SURELY_UNSET_VAR"), std::string::npos);
}

TEST(Config, EveryProblemIsReportedAtOnce) {
  Workspace w("bad", 12, 4);
  auto j = w.config();
  j["colour"] = "blue";
  j["reduction"]["strategy"] = "magic";
  j["catalog"] = "missing.json";
  auto c = w.parsed(j);
  try {
    validate_inputs(c, Command::classify);
    FAIL();
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("colour"), std::string::npos) << msg;
    EXPECT_NE(msg.find("magic"), std::string::npos) << msg;
    EXPECT_NE(msg.find("missing.json"), std::string::npos) << msg;
  }
}

TEST(Experiment, ValidationRunsBeforeAnyCall) {
  Workspace w("valid", 12, 4);
  auto backend = std::make_shared<testkit::FnBackend>([](const ModelQuery&) { return std::string("LABEL: x"); });
  auto j = w.config();
  j["catalog"] = "nope.json";
  j["out_dir"] = (w.root / "run").string();
  Experiment e(w.parsed(j), ExperimentHooks{backend, nullptr, nullptr});
  EXPECT_THROW(e.run(Command::classify), ValidationError);
  EXPECT_EQ(backend->calls, 0u);
  EXPECT_FALSE(fs::exists(w.root / "run" / "config.json"));
}

TEST(Experiment, BiasSweepRejectsPositionsPastTheCatalog) {
  Workspace w("pos", 12, 4);
  auto j = w.config();
  j["positions"] = {0, 12};
  auto c = w.parsed(j);
  EXPECT_THROW(validate_inputs(c, Command::bias_sweep), ValidationError);
  j["positions"] = {0, 11};
  EXPECT_NO_THROW(validate_inputs(w.parsed(j), Command::bias_sweep));
}

TEST(Experiment, FaithfulReduceOnSixtyLabels) {
  Workspace w("reduce", 60, 30);
  Experiment e(w.parsed(w.config()));
  auto res = e.run(Command::reduce);
  EXPECT_EQ(res.processed, 60u);
  auto report = nlohmann::json::parse(slurp(w.root / "run" / "reports" / "reduce.json"));
  EXPECT_EQ(report["hit_at_k"]["mean"], 1.0);
  bool found = false;
  for (const auto& row : report["calls"])
    if (row["stage"] == "reduce:cbwr") {
      EXPECT_EQ(row["mean_calls"], 4.0);
      found = true;
    }
  EXPECT_TRUE(found);
  EXPECT_EQ(res.backend_calls, 60u * 4u);
}

TEST(Experiment, ClassifyCallsAndFullOptionBaseline) {
  Workspace w("classify", 12, 10);
  auto j = w.config();
  j["repeats"] = 1;
  j["reduction"] = {{"strategy", "standard"}, {"target", 5}};
  Experiment e(w.parsed(j));
  auto res = e.run(Command::classify);
  EXPECT_EQ(res.backend_calls, 10u * (1 + 12));
  auto report = nlohmann::json::parse(slurp(w.root / "run" / "reports" / "classify.json"));
  EXPECT_EQ(report["accuracy"]["mean"], 1.0);

  j["comparison"]["method"] = "full_zs";
  j["out_dir"] = "full";
  Experiment full(w.parsed(j));
  EXPECT_EQ(full.run(Command::classify).backend_calls, 10u);
  auto lines = read_transcripts(w.root / "full" / "transcripts.jsonl");
  ASSERT_EQ(lines.size(), 10u);
  for (const auto& l : lines) {
    EXPECT_EQ(l.outcome.reduction.calls, 0u);
    EXPECT_EQ(l.outcome.reduction.reduced.size(), 12u);
    EXPECT_TRUE(l.key.ends_with("/full_zs/none"));
  }
}

TEST(Experiment, WarmCacheRerunIsIdenticalAndFree) {
  Workspace w("cache", 12, 8);
  auto j = w.config();
  j["oracle"] = {{"sharpness", 1.0}, {"seed", 3}};
  j["cache_dir"] = "cache";
  j["out_dir"] = "first";
  Experiment a(w.parsed(j));
  auto ra = a.run(Command::classify);
  EXPECT_GT(ra.backend_calls, 0u);

  j["out_dir"] = "second";
  Experiment b(w.parsed(j));
  auto rb = b.run(Command::classify);
  EXPECT_EQ(rb.backend_calls, 0u);
  EXPECT_EQ(rb.cache_hits, ra.backend_calls + ra.cache_hits);
  EXPECT_EQ(slurp(w.root / "first" / "transcripts.jsonl"), slurp(w.root / "second" / "transcripts.jsonl"));
  EXPECT_EQ(without_config(w.root / "first" / "reports" / "classify.json"),
            without_config(w.root / "second" / "reports" / "classify.json"));

  // same directory again: everything resumes, nothing changes
  const auto before = slurp(w.root / "first" / "reports" / "classify.json");
  j["out_dir"] = "first";
  Experiment again(w.parsed(j));
  auto rc = again.run(Command::classify);
  EXPECT_EQ(rc.processed, 0u);
  EXPECT_EQ(rc.resumed, 16u);
  EXPECT_EQ(slurp(w.root / "first" / "reports" / "classify.json"), before);
}

TEST(Experiment, RefusesARunDirectoryWithAnotherConfig) {
  Workspace w("guard", 12, 4);
  auto j = w.config();
  Experiment(w.parsed(j)).run(Command::ingest);
  j["comparison"]["method"] = "pair_zs";
  EXPECT_THROW(Experiment(w.parsed(j)).run(Command::classify), ValidationError);
}

TEST(Experiment, ResumeAfterOutageMatchesAnUninterruptedRun) {
  Workspace w("resume", 12, 12);
  auto j = w.config();
  j["oracle"] = {{"sharpness", 1.0}, {"seed", 5}};
  auto c = w.parsed(j);
  auto golds = ScriptedOracle::golds_from(w.dataset);

  j["out_dir"] = "clean";
  Experiment clean(w.parsed(j));
  clean.run(Command::classify);

  j["out_dir"] = "broken";
  auto oracle = std::make_shared<ScriptedOracle>(c.oracle, golds);
  auto flaky = std::make_shared<testkit::FailingAfter>(oracle, 100);
  Experiment broken(w.parsed(j), ExperimentHooks{flaky, nullptr, nullptr});
  EXPECT_THROW(broken.run(Command::classify), BackendError);
  const auto partial = read_transcripts(w.root / "broken" / "transcripts.jsonl");
  EXPECT_GT(partial.size(), 0u);
  EXPECT_LT(partial.size(), 24u);

  // a torn last line, as after a crash mid-write
  { std::ofstream(w.root / "broken" / "transcripts.jsonl", std::ios::app) << "{\"key\": \"classify/1/3"; }

  Experiment resumed(w.parsed(j), ExperimentHooks{oracle, nullptr, nullptr});
  auto res = resumed.run(Command::classify);
  EXPECT_EQ(res.resumed, partial.size());
  EXPECT_EQ(res.processed, 24u - partial.size());
  EXPECT_EQ(slurp(w.root / "clean" / "transcripts.jsonl"), slurp(w.root / "broken" / "transcripts.jsonl"));
  EXPECT_EQ(without_config(w.root / "clean" / "reports" / "classify.json"),
            without_config(w.root / "broken" / "reports" / "classify.json"));
}

TEST(Experiment, ReportRebuildsFromTranscripts) {
  Workspace w("report", 12, 6);
  Experiment e(w.parsed(w.config()));
  e.run(Command::classify);
  const auto path = w.root / "run" / "reports" / "classify.json";
  const auto original = slurp(path);
  fs::remove_all(w.root / "run" / "reports");
  auto res = e.run(Command::report);
  EXPECT_EQ(res.backend_calls, 0u);
  EXPECT_EQ(slurp(path), original);
}

TEST(Experiment, DryRunRendersPromptsWithoutCalls) {
  Workspace w("dry", 12, 6);
  auto backend = std::make_shared<testkit::FnBackend>([](const ModelQuery&) { return std::string("LABEL: x"); });
  Experiment e(w.parsed(w.config()), ExperimentHooks{backend, nullptr, nullptr});
  auto res = e.run(Command::classify, true);
  EXPECT_EQ(backend->calls, 0u);
  const auto prompts = slurp(w.root / "run" / "dry_run_prompts.txt");
  EXPECT_NE(prompts.find(w.dataset[0].text), std::string::npos);
  EXPECT_FALSE(fs::exists(w.root / "run" / "transcripts.jsonl"));
}

TEST(Experiment, IngestAndBiasSweepWriteReports) {
  Workspace w("ingest", 12, 24);
  auto j = w.config();
  j["positions"] = {0, 6};
  j["comparison"]["method"] = "full_zs";
  Experiment e(w.parsed(j));
  e.run(Command::ingest);
  EXPECT_TRUE(fs::exists(w.root / "run" / "reports" / "silhouette.json"));
  e.run(Command::bias_sweep);
  auto bias = nlohmann::json::parse(slurp(w.root / "run" / "reports" / "bias.json"));
  EXPECT_EQ(bias["baseline_accuracy"], 1.0);
  for (const auto& row : bias["positions"]) EXPECT_EQ(row["change_rate"], 0.0);
  e.run(Command::classify);
  EXPECT_TRUE(fs::exists(w.root / "run" / "reports" / "silhouette_accuracy.csv"));
}

TEST(Experiment, ChallengeSampleNamesTheBadLine) {
  Workspace w("margins", 3, 3);
  {
    std::ofstream m(w.root / "margins.jsonl");
    m << nlohmann::json{{"text", w.dataset[0].text}, {"probs", {0.5, 0.3, 0.2}}}.dump() << "\n";
    m << nlohmann::json{{"text", w.dataset[1].text}, {"probs", {0.5, 0.5}}}.dump() << "\n";
    m << nlohmann::json{{"text", w.dataset[2].text}, {"probs", {0.9, 0.05, 0.05}}}.dump() << "\n";
  }
  auto j = w.config();
  j["margins"] = "margins.jsonl";
  j["challenge"] = {{"count", 2}};
  j["reduction"] = {{"strategy", "standard"}};
  try {
    Experiment(w.parsed(j)).run(Command::sample_challenge);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("margins line 2"), std::string::npos) << e.what();
  }
  {
    std::ofstream m(w.root / "margins.jsonl");
    m << nlohmann::json{{"text", w.dataset[0].text}, {"probs", {0.5, 0.3, 0.2}}}.dump() << "\n";
    m << nlohmann::json{{"text", w.dataset[2].text}, {"probs", {0.9, 0.05, 0.05}}}.dump() << "\n";
    m << nlohmann::json{{"text", w.dataset[1].text}, {"probs", {0.4, 0.35, 0.25}}}.dump() << "\n";
  }
  Experiment(w.parsed(j)).run(Command::sample_challenge);
  std::ifstream in(w.root / "run" / "challenge.jsonl");
  std::string a, b, extra;
  std::getline(in, a);
  std::getline(in, b);
  EXPECT_FALSE(std::getline(in, extra));
  EXPECT_EQ(nlohmann::json::parse(a)["text"], w.dataset[1].text);
  EXPECT_EQ(nlohmann::json::parse(b)["text"], w.dataset[0].text);
}

TEST(Cli, ExitCodes) {
  Workspace w("cli", 12, 4);
  auto j = w.config();
  j["comparison"]["method"] = "no_such_method";
  std::ofstream(w.root / "bad.json") << j.dump();
  const std::string cli = MANYOPT_CLI;
  const auto cmd = cli + " classify --config " + (w.root / "bad.json").string() + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  EXPECT_EQ(WEXITSTATUS(status), 2);

  std::ofstream(w.root / "good.json") << w.config().dump();
  const auto ok = cli + " classify --config " + (w.root / "good.json").string() + " --repeats 1 > /dev/null 2>&1";
  EXPECT_EQ(WEXITSTATUS(std::system(ok.c_str())), 0);
  EXPECT_TRUE(fs::exists(w.root / "run" / "reports" / "classify.json"));
}
