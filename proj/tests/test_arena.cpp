#include <gtest/gtest.h>

#include <filesystem>

#include "fakes.hpp"
#include "manyopt/arena.hpp"
#include "manyopt/metrics.hpp"
#include "manyopt/oracle.hpp"
#include "synthetic.hpp"

using namespace manyopt;

namespace {

GatewayOptions no_cache() { return GatewayOptions{std::nullopt, false, 1}; }

ComparisonConfig method(ComparisonMethod m, std::uint64_t seed = 1) {
  ComparisonConfig c;
  c.method = m;
  c.shots = 1;
  c.seed = seed;
  return c;
}

struct Judge {
  LabelCatalog catalog;
  DemonstrationStore store;
  GoldLookup golds;
  ScriptedOracleConfig cfg;
  std::shared_ptr<ScriptedOracle> oracle;
  std::unique_ptr<Gateway> gw;

  Judge(std::size_t labels, ScriptedOracleConfig c)
      : catalog(testkit::make_catalog(labels)), store(testkit::make_store(catalog, 2, true)), cfg(std::move(c)) {}

  /// Registers `trials` texts with their golds, then builds the gateway.
  void prepare(const std::vector<std::pair<std::string, LabelId>>& items) {
    for (const auto& [t, g] : items) golds[t] = g;
    oracle = std::make_shared<ScriptedOracle>(cfg, golds);
    gw = std::make_unique<Gateway>(oracle, no_cache());
  }
};

std::vector<LabelId> first(const LabelCatalog& c, std::size_t n) {
  return {c.labels().begin(), c.labels().begin() + static_cast<std::ptrdiff_t>(n)};
}

}  // namespace

TEST(Arena, SingleCandidateNeedsNoCalls) {
  Judge j(5, ScriptedOracleConfig::faithful());
  j.prepare({{"x", "label_000"}});
  for (auto m : {ComparisonMethod::pc_cot, ComparisonMethod::pair_zs}) {
    auto t = compare("x", {"label_000"}, j.store, method(m), *j.gw);
    EXPECT_EQ(t.calls, 0u);
    EXPECT_EQ(t.final, "label_000");
    EXPECT_TRUE(t.pairs.empty());
  }
}

TEST(Arena, CallCountsMatchClosedForm) {
  Judge j(5, ScriptedOracleConfig::faithful());
  j.prepare({{"x", "label_003"}});
  for (auto m : kAllMethods)
    for (std::size_t r = 1; r <= 5; ++r) {
      auto t = compare("x", first(j.catalog, r), j.store, method(m), *j.gw);
      EXPECT_EQ(t.calls, comparison_call_count(m, r)) << to_string(m) << " |R|=" << r;
    }
  EXPECT_EQ(comparison_call_count(ComparisonMethod::pc_cot, 5), 12u);
  EXPECT_EQ(comparison_call_count(ComparisonMethod::pair_fs, 5), 4u);
  EXPECT_EQ(comparison_call_count(ComparisonMethod::pair_zs, 2), 1u);
  EXPECT_EQ(comparison_call_count(ComparisonMethod::full_fs_cot, 5), 1u);
}

TEST(Arena, PcCotRunsThreeConditionedStepsPerPair) {
  auto backend = std::make_shared<testkit::FnBackend>([](const ModelQuery& q) -> std::string {
    switch (q.kind) {
      case QueryKind::similarity_analysis: return "SIM " + q.options[0];
      case QueryKind::difference_analysis: return "DIFF " + q.options[0];
      default: return "LABEL: " + q.options[1];
    }
  });
  Gateway gw(backend, no_cache());
  auto c = testkit::make_catalog(3);
  auto store = testkit::make_store(c, 1);
  auto cfg = method(ComparisonMethod::pc_cot);
  cfg.randomize_pair_positions = false;
  auto t = compare("x", c.labels(), store, cfg, gw);
  ASSERT_EQ(backend->seen.size(), 6u);
  EXPECT_EQ(backend->seen[0].kind, QueryKind::similarity_analysis);
  EXPECT_TRUE(backend->seen[0].thoughts.empty());
  EXPECT_EQ(backend->seen[1].kind, QueryKind::difference_analysis);
  EXPECT_EQ(backend->seen[1].thoughts, (std::vector<std::string>{"SIM label_000"}));
  EXPECT_EQ(backend->seen[2].kind, QueryKind::pairwise_decide);
  EXPECT_EQ(backend->seen[2].thoughts, (std::vector<std::string>{"SIM label_000", "DIFF label_000"}));
  // winner stays: label_001 beat label_000 and meets label_002 first-slotted
  EXPECT_EQ(backend->seen[3].options, (std::vector<LabelId>{"label_001", "label_002"}));
  EXPECT_EQ(t.final, "label_002");
  EXPECT_EQ(t.pairs[0].similarity, "SIM label_000");
  EXPECT_EQ(t.pairs[0].difference, "DIFF label_000");
  for (const auto& q : backend->seen) EXPECT_EQ(q.demonstrations.value().size(), 2u);
}

TEST(Arena, FaithfulJudgeAlwaysFindsGold) {
  Judge j(5, ScriptedOracleConfig::faithful());
  std::vector<std::pair<std::string, LabelId>> items;
  for (int i = 0; i < 50; ++i) items.push_back({"s" + std::to_string(i), j.catalog[i % 5]});
  j.prepare(items);
  for (auto m : kAllMethods)
    for (const auto& [text, gold] : items) {
      auto t = compare(text, j.catalog.labels(), j.store, method(m, text.size()), *j.gw);
      ASSERT_EQ(t.final, gold) << to_string(m);
    }
}

TEST(Arena, TournamentSuccessIsPerPairAccuracyToTheFourth) {
  ScriptedOracleConfig oc;
  oc.count_curve = CountCurve::constant(0.95);
  oc.seed = 21;
  const std::size_t trials = 10000;
  Judge j(5, oc);
  std::vector<std::pair<std::string, LabelId>> items;
  for (std::size_t i = 0; i < trials; ++i) items.push_back({"trial " + std::to_string(i), j.catalog[0]});
  j.prepare(items);
  const double q4 = std::pow(0.95, 4);
  const double se = binomial_se(q4, trials);
  for (auto m : {ComparisonMethod::pc_cot, ComparisonMethod::pair_zs}) {
    std::size_t wins = 0;
    for (std::size_t i = 0; i < trials; ++i) {
      auto t = compare(items[i].first, j.catalog.labels(), j.store, method(m, i), *j.gw);
      if (t.final == j.catalog[0]) ++wins;
    }
    const double rate = double(wins) / double(trials);
    EXPECT_NEAR(rate, q4, 3 * se) << to_string(m);
  }
}

TEST(Arena, FullOptionBaseline) {
  Judge j(77, ScriptedOracleConfig::faithful());
  std::vector<std::pair<std::string, LabelId>> items;
  for (int i = 0; i < 30; ++i) items.push_back({"s" + std::to_string(i), j.catalog[(i * 7) % 77]});
  j.prepare(items);
  for (const auto& [text, gold] : items) {
    auto t = compare(text, j.catalog.labels(), j.store, method(ComparisonMethod::full_zs), *j.gw);
    ASSERT_EQ(t.final, gold);
    ASSERT_EQ(t.calls, 1u);
  }
  auto single = compare("s0", {"label_005"}, j.store, method(ComparisonMethod::full_fs), *j.gw);
  EXPECT_EQ(single.final, "label_005");
  EXPECT_EQ(single.calls, 1u);
}

TEST(Arena, FullOptionMatchesTheCountCurveAtSixty) {
  ScriptedOracleConfig oc;
  oc.seed = 4;
  Judge j(60, oc);
  const std::size_t trials = 4000;
  std::vector<std::pair<std::string, LabelId>> items;
  for (std::size_t i = 0; i < trials; ++i) items.push_back({"t" + std::to_string(i), j.catalog[i % 60]});
  j.prepare(items);
  std::size_t wins = 0;
  for (std::size_t i = 0; i < trials; ++i) {
    auto opts = arrange(j.catalog, ArrangementSpec::shuffled(i), items[i].second);
    auto t = compare(items[i].first, opts, j.store, method(ComparisonMethod::full_zs), *j.gw);
    if (t.final == items[i].second) ++wins;
  }
  EXPECT_NEAR(double(wins) / trials, 0.3251, 3 * binomial_se(0.3251, trials));
}

TEST(Arena, UnparseableVerdictRetriesThenDefaults) {
  auto backend = std::make_shared<testkit::FnBackend>([](const ModelQuery&) { return std::string("no idea"); });
  Gateway gw(backend, no_cache());
  auto c = testkit::make_catalog(3);
  auto store = testkit::make_store(c, 1);
  auto t = compare("x", c.labels(), store, method(ComparisonMethod::pair_zs), gw);
  EXPECT_EQ(t.calls, 4u);
  EXPECT_EQ(t.final, "label_000");  // the higher-ranked label wins every default
  ASSERT_EQ(t.pairs.size(), 2u);
  for (const auto& p : t.pairs) {
    EXPECT_TRUE(p.defaulted);
    EXPECT_EQ(p.retries, 1u);
  }
  EXPECT_EQ(t.flags.size(), 2u);

  auto pc = compare("x", c.labels(), store, method(ComparisonMethod::pc_cot), gw);
  EXPECT_EQ(pc.calls, 8u);
  ASSERT_TRUE(pc.final);

  auto full = compare("x", c.labels(), store, method(ComparisonMethod::full_zs), gw);
  EXPECT_FALSE(full.final);
  EXPECT_EQ(full.flags.size(), 1u);
}

TEST(Arena, RetryRecoversAParseableVerdict) {
  std::atomic<int> n{0};
  auto backend = std::make_shared<testkit::FnBackend>(
      [&](const ModelQuery& q) { return n++ == 0 ? std::string("hmm") : "LABEL: " + q.options[1]; });
  Gateway gw(backend, no_cache());
  auto c = testkit::make_catalog(2);
  auto store = testkit::make_store(c, 1);
  auto t = compare("x", c.labels(), store, method(ComparisonMethod::pair_zs), gw);
  EXPECT_EQ(t.calls, 2u);
  EXPECT_FALSE(t.pairs[0].defaulted);
  EXPECT_EQ(t.pairs[0].retries, 1u);
  EXPECT_NE(backend->seen[0].decoding.seed, backend->seen[1].decoding.seed);
  EXPECT_TRUE(t.final);
}

TEST(Arena, FinalAlwaysComesFromTheCandidates) {
  ScriptedOracleConfig oc;
  oc.seed = 8;
  oc.position_bias = {0.5, 0.0};
  Judge j(9, oc);
  std::vector<std::pair<std::string, LabelId>> items;
  for (int i = 0; i < 200; ++i) items.push_back({"q" + std::to_string(i), j.catalog[i % 9]});
  j.prepare(items);
  rng::Stream s(5);
  for (const auto& [text, gold] : items) {
    auto opts = arrange(j.catalog, ArrangementSpec::shuffled(s.next()), gold);
    opts.resize(1 + s.below(9));
    for (auto m : kAllMethods) {
      auto cfg = method(m, s.next());
      cfg.pair_order = s.coin() ? PairOrder::seeded_shuffle : PairOrder::reduction_rank_fifo;
      auto t = compare(text, opts, j.store, cfg, *j.gw);
      ASSERT_TRUE(t.final);
      ASSERT_NE(std::find(opts.begin(), opts.end(), *t.final), opts.end());
    }
  }
}

TEST(Arena, RandomSlotsOffsetAFirstSlotBias) {
  // A strong first-slot preference; gold enters last as the challenger.
  ScriptedOracleConfig oc;
  oc.count_curve = CountCurve::constant(0.7);
  oc.position_bias = {2.0, 0.0};
  oc.seed = 13;
  Judge j(5, oc);
  std::vector<std::pair<std::string, LabelId>> items;
  for (int i = 0; i < 2000; ++i) items.push_back({"d" + std::to_string(i), j.catalog[4]});
  j.prepare(items);
  auto rate = [&](bool randomize) {
    std::size_t wins = 0;
    for (std::size_t i = 0; i < items.size(); ++i) {
      auto cfg = method(ComparisonMethod::pair_zs, i);
      cfg.randomize_pair_positions = randomize;
      if (compare(items[i].first, j.catalog.labels(), j.store, cfg, *j.gw).final == j.catalog[4]) ++wins;
    }
    return double(wins) / double(items.size());
  };
  const double fixed = rate(false), randomized = rate(true);
  EXPECT_GT(randomized, fixed + 0.1) << fixed << " vs " << randomized;
}

TEST(Arena, TranscriptsReplayFromCache) {
  const auto dir = std::filesystem::temp_directory_path() / "manyopt-arena-cache";
  std::filesystem::remove_all(dir);
  ScriptedOracleConfig oc;
  oc.seed = 2;
  auto c = testkit::make_catalog(5);
  auto store = testkit::make_store(c, 2, true);
  GoldLookup golds{{"x", c[2]}};
  std::string first_run;
  for (int pass = 0; pass < 2; ++pass) {
    auto backend = std::make_shared<testkit::FnBackend>([&](const ModelQuery& q) {
      return ScriptedOracle(oc, golds).complete(q).text;
    }, "scripted-wrapper");
    Gateway gw(backend, GatewayOptions{dir, true, 2});
    auto t = compare("x", c.labels(), store, method(ComparisonMethod::pc_cot, 9), gw);
    auto dump = to_json(t).dump();
    if (pass == 0) {
      first_run = dump;
      EXPECT_EQ(backend->calls, 12u);
    } else {
      EXPECT_EQ(backend->calls, 0u);
      EXPECT_EQ(gw.stats().cache_hits, 12u);
      auto a = to_json(t), b = nlohmann::json::parse(first_run);
      a.erase("latency_ms");
      b.erase("latency_ms");
      EXPECT_EQ(a, b);
    }
    EXPECT_EQ(to_json(transcript_from_json(to_json(t))).dump(), dump);
  }
  std::filesystem::remove_all(dir);
}
