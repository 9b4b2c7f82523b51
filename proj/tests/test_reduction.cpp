#include <gtest/gtest.h>

#include <set>

#include "fakes.hpp"
#include "manyopt/oracle.hpp"
#include "manyopt/reduction.hpp"
#include "synthetic.hpp"

using namespace manyopt;

namespace {

GatewayOptions no_cache() { return GatewayOptions{std::nullopt, false, 1}; }

struct OracleRig {
  LabelCatalog catalog;
  std::vector<Instance> instances;
  EmbeddingMatrix embeddings;
  std::shared_ptr<ScriptedOracle> oracle;
  std::unique_ptr<Gateway> gw;

  OracleRig(std::size_t labels, std::size_t n, ScriptedOracleConfig cfg, std::uint64_t seed = 7)
      : catalog(testkit::make_catalog(labels)),
        instances(testkit::make_dataset(catalog, n, seed)),
        embeddings(testkit::blob_embeddings(catalog, 6)) {
    oracle = std::make_shared<ScriptedOracle>(cfg, ScriptedOracle::golds_from(instances));
    gw = std::make_unique<Gateway>(oracle, no_cache());
  }

  ReductionResult run(const Instance& inst, ReductionConfig cfg, std::uint64_t seed) {
    cfg.seed = seed;
    auto options = arrange(catalog, ArrangementSpec::shuffled(rng::derive(seed, "arr")), inst.gold);
    return reduce(inst.text, options, cfg, *gw, ReductionContext{&embeddings});
  }

  double hit_rate(const ReductionConfig& cfg, std::uint64_t seed = 1) {
    std::size_t hits = 0;
    for (const auto& inst : instances) {
      auto r = run(inst, cfg, rng::derive(seed, inst.index));
      if (std::find(r.reduced.begin(), r.reduced.end(), inst.gold) != r.reduced.end()) ++hits;
    }
    return double(hits) / double(instances.size());
  }
};

ReductionConfig with(ReductionStrategy s, std::size_t target = 5) {
  ReductionConfig c;
  c.strategy = s;
  c.target = target;
  return c;
}

constexpr ReductionStrategy kReducing[] = {ReductionStrategy::standard,
                                           ReductionStrategy::self_consistency,
                                           ReductionStrategy::itr, ReductionStrategy::cbwr};

/// Survivor counts implied by a CBWR trace.
std::vector<std::size_t> survivor_trace(std::size_t start, const ReductionResult& r) {
  std::vector<std::size_t> out{start};
  for (const auto& s : r.trace) out.push_back(out.back() - s.discarded.size());
  return out;
}

}  // namespace

TEST(Reduction, SmallCatalogPassesThroughWithoutCalls) {
  for (auto s : kReducing) {
    OracleRig rig(5, 3, ScriptedOracleConfig::faithful());
    auto r = rig.run(rig.instances[0], with(s), 1);
    EXPECT_EQ(r.calls, 0u) << to_string(s);
    EXPECT_EQ(r.reduced.size(), 5u);
    EXPECT_EQ(std::set<LabelId>(r.reduced.begin(), r.reduced.end()).size(), 5u);
  }
}

TEST(Reduction, FaithfulOracleKeepsGold) {
  for (auto s : kReducing) {
    OracleRig rig(77, 40, ScriptedOracleConfig::faithful());
    EXPECT_EQ(rig.hit_rate(with(s)), 1.0) << to_string(s);
  }
}

TEST(Reduction, ReducedSetFollowsReplyOrder) {
  auto backend = std::make_shared<testkit::FnBackend>(
      [](const ModelQuery&) { return std::string("CHOICE: l7, l2, l9"); });
  Gateway gw(backend, no_cache());
  std::vector<LabelId> labels;
  for (int i = 0; i < 10; ++i) labels.push_back("l" + std::to_string(i));
  auto r = reduce("x", labels, with(ReductionStrategy::standard, 3), gw);
  EXPECT_EQ(r.reduced, (std::vector<LabelId>{"l7", "l2", "l9"}));
  EXPECT_EQ(r.calls, 1u);
  EXPECT_TRUE(r.warnings.empty());
}

TEST(Reduction, ShortReplyIsPaddedFromPromptOrder) {
  auto backend = std::make_shared<testkit::FnBackend>(
      [](const ModelQuery&) { return std::string("CHOICE: l4"); });
  Gateway gw(backend, no_cache());
  std::vector<LabelId> labels{"l0", "l1", "l2", "l3", "l4"};
  auto r = reduce("x", labels, with(ReductionStrategy::standard, 3), gw);
  EXPECT_EQ(r.reduced, (std::vector<LabelId>{"l4", "l0", "l1"}));
  EXPECT_EQ(r.trace[0].padded, 2u);
  EXPECT_EQ(r.warnings.size(), 1u);
}

TEST(SelfConsistency, UnanimousVotesReproduceTheReply) {
  auto backend = std::make_shared<testkit::FnBackend>(
      [](const ModelQuery&) { return std::string("CHOICE: l3, l1"); });
  Gateway gw(backend, no_cache());
  std::vector<LabelId> labels{"l0", "l1", "l2", "l3", "l4"};
  auto cfg = with(ReductionStrategy::self_consistency, 2);
  cfg.votes = 3;
  auto r = reduce("x", labels, cfg, gw);
  EXPECT_EQ(r.calls, 3u);
  EXPECT_EQ(r.reduced, (std::vector<LabelId>{"l3", "l1"}));
  std::set<std::uint64_t> seeds;
  for (const auto& q : backend->seen) seeds.insert(q.decoding.seed.value());
  EXPECT_EQ(seeds.size(), 3u);
}

TEST(SelfConsistency, TiesBreakByMeanRankThenCatalogOrder) {
  std::atomic<int> n{0};
  auto backend = std::make_shared<testkit::FnBackend>([&](const ModelQuery&) {
    return std::string(n++ == 0 ? "CHOICE: a, b" : "CHOICE: c, a");
  });
  Gateway gw(backend, no_cache());
  // a: 2 votes; b and c: 1 vote each at rank 0, so Y order decides (c first)
  std::vector<LabelId> labels{"d", "c", "b", "a", "e"};
  auto cfg = with(ReductionStrategy::self_consistency, 2);
  cfg.votes = 2;
  EXPECT_EQ(reduce("x", labels, cfg, gw).reduced, (std::vector<LabelId>{"a", "c"}));

  n = 0;
  cfg.target = 3;
  EXPECT_EQ(reduce("y", labels, cfg, gw).reduced, (std::vector<LabelId>{"a", "c", "b"}));
}

TEST(SelfConsistency, VotingDoesNotLoseToOneCall) {
  ScriptedOracleConfig oc;
  oc.seed = 5;
  OracleRig rig(40, 500, oc);
  const double single = rig.hit_rate(with(ReductionStrategy::standard));
  const double voted = rig.hit_rate(with(ReductionStrategy::self_consistency));
  EXPECT_GE(voted, single);
}

TEST(Itr, HalvingSchedules) {
  EXPECT_EQ(halving_schedule(77, 5), (std::vector<std::size_t>{39, 20, 10, 5}));
  EXPECT_EQ(halving_schedule(6, 5), (std::vector<std::size_t>{5}));
  EXPECT_TRUE(halving_schedule(5, 5).empty());
}

TEST(Itr, StepsFollowTheSchedule) {
  OracleRig rig(77, 1, ScriptedOracleConfig::faithful());
  auto r = rig.run(rig.instances[0], with(ReductionStrategy::itr), 3);
  ASSERT_EQ(r.calls, 4u);
  std::vector<std::size_t> windows, kept;
  for (const auto& s : r.trace) {
    windows.push_back(s.window.size());
    kept.push_back(s.kept.size());
  }
  EXPECT_EQ(windows, (std::vector<std::size_t>{77, 39, 20, 10}));
  EXPECT_EQ(kept, (std::vector<std::size_t>{39, 20, 10, 5}));
}

TEST(Itr, RejectsBadSchedules) {
  OracleRig rig(20, 1, ScriptedOracleConfig::faithful());
  auto cfg = with(ReductionStrategy::itr);
  cfg.itr_schedule = {10, 12, 5};
  EXPECT_THROW(rig.run(rig.instances[0], cfg, 1), ValidationError);
  cfg.itr_schedule = {10, 6};
  EXPECT_THROW(rig.run(rig.instances[0], cfg, 1), ValidationError);
}

TEST(Cbwr, OneWindowWhenEverythingFits) {
  OracleRig rig(20, 1, ScriptedOracleConfig::faithful());
  auto cfg = with(ReductionStrategy::cbwr);
  auto r = rig.run(rig.instances[0], cfg, 1);
  EXPECT_EQ(r.calls, 1u);
  EXPECT_EQ(cbwr_call_count(20, cfg), 1u);
}

TEST(Cbwr, SixtyLabelsTakeFourSteps) {
  OracleRig rig(60, 20, ScriptedOracleConfig::faithful());
  auto cfg = with(ReductionStrategy::cbwr);
  EXPECT_EQ(cbwr_call_count(60, cfg), 4u);
  for (const auto& inst : rig.instances) {
    auto r = rig.run(inst, cfg, inst.index + 1);
    ASSERT_EQ(r.calls, 4u);
    EXPECT_EQ(survivor_trace(60, r), (std::vector<std::size_t>{60, 45, 30, 15, 5}));
    std::vector<std::size_t> windows;
    for (const auto& s : r.trace) windows.push_back(s.window.size());
    EXPECT_EQ(windows, (std::vector<std::size_t>{20, 20, 20, 15}));
    EXPECT_EQ(r.reduced.size(), 5u);
  }
}

TEST(Cbwr, WindowsDrawFromEveryCluster) {
  auto c = testkit::make_catalog(60);
  auto emb = testkit::blob_embeddings(c, 5, 16, 9);
  auto cfg = with(ReductionStrategy::cbwr);
  auto window = cbwr_window(c.labels(), cfg, emb, 42);
  ASSERT_EQ(window.size(), 20u);
  std::map<std::size_t, int> per_blob;
  for (const auto& l : window) ++per_blob[c.index_of(l) % 5];
  EXPECT_EQ(per_blob.size(), 5u);
  for (const auto& [blob, n] : per_blob) EXPECT_EQ(n, 4) << blob;
}

TEST(Cbwr, NeedsEmbeddingsOnlyWhenWindowed) {
  auto backend = std::make_shared<testkit::FnBackend>(
      [](const ModelQuery& q) { return "CHOICE: " + text::join({q.options.begin(), q.options.begin() + 5}, ", "); });
  Gateway gw(backend, no_cache());
  auto c = testkit::make_catalog(30);
  EXPECT_THROW(reduce("x", c.labels(), with(ReductionStrategy::cbwr), gw), ValidationError);
  auto small = testkit::make_catalog(15);
  EXPECT_NO_THROW(reduce("x", small.labels(), with(ReductionStrategy::cbwr), gw));
  auto cfg = with(ReductionStrategy::cbwr);
  cfg.clusters = 1;
  cfg.per_cluster = 5;
  EXPECT_THROW(reduce("x", small.labels(), cfg, gw), ValidationError);
}

TEST(Reduction, InvariantsAndCallCountsUnderFuzz) {
  rng::Stream s(99);
  for (int trial = 0; trial < 150; ++trial) {
    ScriptedOracleConfig oc;
    oc.seed = s.next();
    oc.sharpness = s.coin() ? 1.0 : 0.3;
    const std::size_t n = 2 + s.below(90);
    for (std::size_t i = 0; i < 4; ++i) oc.position_bias.push_back(s.open_unit());
    OracleRig rig(n, 2, oc, trial);
    auto cfg = with(kReducing[s.below(4)], 1 + s.below(8));
    cfg.clusters = 2 + s.below(5);
    cfg.per_cluster = 2 + s.below(4);
    if (cfg.clusters * cfg.per_cluster <= cfg.target) cfg.per_cluster = cfg.target;
    cfg.votes = 1 + s.below(4);
    cfg.max_steps = 1 + s.below(12);
    auto r = rig.run(rig.instances[0], cfg, s.next());
    const auto want = std::min(cfg.target, n);
    ASSERT_EQ(r.reduced.size(), want) << trial;
    std::set<LabelId> uniq(r.reduced.begin(), r.reduced.end());
    ASSERT_EQ(uniq.size(), want);
    for (const auto& l : r.reduced) ASSERT_TRUE(rig.catalog.contains(l));
    std::size_t expected = 0;
    if (n > cfg.target) switch (cfg.strategy) {
        case ReductionStrategy::standard: expected = 1; break;
        case ReductionStrategy::self_consistency: expected = cfg.votes; break;
        case ReductionStrategy::itr: expected = halving_schedule(n, cfg.target).size(); break;
        default: expected = cbwr_call_count(n, cfg);
      }
    ASSERT_EQ(r.calls, expected) << to_string(cfg.strategy) << " n=" << n;
  }
}

TEST(Reduction, DeterministicForASeed) {
  ScriptedOracleConfig oc;
  oc.seed = 3;
  OracleRig rig(60, 5, oc);
  for (auto s : kReducing)
    for (const auto& inst : rig.instances) {
      auto a = rig.run(inst, with(s), 11), b = rig.run(inst, with(s), 11);
      ASSERT_EQ(to_json(a).dump(), to_json(b).dump());
      ASSERT_EQ(to_json(reduction_from_json(to_json(a))).dump(), to_json(a).dump());
    }
}

TEST(Reduction, WindowedStrategiesBeatOneShotUnderCountPressure) {
  ScriptedOracleConfig oc;
  oc.seed = 17;
  OracleRig rig(60, 500, oc);
  const double standard = rig.hit_rate(with(ReductionStrategy::standard));
  const double itr = rig.hit_rate(with(ReductionStrategy::itr));
  const double cbwr = rig.hit_rate(with(ReductionStrategy::cbwr));
  std::cout << "HIT@5 standard " << standard << " itr " << itr << " cbwr " << cbwr << "\n";
  EXPECT_GT(itr, standard);
  EXPECT_GT(cbwr, standard);
}
