#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <set>
#include <thread>

#include "oracles.hpp"
#include "streammem/memory.hpp"
#include "streammem/retrieval.hpp"
#include "test_util.hpp"

using namespace streammem;

namespace {

MemoryConfig small_cfg(std::size_t g, std::size_t C = 2) {
  MemoryConfig cfg;
  cfg.group_size_g = g;
  cfg.cluster_goal_C = C;
  cfg.kmeans_restarts = 1;
  return cfg;
}

class ThrowingCaptioner final : public Captioner {
 public:
  std::string caption_chunk(const Chunk&) const override { throw std::runtime_error("captioner offline"); }
  std::string summarize(std::span<const std::string>) const override { throw std::runtime_error("captioner offline"); }
};

struct Ports {
  TagCaptioner captioner;
  HashTextEncoder encoder{64};
};

}  // namespace

TEST(ForgettingWeights, SingleCandidate) { EXPECT_EQ(forgetting_weights(1, 5.0), std::vector<double>{1.0}); }

TEST(ForgettingWeights, ThreeWithUnitScale) {
  const auto w = forgetting_weights(3, 1.0);
  const auto o = oracle::forgetting(3, 1.0);
  const std::vector<double> literal = {0.66524, 0.24473, 0.09003};
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(w[i], literal[i], 1e-4);
    EXPECT_NEAR(w[i], o[i], 1e-15);
  }
}

TEST(ForgettingWeights, NormalizedAndDecreasing) {
  for (std::size_t n : {2u, 5u, 20u, 100u}) {
    for (double s : {0.5, 1.0, 5.0, 40.0}) {
      const auto w = forgetting_weights(n, s);
      double sum = 0.0;
      for (double v : w) sum += v;
      EXPECT_NEAR(sum, 1.0, 1e-12);
      for (std::size_t i = 1; i < n; ++i) EXPECT_LT(w[i], w[i - 1]);
    }
  }
  EXPECT_THROW(forgetting_weights(0, 1.0), InputError);
  EXPECT_THROW(forgetting_weights(3, 0.0), InputError);
}

TEST(ShortTerm, SmallPoolReturnsEverything) {
  std::vector<VisionEmbedding> recent;
  for (int i = 0; i < 3; ++i) recent.push_back(testutil::embedding(i, 1, 2, i));
  std::mt19937_64 rng(1);
  const auto st = refresh_short_term(recent, 5, 20, 5.0, rng);
  ASSERT_EQ(st.units.size(), 3u);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(st.units[i].source_timestamp, i);
}

TEST(ShortTerm, SamplesFiveFromLastTwentyChronologically) {
  std::vector<VisionEmbedding> recent;
  for (int i = 0; i < 30; ++i) recent.push_back(testutil::embedding(i, 1, 2, i));
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(seed);
    const auto st = refresh_short_term(recent, 5, 20, 5.0, rng);
    ASSERT_EQ(st.units.size(), 5u);
    std::set<double> seen;
    for (std::size_t i = 0; i < st.units.size(); ++i) {
      EXPECT_GE(st.units[i].source_timestamp, 10.0);  // never older than the 20th most recent
      if (i) {
        EXPECT_LT(st.units[i - 1].source_timestamp, st.units[i].source_timestamp);
      }
      seen.insert(st.units[i].source_timestamp);
    }
    EXPECT_EQ(seen.size(), 5u);  // without replacement
  }
}

TEST(ShortTerm, EmptyAndDeterministic) {
  std::mt19937_64 rng(3);
  EXPECT_TRUE(refresh_short_term({}, 5, 20, 5.0, rng).units.empty());

  std::vector<VisionEmbedding> recent;
  for (int i = 0; i < 12; ++i) recent.push_back(testutil::embedding(i, 1, 2, i));
  std::mt19937_64 a(77), b(77);
  const auto x = refresh_short_term(recent, 4, 20, 2.0, a);
  const auto y = refresh_short_term(recent, 4, 20, 2.0, b);
  ASSERT_EQ(x.units.size(), y.units.size());
  for (std::size_t i = 0; i < x.units.size(); ++i) EXPECT_EQ(x.units[i].source_timestamp, y.units[i].source_timestamp);
}

TEST(ShortTerm, MonteCarloMatchesForgettingCurve) {
  std::vector<VisionEmbedding> recent;
  for (int i = 0; i < 3; ++i) recent.push_back(testutil::embedding(i, 1, 1, i));
  std::mt19937_64 rng(12345);
  std::array<int, 3> counts{};
  const int draws = 100000;
  for (int t = 0; t < draws; ++t) {
    const auto st = refresh_short_term(recent, 1, 20, 1.0, rng);
    counts[2 - static_cast<int>(st.units[0].source_timestamp)] += 1;  // age 0 is the newest
  }
  const auto expect = oracle::forgetting(3, 1.0);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(counts[k] / static_cast<double>(draws), expect[k], 0.01);
}

TEST(MakeUnit, BasePresetShape) {
  Ports p;
  MemoryConfig cfg;
  const auto unit = make_unit(testutil::chunk(0, 25, 4, 16, {"kitchen"}), cfg, p.captioner, p.encoder);
  EXPECT_EQ(unit.centroids.rows, 5u);
  EXPECT_EQ(unit.centroids.cols, 16u);
  EXPECT_EQ(unit.level, 0u);
  EXPECT_NE(unit.caption.find("kitchen"), std::string::npos);
  EXPECT_EQ(unit.caption_vec, p.encoder.encode(unit.caption));
  EXPECT_EQ(unit.span, (TimeSpan{0, 24}));
}

TEST(MakeUnit, SingleTokenChunk) {
  Ports p;
  const Chunk c = testutil::chunk(3, 1, 1, 6);
  const auto unit = make_unit(c, MemoryConfig{}, p.captioner, p.encoder);
  ASSERT_EQ(unit.centroids.rows, 1u);
  EXPECT_EQ(unit.centroids.data, c.embeddings[0].tokens.data);
  EXPECT_EQ(unit.caption, "scene: unknown");
}

TEST(MakeUnit, PortFailureIsBackendErrorWithSpan) {
  ThrowingCaptioner bad;
  HashTextEncoder enc(32);
  try {
    make_unit(testutil::chunk(2, 4, 1, 3), MemoryConfig{}, bad, enc);
    FAIL() << "expected BackendError";
  } catch (const BackendError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("captioner offline"), std::string::npos);
    EXPECT_NE(msg.find("[8"), std::string::npos) << msg;  // span starts at t=8
  }
}

TEST(MakeUnit, SeedDependsOnChunkIndexAndConfigSeed) {
  EXPECT_NE(chunk_seed(0, 0), chunk_seed(0, 1));
  EXPECT_NE(chunk_seed(0, 0), chunk_seed(1, 0));
  EXPECT_EQ(chunk_seed(5, 9), chunk_seed(5, 9));
}

TEST(MemoryTree, CaseStudyTwoLevels) {
  Ports p;
  const auto cfg = small_cfg(2);
  MemoryTree tree(2);
  for (std::size_t i = 0; i < 4; ++i) {
    append_unit(tree, make_unit(testutil::chunk(i, 3, 2, 4), cfg, p.captioner, p.encoder), cfg, p.captioner,
                p.encoder);
  }
  EXPECT_EQ(tree.level_sizes(), (std::vector<std::size_t>{4, 2}));
  EXPECT_TRUE(check_tree_invariants(tree).empty());
}

TEST(MemoryTree, SingleUnitIsSingleNode) {
  Ports p;
  const auto cfg = small_cfg(10);
  MemoryTree tree(10);
  append_unit(tree, make_unit(testutil::chunk(0, 3, 2, 4), cfg, p.captioner, p.encoder), cfg, p.captioner, p.encoder);
  EXPECT_EQ(tree.level_sizes(), std::vector<std::size_t>{1});
}

TEST(MemoryTree, GroupOfThreeTenUnits) {
  Ports p;
  const auto cfg = small_cfg(3);
  MemoryTree tree(3);
  for (std::size_t i = 0; i < 10; ++i) {
    append_unit(tree, make_unit(testutil::chunk(i, 2, 2, 4), cfg, p.captioner, p.encoder), cfg, p.captioner,
                p.encoder);
  }
  EXPECT_EQ(tree.level_sizes(), (std::vector<std::size_t>{10, 4, 2}));
  EXPECT_EQ(tree.level_sizes(), oracle::grouped_level_sizes(10, 3));
}

TEST(MemoryTree, ShapeLawMatchesGroupingOracle) {
  Ports p;
  for (std::size_t g : {2u, 3u, 10u, 15u}) {
    const auto cfg = small_cfg(g);
    MemoryTree tree(g);
    for (std::size_t b = 1; b <= 200; ++b) {
      append_unit(tree, make_unit(testutil::chunk(b - 1, 1, 1, 3), cfg, p.captioner, p.encoder), cfg, p.captioner,
                  p.encoder);
      ASSERT_EQ(tree.level_sizes(), oracle::grouped_level_sizes(b, g)) << "B=" << b << " g=" << g;
      ASSERT_EQ(expected_level_sizes(b, g), oracle::grouped_level_sizes(b, g));
    }
    EXPECT_TRUE(check_tree_invariants(tree).empty());
  }
}

TEST(MemoryTree, ParentsCoverChildren) {
  Ports p;
  const auto cfg = small_cfg(3, 2);
  MemoryTree tree(3);
  const std::vector<std::vector<std::string>> tags = {{"kitchen"}, {"garden"}, {"office"}, {"beach"}};
  for (std::size_t i = 0; i < 7; ++i) {
    append_unit(tree, make_unit(testutil::chunk(i, 2, 2, 4, tags[i % 4]), cfg, p.captioner, p.encoder), cfg,
                p.captioner, p.encoder);
  }
  const auto& parent = tree.node(1, 0);
  EXPECT_EQ(parent.child_begin, 0u);
  EXPECT_EQ(parent.child_end, 3u);
  EXPECT_EQ(parent.caption, "scene: garden, kitchen, office");
  EXPECT_EQ(parent.span, tree.node(0, 0).span.merged(tree.node(0, 2).span));
  EXPECT_LE(parent.centroids.rows, 2u);
  const auto& tail = tree.node(1, 2);  // partial group of one
  EXPECT_EQ(tail.child_end - tail.child_begin, 1u);
}

TEST(MemoryTree, InvariantCheckerFlagsCorruption) {
  Ports p;
  const auto cfg = small_cfg(2);
  MemoryTree tree(2);
  for (std::size_t i = 0; i < 4; ++i) {
    append_unit(tree, make_unit(testutil::chunk(i, 2, 2, 4), cfg, p.captioner, p.encoder), cfg, p.captioner,
                p.encoder);
  }
  auto broken = std::make_shared<MemoryNode>(tree.node(1, 1));
  broken->span.last += 100.0;
  tree.mutable_level(1)[1] = broken;
  EXPECT_FALSE(check_tree_invariants(tree).empty());
}

TEST(MemoryTree, JsonRoundTrip) {
  Ports p;
  const auto cfg = small_cfg(2);
  MemoryTree tree(2);
  for (std::size_t i = 0; i < 5; ++i) {
    append_unit(tree, make_unit(testutil::chunk(i, 2, 2, 4, {"t" + std::to_string(i)}), cfg, p.captioner, p.encoder),
                cfg, p.captioner, p.encoder);
  }
  const auto j = tree_to_json(tree);
  EXPECT_EQ(j["format"], "streammem.tree");
  EXPECT_EQ(j["version"], 1);
  const MemoryTree back = tree_from_json(j);
  EXPECT_EQ(tree_to_json(back), j);
  EXPECT_THROW(tree_from_json(nlohmann::json{{"format", "other"}}), InputError);
}

TEST(Dialogue, AppendSemantics) {
  HashTextEncoder enc(64);
  DialogueMemory mem;
  append_dialogue(mem, "where is the cup", "on the table", enc, 1.0);
  ASSERT_EQ(mem.entries.size(), 1u);
  EXPECT_EQ(mem.entries[0]->turn_index, 0u);
  EXPECT_EQ(mem.entries[0]->vec, enc.encode("Q: where is the cup A: on the table"));

  const auto first = mem.entries[0];
  for (int i = 1; i < 6; ++i) append_dialogue(mem, "q" + std::to_string(i), "a", enc, 1.0 + i);
  ASSERT_EQ(mem.entries.size(), 6u);
  EXPECT_EQ(mem.entries[0], first);  // prior entries untouched
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(mem.entries[i]->turn_index, i);

  DialogueMemory other;
  append_dialogue(other, "where is the cup", "on the table", enc, 9.0);
  EXPECT_EQ(other.entries[0]->vec, first->vec);
  EXPECT_THROW(append_dialogue(mem, "", "x", enc, 0.0), InputError);
}

TEST(MemoryStore, SnapshotsAreImmutable) {
  auto cap = std::make_shared<TagCaptioner>();
  auto enc = std::make_shared<HashTextEncoder>(64);
  MemoryStore store(small_cfg(2), cap, enc);
  store.ingest_chunk(testutil::chunk(0, 3, 2, 4, {"kitchen"}));
  const auto before = store.snapshot();
  const auto again = store.snapshot();
  EXPECT_EQ(tree_to_json(before->tree), tree_to_json(again->tree));
  EXPECT_EQ(before->version, again->version);

  const auto dump = tree_to_json(before->tree);
  store.ingest_chunk(testutil::chunk(1, 3, 2, 4, {"garden"}));
  store.add_dialogue("q", "a", 5.0);
  EXPECT_EQ(tree_to_json(before->tree), dump);
  EXPECT_TRUE(before->dialogue.entries.empty());
  EXPECT_EQ(store.snapshot()->version, before->version + 2);
}

TEST(MemoryStore, KeptTimestampsCoveredByExactlyOneUnit) {
  auto cap = std::make_shared<TagCaptioner>();
  auto enc = std::make_shared<HashTextEncoder>(64);
  MemoryConfig cfg = small_cfg(3);
  cfg.chunk_len_L = 4;
  MemoryStore store(cfg, cap, enc);
  VisionBuffer buf(cfg.chunk_len_L);
  std::vector<double> kept;
  for (int i = 0; i < 23; ++i) {
    kept.push_back(i * 0.5);
    if (auto c = buf.push(testutil::embedding(i * 0.5, 2, 4, i))) store.ingest_chunk(*c);
  }
  if (auto c = buf.flush()) store.ingest_chunk(*c);
  const auto snap = store.snapshot();
  for (double t : kept) {
    int covering = 0;
    for (const auto& n : snap->tree.level(0)) covering += n->span.contains(t);
    EXPECT_EQ(covering, 1) << t;
  }
}

TEST(MemoryStore, StressSnapshotsStaySound) {
  auto cap = std::make_shared<TagCaptioner>();
  auto enc = std::make_shared<HashTextEncoder>(32);
  MemoryStore store(small_cfg(3), cap, enc);
  std::vector<SnapshotPtr> snaps;
  std::mutex mu;
  SnapshotPtr latest = store.snapshot();
  std::atomic<bool> done{false};
  std::atomic<int> reader_checks{0}, reader_failures{0};

  std::thread reader([&] {
    while (!done) {
      SnapshotPtr s;
      {
        std::lock_guard lk(mu);
        s = latest;
      }
      if (!check_tree_invariants(s->tree).empty()) ++reader_failures;
      ++reader_checks;
    }
  });
  for (std::size_t i = 0; i < 1000; ++i) {
    snaps.push_back(store.snapshot());
    store.ingest_chunk(testutil::chunk(i, 1, 1, 3, {"tag" + std::to_string(i % 7)}));
    std::lock_guard lk(mu);
    latest = store.snapshot();
  }
  done = true;
  reader.join();

  for (std::size_t i = 0; i < snaps.size(); ++i) {
    ASSERT_TRUE(check_tree_invariants(snaps[i]->tree).empty()) << i;
    ASSERT_EQ(snaps[i]->tree.empty() ? 0u : snaps[i]->tree.level(0).size(), i);
  }
  EXPECT_GT(reader_checks.load(), 0);
  EXPECT_EQ(reader_failures.load(), 0);
}

TEST(MemoryConfig, Validation) {
  MemoryConfig c;
  EXPECT_NO_THROW(c.validate());
  c.group_size_g = 1;
  EXPECT_THROW(c.validate(), InputError);
  c = MemoryConfig{};
  c.short_len_S = 30;
  EXPECT_THROW(c.validate(), InputError);
  c = MemoryConfig{};
  c.chunk_len_L = 0;
  EXPECT_THROW(c.validate(), InputError);
}
