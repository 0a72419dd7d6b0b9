/* Copyright 2026 The JitBatch Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "jitbatch/scheduler.h"

#include <algorithm>
#include <random>
#include <vector>

#include <gtest/gtest.h>
#include "jitbatch/treelstm.h"
#include "test_util.h"

namespace jitbatch {
namespace {

using testing::random_tensor;
using testing::random_tree;

TreeLstmConfig small_config() { return {16, 8, 4}; }

// Records `trees` into `scope` and returns the root hidden states.
std::vector<LazyTensor> encode_all(BatchingScope& scope,
                                   const std::vector<TreeNode>& trees,
                                   const TreeLstmParams& params) {
  std::vector<LazyTensor> out;
  for (const TreeNode& t : trees) out.push_back(encode_tree(scope, t, params).h);
  return out;
}

std::vector<TreeNode> random_corpus(std::uint64_t seed, std::size_t n) {
  std::mt19937_64 rng(seed);
  std::vector<TreeNode> trees;
  for (std::size_t i = 0; i < n; ++i) trees.push_back(random_tree(rng, 4, 3, 16));
  return trees;
}

void retoken(TreeNode& t, std::mt19937_64& rng) {
  t.token = static_cast<int>(rng() % 16);
  for (TreeNode& c : t.children) retoken(c, rng);
}

TEST(BuildPlanTest, IdenticalNodesFormOneStep) {
  auto scope = BatchingScope::open();
  for (int i = 0; i < 5; ++i) sigmoid(scope->constant(Tensor::scalar(i)));
  const PlanOptions opts;
  const WaveGraph g = canonicalize(*scope, opts);
  const BatchPlan plan = build_plan(g, *scope, opts);
  ASSERT_EQ(plan.steps.size(), 1u);
  EXPECT_EQ(plan.steps[0].group.size(), 5u);
  EXPECT_FALSE(plan.steps[0].gather[0].broadcast);
  scope->abandon();
}

TEST(BuildPlanTest, DependentChainGivesOneStepPerLink) {
  auto scope = BatchingScope::open();
  LazyTensor x = scope->constant(Tensor::scalar(1));
  const LazyTensor one = scope->constant(Tensor::scalar(1));
  for (int i = 0; i < 6; ++i) x = add(x, one);
  const PlanOptions opts;
  const WaveGraph g = canonicalize(*scope, opts);
  const BatchPlan plan = build_plan(g, *scope, opts);
  ASSERT_EQ(plan.steps.size(), 6u);
  for (std::size_t i = 0; i < plan.steps.size(); ++i) {
    EXPECT_EQ(plan.steps[i].group.size(), 1u);
    EXPECT_EQ(plan.steps[i].depth, i + 1);
  }
  scope->close();
  EXPECT_EQ(x.value()[0], 7.0);
}

TEST(BuildPlanTest, SharedWeightsAreBroadcastDataIsStacked) {
  const TreeLstmParams params = TreeLstmParams::init(small_config(), 1);
  auto scope = BatchingScope::open();
  for (int i = 0; i < 4; ++i) {
    TreeNode leaf;
    leaf.token = i;
    encode_tree(*scope, leaf, params);
  }
  const PlanOptions opts;
  const WaveGraph g = canonicalize(*scope, opts);
  const BatchPlan plan = build_plan(g, *scope, opts);
  std::size_t matmul_steps = 0;
  for (const PlanStep& s : plan.steps) {
    if (s.kind != OpKind::kMatmul) continue;
    ++matmul_steps;
    EXPECT_EQ(s.group.size(), 4u);
    EXPECT_FALSE(s.gather[0].broadcast);
    EXPECT_TRUE(s.gather[1].broadcast);
    const OpNode& w = scope->node(g.node_of[s.gather[1].sources[0]]);
    EXPECT_EQ(w.kind, OpKind::kParameter);
  }
  EXPECT_EQ(matmul_steps, 3u);  // W_i, W_o, W_u; a leaf has no forget gate
  scope->abandon();
}

TEST(BuildPlanTest, StepsAreTopologicallyOrdered) {
  const TreeLstmParams params = TreeLstmParams::init(small_config(), 2);
  auto scope = BatchingScope::open();
  encode_all(*scope, random_corpus(3, 12), params);
  const PlanOptions opts;
  const WaveGraph g = canonicalize(*scope, opts);
  const BatchPlan plan = build_plan(g, *scope, opts);
  std::vector<char> ready(g.node_of.size(), 0);
  for (std::size_t e = 0; e < g.node_of.size(); ++e) ready[e] = !g.is_kernel[e];
  std::size_t covered = 0;
  for (const PlanStep& s : plan.steps) {
    for (const PlanOperand& op : s.gather) {
      for (EntryIndex src : op.sources) EXPECT_TRUE(ready[src]);
    }
    for (EntryIndex e : s.group) ready[e] = 1;
    covered += s.group.size();
  }
  EXPECT_EQ(covered, scope->pending().kernel_node_count());
  scope->abandon();
}

TEST(BuildPlanTest, IdenticalTablesGiveIdenticalPlans) {
  const TreeLstmParams params = TreeLstmParams::init(small_config(), 2);
  const auto trees = random_corpus(5, 10);
  std::string dumps[2];
  for (std::string& d : dumps) {
    auto scope = BatchingScope::open();
    encode_all(*scope, trees, params);
    const PlanOptions opts;
    const WaveGraph g = canonicalize(*scope, opts);
    d = dump_plan(build_plan(g, *scope, opts));
    scope->abandon();
  }
  EXPECT_EQ(dumps[0], dumps[1]);
  EXPECT_NE(dumps[0].find("matmul[N,N]"), std::string::npos);
  EXPECT_NE(dumps[0].find("shared"), std::string::npos);
}

TEST(ExecuteTest, SingleNodeEqualsEagerExactly) {
  std::mt19937_64 rng(1);
  const Tensor a = random_tensor({2, 3}, rng), b = random_tensor({3, 2}, rng);
  auto scope = BatchingScope::open();
  const LazyTensor y = matmul(scope->constant(a), scope->constant(b));
  scope->close();
  EXPECT_TRUE(y.value().identical(matmul(a, b)));
}

TEST(ExecuteTest, ManyIdenticalNodesOneMainLaunch) {
  auto scope = BatchingScope::open();
  std::vector<LazyTensor> ys;
  for (int i = 0; i < 256; ++i) {
    ys.push_back(tanh(scope->constant(Tensor::scalar(i * 1e-3))));
  }
  const LaunchCounts before = KernelCounter::read();
  scope->close();
  EXPECT_EQ((KernelCounter::read() - before).main(), 1u);
  for (int i = 0; i < 256; ++i) {
    EXPECT_TRUE(ys[i].value().identical(
        ewise(EwiseKind::kTanh, Tensor::scalar(i * 1e-3))));
  }
}

TEST(ExecuteTest, RandomTreesMatchEagerReference) {
  const TreeLstmParams params = TreeLstmParams::init(small_config(), 3);
  const auto trees = random_corpus(7, 24);
  auto scope = BatchingScope::open();
  const auto roots = encode_all(*scope, trees, params);
  scope->close();
  for (std::size_t i = 0; i < trees.size(); ++i) {
    const Tensor ref = eager_encode(trees[i], params).h;
    EXPECT_LE(testing::max_rel_err(roots[i].value().data(), ref.data()), 1e-9);
  }
}

TEST(LaunchLawTest, MainLaunchesEqualNonEmptySlots) {
  const TreeLstmParams params = TreeLstmParams::init(small_config(), 4);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto scope = BatchingScope::open();
    encode_all(*scope, random_corpus(seed, 16), params);
    const std::size_t slots = scope->pending().kernel_slot_count();
    const std::size_t nodes = scope->pending().kernel_node_count();
    const LaunchCounts before = KernelCounter::read();
    scope->close();
    EXPECT_EQ((KernelCounter::read() - before).main(), slots);
    EXPECT_EQ(scope->stats().kernel_slots, slots);
    EXPECT_GE(nodes, slots);
  }
}

TEST(LaunchLawTest, UnbatchedLaunchesEqualNodes) {
  const TreeLstmParams params = TreeLstmParams::init(small_config(), 4);
  ScopeOptions opts;
  opts.batching = false;
  auto scope = BatchingScope::open(opts);
  encode_all(*scope, random_corpus(9, 8), params);
  const std::size_t nodes = scope->pending().kernel_node_count();
  const LaunchCounts before = KernelCounter::read();
  scope->close();
  const LaunchCounts d = KernelCounter::read() - before;
  EXPECT_EQ(d.main(), nodes);
  EXPECT_EQ(d.overhead, 0u);
}

TEST(LaunchLawTest, DistinctSignaturesGiveRatioOne) {
  auto scope = BatchingScope::open();
  const LazyTensor x = scope->constant(Tensor::scalar(0.5));
  tanh(x);
  sigmoid(x);
  neg(x);
  abs(x);
  EXPECT_EQ(scope->pending().kernel_slot_count(),
            scope->pending().kernel_node_count());
  scope->close();
}

TEST(BroadcastTest, ForcedStackingChangesNoOutput) {
  const TreeLstmParams params = TreeLstmParams::init(small_config(), 5);
  const auto trees = random_corpus(11, 12);
  std::vector<Tensor> results[2];
  for (int force = 0; force < 2; ++force) {
    ScopeOptions opts;
    opts.force_stack = force == 1;
    auto scope = BatchingScope::open(opts);
    const auto roots = encode_all(*scope, trees, params);
    scope->close();
    for (const LazyTensor& r : roots) results[force].push_back(r.value());
  }
  for (std::size_t i = 0; i < trees.size(); ++i) {
    EXPECT_LE(testing::max_rel_err(results[0][i].data(), results[1][i].data()),
              1e-12);
  }
}

class PlanCacheTest : public ::testing::Test {
 protected:
  // Runs one scope over `trees`; returns its stats and fills `roots`.
  ScopeStats run(const std::vector<TreeNode>& trees,
                 std::vector<Tensor>* roots = nullptr) {
    ScopeOptions opts;
    opts.cache = &cache_;
    auto scope = BatchingScope::open(opts);
    const auto hs = encode_all(*scope, trees, params_);
    scope->close();
    if (roots) {
      roots->clear();
      for (const LazyTensor& h : hs) roots->push_back(h.value());
    }
    return scope->stats();
  }

  TreeLstmParams params_ = TreeLstmParams::init(small_config(), 6);
  PlanCache cache_;
};

TEST_F(PlanCacheTest, RepeatHitsAlteredMisses) {
  const auto trees = random_corpus(13, 8);
  EXPECT_EQ(run(trees).cache_misses, 1u);
  const std::size_t builds = cache_.stats().builds;
  EXPECT_EQ(run(trees).cache_hits, 1u);
  EXPECT_EQ(cache_.stats().builds, builds);

  auto altered = trees;
  altered[0].children.push_back(TreeNode{1, {}});
  EXPECT_EQ(run(altered).cache_misses, 1u);
  EXPECT_EQ(cache_.stats().builds, builds + 1);
  EXPECT_EQ(cache_.stats().entries, 2u);
}

TEST_F(PlanCacheTest, SameMultisetOfTreeShapesHits) {
  auto trees = random_corpus(17, 10);
  run(trees);
  // Same shapes, new tokens, different order.
  std::mt19937_64 rng(99);
  for (TreeNode& t : trees) retoken(t, rng);
  std::reverse(trees.begin(), trees.end());
  std::vector<Tensor> roots;
  EXPECT_EQ(run(trees, &roots).cache_hits, 1u);
  EXPECT_EQ(cache_.stats().builds, 1u);
  for (std::size_t i = 0; i < trees.size(); ++i) {
    const Tensor ref = eager_encode(trees[i], params_).h;
    EXPECT_LE(testing::max_rel_err(roots[i].data(), ref.data()), 1e-9);
  }
}

TEST_F(PlanCacheTest, ClearDropsEntriesAndStats) {
  run(random_corpus(19, 3));
  cache_.clear();
  EXPECT_EQ(cache_.stats().entries, 0u);
  EXPECT_EQ(cache_.stats().builds, 0u);
  EXPECT_EQ(run(random_corpus(19, 3)).cache_misses, 1u);
}

}  // namespace
}  // namespace jitbatch
