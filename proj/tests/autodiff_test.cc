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

#include "jitbatch/autodiff.h"

#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>
#include "jitbatch/treelstm.h"
#include "test_util.h"

namespace jitbatch {
namespace {

using testing::check_gradients;
using testing::GraphFn;
using testing::random_tensor;

constexpr double kGradTol = 1e-4;

TEST(GradientCheckTest, EveryKernelMatchesFiniteDifferences) {
  std::mt19937_64 rng(31);
  for (const testing::KernelCase& c : testing::kernel_gradient_cases()) {
    std::vector<Tensor> inputs;
    for (const Shape& s : c.shapes) inputs.push_back(random_tensor(s, rng, c.lo, c.hi));
    for (bool as_params : {false, true}) {
      const auto r = check_gradients(c.f, inputs, as_params);
      EXPECT_GT(r.checked, 0u) << c.name;
      EXPECT_LT(r.max_rel_err, kGradTol)
          << c.name << (as_params ? " (parameters)" : " (constants)");
    }
  }
}

TEST(GradientCheckTest, SharedWeightUsedManyTimes) {
  // The weight gradient is accumulated through one matmul_sum over all uses.
  std::mt19937_64 rng(33);
  const std::vector<Tensor> inputs = {random_tensor({3, 3}, rng),
                                      random_tensor({1, 3}, rng)};
  const GraphFn f = [](BatchingScope&, std::span<const LazyTensor> x) {
    LazyTensor h = x[1];
    for (int i = 0; i < 4; ++i) h = tanh(matmul(h, x[0]));
    return h;
  };
  EXPECT_LT(check_gradients(f, inputs, true).max_rel_err, kGradTol);
  EXPECT_LT(check_gradients(f, inputs, false).max_rel_err, kGradTol);
}

TEST(BackwardTest, IdentityLossHasUnitGradient) {
  auto scope = BatchingScope::open();
  const LazyTensor x = scope->constant(Tensor::scalar(3));
  const LazyTensor wrt[] = {x};
  const auto g = backward(x, wrt);
  scope->close();
  EXPECT_EQ(g[0].value()[0], 1.0);
}

TEST(BackwardTest, SumOfSquaresHandDerivative) {
  auto scope = BatchingScope::open();
  const LazyTensor x = scope->constant(Tensor({2}, {1, 2}));
  const LazyTensor wrt[] = {x};
  const auto g = backward(sum(mul(x, x)), wrt);
  scope->close();
  EXPECT_EQ(g[0].value().to_vector(), (std::vector<double>{2, 4}));
}

TEST(BackwardTest, UnreachedTargetGetsZerosOfItsShape) {
  auto scope = BatchingScope::open();
  const LazyTensor x = scope->constant(Tensor::scalar(1));
  const LazyTensor y = scope->constant(Tensor::filled({2, 3}, 5.0));
  const LazyTensor wrt[] = {y};
  const auto g = backward(neg(x), wrt);
  scope->close();
  EXPECT_TRUE(g[0].value().identical(Tensor::zeros({2, 3})));
}

TEST(BackwardTest, RecordsLazilyWithoutLaunching) {
  auto scope = BatchingScope::open();
  const LazyTensor x = scope->constant(Tensor({2}, {1, 2}));
  const LazyTensor wrt[] = {x};
  const std::size_t before_nodes = scope->num_nodes();
  const LaunchCounts before = KernelCounter::read();
  const auto g = backward(sum(tanh(x)), wrt);
  EXPECT_EQ((KernelCounter::read() - before).launches, 0u);
  EXPECT_GT(scope->num_nodes(), before_nodes);
  EXPECT_FALSE(g[0].materialized());
  scope->close();
}

TEST(BackwardTest, Errors) {
  auto scope = BatchingScope::open();
  const LazyTensor v = scope->constant(Tensor::zeros({2}));
  const LazyTensor wrt[] = {v};
  EXPECT_THROW(backward(v, wrt), ShapeError);
  LazyTensor foreign;
  {
    scope->close();
    auto other = BatchingScope::open();
    foreign = other->constant(Tensor::scalar(1));
    const LazyTensor loss = neg(foreign);
    const LazyTensor bad[] = {v};
    EXPECT_THROW(backward(loss, bad), ScopeError);
    other->close();
    const LazyTensor own[] = {foreign};
    EXPECT_THROW(backward(loss, own), ScopeError);  // closed scope
  }
}

TEST(SgdTest, HandComputedSteps) {
  Parameter p("p", Tensor::scalar(1));
  Parameter* ps[] = {&p};
  const Tensor g[] = {Tensor::scalar(2)};
  sgd_step(ps, g, 0.0);
  EXPECT_EQ(p.value()[0], 1.0);
  sgd_step(ps, g, 0.5);
  EXPECT_EQ(p.value()[0], 0.0);
}

TEST(SgdTest, Errors) {
  Parameter p("p", Tensor::zeros({2}));
  Parameter* ps[] = {&p};
  const Tensor wrong[] = {Tensor::zeros({3})};
  EXPECT_THROW(sgd_step(ps, wrong, 0.1), ShapeError);
  EXPECT_THROW(sgd_step(ps, std::span<const Tensor>{}, 0.1), std::invalid_argument);
}

TEST(SgdTest, LossDecreasesOnTinyRegression) {
  // Fit y = x w to fixed targets.
  std::mt19937_64 rng(41);
  const Tensor x = random_tensor({6, 3}, rng);
  const Tensor target = matmul(x, Tensor({3, 1}, {0.5, -1.0, 2.0}));
  Parameter w("w", Tensor::zeros({3, 1}));
  Parameter* ps[] = {&w};
  std::vector<double> losses;
  for (int step = 0; step < 10; ++step) {
    auto scope = BatchingScope::open();
    const LazyTensor d = sub(matmul(scope->constant(x), scope->parameter(w)),
                             scope->constant(target));
    const LazyTensor loss = sum(mul(d, d));
    const LazyTensor wrt[] = {scope->parameter(w)};
    const auto g = backward(loss, wrt);
    scope->close();
    losses.push_back(loss.value()[0]);
    const Tensor gs[] = {g[0].value()};
    sgd_step(ps, gs, 0.05);
  }
  for (std::size_t i = 1; i < losses.size(); ++i) EXPECT_LT(losses[i], losses[i - 1]);
  EXPECT_LT(losses.back(), 0.5 * losses.front());
}

class TreeLstmGradTest : public ::testing::Test {
 protected:
  void SetUp() override {
    std::mt19937_64 rng(51);
    for (int i = 0; i < 4; ++i) {
      pairs_.push_back({testing::random_tree(rng, 3, 3, cfg_.vocab),
                        testing::random_tree(rng, 3, 3, cfg_.vocab),
                        1.0 + i});
    }
    // Non-zero biases so their gradients are exercised at a generic point.
    for (Parameter& b : params_.b) b.set_value(random_tensor(b.value().shape(), rng, -0.5, 0.5));
    params_.head_b.set_value(Tensor({1, 1}, {0.1}));
  }

  // Gradients of the summed loss over `pairs_`, one scope per `group` pairs.
  std::vector<Tensor> gradients(std::size_t group) {
    std::vector<Parameter*> plist = params_.all();
    std::vector<Tensor> total;
    for (std::size_t s = 0; s < pairs_.size(); s += group) {
      auto scope = BatchingScope::open();
      std::vector<LazyTensor> losses;
      for (std::size_t i = s; i < std::min(pairs_.size(), s + group); ++i) {
        const LazyTensor ha = encode_tree(*scope, pairs_[i].a, params_).h;
        const LazyTensor hb = encode_tree(*scope, pairs_[i].b, params_).h;
        losses.push_back(squared_error(*scope, relatedness_head(*scope, ha, hb, params_),
                                       relatedness_target(pairs_[i].label)));
      }
      std::vector<LazyTensor> leaves;
      for (Parameter* q : plist) leaves.push_back(scope->parameter(*q));
      const auto g = backward(reduce_sum(losses), leaves);
      scope->close();
      for (std::size_t k = 0; k < g.size(); ++k) {
        if (total.size() <= k) {
          total.push_back(g[k].value());
        } else {
          total[k] = ewise(EwiseKind::kAdd, total[k], g[k].value());
        }
      }
    }
    return total;
  }

  TreeLstmConfig cfg_{10, 3, 4};
  TreeLstmParams params_ = TreeLstmParams::init(cfg_, 5);
  std::vector<TreePair> pairs_;
};

TEST_F(TreeLstmGradTest, MatchesFiniteDifferencesOfEagerLoss) {
  const std::vector<Tensor> analytic = gradients(pairs_.size());
  const std::vector<Parameter*> plist = params_.all();
  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t k = 0; k < plist.size(); ++k) {
    const Tensor orig = plist[k]->value();
    for (std::size_t j = 0; j < orig.size(); ++j) {
      std::vector<double> v = orig.to_vector();
      v[j] = orig[j] + h;
      plist[k]->set_value(Tensor(orig.shape(), v));
      const double up = eager_loss(pairs_, params_);
      v[j] = orig[j] - h;
      plist[k]->set_value(Tensor(orig.shape(), v));
      const double down = eager_loss(pairs_, params_);
      plist[k]->set_value(orig);
      const double numeric = (up - down) / (2 * h);
      const double err = testing::rel_err(analytic[k][j], numeric, 1e-6);
      worst = std::max(worst, err);
      EXPECT_LT(err, kGradTol) << plist[k]->name() << "[" << j << "]";
    }
  }
  EXPECT_LT(worst, kGradTol);
}

TEST_F(TreeLstmGradTest, BatchedEqualsPerInstance) {
  const auto batched = gradients(pairs_.size());
  const auto single = gradients(1);
  ASSERT_EQ(batched.size(), single.size());
  for (std::size_t k = 0; k < batched.size(); ++k) {
    EXPECT_LE(testing::max_rel_err(batched[k].data(), single[k].data()), 1e-9) << k;
  }
}

// Cross-sample accumulation records reduce_sum nodes with one operand per
// sample. Sample counts of 1 or 2 would drop them or merge them with the binary
// tree's child sums, so the law is checked on larger counts.
TEST(BackwardBatchingTest, LaunchesIndependentOfSampleCount) {
  const TreeLstmConfig cfg{8, 3, 4};
  const TreeLstmParams params = TreeLstmParams::init(cfg, 2);
  const TreeNode tree = testing::full_tree(2, 2, 1);
  std::vector<std::uint64_t> launches;
  for (std::size_t batch : {4u, 8u, 16u}) {
    auto scope = BatchingScope::open();
    std::vector<LazyTensor> losses;
    for (std::size_t i = 0; i < batch; ++i) {
      const LazyTensor h = encode_tree(*scope, tree, params).h;
      losses.push_back(squared_error(*scope, relatedness_head(*scope, h, h, params), 0.3));
    }
    std::vector<LazyTensor> leaves;
    for (const Parameter* q : params.all()) leaves.push_back(scope->parameter(*q));
    backward(reduce_sum(losses), leaves);
    const LaunchCounts before = KernelCounter::read();
    scope->close();
    launches.push_back((KernelCounter::read() - before).main());
  }
  EXPECT_EQ(launches[0], launches[1]);
  EXPECT_EQ(launches[0], launches[2]);
}

}  // namespace
}  // namespace jitbatch
