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

#include "jitbatch/treelstm.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace jitbatch {

std::size_t tree_size(const TreeNode& t) {
  std::size_t n = 1;
  for (const TreeNode& c : t.children) n += tree_size(c);
  return n;
}

std::size_t tree_height(const TreeNode& t) {
  std::size_t h = 0;
  for (const TreeNode& c : t.children) h = std::max(h, tree_height(c) + 1);
  return h;
}

namespace {

const char* gate_name(int g) {
  static const char* names[] = {"i", "f", "o", "u"};
  return names[g];
}

Tensor uniform(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(num_elements(shape));
  for (double& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v));
}

void check_row(const char* what, const Shape& s, std::size_t d) {
  if (s != Shape{1, d}) {
    throw ShapeError(std::string("cell: ") + what + " has shape " +
                     shape_to_string(s) + ", expected " +
                     shape_to_string({1, d}));
  }
}

}  // namespace

TreeLstmParams TreeLstmParams::init(const TreeLstmConfig& config,
                                    std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double bin = 1.0 / std::sqrt(static_cast<double>(config.d_in));
  const double bh = 1.0 / std::sqrt(static_cast<double>(config.d_h));
  TreeLstmParams p{
      config,
      Parameter("embedding", uniform({config.vocab, config.d_in}, 1.0, rng)),
      {}, {}, {},
      Parameter("head_wm", Tensor::zeros({config.d_h, 1})),
      Parameter("head_wd", Tensor::zeros({config.d_h, 1})),
      Parameter("head_b", Tensor::zeros({1, 1}))};
  for (int g = 0; g < 4; ++g) {
    p.w.emplace_back(std::string("W_") + gate_name(g),
                     uniform({config.d_in, config.d_h}, bin, rng));
  }
  for (int g = 0; g < 4; ++g) {
    p.u.emplace_back(std::string("U_") + gate_name(g),
                     uniform({config.d_h, config.d_h}, bh, rng));
  }
  for (int g = 0; g < 4; ++g) {
    p.b.emplace_back(std::string("b_") + gate_name(g),
                     Tensor::zeros({1, config.d_h}));
  }
  p.head_wm.set_value(uniform({config.d_h, 1}, bh, rng));
  p.head_wd.set_value(uniform({config.d_h, 1}, bh, rng));
  return p;
}

TreeLstmParams TreeLstmParams::zeros(const TreeLstmConfig& config) {
  TreeLstmParams p = init(config, 0);
  for (Parameter* q : p.all()) q->set_value(Tensor::zeros(q->value().shape()));
  return p;
}

std::vector<Parameter*> TreeLstmParams::all() {
  std::vector<Parameter*> out{&embedding};
  for (auto& q : w) out.push_back(&q);
  for (auto& q : u) out.push_back(&q);
  for (auto& q : b) out.push_back(&q);
  out.push_back(&head_wm);
  out.push_back(&head_wd);
  out.push_back(&head_b);
  return out;
}

std::vector<const Parameter*> TreeLstmParams::all() const {
  auto v = const_cast<TreeLstmParams*>(this)->all();
  return {v.begin(), v.end()};
}

LazyTensor embed(BatchingScope& scope, int token, const TreeLstmParams& params) {
  if (token < 0) {
    if (token != -1) {
      throw std::out_of_range("token " + std::to_string(token) +
                              " is negative and not -1");
    }
    return scope.constant(Tensor::zeros({1, params.config.d_in}));
  }
  if (static_cast<std::size_t>(token) >= params.config.vocab) {
    throw std::out_of_range("token " + std::to_string(token) +
                            " outside vocabulary of size " +
                            std::to_string(params.config.vocab));
  }
  return gather_row(scope.parameter(params.embedding),
                    scope.constant(Tensor::scalar(token)));
}

CellState cell(BatchingScope& scope, const LazyTensor& x,
               std::span<const CellState> children,
               const TreeLstmParams& params) {
  const std::size_t d_h = params.config.d_h;
  check_row("input", x.shape(), params.config.d_in);
  for (const CellState& ch : children) {
    check_row("child h", ch.h.shape(), d_h);
    check_row("child c", ch.c.shape(), d_h);
  }
  auto W = [&](int g) { return scope.parameter(params.w[g]); };
  auto U = [&](int g) { return scope.parameter(params.u[g]); };
  auto B = [&](int g) { return scope.parameter(params.b[g]); };

  LazyTensor s[4];
  for (int g : {kGateI, kGateO, kGateU}) s[g] = add(matmul(x, W(g)), B(g));
  LazyTensor a_f;
  if (!children.empty()) {
    a_f = add(matmul(x, W(kGateF)), B(kGateF));
    std::vector<LazyTensor> hs;
    hs.reserve(children.size());
    for (const CellState& ch : children) hs.push_back(ch.h);
    const LazyTensor h_sum = reduce_sum(hs);
    for (int g : {kGateI, kGateO, kGateU}) s[g] = add(s[g], matmul(h_sum, U(g)));
  }
  const LazyTensor i = sigmoid(s[kGateI]);
  const LazyTensor o = sigmoid(s[kGateO]);
  const LazyTensor u = tanh(s[kGateU]);
  LazyTensor c = mul(i, u);
  if (!children.empty()) {
    std::vector<LazyTensor> fc;
    fc.reserve(children.size());
    for (const CellState& ch : children) {
      const LazyTensor f = sigmoid(add(a_f, matmul(ch.h, U(kGateF))));
      fc.push_back(mul(f, ch.c));
    }
    c = add(c, reduce_sum(fc));
  }
  return {mul(o, tanh(c)), c};
}

std::size_t cell_op_count(std::size_t arity) {
  return arity == 0 ? 12 : 23 + 4 * arity;
}

CellState encode_tree(BatchingScope& scope, const TreeNode& tree,
                      const TreeLstmParams& params) {
  std::vector<CellState> children;
  children.reserve(tree.children.size());
  for (const TreeNode& ch : tree.children) {
    children.push_back(encode_tree(scope, ch, params));
  }
  scope.begin_block("cell");
  try {
    const LazyTensor x = embed(scope, tree.token, params);
    CellState out = cell(scope, x, children, params);
    scope.end_block();
    return out;
  } catch (...) {
    scope.end_block();
    throw;
  }
}

LazyTensor relatedness_head(BatchingScope& scope, const LazyTensor& h_a,
                            const LazyTensor& h_b,
                            const TreeLstmParams& params) {
  const std::size_t d_h = params.config.d_h;
  if (h_a.shape() != Shape{1, d_h} || h_b.shape() != Shape{1, d_h}) {
    throw ShapeError("relatedness_head: expected two [1," + std::to_string(d_h) +
                     "] encodings, got " + shape_to_string(h_a.shape()) +
                     " and " + shape_to_string(h_b.shape()));
  }
  const LazyTensor m = mul(h_a, h_b);
  const LazyTensor d = abs(sub(h_a, h_b));
  const LazyTensor z =
      add(add(matmul(m, scope.parameter(params.head_wm)),
              matmul(d, scope.parameter(params.head_wd))),
          scope.parameter(params.head_b));
  return sigmoid(z);
}

double relatedness_target(std::optional<double> label) {
  return label ? (*label - 1.0) / 4.0 : 0.5;
}

LazyTensor squared_error(BatchingScope& scope, const LazyTensor& score,
                         double target) {
  const LazyTensor diff =
      sub(score, scope.constant(Tensor::filled(score.shape(), target)));
  return mul(diff, diff);
}

EagerState eager_encode(const TreeNode& tree, const TreeLstmParams& params) {
  const auto& cfg = params.config;
  std::vector<EagerState> kids;
  kids.reserve(tree.children.size());
  for (const TreeNode& ch : tree.children) {
    kids.push_back(eager_encode(ch, params));
  }
  Tensor x = Tensor::zeros({1, cfg.d_in});
  if (tree.token >= 0) {
    if (static_cast<std::size_t>(tree.token) >= cfg.vocab) {
      throw std::out_of_range("token " + std::to_string(tree.token) +
                              " outside vocabulary of size " +
                              std::to_string(cfg.vocab));
    }
    x = gather_row(params.embedding.value(), Tensor::scalar(tree.token));
  }
  auto gate = [&](int g) {
    return ewise(EwiseKind::kAdd, matmul(x, params.w[g].value()),
                 params.b[g].value());
  };
  Tensor s[4];
  for (int g : {kGateI, kGateO, kGateU}) s[g] = gate(g);
  if (!kids.empty()) {
    std::vector<Tensor> hs;
    for (const EagerState& k : kids) hs.push_back(k.h);
    const Tensor h_sum = reduce_sum(hs);
    for (int g : {kGateI, kGateO, kGateU}) {
      s[g] = ewise(EwiseKind::kAdd, s[g], matmul(h_sum, params.u[g].value()));
    }
  }
  const Tensor i = ewise(EwiseKind::kSigmoid, s[kGateI]);
  const Tensor o = ewise(EwiseKind::kSigmoid, s[kGateO]);
  const Tensor u = ewise(EwiseKind::kTanh, s[kGateU]);
  Tensor c = ewise(EwiseKind::kMul, i, u);
  if (!kids.empty()) {
    const Tensor a_f = gate(kGateF);
    std::vector<Tensor> fc;
    for (const EagerState& k : kids) {
      const Tensor f = ewise(
          EwiseKind::kSigmoid,
          ewise(EwiseKind::kAdd, a_f, matmul(k.h, params.u[kGateF].value())));
      fc.push_back(ewise(EwiseKind::kMul, f, k.c));
    }
    c = ewise(EwiseKind::kAdd, c, reduce_sum(fc));
  }
  return {ewise(EwiseKind::kMul, o, ewise(EwiseKind::kTanh, c)), c};
}

Tensor eager_head(const Tensor& h_a, const Tensor& h_b,
                  const TreeLstmParams& params) {
  const Tensor m = ewise(EwiseKind::kMul, h_a, h_b);
  const Tensor d = ewise(EwiseKind::kAbs, ewise(EwiseKind::kSub, h_a, h_b));
  const Tensor z = ewise(
      EwiseKind::kAdd,
      ewise(EwiseKind::kAdd, matmul(m, params.head_wm.value()),
            matmul(d, params.head_wd.value())),
      params.head_b.value());
  return ewise(EwiseKind::kSigmoid, z);
}

double eager_loss(std::span<const TreePair> pairs, const TreeLstmParams& params) {
  double loss = 0.0;
  for (const TreePair& p : pairs) {
    const Tensor score = eager_head(eager_encode(p.a, params).h,
                                    eager_encode(p.b, params).h, params);
    const double diff = score[0] - relatedness_target(p.label);
    loss += diff * diff;
  }
  return loss;
}

}  // namespace jitbatch
