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

// Child-sum Tree-LSTM recorded one tagged "cell" block per tree node, plus a
// relatedness head over two sentence encodings.
//
// Cell decomposition (row vectors, g in {i, o, u}):
//   a_g = x W_g + b_g                    leaf: s_g = a_g
//   h~  = reduce_sum(h_k)                internal: s_g = a_g + h~ U_g
//   i, o = sigmoid(s_i), sigmoid(s_o);   u = tanh(s_u)
//   f_k = sigmoid(x W_f + b_f + h_k U_f) per child (x W_f + b_f recorded once)
//   c   = i * u + reduce_sum(f_k * c_k)  leaf: c = i * u
//   h   = o * tanh(c)

#ifndef JITBATCH_TREELSTM_H_
#define JITBATCH_TREELSTM_H_

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "jitbatch/lazy.h"
#include "jitbatch/tensor.h"

namespace jitbatch {

struct TreeNode {
  int token = -1;  // -1: no token, the cell input is zero
  std::vector<TreeNode> children;

  std::size_t arity() const { return children.size(); }
};

std::size_t tree_size(const TreeNode& t);
// Distance from the leaves; a leaf has height 0.
std::size_t tree_height(const TreeNode& t);

struct TreeLstmConfig {
  std::size_t vocab = 64;
  std::size_t d_in = 8;
  std::size_t d_h = 4;
};

enum Gate { kGateI = 0, kGateF = 1, kGateO = 2, kGateU = 3 };

struct TreeLstmParams {
  TreeLstmConfig config;
  Parameter embedding;  // [vocab, d_in]
  std::vector<Parameter> w;  // per gate [d_in, d_h]
  std::vector<Parameter> u;  // per gate [d_h, d_h]
  std::vector<Parameter> b;  // per gate [1, d_h]
  Parameter head_wm;  // [d_h, 1], applied to h_a * h_b
  Parameter head_wd;  // [d_h, 1], applied to |h_a - h_b|
  Parameter head_b;   // [1, 1]

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
  static TreeLstmParams init(const TreeLstmConfig& config, std::uint64_t seed);
  // All-zero parameters.
  static TreeLstmParams zeros(const TreeLstmConfig& config);

  // Fixed order: embedding, W_*, U_*, b_* (gate order i, f, o, u), head.
  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
};

struct CellState {
  LazyTensor h;  // [1, d_h]
  LazyTensor c;  // [1, d_h]
};

// Cell input row for `token`: an embedding lookup, or zeros for token -1.
// Throws std::out_of_range for tokens outside the vocabulary.
LazyTensor embed(BatchingScope& scope, int token, const TreeLstmParams& params);

// Records one cell. Throws ShapeError if x or a child state does not match
// the parameter dimensions.
CellState cell(BatchingScope& scope, const LazyTensor& x,
               std::span<const CellState> children,
               const TreeLstmParams& params);

// Number of nodes cell() records for the given arity (lookup excluded):
// 12 for a leaf, 23 + 4 * arity otherwise.
std::size_t cell_op_count(std::size_t arity);

// Post-order recording of every node as a "cell" block (lookup included).
CellState encode_tree(BatchingScope& scope, const TreeNode& tree,
                      const TreeLstmParams& params);

// sigmoid(h_a*h_b . W_m + |h_a - h_b| . W_d + b), shape [1, 1], in (0, 1).
LazyTensor relatedness_head(BatchingScope& scope, const LazyTensor& h_a,
                            const LazyTensor& h_b, const TreeLstmParams& params);

// Labels in [1, 5] map to (label - 1) / 4; a missing label maps to 0.5.
double relatedness_target(std::optional<double> label);

// (score - target)^2, shape [1, 1].
LazyTensor squared_error(BatchingScope& scope, const LazyTensor& score,
                         double target);

// Direct implementation on tensor-core kernels, used as the reference.
struct EagerState {
  Tensor h;
  Tensor c;
};
EagerState eager_encode(const TreeNode& tree, const TreeLstmParams& params);
Tensor eager_head(const Tensor& h_a, const Tensor& h_b,
                  const TreeLstmParams& params);

struct TreePair {
  TreeNode a;
  TreeNode b;
  std::optional<double> label;
};

// Sum of squared errors over `pairs`.
double eager_loss(std::span<const TreePair> pairs, const TreeLstmParams& params);

}  // namespace jitbatch

#endif  // JITBATCH_TREELSTM_H_
