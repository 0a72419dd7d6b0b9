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

#include <algorithm>
#include <map>
#include <stdexcept>
#include <unordered_map>

namespace jitbatch {

namespace {

// Pending gradient contributions per node, filled in reverse recording order.
class GradTape {
 public:
  GradTape(BatchingScope& scope, NodeId loss)
      : scope_(scope), on_path_(loss + 1, false), requires_(loss + 1, false) {}

  void mark_targets(std::span<const LazyTensor> wrt, NodeId loss) {
    for (const LazyTensor& t : wrt) {
      if (t.id() <= loss) requires_[t.id()] = true;
    }
    for (NodeId id = 0; id <= loss; ++id) {
      for (NodeId in : scope_.node(id).inputs) {
        if (requires_[in]) requires_[id] = true;
      }
    }
    on_path_[loss] = true;
    for (NodeId id = loss + 1; id-- > 0;) {
      if (!on_path_[id]) continue;
      for (NodeId in : scope_.node(id).inputs) on_path_[in] = true;
    }
  }

  bool needed(NodeId id) const { return on_path_[id] && requires_[id]; }

  void add(NodeId id, LazyTensor g) {
    if (needed(id)) dense_[id].push_back(std::move(g));
  }
  void add_row(NodeId table, LazyTensor index, LazyTensor g) {
    if (!needed(table)) return;
    auto& r = rows_[table];
    r.first.push_back(std::move(index));
    r.second.push_back(std::move(g));
  }
  void add_product(NodeId id, bool trans_out, LazyTensor a, LazyTensor g) {
    if (!needed(id)) return;
    auto& p = products_[{id, trans_out}];
    p.first.push_back(std::move(a));
    p.second.push_back(std::move(g));
  }

  // Total gradient of `id`, or an invalid tensor if nothing flowed into it.
  LazyTensor take(NodeId id) {
    std::vector<LazyTensor> parts;
    if (auto it = dense_.find(id); it != dense_.end()) {
      parts = std::move(it->second);
      dense_.erase(it);
    }
    if (auto it = rows_.find(id); it != rows_.end()) {
      std::vector<LazyTensor> operands = std::move(it->second.first);
      operands.insert(operands.end(), it->second.second.begin(),
                      it->second.second.end());
      parts.push_back(scatter_rows(scope_.node(id).shape[0], operands));
      rows_.erase(it);
    }
    for (bool trans_out : {false, true}) {
      auto it = products_.find({id, trans_out});
      if (it == products_.end()) continue;
      std::vector<LazyTensor> operands = std::move(it->second.first);
      operands.insert(operands.end(), it->second.second.begin(),
                      it->second.second.end());
      parts.push_back(matmul_sum(operands, trans_out));
      products_.erase(it);
    }
    if (parts.empty()) return {};
    if (parts.size() == 1) return parts[0];
    return reduce_sum(parts);
  }

 private:
  using Pairs = std::pair<std::vector<LazyTensor>, std::vector<LazyTensor>>;

  BatchingScope& scope_;
  std::vector<bool> on_path_;
  std::vector<bool> requires_;
  std::unordered_map<NodeId, std::vector<LazyTensor>> dense_;
  std::unordered_map<NodeId, Pairs> rows_;
  std::map<std::pair<NodeId, bool>, Pairs> products_;
};

bool is_param(const BatchingScope& scope, NodeId id) {
  return scope.node(id).kind == OpKind::kParameter;
}

// Reduces a gradient of a broadcast rank-0 operand back to rank 0.
LazyTensor fit(const BatchingScope& scope, NodeId operand, const LazyTensor& g) {
  if (scope.node(operand).shape.empty() && !g.shape().empty()) return sum(g);
  return g;
}

void propagate(BatchingScope& scope, GradTape& tape, NodeId id,
               const LazyTensor& g) {
  const OpNode n = scope.node(id);
  auto in = [&](std::size_t i) { return scope.tensor(n.inputs[i]); };
  switch (n.kind) {
    case OpKind::kConstant:
    case OpKind::kParameter:
      return;
    case OpKind::kMatmul: {
      const bool ta = n.attrs[0] != 0, tb = n.attrs[1] != 0;
      const LazyTensor a = in(0), b = in(1);
      if (tape.needed(a.id())) {
        tape.add(a.id(), ta ? matmul(b, g, tb, true) : matmul(g, b, false, !tb));
      }
      if (tape.needed(b.id())) {
        if (!ta && is_param(scope, b.id())) {
          // Shared weight: accumulate a^T g over every use in one kernel.
          tape.add_product(b.id(), tb, a, g);
        } else {
          tape.add(b.id(), tb ? matmul(g, a, true, ta) : matmul(a, g, !ta, false));
        }
      }
      return;
    }
    case OpKind::kEwise: {
      const auto kind = static_cast<EwiseKind>(n.attrs[0]);
      const LazyTensor y = scope.tensor(id);
      switch (kind) {
        case EwiseKind::kAdd:
          tape.add(n.inputs[0], fit(scope, n.inputs[0], g));
          tape.add(n.inputs[1], fit(scope, n.inputs[1], g));
          return;
        case EwiseKind::kSub:
          tape.add(n.inputs[0], fit(scope, n.inputs[0], g));
          if (tape.needed(n.inputs[1])) {
            tape.add(n.inputs[1], fit(scope, n.inputs[1], neg(g)));
          }
          return;
        case EwiseKind::kMul:
          if (tape.needed(n.inputs[0])) {
            tape.add(n.inputs[0], fit(scope, n.inputs[0], g * in(1)));
          }
          if (tape.needed(n.inputs[1])) {
            tape.add(n.inputs[1], fit(scope, n.inputs[1], g * in(0)));
          }
          return;
        case EwiseKind::kNeg:
          tape.add(n.inputs[0], neg(g));
          return;
        case EwiseKind::kSigmoid:
          tape.add(n.inputs[0], g * (y - y * y));
          return;
        case EwiseKind::kTanh:
          tape.add(n.inputs[0], g - (g * y) * y);
          return;
        case EwiseKind::kAbs:
          tape.add(n.inputs[0], g * sign(in(0)));
          return;
        case EwiseKind::kSign:
          return;  // zero almost everywhere
      }
      return;
    }
    case OpKind::kStack:
      for (std::size_t i = 0; i < n.inputs.size(); ++i) {
        if (tape.needed(n.inputs[i])) tape.add(n.inputs[i], slice(g, i));
      }
      return;
    case OpKind::kSlice: {
      // Copied: recording below may reallocate the node table.
      const Shape full = scope.node(n.inputs[0]).shape;
      const Shape part(full.begin() + 1, full.end());
      const LazyTensor zero = scope.constant(Tensor::zeros(part));
      std::vector<LazyTensor> parts(full[0], zero);
      parts[static_cast<std::size_t>(n.attrs[0])] = g;
      tape.add(n.inputs[0], stack(parts));
      return;
    }
    case OpKind::kReduceSum:
      for (NodeId x : n.inputs) tape.add(x, g);
      return;
    case OpKind::kSum: {
      const Shape shape = scope.node(n.inputs[0]).shape;
      tape.add(n.inputs[0], broadcast(g, shape));
      return;
    }
    case OpKind::kBroadcast:
      tape.add(n.inputs[0], sum(g));
      return;
    case OpKind::kGatherRow:
      // The index operand is not differentiable.
      tape.add_row(n.inputs[0], in(1), g);
      return;
    case OpKind::kScatterRows: {
      const std::size_t k = n.inputs.size() / 2;
      for (std::size_t j = 0; j < k; ++j) {
        if (tape.needed(n.inputs[k + j])) {
          tape.add(n.inputs[k + j], gather_row(g, in(j)));
        }
      }
      return;
    }
    case OpKind::kMatmulSum: {
      const bool trans_out = n.attrs[0] != 0;
      const std::size_t k = n.inputs.size() / 2;
      for (std::size_t j = 0; j < k; ++j) {
        const LazyTensor a = in(j), b = in(k + j);
        if (tape.needed(a.id())) {
          tape.add(a.id(), matmul(b, g, false, !trans_out));
        }
        if (tape.needed(b.id())) {
          tape.add(b.id(), matmul(a, g, false, trans_out));
        }
      }
      return;
    }
  }
}

}  // namespace

std::vector<LazyTensor> backward(const LazyTensor& loss,
                                 std::span<const LazyTensor> wrt) {
  if (!loss.valid()) throw std::invalid_argument("backward: invalid loss");
  BatchingScope& scope = loss.scope();
  if (!scope.is_open()) throw ScopeError("backward: scope is closed");
  if (num_elements(loss.shape()) != 1) {
    throw ShapeError("backward: loss must hold one element, got shape " +
                     shape_to_string(loss.shape()));
  }
  for (const LazyTensor& t : wrt) {
    if (!t.valid() || &t.scope() != &scope) {
      throw ScopeError("backward: target belongs to a different scope");
    }
  }

  const NodeId root = loss.id();
  GradTape tape(scope, root);
  tape.mark_targets(wrt, root);

  std::unordered_map<NodeId, LazyTensor> total;
  for (const LazyTensor& t : wrt) total.emplace(t.id(), LazyTensor());

  if (tape.needed(root)) {
    tape.add(root, scope.constant(Tensor::filled(loss.shape(), 1.0)));
  }
  for (NodeId id = root + 1; id-- > 0;) {
    if (!tape.needed(id)) continue;
    LazyTensor g = tape.take(id);
    if (!g.valid()) continue;
    if (auto it = total.find(id); it != total.end()) it->second = g;
    propagate(scope, tape, id, g);
  }

  std::vector<LazyTensor> out;
  out.reserve(wrt.size());
  for (const LazyTensor& t : wrt) {
    LazyTensor g = total[t.id()];
    out.push_back(g.valid() ? g : scope.constant(Tensor::zeros(t.shape())));
  }
  return out;
}

void sgd_step(std::span<Parameter* const> params,
              std::span<const Tensor> grads, double lr) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("sgd_step: " + std::to_string(params.size()) +
                                " parameters but " +
                                std::to_string(grads.size()) + " gradients");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& w = params[i]->value();
    const Tensor& g = grads[i];
    if (w.shape() != g.shape()) {
      throw ShapeError("sgd_step: parameter '" + params[i]->name() +
                       "' has shape " + shape_to_string(w.shape()) +
                       " but gradient has " + shape_to_string(g.shape()));
    }
    std::vector<double> v(w.data().begin(), w.data().end());
    for (std::size_t j = 0; j < v.size(); ++j) v[j] -= lr * g[j];
    params[i]->set_value(Tensor(w.shape(), std::move(v)));
  }
}

}  // namespace jitbatch
