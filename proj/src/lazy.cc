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

#include "jitbatch/lazy.h"

#include <algorithm>
#include <atomic>
#include <exception>
#include <iostream>
#include <sstream>

#include "jitbatch/hash.h"
#include "jitbatch/scheduler.h"

namespace jitbatch {

namespace {

std::atomic<std::uint64_t> next_param_uid{1};
thread_local BatchingScope* open_scope_on_thread = nullptr;

}  // namespace

Parameter::Parameter(std::string name, Tensor value)
    : uid_(next_param_uid.fetch_add(1)),
      name_(std::move(name)),
      value_(std::move(value)) {}

void Parameter::set_value(Tensor value) {
  if (value.shape() != value_.shape()) {
    throw ShapeError("parameter " + name_ + ": shape mismatch " +
                     shape_to_string(value_.shape()) + " vs " +
                     shape_to_string(value.shape()));
  }
  value_ = std::move(value);
}

const Shape& LazyTensor::shape() const { return scope_->node(id_).shape; }

std::size_t LazyTensor::depth() const { return scope_->node(id_).depth; }

bool LazyTensor::materialized() const { return scope_->has_value(id_); }

const Tensor& LazyTensor::value() const { return scope_->materialize(*this); }

bool SignatureKey::operator==(const SignatureKey& o) const {
  return hash == o.hash && kind == o.kind && attrs == o.attrs &&
         param_ids == o.param_ids && input_layout == o.input_layout;
}

std::string SignatureKey::to_string() const {
  std::ostringstream os;
  os << describe_op(kind, attrs) << '(';
  for (std::size_t i = 0; i < input_layout.size(); ++i) {
    if (i) os << ", ";
    os << shape_to_string(input_layout[i]);
    if (param_ids[i]) os << "@p" << param_ids[i];
  }
  os << ')';
  return os.str();
}

void DepthTable::insert(std::size_t depth, SignatureKey key, NodeId id) {
  auto& row = rows_[depth];
  auto it = row.find(key);
  if (it == row.end()) {
    slots_.push_back(Slot{depth, key, {}});
    it = row.emplace(std::move(key), slots_.size() - 1).first;
  }
  slots_[it->second].nodes.push_back(id);
  ++nodes_;
}

void DepthTable::clear() {
  slots_.clear();
  rows_.clear();
  nodes_ = 0;
}

std::vector<std::size_t> DepthTable::depths() const {
  std::vector<std::size_t> out;
  for (const auto& [d, row] : rows_) out.push_back(d);
  return out;
}

std::vector<std::size_t> DepthTable::row(std::size_t depth) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    if (slots_[i].depth == depth) out.push_back(i);
  }
  return out;
}

const DepthTable::Slot* DepthTable::find(std::size_t depth,
                                         const SignatureKey& key) const {
  auto r = rows_.find(depth);
  if (r == rows_.end()) return nullptr;
  auto it = r->second.find(key);
  return it == r->second.end() ? nullptr : &slots_[it->second];
}

std::size_t DepthTable::kernel_node_count() const {
  std::size_t n = 0;
  for (const Slot& s : slots_) {
    if (s.depth > 0) n += s.nodes.size();
  }
  return n;
}

std::size_t DepthTable::kernel_slot_count() const {
  return static_cast<std::size_t>(std::count_if(
      slots_.begin(), slots_.end(), [](const Slot& s) { return s.depth > 0; }));
}

std::shared_ptr<BatchingScope> BatchingScope::open(ScopeOptions options) {
  if (open_scope_on_thread != nullptr) {
    throw ScopeError("a batching scope is already open on this thread");
  }
  std::shared_ptr<BatchingScope> scope(new BatchingScope(options));
  open_scope_on_thread = scope.get();
  return scope;
}

BatchingScope::BatchingScope(ScopeOptions options) : options_(options) {}

BatchingScope::~BatchingScope() {
  if (open_scope_on_thread == this) open_scope_on_thread = nullptr;
}

void BatchingScope::close() {
  if (!open_) throw ScopeError("scope already closed");
  if (!block_stack_.empty()) {
    throw ScopeError("scope closed with " + std::to_string(block_stack_.size()) +
                     " open block(s)");
  }
  // Recording ends even if the flush throws.
  open_ = false;
  if (open_scope_on_thread == this) open_scope_on_thread = nullptr;
  flush();
}

NodeId BatchingScope::add_node(OpNode node) {
  node.id = static_cast<NodeId>(nodes_.size());
  node.block = block_stack_.empty() ? -1 : block_stack_.back();
  nodes_.push_back(std::move(node));
  results_.emplace_back();
  has_value_.push_back(false);
  return nodes_.back().id;
}

LazyTensor BatchingScope::constant(Tensor value) {
  if (!open_) throw ScopeError("record on a closed scope");
  OpNode n;
  n.kind = OpKind::kConstant;
  n.shape = value.shape();
  const NodeId id = add_node(std::move(n));
  results_[id] = std::move(value);
  has_value_[id] = true;
  pending_.insert(0, signature(id), id);
  return handle(id);
}

LazyTensor BatchingScope::parameter(const Parameter& p) {
  if (!open_) throw ScopeError("record on a closed scope");
  if (auto it = param_nodes_.find(p.uid()); it != param_nodes_.end()) {
    return handle(it->second);
  }
  OpNode n;
  n.kind = OpKind::kParameter;
  n.shape = p.value().shape();
  n.param_uid = p.uid();
  const NodeId id = add_node(std::move(n));
  results_[id] = p.value();
  has_value_[id] = true;
  param_nodes_.emplace(p.uid(), id);
  pending_.insert(0, signature(id), id);
  return handle(id);
}

LazyTensor BatchingScope::record(OpKind kind, Attrs attrs,
                                 std::span<const LazyTensor> inputs) {
  if (!open_) throw ScopeError("record on a closed scope");
  if (!is_kernel(kind)) {
    throw std::invalid_argument(std::string("record: ") + op_name(kind) +
                                " is not a registered kernel");
  }
  OpNode n;
  n.kind = kind;
  n.attrs = std::move(attrs);
  n.inputs.reserve(inputs.size());
  std::vector<Shape> shapes;
  shapes.reserve(inputs.size());
  std::size_t depth = 0;
  for (const LazyTensor& in : inputs) {
    if (!in.valid() || in.scope_.get() != this) {
      throw ScopeError(std::string("record ") + op_name(kind) +
                       ": input belongs to a different scope");
    }
    const OpNode& src = nodes_[in.id()];
    n.inputs.push_back(src.id);
    shapes.push_back(src.shape);
    depth = std::max(depth, src.depth);
  }
  n.shape = infer_shape(kind, n.attrs, shapes);
  n.depth = depth + 1;
  const std::size_t d = n.depth;
  const NodeId id = add_node(std::move(n));
  pending_.insert(d, signature(id), id);
  return handle(id);
}

SignatureKey BatchingScope::signature(NodeId id) const {
  const OpNode& n = nodes_.at(id);
  SignatureKey key;
  key.kind = n.kind;
  key.attrs = n.attrs;
  std::uint64_t h = hash_combine(0x5167u, static_cast<std::uint64_t>(n.kind));
  for (auto a : n.attrs) h = hash_combine(h, static_cast<std::uint64_t>(a));
  if (n.kind == OpKind::kParameter) {
    // A parameter leaf is its own class.
    key.attrs.push_back(static_cast<std::int64_t>(n.param_uid));
    h = hash_combine(h, n.param_uid);
  }
  key.param_ids.reserve(n.inputs.size());
  key.input_layout.reserve(n.inputs.size());
  for (NodeId in : n.inputs) {
    const OpNode& src = nodes_[in];
    const std::uint64_t pid = src.kind == OpKind::kParameter ? src.param_uid : 0;
    key.param_ids.push_back(pid);
    key.input_layout.push_back(src.shape);
    h = hash_combine(h, pid);
    h = hash_combine(h, src.shape.size());
    for (auto dim : src.shape) h = hash_combine(h, dim);
  }
  key.hash = static_cast<std::size_t>(h);
  return key;
}

const Tensor& BatchingScope::result(NodeId id) const {
  if (!has_value_.at(id)) {
    throw ScopeError("node " + std::to_string(id) + " has not been evaluated");
  }
  return results_[id];
}

LazyTensor BatchingScope::tensor(NodeId id) {
  if (id >= nodes_.size()) {
    throw ScopeError("no node " + std::to_string(id) + " in scope");
  }
  return handle(id);
}

const Tensor& BatchingScope::materialize(const LazyTensor& x) {
  if (x.scope_.get() != this) {
    throw ScopeError("materialize: tensor belongs to a different scope");
  }
  if (!has_value_[x.id()]) flush();
  return results_[x.id()];
}

void BatchingScope::flush() {
  if (pending_.kernel_node_count() > 0) {
#ifndef NDEBUG
    if (!check_slot_independence(*this)) {
      throw ExecutionError("dependent nodes share a batching slot");
    }
#endif
    const LaunchCounts before = KernelCounter::read();
    bool hit = false;
    std::string* dump = options_.plan_dump;
    if (dump != nullptr && !dump->empty()) dump = nullptr;
    run_wave(*this, &hit, dump);
    const LaunchCounts after = KernelCounter::read();
    stats_.launches.launches += (after - before).launches;
    stats_.launches.overhead += (after - before).overhead;
    stats_.waves += 1;
    stats_.kernel_nodes += pending_.kernel_node_count();
    stats_.kernel_slots += pending_.kernel_slot_count();
    if (options_.cache != nullptr) {
      (hit ? stats_.cache_hits : stats_.cache_misses) += 1;
    }
  }
  pending_.clear();
  wave_start_ = static_cast<NodeId>(nodes_.size());
}

void BatchingScope::abandon() {
  open_ = false;
  if (open_scope_on_thread == this) open_scope_on_thread = nullptr;
  pending_.clear();
  wave_start_ = static_cast<NodeId>(nodes_.size());
}

void BatchingScope::begin_block(std::string tag) {
  if (!open_) throw ScopeError("begin_block on a closed scope");
  Block b;
  b.tag = std::move(tag);
  b.first = static_cast<NodeId>(nodes_.size());
  b.parent = block_stack_.empty() ? -1 : block_stack_.back();
  blocks_.push_back(std::move(b));
  block_stack_.push_back(static_cast<int>(blocks_.size() - 1));
}

void BatchingScope::end_block() {
  if (block_stack_.empty()) throw ScopeError("end_block without begin_block");
  Block& b = blocks_[block_stack_.back()];
  block_stack_.pop_back();
  b.end = static_cast<NodeId>(nodes_.size());
  b.closed = true;
  std::uint64_t h = hash_combine(0xb10c, b.end - b.first);
  for (NodeId id = b.first; id < b.end; ++id) {
    const OpNode& n = nodes_[id];
    h = hash_combine(h, static_cast<std::uint64_t>(n.kind));
    for (auto a : n.attrs) h = hash_combine(h, static_cast<std::uint64_t>(a));
    h = hash_combine(h, n.inputs.size());
    for (NodeId in : n.inputs) {
      if (in >= b.first) {
        h = hash_combine(h, id - in);
      } else {
        const OpNode& src = nodes_[in];
        h = hash_combine(h, src.kind == OpKind::kParameter ? src.param_uid
                                                            : 0xe7e7u);
        for (auto dim : src.shape) h = hash_combine(h, dim);
      }
    }
  }
  b.fingerprint = h;
}

std::vector<int> BatchingScope::block_depths() const {
  std::vector<int> depth(blocks_.size(), -1);
  // level: -1 for leaves, else the depth of the top-level block that produced
  // the node (or the deepest such block upstream of an unblocked node).
  std::vector<int> level(nodes_.size(), -1);
  auto top_block = [&](int b) {
    while (b >= 0 && blocks_[b].parent >= 0) b = blocks_[b].parent;
    return b;
  };
  NodeId id = 0;
  while (id < nodes_.size()) {
    const int top = top_block(nodes_[id].block);
    if (top < 0) {
      int lv = -1;
      for (NodeId in : nodes_[id].inputs) lv = std::max(lv, level[in]);
      level[id] = is_kernel(nodes_[id].kind) ? lv : -1;
      ++id;
      continue;
    }
    const Block& b = blocks_[top];
    const NodeId end = b.closed ? b.end : static_cast<NodeId>(nodes_.size());
    int deepest = -1;
    for (NodeId j = b.first; j < end; ++j) {
      for (NodeId in : nodes_[j].inputs) {
        if (in < b.first) deepest = std::max(deepest, level[in]);
      }
    }
    depth[top] = deepest + 1;
    // Leaves recorded inside a block (e.g. a parameter's first use) stay at -1,
    // so later blocks sharing them do not depend on this one.
    for (NodeId j = b.first; j < end; ++j) {
      level[j] = is_kernel(nodes_[j].kind) ? depth[top] : -1;
    }
    id = end;
  }
  return depth;
}

void store_results(BatchingScope& scope, std::span<const NodeId> ids,
                   std::span<const Tensor> values) {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    scope.results_[ids[i]] = values[i];
    scope.has_value_[ids[i]] = true;
  }
}

bool check_slot_independence(const BatchingScope& scope) {
  const DepthTable& table = scope.pending();
  const NodeId start = scope.wave_start();
  const std::size_t n = scope.num_nodes();
  for (const auto& slot : table.slots()) {
    if (slot.depth == 0 || slot.nodes.size() < 2) continue;
    // Mark every pending ancestor of any slot member; a member that is
    // marked has another member downstream of it.
    std::vector<char> member(n - start, 0), reach(n - start, 0);
    NodeId hi = 0;
    for (NodeId id : slot.nodes) {
      member[id - start] = 1;
      hi = std::max(hi, id);
    }
    for (NodeId id = hi + 1; id-- > start;) {
      if (!member[id - start] && !reach[id - start]) continue;
      for (NodeId in : scope.node(id).inputs) {
        if (in < start) continue;
        if (member[in - start]) return false;
        reach[in - start] = 1;
      }
    }
  }
  return true;
}

BatchingGuard::BatchingGuard(ScopeOptions options)
    : scope_(BatchingScope::open(options)),
      uncaught_(std::uncaught_exceptions()) {}

BatchingGuard::~BatchingGuard() {
  if (!scope_->is_open()) return;
  if (std::uncaught_exceptions() > uncaught_) {
    // Drop pending work; the handles stay unevaluated.
    scope_->abandon();
    return;
  }
  try {
    scope_->close();
  } catch (const std::exception& e) {
    std::cerr << "jitbatch: error while closing batching scope: " << e.what()
              << '\n';
  }
}

namespace {

LazyTensor rec(OpKind kind, Attrs attrs, std::span<const LazyTensor> inputs) {
  if (inputs.empty() || !inputs[0].valid()) {
    throw ScopeError(std::string(op_name(kind)) + ": invalid input tensor");
  }
  return inputs[0].scope().record(kind, std::move(attrs), inputs);
}

}  // namespace

LazyTensor matmul(const LazyTensor& a, const LazyTensor& b, bool trans_a,
                  bool trans_b) {
  const LazyTensor in[] = {a, b};
  return rec(OpKind::kMatmul, {trans_a ? 1 : 0, trans_b ? 1 : 0}, in);
}

LazyTensor ewise(EwiseKind kind, const LazyTensor& x) {
  const LazyTensor in[] = {x};
  return rec(OpKind::kEwise, {static_cast<std::int64_t>(kind)}, in);
}

LazyTensor ewise(EwiseKind kind, const LazyTensor& a, const LazyTensor& b) {
  const LazyTensor in[] = {a, b};
  return rec(OpKind::kEwise, {static_cast<std::int64_t>(kind)}, in);
}

LazyTensor add(const LazyTensor& a, const LazyTensor& b) { return ewise(EwiseKind::kAdd, a, b); }
LazyTensor sub(const LazyTensor& a, const LazyTensor& b) { return ewise(EwiseKind::kSub, a, b); }
LazyTensor mul(const LazyTensor& a, const LazyTensor& b) { return ewise(EwiseKind::kMul, a, b); }
LazyTensor neg(const LazyTensor& x) { return ewise(EwiseKind::kNeg, x); }
LazyTensor sigmoid(const LazyTensor& x) { return ewise(EwiseKind::kSigmoid, x); }
LazyTensor tanh(const LazyTensor& x) { return ewise(EwiseKind::kTanh, x); }
LazyTensor abs(const LazyTensor& x) { return ewise(EwiseKind::kAbs, x); }
LazyTensor sign(const LazyTensor& x) { return ewise(EwiseKind::kSign, x); }

LazyTensor reduce_sum(std::span<const LazyTensor> xs) {
  return rec(OpKind::kReduceSum, {}, xs);
}

LazyTensor stack(std::span<const LazyTensor> parts) {
  return rec(OpKind::kStack, {}, parts);
}

LazyTensor slice(const LazyTensor& x, std::size_t index) {
  const LazyTensor in[] = {x};
  return rec(OpKind::kSlice, {static_cast<std::int64_t>(index)}, in);
}

LazyTensor sum(const LazyTensor& x) {
  const LazyTensor in[] = {x};
  return rec(OpKind::kSum, {}, in);
}

LazyTensor broadcast(const LazyTensor& scalar, const Shape& shape) {
  const LazyTensor in[] = {scalar};
  Attrs attrs(shape.begin(), shape.end());
  return rec(OpKind::kBroadcast, std::move(attrs), in);
}

LazyTensor gather_row(const LazyTensor& table, const LazyTensor& index) {
  const LazyTensor in[] = {table, index};
  return rec(OpKind::kGatherRow, {}, in);
}

LazyTensor scatter_rows(std::size_t rows, std::span<const LazyTensor> operands) {
  return rec(OpKind::kScatterRows, {static_cast<std::int64_t>(rows)}, operands);
}

LazyTensor matmul_sum(std::span<const LazyTensor> operands, bool trans_out) {
  return rec(OpKind::kMatmulSum, {trans_out ? 1 : 0}, operands);
}

}  // namespace jitbatch
