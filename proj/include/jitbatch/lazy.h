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

// Lazy tensors and batching scopes.
//
// Inside a scope every operation on a LazyTensor is recorded instead of run.
// Each recorded node gets a depth (0 for constants and parameters, otherwise
// one more than its deepest input) and a SignatureKey; the scope files it in
// a DepthTable under (depth, key). Nodes sharing a slot are independent of
// each other and can run as one batched kernel. Work is flushed when a value
// is requested or the scope closes.
//
//   auto scope = BatchingScope::open();
//   LazyTensor h = tanh(matmul(scope->constant(x), scope->parameter(w)));
//   ...
//   scope->close();
//   const Tensor& v = h.value();

#ifndef JITBATCH_LAZY_H_
#define JITBATCH_LAZY_H_

#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "jitbatch/ops.h"
#include "jitbatch/tensor.h"

namespace jitbatch {

class BatchingScope;
class PlanCache;

using NodeId = std::uint32_t;

class ScopeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ExecutionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A trainable tensor with a process-unique identity. Identity, not value,
// decides whether two uses count as the same parameterization.
class Parameter {
 public:
  Parameter(std::string name, Tensor value);
  Parameter(const Parameter&) = delete;
  Parameter& operator=(const Parameter&) = delete;
  Parameter(Parameter&&) = default;
  Parameter& operator=(Parameter&&) = default;

  std::uint64_t uid() const { return uid_; }
  const std::string& name() const { return name_; }
  const Tensor& value() const { return value_; }
  // Shape must not change.
  void set_value(Tensor value);

 private:
  std::uint64_t uid_;
  std::string name_;
  Tensor value_;
};

// Future-style handle to a recorded node.
class LazyTensor {
 public:
  LazyTensor() = default;

  bool valid() const { return scope_ != nullptr; }
  NodeId id() const { return id_; }
  BatchingScope& scope() const { return *scope_; }
  const std::shared_ptr<BatchingScope>& scope_ptr() const { return scope_; }
  const Shape& shape() const;
  std::size_t depth() const;
  bool materialized() const;
  // Forces evaluation (flushing the scope if needed) and returns the value.
  const Tensor& value() const;

 private:
  friend class BatchingScope;
  LazyTensor(std::shared_ptr<BatchingScope> scope, NodeId id)
      : scope_(std::move(scope)), id_(id) {}

  std::shared_ptr<BatchingScope> scope_;
  NodeId id_ = 0;
};

// Batching equivalence class of a node at a given depth.
struct SignatureKey {
  OpKind kind = OpKind::kConstant;
  Attrs attrs;
  // Per input: uid of the parameter feeding that position, 0 otherwise.
  std::vector<std::uint64_t> param_ids;
  std::vector<Shape> input_layout;
  std::size_t hash = 0;

  std::size_t arity() const { return input_layout.size(); }
  bool operator==(const SignatureKey& o) const;
  std::string to_string() const;
};

struct SignatureKeyHash {
  std::size_t operator()(const SignatureKey& k) const { return k.hash; }
};

struct OpNode {
  NodeId id = 0;
  OpKind kind = OpKind::kConstant;
  Attrs attrs;
  std::vector<NodeId> inputs;
  Shape shape;
  std::size_t depth = 0;
  std::uint64_t param_uid = 0;  // kParameter only
  int block = -1;               // innermost enclosing block, -1 if none
};

// Slot table for one flush wave: depth -> signature -> nodes.
class DepthTable {
 public:
  struct Slot {
    std::size_t depth = 0;
    SignatureKey key;
    std::vector<NodeId> nodes;  // recording order
  };

  void insert(std::size_t depth, SignatureKey key, NodeId id);
  void clear();

  bool empty() const { return slots_.empty(); }
  // Slots in order of first use.
  const std::vector<Slot>& slots() const { return slots_; }
  std::size_t num_rows() const { return rows_.size(); }
  std::vector<std::size_t> depths() const;
  // Slot indices at `depth`, in order of first use.
  std::vector<std::size_t> row(std::size_t depth) const;
  const Slot* find(std::size_t depth, const SignatureKey& key) const;

  std::size_t node_count() const { return nodes_; }
  // Counts excluding the depth-0 row of constants and parameters.
  std::size_t kernel_node_count() const;
  std::size_t kernel_slot_count() const;

 private:
  std::vector<Slot> slots_;
  std::map<std::size_t,
           std::unordered_map<SignatureKey, std::size_t, SignatureKeyHash>>
      rows_;
  std::size_t nodes_ = 0;
};

// A user-delimited subgraph (e.g. one Tree-LSTM cell). Nodes recorded between
// begin_block and end_block carry the block as their subgraph tag.
struct Block {
  std::string tag;
  std::uint64_t fingerprint = 0;  // structure of the nodes inside; set at end
  NodeId first = 0;
  NodeId end = 0;  // one past the last node
  int parent = -1;
  bool closed = false;
};

struct ScopeOptions {
  // false: every node runs as its own kernel launch.
  bool batching = true;
  // Stack shared operands instead of broadcasting them.
  bool force_stack = false;
  // nullptr disables plan caching.
  PlanCache* cache = nullptr;
  // When set, receives the listing of the first executed plan.
  std::string* plan_dump = nullptr;
};

struct ScopeStats {
  std::size_t waves = 0;
  std::size_t kernel_nodes = 0;
  std::size_t kernel_slots = 0;
  LaunchCounts launches;
  std::size_t cache_hits = 0;
  std::size_t cache_misses = 0;
};

class BatchingScope : public std::enable_shared_from_this<BatchingScope> {
 public:
  // Throws ScopeError if another scope is open on this thread.
  static std::shared_ptr<BatchingScope> open(ScopeOptions options = {});

  BatchingScope(const BatchingScope&) = delete;
  BatchingScope& operator=(const BatchingScope&) = delete;
  ~BatchingScope();

  // Runs all pending work and ends recording.
  void close();
  // Ends recording without running pending work.
  void abandon();
  bool is_open() const { return open_; }
  const ScopeOptions& options() const { return options_; }

  LazyTensor constant(Tensor value);
  // One leaf per parameter per scope; later calls return the same node.
  LazyTensor parameter(const Parameter& p);
  LazyTensor record(OpKind kind, Attrs attrs,
                    std::span<const LazyTensor> inputs);

  // Handle to an already recorded node.
  LazyTensor tensor(NodeId id);

  const Tensor& materialize(const LazyTensor& x);
  bool has_value(NodeId id) const { return has_value_[id]; }

  void begin_block(std::string tag);
  void end_block();
  const std::vector<Block>& blocks() const { return blocks_; }
  // Fold-style depth of each top-level block (0 when fed only by leaves).
  // Entries for nested blocks are -1.
  std::vector<int> block_depths() const;

  std::size_t num_nodes() const { return nodes_.size(); }
  const OpNode& node(NodeId id) const { return nodes_.at(id); }
  const Tensor& result(NodeId id) const;
  SignatureKey signature(NodeId id) const;
  // Unflushed nodes.
  const DepthTable& pending() const { return pending_; }
  NodeId wave_start() const { return wave_start_; }
  ScopeStats stats() const { return stats_; }

 private:
  friend class LazyTensor;
  friend void store_results(BatchingScope&, std::span<const NodeId>,
                            std::span<const Tensor>);

  explicit BatchingScope(ScopeOptions options);
  NodeId add_node(OpNode node);
  LazyTensor handle(NodeId id) { return LazyTensor(shared_from_this(), id); }
  void flush();

  ScopeOptions options_;
  bool open_ = true;
  std::vector<OpNode> nodes_;
  // A deque, so references returned by value() survive later recordings.
  std::deque<Tensor> results_;
  std::vector<bool> has_value_;
  DepthTable pending_;
  NodeId wave_start_ = 0;
  std::unordered_map<std::uint64_t, NodeId> param_nodes_;
  std::vector<Block> blocks_;
  std::vector<int> block_stack_;
  ScopeStats stats_;
};

// Opens a scope for the lifetime of the guard and closes it on exit. If the
// guard is destroyed by an exception the pending work is dropped instead.
class BatchingGuard {
 public:
  explicit BatchingGuard(ScopeOptions options = {});
  ~BatchingGuard();
  BatchingGuard(const BatchingGuard&) = delete;
  BatchingGuard& operator=(const BatchingGuard&) = delete;

  BatchingScope* operator->() const { return scope_.get(); }
  BatchingScope& operator*() const { return *scope_; }
  const std::shared_ptr<BatchingScope>& get() const { return scope_; }

 private:
  std::shared_ptr<BatchingScope> scope_;
  int uncaught_ = 0;
};

// Writes flushed values back into the scope. Used by the scheduler.
void store_results(BatchingScope& scope, std::span<const NodeId> ids,
                   std::span<const Tensor> values);

// True if no node of a pending slot is an ancestor of another node in the
// same slot.
bool check_slot_independence(const BatchingScope& scope);

// Recording front end.
LazyTensor matmul(const LazyTensor& a, const LazyTensor& b,
                  bool trans_a = false, bool trans_b = false);
LazyTensor ewise(EwiseKind kind, const LazyTensor& x);
LazyTensor ewise(EwiseKind kind, const LazyTensor& a, const LazyTensor& b);
LazyTensor add(const LazyTensor& a, const LazyTensor& b);
LazyTensor sub(const LazyTensor& a, const LazyTensor& b);
LazyTensor mul(const LazyTensor& a, const LazyTensor& b);
LazyTensor neg(const LazyTensor& x);
LazyTensor sigmoid(const LazyTensor& x);
LazyTensor tanh(const LazyTensor& x);
LazyTensor abs(const LazyTensor& x);
LazyTensor sign(const LazyTensor& x);
LazyTensor reduce_sum(std::span<const LazyTensor> xs);
LazyTensor stack(std::span<const LazyTensor> parts);
LazyTensor slice(const LazyTensor& x, std::size_t index);
LazyTensor sum(const LazyTensor& x);
LazyTensor broadcast(const LazyTensor& scalar, const Shape& shape);
LazyTensor gather_row(const LazyTensor& table, const LazyTensor& index);
LazyTensor scatter_rows(std::size_t rows, std::span<const LazyTensor> operands);
LazyTensor matmul_sum(std::span<const LazyTensor> operands, bool trans_out = false);

inline LazyTensor operator+(const LazyTensor& a, const LazyTensor& b) { return add(a, b); }
inline LazyTensor operator-(const LazyTensor& a, const LazyTensor& b) { return sub(a, b); }
inline LazyTensor operator*(const LazyTensor& a, const LazyTensor& b) { return mul(a, b); }

}  // namespace jitbatch

#endif  // JITBATCH_LAZY_H_
