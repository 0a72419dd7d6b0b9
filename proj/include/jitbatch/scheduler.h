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

// Turns a flush wave into a batched execution plan and runs it.
//
// A wave is first put in canonical form: nodes are numbered by a post-order
// walk from the wave's outputs, outputs sorted by a bottom-up structural
// hash, so two waves that differ only in the order samples were recorded get
// the same numbering. Plans are written against that numbering and can be
// reused for any wave whose canonical encoding is equal.
//
// Each plan step covers one (depth, signature) slot: per operand position it
// either stacks the per-sample inputs on a new leading axis or passes one
// shared input through, launches the kernel once and slices the result.

#ifndef JITBATCH_SCHEDULER_H_
#define JITBATCH_SCHEDULER_H_

#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "jitbatch/lazy.h"
#include "jitbatch/ops.h"

namespace jitbatch {

using EntryIndex = std::uint32_t;

struct WaveGraph {
  // Canonical entry -> scope node. Entries cover the wave's kernel nodes and
  // every outside value they read (constants, parameters, earlier results).
  std::vector<NodeId> node_of;
  std::vector<bool> is_kernel;
  // Kernel entry inputs, canonical.
  std::vector<std::vector<EntryIndex>> inputs;
  // Pending slots with depth > 0 as canonical entries, in slot creation order.
  std::vector<std::vector<EntryIndex>> slots;
  // Flat structural description; equal encodings admit the same plan.
  std::vector<std::uint64_t> encoding;
  std::uint64_t structural_hash = 0;
};

struct PlanOperand {
  // One shared source passed to every batch element, or one source per
  // element to be stacked.
  bool broadcast = false;
  std::vector<EntryIndex> sources;
};

struct PlanStep {
  std::size_t depth = 0;
  OpKind kind = OpKind::kMatmul;
  Attrs attrs;
  // Batch order; result batch element i is stored to group[i].
  std::vector<EntryIndex> group;
  std::vector<PlanOperand> gather;
};

struct BatchPlan {
  std::vector<PlanStep> steps;
  std::uint64_t structural_hash = 0;
  std::size_t num_entries = 0;
};

struct PlanOptions {
  bool batching = true;
  bool force_stack = false;
};

WaveGraph canonicalize(const BatchingScope& scope, const PlanOptions& options);

// One step per non-empty slot (per node when batching is off), ordered by
// depth and then by first canonical entry.
BatchPlan build_plan(const WaveGraph& graph, const BatchingScope& scope,
                     const PlanOptions& options);

// Runs `plan` for the wave described by `graph` and stores every kernel
// node's value in the scope.
void execute_plan(const BatchPlan& plan, const WaveGraph& graph,
                  BatchingScope& scope);

// Human-readable listing: depth, kernel, group size, operand modes.
std::string dump_plan(const BatchPlan& plan);

struct PlanCacheStats {
  std::size_t hits = 0;
  std::size_t misses = 0;
  // Calls into build_plan made by the cache.
  std::size_t builds = 0;
  std::size_t entries = 0;
};

class PlanCache {
 public:
  // Returns the cached plan for an equal encoding, or builds and stores one.
  std::shared_ptr<const BatchPlan> lookup_or_build(const WaveGraph& graph,
                                                   const BatchingScope& scope,
                                                   const PlanOptions& options,
                                                   bool* hit = nullptr);
  PlanCacheStats stats() const;
  void clear();

 private:
  struct Entry {
    std::vector<std::uint64_t> encoding;
    std::shared_ptr<const BatchPlan> plan;
  };
  mutable std::mutex mu_;
  std::unordered_map<std::uint64_t, std::vector<Entry>> entries_;
  PlanCacheStats stats_;
};

// Plans and runs the scope's pending wave.
void run_wave(BatchingScope& scope, bool* cache_hit = nullptr,
              std::string* plan_dump = nullptr);

}  // namespace jitbatch

#endif  // JITBATCH_SCHEDULER_H_
