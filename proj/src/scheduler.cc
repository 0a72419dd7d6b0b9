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
#include <cstdio>
#include <sstream>

#include "jitbatch/hash.h"

namespace jitbatch {

namespace {

constexpr std::uint64_t kDataTag = 1;
constexpr std::uint64_t kParamTag = 2;
constexpr std::uint64_t kKernelTag = 3;
constexpr std::int64_t kUnassigned = -1;

// `param_rank` is the parameter's position among the wave's parameters by uid.
// Ranks keep the canonical order reproducible when the same model is rebuilt
// with fresh uids.
std::uint64_t external_hash(const OpNode& n, std::uint64_t param_rank) {
  if (n.kind == OpKind::kParameter) return hash_combine(kParamTag, param_rank);
  std::uint64_t h = hash_combine(kDataTag, n.shape.size());
  for (auto d : n.shape) h = hash_combine(h, d);
  return h;
}

}  // namespace

WaveGraph canonicalize(const BatchingScope& scope, const PlanOptions& options) {
  const NodeId start = scope.wave_start();
  const NodeId end = static_cast<NodeId>(scope.num_nodes());
  auto pending_kernel = [&](NodeId id) {
    return id >= start && is_kernel(scope.node(id).kind);
  };

  std::vector<std::uint64_t> uids;
  for (NodeId id = start; id < end; ++id) {
    for (NodeId in : scope.node(id).inputs) {
      if (scope.node(in).kind == OpKind::kParameter) uids.push_back(scope.node(in).param_uid);
    }
  }
  std::sort(uids.begin(), uids.end());
  uids.erase(std::unique(uids.begin(), uids.end()), uids.end());
  auto rank_of = [&](const OpNode& n) -> std::uint64_t {
    if (n.kind != OpKind::kParameter) return 0;
    return static_cast<std::uint64_t>(
        std::lower_bound(uids.begin(), uids.end(), n.param_uid) - uids.begin());
  };

  // Bottom-up structural hash of every pending kernel node.
  std::vector<std::uint64_t> merkle(end - start, 0);
  std::vector<char> consumed(end - start, 0);
  for (NodeId id = start; id < end; ++id) {
    const OpNode& n = scope.node(id);
    if (!is_kernel(n.kind)) continue;
    std::uint64_t h = hash_combine(kKernelTag, static_cast<std::uint64_t>(n.kind));
    for (auto a : n.attrs) h = hash_combine(h, static_cast<std::uint64_t>(a));
    for (NodeId in : n.inputs) {
      if (pending_kernel(in)) {
        h = hash_combine(h, merkle[in - start]);
        consumed[in - start] = 1;
      } else {
        h = hash_combine(h, external_hash(scope.node(in), rank_of(scope.node(in))));
      }
    }
    merkle[id - start] = h;
  }

  std::vector<NodeId> roots;
  for (NodeId id = start; id < end; ++id) {
    if (pending_kernel(id) && !consumed[id - start]) roots.push_back(id);
  }
  std::stable_sort(roots.begin(), roots.end(), [&](NodeId a, NodeId b) {
    return merkle[a - start] < merkle[b - start];
  });

  WaveGraph g;
  std::vector<std::int64_t> canon(end, kUnassigned);
  auto assign = [&](NodeId id, bool kernel) {
    canon[id] = static_cast<std::int64_t>(g.node_of.size());
    g.node_of.push_back(id);
    g.is_kernel.push_back(kernel);
    g.inputs.emplace_back();
  };

  // Post-order walk; inputs are numbered before their consumers.
  std::vector<std::pair<NodeId, std::size_t>> stack;
  for (NodeId root : roots) {
    if (canon[root] != kUnassigned) continue;
    stack.emplace_back(root, 0);
    while (!stack.empty()) {
      auto& [id, next] = stack.back();
      const OpNode& n = scope.node(id);
      if (next < n.inputs.size()) {
        const NodeId in = n.inputs[next++];
        if (canon[in] != kUnassigned) continue;
        if (pending_kernel(in)) {
          stack.emplace_back(in, 0);
        } else {
          assign(in, false);
        }
        continue;
      }
      assign(id, true);
      auto& ins = g.inputs.back();
      ins.reserve(n.inputs.size());
      for (NodeId in : n.inputs) ins.push_back(static_cast<EntryIndex>(canon[in]));
      stack.pop_back();
    }
  }

  auto& enc = g.encoding;
  enc.reserve(g.node_of.size() * 8 + 2);
  enc.push_back(options.batching ? 1 : 0);
  enc.push_back(options.force_stack ? 1 : 0);
  for (std::size_t e = 0; e < g.node_of.size(); ++e) {
    const OpNode& n = scope.node(g.node_of[e]);
    if (!g.is_kernel[e]) {
      if (n.kind == OpKind::kParameter) {
        enc.push_back(kParamTag);
        enc.push_back(n.param_uid);
      } else {
        enc.push_back(kDataTag);
        enc.push_back(n.shape.size());
        enc.insert(enc.end(), n.shape.begin(), n.shape.end());
      }
      continue;
    }
    enc.push_back(kKernelTag);
    enc.push_back(static_cast<std::uint64_t>(n.kind));
    enc.push_back(n.attrs.size());
    for (auto a : n.attrs) enc.push_back(static_cast<std::uint64_t>(a));
    enc.push_back(n.depth);
    enc.push_back(g.inputs[e].size());
    enc.insert(enc.end(), g.inputs[e].begin(), g.inputs[e].end());
  }
  std::uint64_t h = 0xca11;
  for (auto w : enc) h = hash_combine(h, w);
  g.structural_hash = h;

  for (const auto& slot : scope.pending().slots()) {
    if (slot.depth == 0) continue;
    std::vector<EntryIndex> members;
    members.reserve(slot.nodes.size());
    for (NodeId id : slot.nodes) members.push_back(static_cast<EntryIndex>(canon[id]));
    g.slots.push_back(std::move(members));
  }
  return g;
}

BatchPlan build_plan(const WaveGraph& graph, const BatchingScope& scope,
                     const PlanOptions& options) {
  std::vector<std::vector<EntryIndex>> groups;
  for (const auto& slot : graph.slots) {
    std::vector<EntryIndex> members = slot;
    std::sort(members.begin(), members.end());
    if (options.batching) {
      groups.push_back(std::move(members));
    } else {
      for (EntryIndex e : members) groups.push_back({e});
    }
  }
  auto depth_of = [&](EntryIndex e) { return scope.node(graph.node_of[e]).depth; };
  std::sort(groups.begin(), groups.end(), [&](const auto& a, const auto& b) {
    const std::size_t da = depth_of(a[0]), db = depth_of(b[0]);
    return da != db ? da < db : a[0] < b[0];
  });

  BatchPlan plan;
  plan.structural_hash = graph.structural_hash;
  plan.num_entries = graph.node_of.size();
  plan.steps.reserve(groups.size());
  for (auto& group : groups) {
    const OpNode& head = scope.node(graph.node_of[group[0]]);
    PlanStep step;
    step.depth = head.depth;
    step.kind = head.kind;
    step.attrs = head.attrs;
    const std::size_t arity = graph.inputs[group[0]].size();
    step.gather.resize(arity);
    for (std::size_t p = 0; p < arity; ++p) {
      PlanOperand& op = step.gather[p];
      const EntryIndex first = graph.inputs[group[0]][p];
      bool shared = true;
      for (EntryIndex e : group) shared = shared && graph.inputs[e][p] == first;
      if (shared && (group.size() == 1 || !options.force_stack)) {
        op.broadcast = true;
        op.sources = {first};
      } else {
        op.sources.reserve(group.size());
        for (EntryIndex e : group) op.sources.push_back(graph.inputs[e][p]);
      }
    }
    step.group = std::move(group);
    plan.steps.push_back(std::move(step));
  }
  return plan;
}

void execute_plan(const BatchPlan& plan, const WaveGraph& graph,
                  BatchingScope& scope) {
  if (plan.num_entries != graph.node_of.size()) {
    throw ExecutionError("plan covers " + std::to_string(plan.num_entries) +
                         " entries, wave has " +
                         std::to_string(graph.node_of.size()));
  }
  std::vector<Tensor> values(graph.node_of.size());
  for (std::size_t e = 0; e < graph.node_of.size(); ++e) {
    if (!graph.is_kernel[e]) values[e] = scope.result(graph.node_of[e]);
  }

  std::vector<Tensor> operands;
  std::vector<Tensor> parts;
  for (std::size_t s = 0; s < plan.steps.size(); ++s) {
    const PlanStep& step = plan.steps[s];
    try {
      operands.clear();
      const std::size_t batch = step.group.size();
      bool any_stacked = false;
      for (const PlanOperand& op : step.gather) any_stacked |= !op.broadcast;
      if (!any_stacked) {
        for (const PlanOperand& op : step.gather) operands.push_back(values[op.sources[0]]);
        Tensor out = run_op(step.kind, step.attrs, operands);
        for (EntryIndex e : step.group) values[e] = out;
        continue;
      }
      BatchLayout layout{batch, std::vector<bool>(step.gather.size(), false)};
      for (std::size_t p = 0; p < step.gather.size(); ++p) {
        const PlanOperand& op = step.gather[p];
        if (op.broadcast) {
          operands.push_back(values[op.sources[0]]);
          continue;
        }
        parts.clear();
        for (EntryIndex src : op.sources) parts.push_back(values[src]);
        // Outputs of an earlier step consumed in the same order need no copy.
        bool contiguous = false;
        Tensor joined = contiguous_stack(parts, &contiguous);
        operands.push_back(contiguous ? std::move(joined) : stack(parts));
        layout.stacked[p] = true;
      }
      Tensor out = run_op(step.kind, step.attrs, operands, layout);
      std::vector<Tensor> slices = unstack(out);
      for (std::size_t i = 0; i < batch; ++i) values[step.group[i]] = std::move(slices[i]);
    } catch (const std::exception& e) {
      std::ostringstream os;
      os << "step " << s << " (" << describe_op(step.kind, step.attrs)
         << ") failed for node(s)";
      for (std::size_t i = 0; i < step.group.size() && i < 8; ++i) {
        os << ' ' << graph.node_of[step.group[i]];
      }
      if (step.group.size() > 8) os << " ...";
      os << ": " << e.what();
      throw ExecutionError(os.str());
    }
  }

  std::vector<NodeId> ids;
  std::vector<Tensor> out;
  for (std::size_t e = 0; e < graph.node_of.size(); ++e) {
    if (!graph.is_kernel[e]) continue;
    ids.push_back(graph.node_of[e]);
    out.push_back(std::move(values[e]));
  }
  store_results(scope, ids, out);
}

std::string dump_plan(const BatchPlan& plan) {
  std::ostringstream os;
  char hash[24];
  std::snprintf(hash, sizeof(hash), "%016llx",
                static_cast<unsigned long long>(plan.structural_hash));
  os << "plan " << hash << " steps=" << plan.steps.size()
     << " entries=" << plan.num_entries << '\n';
  for (std::size_t i = 0; i < plan.steps.size(); ++i) {
    const PlanStep& s = plan.steps[i];
    os << "  #" << i << " depth=" << s.depth << ' '
       << describe_op(s.kind, s.attrs) << " group=" << s.group.size()
       << " operands=[";
    for (std::size_t p = 0; p < s.gather.size(); ++p) {
      if (p) os << ',';
      os << (s.gather[p].broadcast ? "shared" : "stack");
    }
    os << "]\n";
  }
  return os.str();
}

std::shared_ptr<const BatchPlan> PlanCache::lookup_or_build(
    const WaveGraph& graph, const BatchingScope& scope,
    const PlanOptions& options, bool* hit) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = entries_.find(graph.structural_hash);
    if (it != entries_.end()) {
      for (const Entry& e : it->second) {
        if (e.encoding == graph.encoding) {
          ++stats_.hits;
          if (hit) *hit = true;
          return e.plan;
        }
      }
    }
  }
  auto plan = std::make_shared<const BatchPlan>(build_plan(graph, scope, options));
  std::lock_guard<std::mutex> lock(mu_);
  ++stats_.misses;
  ++stats_.builds;
  auto& bucket = entries_[graph.structural_hash];
  for (Entry& e : bucket) {
    if (e.encoding == graph.encoding) {
      e.plan = plan;  // an equivalent plan raced in; last writer wins
      if (hit) *hit = false;
      return plan;
    }
  }
  bucket.push_back(Entry{graph.encoding, plan});
  ++stats_.entries;
  if (hit) *hit = false;
  return plan;
}

PlanCacheStats PlanCache::stats() const {
  std::lock_guard<std::mutex> lock(mu_);
  return stats_;
}

void PlanCache::clear() {
  std::lock_guard<std::mutex> lock(mu_);
  entries_.clear();
  stats_ = {};
}

void run_wave(BatchingScope& scope, bool* cache_hit, std::string* plan_dump) {
  const PlanOptions options{scope.options().batching, scope.options().force_stack};
  const WaveGraph graph = canonicalize(scope, options);
  std::shared_ptr<const BatchPlan> plan;
  if (scope.options().cache != nullptr) {
    plan = scope.options().cache->lookup_or_build(graph, scope, options, cache_hit);
  } else {
    plan = std::make_shared<const BatchPlan>(build_plan(graph, scope, options));
    if (cache_hit) *cache_hit = false;
  }
  if (plan_dump) *plan_dump = dump_plan(*plan);
  execute_plan(*plan, graph, scope);
}

}  // namespace jitbatch
