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

#include "jitbatch/fold_sim.h"

#include <algorithm>
#include <iomanip>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace jitbatch {

const char* granularity_name(Granularity g) {
  return g == Granularity::kKernel ? "kernel" : "subgraph";
}

Granularity parse_granularity(const std::string& name) {
  if (name == "kernel") return Granularity::kKernel;
  if (name == "subgraph") return Granularity::kSubgraph;
  throw std::invalid_argument("unknown granularity '" + name + "'");
}

namespace {

int max_token(const TreeNode& t) {
  int m = t.token;
  for (const TreeNode& c : t.children) m = std::max(m, max_token(c));
  return m;
}

// Returns the node's height; records (height, arity) for it and its subtree.
std::size_t collect_cells(const TreeNode& t,
                          std::vector<std::pair<std::size_t, std::size_t>>& out) {
  std::size_t h = 0;
  for (const TreeNode& c : t.children) h = std::max(h, collect_cells(c, out) + 1);
  out.emplace_back(h, t.arity());
  return h;
}

void simulate_subgraph_chunk(std::span<const TreeNode> chunk, SimReport& r) {
  std::vector<std::pair<std::size_t, std::size_t>> cells;
  for (const TreeNode& t : chunk) collect_cells(t, cells);
  std::set<std::pair<std::size_t, std::size_t>> slots;
  for (const auto& cell : cells) {
    r.per_depth[cell.first].units += 1;
    if (slots.insert(cell).second) r.per_depth[cell.first].launches += 1;
  }
  r.no_batch_count += cells.size();
  r.batch_count += slots.size();
}

void simulate_kernel_chunk(std::span<const TreeNode> chunk,
                           const TreeLstmParams& params, SimReport& r) {
  auto scope = BatchingScope::open();
  try {
    for (const TreeNode& t : chunk) encode_tree(*scope, t, params);
  } catch (...) {
    scope->abandon();
    throw;
  }
  const DepthTable& table = scope->pending();
  for (const DepthTable::Slot& s : table.slots()) {
    if (s.depth == 0) continue;
    r.per_depth[s.depth].units += s.nodes.size();
    r.per_depth[s.depth].launches += 1;
  }
  r.no_batch_count += table.kernel_node_count();
  r.batch_count += table.kernel_slot_count();
  // Only the counts are needed.
  scope->abandon();
}

}  // namespace

SimReport simulate(std::span<const TreeNode> corpus, Granularity granularity,
                   std::size_t batch_size, const SimOptions& options) {
  if (corpus.empty()) throw std::invalid_argument("simulate: empty corpus");
  if (batch_size == 0) throw std::invalid_argument("simulate: batch size must be positive");
  SimReport r;
  r.granularity = granularity;
  r.batch_size = batch_size;
  r.trees = corpus.size();

  std::optional<TreeLstmParams> params;
  if (granularity == Granularity::kKernel) {
    TreeLstmConfig cfg = options.config;
    int top = -1;
    for (const TreeNode& t : corpus) top = std::max(top, max_token(t));
    cfg.vocab = std::max<std::size_t>(cfg.vocab, static_cast<std::size_t>(top + 1));
    params.emplace(TreeLstmParams::zeros(cfg));
  }
  for (std::size_t begin = 0; begin < corpus.size(); begin += batch_size) {
    const auto chunk =
        corpus.subspan(begin, std::min(batch_size, corpus.size() - begin));
    if (granularity == Granularity::kKernel) {
      simulate_kernel_chunk(chunk, *params, r);
    } else {
      simulate_subgraph_chunk(chunk, r);
    }
    r.chunks += 1;
  }
  r.ratio = r.batch_count == 0 ? 1.0
                               : static_cast<double>(r.no_batch_count) /
                                     static_cast<double>(r.batch_count);
  return r;
}

GranularityComparison compare_granularities(std::span<const TreeNode> corpus,
                                            std::size_t batch_size,
                                            const SimOptions& options) {
  GranularityComparison c;
  c.kernel = simulate(corpus, Granularity::kKernel, batch_size, options);
  c.subgraph = simulate(corpus, Granularity::kSubgraph, batch_size, options);
  c.ratio_of_ratios = c.kernel.ratio / c.subgraph.ratio;
  return c;
}

nlohmann::json to_json(const SimReport& r) {
  nlohmann::json depths = nlohmann::json::array();
  for (const auto& [depth, counts] : r.per_depth) {
    depths.push_back(
        {{"depth", depth}, {"units", counts.units}, {"launches", counts.launches}});
  }
  return {{"granularity", granularity_name(r.granularity)},
          {"batch_size", r.batch_size},
          {"trees", r.trees},
          {"chunks", r.chunks},
          {"no_batch_count", r.no_batch_count},
          {"batch_count", r.batch_count},
          {"ratio", r.ratio},
          {"per_depth", depths}};
}

nlohmann::json to_json(const GranularityComparison& c) {
  return {{"kernel", to_json(c.kernel)},
          {"subgraph", to_json(c.subgraph)},
          {"ratio_of_ratios", c.ratio_of_ratios}};
}

std::string format_table(std::span<const SimReport> reports, bool reference) {
  struct Column {
    std::string title;
    std::string no_batch, batch, ratio;
  };
  std::vector<Column> cols;
  auto fmt_ratio = [](double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(v >= 100 ? 0 : 2) << v << 'x';
    return os.str();
  };
  for (const SimReport& r : reports) {
    cols.push_back({granularity_name(r.granularity),
                    std::to_string(r.no_batch_count),
                    std::to_string(r.batch_count), fmt_ratio(r.ratio)});
  }
  if (reference) {
    cols.push_back({"kernel (ref)", "5018658", "~2650", "1930x"});
    cols.push_back({"subgraph (ref)", "148681", "1081", "137x"});
  }
  std::size_t label_w = std::string("No-batch").size();
  std::vector<std::size_t> widths;
  for (const Column& c : cols) {
    widths.push_back(std::max({c.title.size(), c.no_batch.size(),
                               c.batch.size(), c.ratio.size()}));
  }
  std::ostringstream os;
  auto row = [&](const std::string& label, auto field) {
    os << std::left << std::setw(static_cast<int>(label_w)) << label;
    for (std::size_t i = 0; i < cols.size(); ++i) {
      os << "  " << std::right << std::setw(static_cast<int>(widths[i]))
         << field(cols[i]);
    }
    os << '\n';
  };
  row("", [](const Column& c) { return c.title; });
  row("No-batch", [](const Column& c) { return c.no_batch; });
  row("Batch", [](const Column& c) { return c.batch; });
  row("Ratio", [](const Column& c) { return c.ratio; });
  return os.str();
}

}  // namespace jitbatch
