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

// Launch-count simulation of depth-matched batching at two granularities.
//
// The corpus is cut into consecutive chunks of batch_size trees. Within a
// chunk, units with equal (depth, signature) share one launch.
//   kernel:   units are the kernels recorded by encode_tree into a batching
//             scope; depth and signature come from the scope's depth table.
//   subgraph: units are cells; depth is the node's height in its tree and the
//             signature is the cell's arity.

#ifndef JITBATCH_FOLD_SIM_H_
#define JITBATCH_FOLD_SIM_H_

#include <cstdint>
#include <map>
#include <span>
#include <string>

#include "json.hpp"
#include "jitbatch/treelstm.h"

namespace jitbatch {

enum class Granularity { kKernel, kSubgraph };

const char* granularity_name(Granularity g);
// Throws std::invalid_argument on an unknown name.
Granularity parse_granularity(const std::string& name);

struct DepthCounts {
  std::uint64_t units = 0;
  std::uint64_t launches = 0;
};

struct SimReport {
  Granularity granularity = Granularity::kKernel;
  std::size_t batch_size = 0;
  std::size_t trees = 0;
  std::size_t chunks = 0;
  std::uint64_t no_batch_count = 0;
  std::uint64_t batch_count = 0;
  double ratio = 1.0;
  // Summed over chunks.
  std::map<std::size_t, DepthCounts> per_depth;
};

struct SimOptions {
  // Model dimensions used when recording at kernel granularity. The vocabulary
  // is widened to cover the corpus.
  TreeLstmConfig config;
};

// Throws std::invalid_argument on an empty corpus or batch_size == 0.
SimReport simulate(std::span<const TreeNode> corpus, Granularity granularity,
                   std::size_t batch_size, const SimOptions& options = {});

struct GranularityComparison {
  SimReport kernel;
  SimReport subgraph;
  // kernel.ratio / subgraph.ratio
  double ratio_of_ratios = 1.0;
};

GranularityComparison compare_granularities(std::span<const TreeNode> corpus,
                                            std::size_t batch_size,
                                            const SimOptions& options = {});

nlohmann::json to_json(const SimReport& report);
nlohmann::json to_json(const GranularityComparison& cmp);

// Rows No-batch / Batch / Ratio, one column per report. With `reference`,
// published reference figures for the SICK workload are added alongside.
std::string format_table(std::span<const SimReport> reports, bool reference);

}  // namespace jitbatch

#endif  // JITBATCH_FOLD_SIM_H_
