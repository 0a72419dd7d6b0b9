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

// Relatedness benchmark: per-instance vs JIT-batched execution of the
// Tree-LSTM pipeline, checked against the eager reference.
//
// Both methods use the same runtime. per-instance opens one batching scope per
// sentence pair; jit opens one scope per chunk of batch_size pairs. In train
// mode each scope also records the loss gradient, and SGD is applied once per
// batch_size pairs with the summed gradient, so both methods follow the same
// parameter trajectory.

#ifndef JITBATCH_BENCH_H_
#define JITBATCH_BENCH_H_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "jitbatch/treelstm.h"

namespace jitbatch {

enum class BenchMode { kInfer, kTrain };
enum class BenchMethod { kPerInstance, kJit };

const char* bench_mode_name(BenchMode m);
const char* bench_method_name(BenchMethod m);
BenchMode parse_bench_mode(const std::string& name);
BenchMethod parse_bench_method(const std::string& name);

struct BenchOptions {
  BenchMode mode = BenchMode::kInfer;
  std::size_t batch_size = 256;
  TreeLstmConfig config;
  std::uint64_t seed = 1;
  double learning_rate = 0.05;
  bool plan_cache = true;
  // When set, receives the plan of the first flushed wave.
  std::string* plan_dump = nullptr;
};

struct BenchReport {
  BenchMethod method = BenchMethod::kJit;
  BenchMode mode = BenchMode::kInfer;
  std::size_t samples = 0;
  std::size_t batch_size = 0;
  double seconds = 0.0;
  double samples_per_sec = 0.0;
  std::uint64_t main_launches = 0;
  std::uint64_t overhead_launches = 0;
  std::uint64_t kernel_nodes = 0;
  // kernel_nodes / main_launches
  double batching_ratio = 1.0;
  // Largest element-wise relative difference between the run's scores and
  // root states and the eager reference.
  double max_deviation = 0.0;
  std::size_t cache_hits = 0;
  std::size_t cache_misses = 0;
  // Mean squared error over the last update's samples (train mode).
  double last_loss = 0.0;
  // Final parameter values (train mode).
  std::vector<Tensor> final_params;
};

// Throws std::invalid_argument on an empty sample list or batch_size == 0.
BenchReport run_bench(std::span<const TreePair> samples, BenchMethod method,
                      const BenchOptions& options);

// |a - b| / max(|a|, |b|), 0 when a == b.
double relative_difference(double a, double b);
// Element-wise maximum of relative_difference. Throws ShapeError when shapes
// differ.
double max_relative_difference(const Tensor& a, const Tensor& b);

nlohmann::json to_json(const BenchReport& report);

}  // namespace jitbatch

#endif  // JITBATCH_BENCH_H_
