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

#include "jitbatch/bench.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

#include "jitbatch/autodiff.h"
#include "jitbatch/scheduler.h"

namespace jitbatch {

const char* bench_mode_name(BenchMode m) {
  return m == BenchMode::kInfer ? "infer" : "train";
}

const char* bench_method_name(BenchMethod m) {
  return m == BenchMethod::kJit ? "jit" : "per-instance";
}

BenchMode parse_bench_mode(const std::string& name) {
  if (name == "infer") return BenchMode::kInfer;
  if (name == "train") return BenchMode::kTrain;
  throw std::invalid_argument("unknown mode '" + name + "'");
}

BenchMethod parse_bench_method(const std::string& name) {
  if (name == "per-instance") return BenchMethod::kPerInstance;
  if (name == "jit") return BenchMethod::kJit;
  throw std::invalid_argument("unknown method '" + name + "'");
}

double relative_difference(double a, double b) {
  if (a == b) return 0.0;
  return std::abs(a - b) / std::max(std::abs(a), std::abs(b));
}

double max_relative_difference(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("compare: shape " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, relative_difference(a[i], b[i]));
  }
  return m;
}

namespace {

using Clock = std::chrono::steady_clock;

struct SampleOutputs {
  LazyTensor h_a, h_b, score;
};

void add_into(std::vector<double>& acc, const Tensor& g) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
}

}  // namespace

BenchReport run_bench(std::span<const TreePair> samples, BenchMethod method,
                      const BenchOptions& opt) {
  if (samples.empty()) throw std::invalid_argument("run_bench: no samples");
  if (opt.batch_size == 0) {
    throw std::invalid_argument("run_bench: batch size must be positive");
  }
  TreeLstmParams params = TreeLstmParams::init(opt.config, opt.seed);
  const std::vector<Parameter*> plist = params.all();
  const bool train = opt.mode == BenchMode::kTrain;
  const std::size_t scope_size =
      method == BenchMethod::kJit ? opt.batch_size : 1;

  BenchReport rep;
  rep.method = method;
  rep.mode = opt.mode;
  rep.samples = samples.size();
  rep.batch_size = opt.batch_size;

  PlanCache cache;
  ScopeOptions sopt;
  sopt.cache = opt.plan_cache ? &cache : nullptr;
  sopt.plan_dump = opt.plan_dump;

  Clock::duration busy{};
  std::vector<std::vector<double>> grad_sum;

  for (std::size_t u = 0; u < samples.size(); u += opt.batch_size) {
    const auto update = samples.subspan(u, std::min(opt.batch_size, samples.size() - u));
    std::vector<Tensor> h_a(update.size()), h_b(update.size()), score(update.size());
    grad_sum.assign(plist.size(), {});
    for (std::size_t k = 0; k < plist.size(); ++k) {
      grad_sum[k].assign(plist[k]->value().size(), 0.0);
    }

    for (std::size_t s = 0; s < update.size(); s += scope_size) {
      const std::size_t n = std::min(scope_size, update.size() - s);
      const LaunchCounts before = KernelCounter::read();
      const auto t0 = Clock::now();
      auto scope = BatchingScope::open(sopt);
      std::vector<SampleOutputs> outs(n);
      std::vector<LazyTensor> grads;
      try {
        std::vector<LazyTensor> losses;
        for (std::size_t i = 0; i < n; ++i) {
          const TreePair& p = update[s + i];
          outs[i].h_a = encode_tree(*scope, p.a, params).h;
          outs[i].h_b = encode_tree(*scope, p.b, params).h;
          outs[i].score = relatedness_head(*scope, outs[i].h_a, outs[i].h_b, params);
          if (train) {
            losses.push_back(squared_error(*scope, outs[i].score,
                                           relatedness_target(p.label)));
          }
        }
        if (train) {
          const LazyTensor loss = losses.size() == 1 ? losses[0] : reduce_sum(losses);
          std::vector<LazyTensor> leaves;
          for (Parameter* q : plist) leaves.push_back(scope->parameter(*q));
          grads = backward(loss, leaves);
        }
        scope->close();
      } catch (...) {
        if (scope->is_open()) scope->abandon();
        throw;
      }
      for (std::size_t k = 0; k < grads.size(); ++k) {
        add_into(grad_sum[k], grads[k].value());
      }
      busy += Clock::now() - t0;
      const LaunchCounts used = KernelCounter::read() - before;
      rep.main_launches += used.main();
      rep.overhead_launches += used.overhead;
      const ScopeStats st = scope->stats();
      rep.kernel_nodes += st.kernel_nodes;
      rep.cache_hits += st.cache_hits;
      rep.cache_misses += st.cache_misses;
      sopt.plan_dump = nullptr;
      for (std::size_t i = 0; i < n; ++i) {
        h_a[s + i] = outs[i].h_a.value();
        h_b[s + i] = outs[i].h_b.value();
        score[s + i] = outs[i].score.value();
      }
    }

    // Reference check against the parameters the scores were computed with.
    double loss_sum = 0.0;
    for (std::size_t i = 0; i < update.size(); ++i) {
      const EagerState ea = eager_encode(update[i].a, params);
      const EagerState eb = eager_encode(update[i].b, params);
      const Tensor es = eager_head(ea.h, eb.h, params);
      rep.max_deviation = std::max({rep.max_deviation,
                                    max_relative_difference(h_a[i], ea.h),
                                    max_relative_difference(h_b[i], eb.h),
                                    max_relative_difference(score[i], es)});
      const double diff = score[i][0] - relatedness_target(update[i].label);
      loss_sum += diff * diff;
    }
    rep.last_loss = loss_sum / static_cast<double>(update.size());

    if (train) {
      const auto t0 = Clock::now();
      std::vector<Tensor> g;
      for (std::size_t k = 0; k < plist.size(); ++k) {
        g.emplace_back(plist[k]->value().shape(), std::move(grad_sum[k]));
      }
      sgd_step(plist, g, opt.learning_rate);
      busy += Clock::now() - t0;
    }
  }

  rep.seconds = std::chrono::duration<double>(busy).count();
  rep.samples_per_sec =
      rep.seconds > 0 ? static_cast<double>(rep.samples) / rep.seconds : 0.0;
  rep.batching_ratio = rep.main_launches == 0
                           ? 1.0
                           : static_cast<double>(rep.kernel_nodes) /
                                 static_cast<double>(rep.main_launches);
  if (train) {
    for (Parameter* q : plist) rep.final_params.push_back(q->value());
  }
  return rep;
}

nlohmann::json to_json(const BenchReport& r) {
  return {{"method", bench_method_name(r.method)},
          {"mode", bench_mode_name(r.mode)},
          {"samples", r.samples},
          {"batch_size", r.batch_size},
          {"seconds", r.seconds},
          {"samples_per_sec", r.samples_per_sec},
          {"main_launches", r.main_launches},
          {"overhead_launches", r.overhead_launches},
          {"kernel_nodes", r.kernel_nodes},
          {"batching_ratio", r.batching_ratio},
          {"max_deviation", r.max_deviation},
          {"plan_cache", {{"hits", r.cache_hits}, {"misses", r.cache_misses}}},
          {"last_loss", r.last_loss}};
}

}  // namespace jitbatch
