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

// Acceptance runner: checks each primary criterion at its stated tolerance and
// prints one [PASS]/[FAIL] line per criterion. Exits 1 if any criterion fails.

#include <chrono>
#include <cstdio>
#include <algorithm>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "jitbatch/autodiff.h"
#include "jitbatch/bench.h"
#include "jitbatch/corpus.h"
#include "jitbatch/fold_sim.h"
#include "jitbatch/scheduler.h"
#include "jitbatch/treelstm.h"
#include "test_util.h"

namespace jitbatch {
namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  // Records a failed check; the first few are listed in the detail line.
  void require(bool ok, const std::string& what) {
    if (ok) return;
    if (pass) detail << "failed: ";
    else if (failures_ < 3) detail << "; ";
    if (failures_ < 3) detail << what;
    ++failures_;
    pass = false;
  }

 private:
  int failures_ = 0;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

void randomize_biases(TreeLstmParams& p, std::mt19937_64& rng) {
  for (Parameter& b : p.b) b.set_value(testing::random_tensor(b.value().shape(), rng, -0.5, 0.5));
  p.head_b.set_value(testing::random_tensor({1, 1}, rng, -0.5, 0.5));
}

double max_rel(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, relative_difference(a[i], b[i]));
  return m;
}

std::uint64_t main_launches_at_close(BatchingScope& scope) {
  const LaunchCounts before = KernelCounter::read();
  scope.close();
  return (KernelCounter::read() - before).main();
}

// 1. Batched root states and scores equal the per-instance oracles.
void equivalence(Outcome& o) {
  constexpr double kTol = 1e-9;
  const TreeLstmConfig cfg{50, 8, 4};
  double worst = 0.0;
  std::size_t trees = 0;
  for (std::uint64_t c = 0; c < 20; ++c) {
    std::mt19937_64 rng(1000 + c);
    TreeLstmParams p = TreeLstmParams::init(cfg, c);
    randomize_biases(p, rng);
    std::vector<TreeNode> corpus;
    for (int i = 0; i < 64; ++i) corpus.push_back(testing::random_tree(rng, 6, 4, cfg.vocab));
    auto scope = BatchingScope::open();
    std::vector<CellState> roots;
    for (const TreeNode& t : corpus) roots.push_back(encode_tree(*scope, t, p));
    std::vector<LazyTensor> scores;
    for (std::size_t i = 0; i < corpus.size(); i += 2) {
      scores.push_back(relatedness_head(*scope, roots[i].h, roots[i + 1].h, p));
    }
    scope->close();
    std::vector<testing::RefState> ref;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      ref.push_back(testing::reference_encode(corpus[i], p));
      const EagerState eager = eager_encode(corpus[i], p);
      const double d = std::max({max_rel(roots[i].h.value().data(), ref[i].h),
                                 max_rel(roots[i].h.value().data(), eager.h.data())});
      worst = std::max(worst, d);
      o.require(d <= kTol, "corpus " + std::to_string(c) + " tree " + std::to_string(i) +
                               " deviates " + fmt(d));
      ++trees;
    }
    for (std::size_t k = 0; k < scores.size(); ++k) {
      const double s = scores[k].value()[0];
      const double want = testing::reference_score(ref[2 * k].h, ref[2 * k + 1].h, p);
      const double d = relative_difference(s, want);
      worst = std::max(worst, d);
      o.require(d <= kTol, "corpus " + std::to_string(c) + " score " + std::to_string(k) +
                               " deviates " + fmt(d));
    }
  }
  o.detail << (o.pass ? "" : "; ") << trees << " trees in 20 corpora, max relative deviation "
           << fmt(worst) << " (tolerance 1e-9)";
}

// Summed loss gradients over `pairs`, one scope per `group` pairs.
std::vector<Tensor> loss_gradients(std::span<const TreePair> pairs, TreeLstmParams& params,
                                   std::size_t group) {
  const std::vector<Parameter*> plist = params.all();
  std::vector<std::vector<double>> total;
  for (Parameter* q : plist) total.emplace_back(q->value().size(), 0.0);
  for (std::size_t s = 0; s < pairs.size(); s += group) {
    auto scope = BatchingScope::open();
    std::vector<LazyTensor> losses;
    for (std::size_t i = s; i < std::min(pairs.size(), s + group); ++i) {
      const LazyTensor ha = encode_tree(*scope, pairs[i].a, params).h;
      const LazyTensor hb = encode_tree(*scope, pairs[i].b, params).h;
      losses.push_back(squared_error(*scope, relatedness_head(*scope, ha, hb, params),
                                     relatedness_target(pairs[i].label)));
    }
    std::vector<LazyTensor> leaves;
    for (Parameter* q : plist) leaves.push_back(scope->parameter(*q));
    const auto g = backward(reduce_sum(losses), leaves);
    scope->close();
    for (std::size_t k = 0; k < g.size(); ++k) {
      for (std::size_t j = 0; j < total[k].size(); ++j) total[k][j] += g[k].value()[j];
    }
  }
  std::vector<Tensor> out;
  for (std::size_t k = 0; k < plist.size(); ++k) out.emplace_back(plist[k]->value().shape(), total[k]);
  return out;
}

// 2. Kernel and full-model gradients against central differences.
void gradients(Outcome& o) {
  constexpr double kFdTol = 1e-4;
  constexpr double kBatchTol = 1e-9;
  std::mt19937_64 rng(77);
  double worst_kernel = 0.0;
  std::size_t kernels = 0;
  for (const testing::KernelCase& c : testing::kernel_gradient_cases()) {
    std::vector<Tensor> inputs;
    for (const Shape& s : c.shapes) inputs.push_back(testing::random_tensor(s, rng, c.lo, c.hi));
    for (bool as_params : {false, true}) {
      const auto r = testing::check_gradients(c.f, inputs, as_params);
      worst_kernel = std::max(worst_kernel, r.max_rel_err);
      o.require(r.max_rel_err < kFdTol && r.checked > 0,
                c.name + " gradient error " + fmt(r.max_rel_err));
    }
    ++kernels;
  }

  const TreeLstmConfig cfg{12, 8, 4};
  TreeLstmParams params = TreeLstmParams::init(cfg, 9);
  randomize_biases(params, rng);
  std::vector<TreePair> pairs;
  for (int i = 0; i < 6; ++i) {
    pairs.push_back({testing::random_tree(rng, 3, 4, cfg.vocab),
                     testing::random_tree(rng, 3, 4, cfg.vocab), 1.0 + 0.7 * i});
  }
  const std::vector<Tensor> batched = loss_gradients(pairs, params, pairs.size());
  const std::vector<Tensor> single = loss_gradients(pairs, params, 1);
  const std::vector<Parameter*> plist = params.all();
  const double h = 1e-5;
  double worst_model = 0.0, worst_batch = 0.0;
  std::size_t elements = 0;
  for (std::size_t k = 0; k < plist.size(); ++k) {
    const Tensor orig = plist[k]->value();
    for (std::size_t j = 0; j < orig.size(); ++j) {
      std::vector<double> v = orig.to_vector();
      v[j] = orig[j] + h;
      plist[k]->set_value(Tensor(orig.shape(), v));
      const double up = eager_loss(pairs, params);
      v[j] = orig[j] - h;
      plist[k]->set_value(Tensor(orig.shape(), v));
      const double down = eager_loss(pairs, params);
      plist[k]->set_value(orig);
      const double err = testing::rel_err(batched[k][j], (up - down) / (2 * h), 1e-6);
      worst_model = std::max(worst_model, err);
      o.require(err < kFdTol, plist[k]->name() + "[" + std::to_string(j) + "] error " + fmt(err));
      ++elements;
    }
    const double d = testing::max_rel_err(batched[k].data(), single[k].data(), 1e-12);
    worst_batch = std::max(worst_batch, d);
    o.require(d <= kBatchTol, plist[k]->name() + " batched vs per-instance " + fmt(d));
  }
  o.detail << (o.pass ? "" : "; ") << kernels << " kernel cases max " << fmt(worst_kernel)
           << ", Tree-LSTM loss " << elements << " elements max " << fmt(worst_model)
           << " (tolerance 1e-4), batched vs per-instance max " << fmt(worst_batch)
           << " (tolerance 1e-9)";
}

// 3. Launch-count laws.
void launch_laws(Outcome& o) {
  const TreeLstmConfig cfg{30, 8, 4};
  const TreeLstmParams params = TreeLstmParams::init(cfg, 4);
  std::mt19937_64 rng(5);

  // (a) B structurally identical trees cost one tree's main launches.
  std::size_t shapes = 0;
  for (int s = 0; s < 6; ++s) {
    const TreeNode shape = testing::random_tree(rng, 4, 3, cfg.vocab);
    std::vector<std::uint64_t> counts;
    for (std::size_t b : {1u, 8u, 64u}) {
      auto scope = BatchingScope::open();
      for (std::size_t i = 0; i < b; ++i) {
        // Same structure, different tokens.
        CorpusRecord r = tree_to_record(shape);
        for (int& t : r.tokens) t = static_cast<int>((t + i) % cfg.vocab);
        encode_tree(*scope, record_to_tree(r), params);
      }
      counts.push_back(main_launches_at_close(*scope));
    }
    o.require(counts[0] == counts[1] && counts[0] == counts[2],
              "(a) shape " + std::to_string(s) + ": " + std::to_string(counts[0]) + "/" +
                  std::to_string(counts[1]) + "/" + std::to_string(counts[2]));
    ++shapes;
  }

  // (b) main launches == non-empty (depth, signature) slots, forward and
  // forward + backward, over random corpora.
  std::size_t scopes = 0;
  for (int c = 0; c < 8; ++c) {
    for (bool with_backward : {false, true}) {
      auto scope = BatchingScope::open();
      std::vector<LazyTensor> losses;
      for (int i = 0; i < 8; ++i) {
        const LazyTensor ha = encode_tree(*scope, testing::random_tree(rng, 4, 4, cfg.vocab), params).h;
        const LazyTensor hb = encode_tree(*scope, testing::random_tree(rng, 4, 4, cfg.vocab), params).h;
        losses.push_back(squared_error(*scope, relatedness_head(*scope, ha, hb, params), 0.5));
      }
      if (with_backward) {
        std::vector<LazyTensor> leaves;
        for (const Parameter* q : params.all()) leaves.push_back(scope->parameter(*q));
        backward(reduce_sum(losses), leaves);
      }
      const std::size_t slots = scope->pending().kernel_slot_count();
      const std::uint64_t launches = main_launches_at_close(*scope);
      o.require(launches == slots, "(b) corpus " + std::to_string(c) + ": " +
                                       std::to_string(launches) + " launches vs " +
                                       std::to_string(slots) + " slots");
      ++scopes;
    }
  }

  // (c) B identical chains of dependent adds batch B-fold.
  for (std::size_t b : {1u, 8u, 64u}) {
    for (std::size_t length : {1u, 5u, 20u}) {
      auto scope = BatchingScope::open();
      const LazyTensor step = scope->constant(Tensor::filled({1, 4}, 0.5));
      for (std::size_t i = 0; i < b; ++i) {
        LazyTensor x = scope->constant(Tensor::filled({1, 4}, static_cast<double>(i)));
        for (std::size_t l = 0; l < length; ++l) x = add(x, step);
      }
      const std::uint64_t launches = main_launches_at_close(*scope);
      const std::size_t nodes = scope->stats().kernel_nodes;
      o.require(nodes == b * length && nodes == b * launches,
                "(c) B=" + std::to_string(b) + " L=" + std::to_string(length) + ": " +
                    std::to_string(nodes) + " nodes / " + std::to_string(launches) +
                    " launches");
    }
  }
  o.detail << (o.pass ? "" : "; ") << "(a) " << shapes << " tree shapes at B=1,8,64; (b) "
           << scopes << " scopes; (c) chains at B=1,8,64 give ratio exactly B";
}

bool has_cross_arity_depth(std::span<const TreeNode> corpus) {
  std::map<std::size_t, std::set<std::size_t>> arities;
  std::function<std::size_t(const TreeNode&)> walk = [&](const TreeNode& t) {
    std::size_t h = 0;
    for (const TreeNode& c : t.children) h = std::max(h, walk(c) + 1);
    arities[h].insert(t.arity());
    return h;
  };
  for (const TreeNode& t : corpus) walk(t);
  for (const auto& [h, a] : arities) {
    if (a.size() >= 2) return true;
  }
  return false;
}

// 4. Kernel-level batching beats subgraph-level batching on mixed arities.
void granularity(Outcome& o) {
  std::vector<std::vector<TreeNode>> corpora;
  {
    std::vector<TreeNode> mixed;
    for (int i = 0; i < 128; ++i) {
      mixed.push_back(testing::full_tree(2, 2, i % 16));
      mixed.push_back(testing::full_tree(2, 3, i % 16));
    }
    corpora.push_back(std::move(mixed));
  }
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    GenOptions g;
    g.trees = 256;
    g.seed = seed;
    g.max_arity = 4;
    g.max_depth = 4;
    g.dist = ArityDist::kUniform;
    corpora.push_back(corpus_trees(generate_corpus(g)));
  }
  double min_gap = 1e300;
  for (std::size_t c = 0; c < corpora.size(); ++c) {
    o.require(has_cross_arity_depth(corpora[c]),
              "corpus " + std::to_string(c) + " lacks two arities at one depth");
    const GranularityComparison cmp = compare_granularities(corpora[c], 256);
    min_gap = std::min(min_gap, cmp.ratio_of_ratios);
    o.require(cmp.kernel.ratio > cmp.subgraph.ratio,
              "corpus " + std::to_string(c) + ": kernel " + fmt(cmp.kernel.ratio) +
                  " vs subgraph " + fmt(cmp.subgraph.ratio));
  }

  GenOptions sick;
  sick.trees = 4500;
  sick.max_arity = 9;
  sick.max_depth = 8;
  sick.seed = 1;
  sick.dist = ArityDist::kSickLike;
  const std::vector<TreeNode> corpus = corpus_trees(generate_corpus(sick));
  const GranularityComparison cmp = compare_granularities(corpus, 256);
  o.require(cmp.ratio_of_ratios > 2.0,
            "SICK-like gap " + fmt(cmp.ratio_of_ratios) + " not above 2");
  o.detail << (o.pass ? "" : "; ") << corpora.size()
           << " mixed-arity corpora, smallest kernel/subgraph gap " << fmt(min_gap)
           << "; SICK-like 4500 trees: kernel " << cmp.kernel.no_batch_count << "/"
           << cmp.kernel.batch_count << " = " << fmt(cmp.kernel.ratio) << "x, subgraph "
           << cmp.subgraph.no_batch_count << "/" << cmp.subgraph.batch_count << " = "
           << fmt(cmp.subgraph.ratio) << "x, gap " << fmt(cmp.ratio_of_ratios)
           << "x (needs > 2)";
}

// 5. Re-recording a chunk reuses its plan; an altered chunk does not.
void plan_cache(Outcome& o) {
  const TreeLstmConfig cfg{30, 8, 4};
  const TreeLstmParams params = TreeLstmParams::init(cfg, 6);
  std::mt19937_64 rng(8);
  std::vector<TreeNode> chunk;
  for (int i = 0; i < 32; ++i) chunk.push_back(testing::random_tree(rng, 4, 3, cfg.vocab));
  PlanCache cache;
  ScopeOptions sopt;
  sopt.cache = &cache;
  auto run = [&](const std::vector<TreeNode>& trees) {
    auto scope = BatchingScope::open(sopt);
    std::vector<LazyTensor> roots;
    for (const TreeNode& t : trees) roots.push_back(encode_tree(*scope, t, params).h);
    scope->close();
    double dev = 0.0;
    for (std::size_t i = 0; i < trees.size(); ++i) {
      dev = std::max(dev, max_relative_difference(roots[i].value(), eager_encode(trees[i], params).h));
    }
    return std::make_pair(scope->stats(), dev);
  };
  const auto [first, dev1] = run(chunk);
  const PlanCacheStats after_first = cache.stats();
  const auto [second, dev2] = run(chunk);
  const PlanCacheStats after_second = cache.stats();
  std::vector<TreeNode> altered = chunk;
  altered[5].children.push_back(TreeNode{1, {}});
  const auto [third, dev3] = run(altered);
  const PlanCacheStats after_third = cache.stats();
  o.require(first.cache_misses == 1 && first.cache_hits == 0, "first recording was not a miss");
  o.require(second.cache_hits == 1 && second.cache_misses == 0, "repeat was not a hit");
  o.require(after_second.builds == after_first.builds, "repeat rebuilt its plan");
  o.require(third.cache_misses == 1 && third.cache_hits == 0, "altered chunk did not miss");
  o.require(after_third.builds == after_first.builds + 1, "altered chunk was not rebuilt");
  o.require(std::max({dev1, dev2, dev3}) <= 1e-9, "cached plan changed results");
  o.detail << (o.pass ? "" : "; ") << "repeat: hit, plan builds " << after_first.builds << " -> "
           << after_second.builds << "; altered: miss, builds " << after_third.builds
           << "; outputs within " << fmt(std::max({dev1, dev2, dev3}));
}

// 6. Throughput on the SICK-like corpus at batch size 256 (soft gate).
void throughput(Outcome& o) {
  GenOptions g;
  g.trees = 4500;
  g.max_arity = 9;
  g.max_depth = 8;
  g.vocab = 2000;
  g.seed = 1;
  g.dist = ArityDist::kSickLike;
  const std::vector<TreePair> pairs = corpus_pairs(generate_corpus(g));
  BenchOptions opt;
  opt.batch_size = 256;
  opt.config = {g.vocab, 300, 150};
  const BenchReport per = run_bench(pairs, BenchMethod::kPerInstance, opt);
  const BenchReport jit = run_bench(pairs, BenchMethod::kJit, opt);
  const double speedup = jit.samples_per_sec / per.samples_per_sec;
  const double reduction = static_cast<double>(per.main_launches) / jit.main_launches;
  o.require(speedup >= 2.0, "speedup " + fmt(speedup) + "x below 2x");
  o.require(reduction >= 50.0, "launch reduction " + fmt(reduction) + "x below 50x");
  o.require(std::max(per.max_deviation, jit.max_deviation) <= 1e-9, "outputs deviate");
  o.detail << (o.pass ? "" : "; ") << pairs.size() << " pairs, d_in 300, d_h 150: per-instance "
           << fmt(per.samples_per_sec) << " samples/s, jit " << fmt(jit.samples_per_sec)
           << " samples/s, speedup " << fmt(speedup) << "x (needs >= 2); main launches "
           << per.main_launches << " -> " << jit.main_launches << ", reduction "
           << fmt(reduction) << "x (needs >= 50)";
}

// 7. A mid-scope value is correct and later recordings still batch.
void mid_scope(Outcome& o) {
  const TreeLstmConfig cfg{30, 8, 4};
  const TreeLstmParams params = TreeLstmParams::init(cfg, 7);
  const TreeNode shape = testing::full_tree(3, 2);
  auto variant = [&](int i) {
    CorpusRecord r = tree_to_record(shape);
    for (int& t : r.tokens) t = (t + 3 * i + 1) % static_cast<int>(cfg.vocab);
    return record_to_tree(r);
  };
  std::uint64_t one_tree = 0;
  {
    auto scope = BatchingScope::open();
    encode_tree(*scope, variant(0), params);
    one_tree = main_launches_at_close(*scope);
  }
  auto scope = BatchingScope::open();
  std::vector<TreeNode> trees;
  std::vector<LazyTensor> roots;
  for (int i = 0; i < 8; ++i) {
    trees.push_back(variant(i));
    roots.push_back(encode_tree(*scope, trees.back(), params).h);
  }
  LaunchCounts before = KernelCounter::read();
  const Tensor mid = roots[3].value();
  const std::uint64_t first_wave = (KernelCounter::read() - before).main();
  const double mid_dev = max_rel(mid.data(), testing::reference_encode(trees[3], params).h);
  for (int i = 8; i < 16; ++i) {
    trees.push_back(variant(i));
    roots.push_back(encode_tree(*scope, trees.back(), params).h);
  }
  const std::size_t pending_slots = scope->pending().kernel_slot_count();
  const std::uint64_t second_wave = main_launches_at_close(*scope);
  double dev = mid_dev;
  for (std::size_t i = 0; i < trees.size(); ++i) {
    dev = std::max(dev, max_rel(roots[i].value().data(),
                                testing::reference_encode(trees[i], params).h));
  }
  o.require(mid_dev <= 1e-9, "mid-scope value deviates " + fmt(mid_dev));
  o.require(first_wave == one_tree, "first wave used " + std::to_string(first_wave) +
                                        " launches, one tree uses " + std::to_string(one_tree));
  o.require(second_wave == one_tree && second_wave == pending_slots,
            "later recordings used " + std::to_string(second_wave) + " launches");
  o.require(scope->stats().waves == 2, "expected two waves");
  o.require(dev <= 1e-9, "final values deviate " + fmt(dev));
  o.detail << (o.pass ? "" : "; ") << "8 trees, mid-scope read, 8 more trees: waves of "
           << first_wave << " and " << second_wave << " main launches (one tree: " << one_tree
           << "), max deviation " << fmt(dev);
}

}  // namespace
}  // namespace jitbatch

int main() {
  using jitbatch::Outcome;
  struct Criterion {
    const char* name;
    void (*run)(Outcome&);
  };
  const Criterion criteria[] = {
      {"equivalence", jitbatch::equivalence},
      {"gradients", jitbatch::gradients},
      {"launch-count laws", jitbatch::launch_laws},
      {"granularity", jitbatch::granularity},
      {"plan cache", jitbatch::plan_cache},
      {"throughput (soft gate)", jitbatch::throughput},
      {"mid-scope materialization", jitbatch::mid_scope},
  };
  int failed = 0;
  for (const Criterion& c : criteria) {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", c.name,
                o.detail.str().c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(std::size(criteria)) - failed,
              std::size(criteria));
  return failed == 0 ? 0 : 1;
}
