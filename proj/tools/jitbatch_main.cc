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

// jitbatch command-line tool: corpus generation and conversion, per-instance
// vs JIT-batched benchmarks, and batching-granularity simulation.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 equivalence failure.

#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "jitbatch/bench.h"
#include "jitbatch/corpus.h"
#include "jitbatch/fold_sim.h"

namespace {

using jitbatch::DataError;

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitMismatch = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw DataError("write to '" + path + "' failed");
}

struct GenArgs {
  jitbatch::GenOptions opt;
  std::string dist = "sick";
  bool no_labels = false;
  std::string out;
};

int cmd_gen_corpus(GenArgs& a) {
  a.opt.dist = jitbatch::parse_arity_dist(a.dist);
  a.opt.labels = !a.no_labels;
  if (a.opt.trees == 0 || a.opt.vocab == 0) {
    throw UsageError("--trees and --vocab must be positive");
  }
  std::ostringstream os;
  jitbatch::write_corpus(os, jitbatch::generate_corpus(a.opt));
  write_text(a.out, os.str());
  return 0;
}

struct BenchArgs {
  std::string corpus;
  std::size_t batch_size = 256;
  std::string mode = "infer";
  std::string method = "both";
  std::size_t hidden = 150;
  std::size_t input_dim = 300;
  std::size_t max_arity = 9;
  std::uint64_t seed = 1;
  double lr = 0.05;
  double tolerance = 1e-9;
  std::string out;
  bool dump_plan = false;
};

int cmd_bench(const BenchArgs& a) {
  if (a.batch_size == 0 || a.hidden == 0 || a.input_dim == 0) {
    throw UsageError("--batch-size, --hidden and --input-dim must be positive");
  }
  jitbatch::BenchOptions opt;
  opt.mode = jitbatch::parse_bench_mode(a.mode);
  opt.batch_size = a.batch_size;
  opt.seed = a.seed;
  opt.learning_rate = a.lr;
  opt.config.d_h = a.hidden;
  opt.config.d_in = a.input_dim;
  std::vector<jitbatch::BenchMethod> methods;
  if (a.method == "both") {
    methods = {jitbatch::BenchMethod::kPerInstance, jitbatch::BenchMethod::kJit};
  } else {
    methods = {jitbatch::parse_bench_method(a.method)};
  }

  const auto records = jitbatch::load_corpus(a.corpus, a.max_arity);
  const auto pairs = jitbatch::corpus_pairs(records, a.max_arity);
  if (pairs.empty()) throw DataError(a.corpus + ": corpus is empty");
  int top = 0;
  for (const auto& r : records) {
    for (int t : r.tokens) top = std::max(top, t);
  }
  opt.config.vocab = static_cast<std::size_t>(top) + 1;

  nlohmann::json report = {
      {"schema", 1},
      {"command", "bench"},
      {"corpus", a.corpus},
      {"config",
       {{"mode", a.mode},
        {"batch_size", a.batch_size},
        {"hidden", a.hidden},
        {"input_dim", a.input_dim},
        {"vocab", opt.config.vocab},
        {"seed", a.seed},
        {"learning_rate", a.lr},
        {"tolerance", a.tolerance}}},
      {"runs", nlohmann::json::array()}};

  bool ok = true;
  std::vector<jitbatch::BenchReport> runs;
  for (auto m : methods) {
    std::string dump;
    opt.plan_dump = (a.dump_plan && m == jitbatch::BenchMethod::kJit) ? &dump : nullptr;
    runs.push_back(jitbatch::run_bench(pairs, m, opt));
    if (!dump.empty()) std::cerr << dump;
    report["runs"].push_back(jitbatch::to_json(runs.back()));
    if (!(runs.back().max_deviation <= a.tolerance)) ok = false;
  }
  if (runs.size() == 2) {
    const auto& pi = runs[0];
    const auto& jit = runs[1];
    nlohmann::json cmp = {
        {"speedup", pi.samples_per_sec > 0 ? jit.samples_per_sec / pi.samples_per_sec : 0.0},
        {"launch_reduction",
         jit.main_launches > 0 ? static_cast<double>(pi.main_launches) /
                                     static_cast<double>(jit.main_launches)
                               : 0.0}};
    if (opt.mode == jitbatch::BenchMode::kTrain) {
      double dev = 0.0;
      for (std::size_t k = 0; k < pi.final_params.size(); ++k) {
        dev = std::max(dev, jitbatch::max_relative_difference(pi.final_params[k],
                                                              jit.final_params[k]));
      }
      cmp["param_deviation"] = dev;
      if (!(dev <= a.tolerance)) ok = false;
    }
    report["comparison"] = cmp;
  }
  report["equivalent"] = ok;
  write_text(a.out, report.dump(2) + "\n");
  if (!ok) {
    std::cerr << "error: batched results deviate from the reference by more than "
              << a.tolerance << "\n";
    return kExitMismatch;
  }
  return 0;
}

struct SimArgs {
  std::string corpus;
  std::size_t batch_size = 256;
  std::string granularity = "both";
  std::size_t max_arity = 9;
  std::string out;
  bool reference = false;
};

int cmd_simulate(const SimArgs& a) {
  if (a.batch_size == 0) throw UsageError("--batch-size must be positive");
  const auto trees =
      jitbatch::corpus_trees(jitbatch::load_corpus(a.corpus, a.max_arity), a.max_arity);
  if (trees.empty()) throw DataError(a.corpus + ": corpus is empty");
  nlohmann::json report = {{"schema", 1},
                           {"command", "simulate"},
                           {"corpus", a.corpus},
                           {"batch_size", a.batch_size}};
  std::vector<jitbatch::SimReport> reports;
  if (a.granularity == "both") {
    const auto cmp = jitbatch::compare_granularities(trees, a.batch_size);
    reports = {cmp.kernel, cmp.subgraph};
    report["reports"] = {jitbatch::to_json(cmp.kernel), jitbatch::to_json(cmp.subgraph)};
    report["ratio_of_ratios"] = cmp.ratio_of_ratios;
  } else {
    reports = {jitbatch::simulate(trees, jitbatch::parse_granularity(a.granularity),
                                  a.batch_size)};
    report["reports"] = {jitbatch::to_json(reports[0])};
  }
  const std::string table = jitbatch::format_table(reports, a.reference);
  if (a.out.empty() || a.out == "-") {
    std::cout << table << report.dump(2) << "\n";
  } else {
    write_text(a.out, report.dump(2) + "\n");
    std::cout << table;
  }
  return 0;
}

struct ConvertArgs {
  std::string in;
  std::string out;
  std::string vocab_out;
};

int cmd_convert_conll(const ConvertArgs& a) {
  std::ifstream in(a.in);
  if (!in) throw DataError("cannot open '" + a.in + "'");
  std::map<std::string, int> vocab;
  std::vector<jitbatch::CorpusRecord> records;
  try {
    records = jitbatch::convert_conll(in, vocab);
  } catch (const DataError& e) {
    throw DataError(a.in + ": " + e.what());
  }
  std::ostringstream os;
  jitbatch::write_corpus(os, records);
  write_text(a.out, os.str());
  if (!a.vocab_out.empty()) write_text(a.vocab_out, nlohmann::json(vocab).dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"JIT dynamic batching runtime: benchmarks and batching simulation"};
  app.require_subcommand(1);

  GenArgs gen;
  gen.opt.max_arity = 9;
  gen.opt.max_depth = 8;
  auto* g = app.add_subcommand("gen-corpus", "Generate a synthetic tree corpus");
  g->add_option("--trees", gen.opt.trees, "Number of trees")->capture_default_str();
  g->add_option("--max-arity", gen.opt.max_arity, "Largest number of children")
      ->capture_default_str();
  g->add_option("--max-depth", gen.opt.max_depth, "Depth at which nodes become leaves")
      ->capture_default_str();
  g->add_option("--vocab", gen.opt.vocab, "Vocabulary size")->capture_default_str();
  g->add_option("--seed", gen.opt.seed, "Random seed")->capture_default_str();
  g->add_option("--arity-dist", gen.dist, "Arity distribution")
      ->check(CLI::IsMember({"uniform", "sick"}))
      ->capture_default_str();
  g->add_flag("--no-labels", gen.no_labels, "Omit relatedness labels");
  g->add_option("--out", gen.out, "Output path (default: stdout)");

  BenchArgs bench;
  auto* b = app.add_subcommand("bench", "Per-instance vs JIT-batched Tree-LSTM benchmark");
  b->add_option("--corpus", bench.corpus, "Corpus JSONL")->required();
  b->add_option("--batch-size", bench.batch_size, "Pairs per batching scope")
      ->capture_default_str();
  b->add_option("--mode", bench.mode, "infer or train")
      ->check(CLI::IsMember({"infer", "train"}))
      ->capture_default_str();
  b->add_option("--method", bench.method, "per-instance, jit or both")
      ->check(CLI::IsMember({"per-instance", "jit", "both"}))
      ->capture_default_str();
  b->add_option("--hidden", bench.hidden, "Hidden size")->capture_default_str();
  b->add_option("--input-dim", bench.input_dim, "Embedding size")->capture_default_str();
  b->add_option("--max-arity", bench.max_arity, "Arity limit for corpus validation")
      ->capture_default_str();
  b->add_option("--seed", bench.seed, "Parameter initialization seed")->capture_default_str();
  b->add_option("--lr", bench.lr, "SGD learning rate (train mode)")->capture_default_str();
  b->add_option("--tolerance", bench.tolerance,
                "Largest relative deviation from the reference before exit code 3")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  b->add_option("--out", bench.out, "Report path (default: stdout)");
  b->add_flag("--dump-plan", bench.dump_plan, "Print the first batched plan to stderr");

  SimArgs sim;
  auto* s = app.add_subcommand("simulate", "Kernel vs subgraph batching-ratio simulation");
  s->add_option("--corpus", sim.corpus, "Corpus JSONL")->required();
  s->add_option("--batch-size", sim.batch_size, "Trees per batch")->capture_default_str();
  s->add_option("--granularity", sim.granularity, "kernel, subgraph or both")
      ->check(CLI::IsMember({"kernel", "subgraph", "both"}))
      ->capture_default_str();
  s->add_option("--max-arity", sim.max_arity, "Arity limit for corpus validation")
      ->capture_default_str();
  s->add_option("--out", sim.out, "JSON report path (default: stdout)");
  s->add_flag("--reference", sim.reference,
              "Add published SICK reference figures to the table");

  ConvertArgs conv;
  auto* c = app.add_subcommand("convert-conll", "Convert CoNLL-U parses to corpus JSONL");
  c->add_option("--in", conv.in, "CoNLL-U input")->required();
  c->add_option("--out", conv.out, "Output path (default: stdout)");
  c->add_option("--vocab-out", conv.vocab_out, "Write the word -> id map as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (g->parsed()) return cmd_gen_corpus(gen);
    if (b->parsed()) return cmd_bench(bench);
    if (s->parsed()) return cmd_simulate(sim);
    if (c->parsed()) return cmd_convert_conll(conv);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
