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

// Line-oriented tree corpora.
//
// One JSON object per line:
//   {"tokens": [3, 7, 1], "parents": [-1, 0, 0], "label": 4.2}
// parents[i] is the index of node i's parent (-1 for the root); children are
// ordered by index. "label" is optional. Consecutive lines (2i, 2i+1) form
// one sentence pair for the relatedness model.

#ifndef JITBATCH_CORPUS_H_
#define JITBATCH_CORPUS_H_

#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "jitbatch/treelstm.h"

namespace jitbatch {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CorpusRecord {
  std::vector<int> tokens;
  std::vector<int> parents;
  std::optional<double> label;
};

// Throws DataError unless the parent array encodes one rooted tree with every
// arity <= max_arity and tokens >= -1.
TreeNode record_to_tree(const CorpusRecord& record, std::size_t max_arity = 9);
// Pre-order numbering.
CorpusRecord tree_to_record(const TreeNode& tree);

// Blank lines are skipped. Errors carry the 1-based line number.
std::vector<CorpusRecord> read_corpus(std::istream& in,
                                      std::size_t max_arity = 9);
std::vector<CorpusRecord> load_corpus(const std::string& path,
                                      std::size_t max_arity = 9);
void write_corpus(std::ostream& out, const std::vector<CorpusRecord>& records);

std::vector<TreeNode> corpus_trees(const std::vector<CorpusRecord>& records,
                                   std::size_t max_arity = 9);
// Lines (2i, 2i+1) as pairs; the label is taken from the first line of the
// pair that has one. Throws DataError on an odd record count.
std::vector<TreePair> corpus_pairs(const std::vector<CorpusRecord>& records,
                                   std::size_t max_arity = 9);

enum class ArityDist {
  // Arity drawn uniformly from [0, max_arity].
  kUniform,
  // Skewed towards leaves and small arities, as in dependency parses of short
  // sentences; the root has at least one child.
  kSickLike,
};

const char* arity_dist_name(ArityDist d);
ArityDist parse_arity_dist(const std::string& name);

struct GenOptions {
  std::size_t trees = 100;
  std::size_t max_arity = 4;
  std::size_t max_depth = 6;  // nodes at this depth are leaves
  std::size_t vocab = 64;
  std::uint64_t seed = 1;
  ArityDist dist = ArityDist::kUniform;
  // Gives the first line of every pair a relatedness label in [1, 5].
  bool labels = true;
};

// Deterministic for fixed options.
std::vector<CorpusRecord> generate_corpus(const GenOptions& options);

// Converts CoNLL-U sentences (HEAD column) to records. Word forms are mapped
// to ids through `vocab`, which is extended with unseen forms (lowercased).
// Multiword-token and empty-node lines are skipped.
std::vector<CorpusRecord> convert_conll(std::istream& in,
                                        std::map<std::string, int>& vocab);

}  // namespace jitbatch

#endif  // JITBATCH_CORPUS_H_
