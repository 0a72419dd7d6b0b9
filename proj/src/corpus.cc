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

#include "jitbatch/corpus.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"

namespace jitbatch {

namespace {

void fill_record(const TreeNode& t, int parent, CorpusRecord& r) {
  const int id = static_cast<int>(r.tokens.size());
  r.tokens.push_back(t.token);
  r.parents.push_back(parent);
  for (const TreeNode& c : t.children) fill_record(c, id, r);
}

TreeNode build(int id, const std::vector<std::vector<int>>& children,
               const std::vector<int>& tokens) {
  TreeNode t;
  t.token = tokens[id];
  t.children.reserve(children[id].size());
  for (int c : children[id]) t.children.push_back(build(c, children, tokens));
  return t;
}

std::vector<int> int_array(const nlohmann::json& j, const char* field) {
  auto it = j.find(field);
  if (it == j.end()) {
    throw DataError(std::string("missing field '") + field + "'");
  }
  if (!it->is_array()) {
    throw DataError(std::string("field '") + field + "' is not an array");
  }
  std::vector<int> out;
  out.reserve(it->size());
  for (const auto& v : *it) {
    if (!v.is_number_integer()) {
      throw DataError(std::string("field '") + field +
                      "' holds a non-integer value " + v.dump());
    }
    out.push_back(v.get<int>());
  }
  return out;
}

}  // namespace

TreeNode record_to_tree(const CorpusRecord& r, std::size_t max_arity) {
  const std::size_t n = r.tokens.size();
  if (n == 0) throw DataError("empty tree");
  if (r.parents.size() != n) {
    throw DataError("tokens has " + std::to_string(n) + " entries but parents has " +
                    std::to_string(r.parents.size()));
  }
  std::vector<std::vector<int>> children(n);
  int root = -1;
  for (std::size_t i = 0; i < n; ++i) {
    if (r.tokens[i] < -1) {
      throw DataError("node " + std::to_string(i) + " has invalid token " +
                      std::to_string(r.tokens[i]));
    }
    const int p = r.parents[i];
    if (p == -1) {
      if (root != -1) {
        throw DataError("nodes " + std::to_string(root) + " and " +
                        std::to_string(i) + " are both roots");
      }
      root = static_cast<int>(i);
    } else if (p < 0 || static_cast<std::size_t>(p) >= n) {
      throw DataError("node " + std::to_string(i) + " has parent " +
                      std::to_string(p) + " outside [0, " + std::to_string(n) + ")");
    } else if (static_cast<std::size_t>(p) == i) {
      throw DataError("node " + std::to_string(i) + " is its own parent");
    } else {
      children[p].push_back(static_cast<int>(i));
    }
  }
  if (root == -1) throw DataError("no root (parent -1)");
  for (std::size_t i = 0; i < n; ++i) {
    if (children[i].size() > max_arity) {
      throw DataError("node " + std::to_string(i) + " has " +
                      std::to_string(children[i].size()) +
                      " children, more than the limit of " +
                      std::to_string(max_arity));
    }
  }
  // Every node must be reachable from the root, otherwise there is a cycle.
  std::vector<int> todo{root};
  std::size_t seen = 0;
  while (!todo.empty()) {
    const int id = todo.back();
    todo.pop_back();
    ++seen;
    todo.insert(todo.end(), children[id].begin(), children[id].end());
  }
  if (seen != n) throw DataError("parent array contains a cycle");
  return build(root, children, r.tokens);
}

CorpusRecord tree_to_record(const TreeNode& tree) {
  CorpusRecord r;
  fill_record(tree, -1, r);
  return r;
}

std::vector<CorpusRecord> read_corpus(std::istream& in, std::size_t max_arity) {
  std::vector<CorpusRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (std::all_of(line.begin(), line.end(),
                    [](unsigned char c) { return std::isspace(c); })) {
      continue;
    }
    try {
      const nlohmann::json j = nlohmann::json::parse(line);
      if (!j.is_object()) throw DataError("record is not a JSON object");
      CorpusRecord r;
      r.tokens = int_array(j, "tokens");
      r.parents = int_array(j, "parents");
      if (auto it = j.find("label"); it != j.end() && !it->is_null()) {
        if (!it->is_number()) throw DataError("field 'label' is not a number");
        r.label = it->get<double>();
      }
      record_to_tree(r, max_arity);
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("line " + std::to_string(lineno) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (in.bad()) throw DataError("read error after line " + std::to_string(lineno));
  return out;
}

std::vector<CorpusRecord> load_corpus(const std::string& path,
                                      std::size_t max_arity) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus '" + path + "'");
  try {
    return read_corpus(in, max_arity);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

void write_corpus(std::ostream& out, const std::vector<CorpusRecord>& records) {
  for (const CorpusRecord& r : records) {
    nlohmann::json j = {{"tokens", r.tokens}, {"parents", r.parents}};
    if (r.label) j["label"] = *r.label;
    out << j.dump() << '\n';
  }
}

std::vector<TreeNode> corpus_trees(const std::vector<CorpusRecord>& records,
                                   std::size_t max_arity) {
  std::vector<TreeNode> out;
  out.reserve(records.size());
  for (const CorpusRecord& r : records) out.push_back(record_to_tree(r, max_arity));
  return out;
}

std::vector<TreePair> corpus_pairs(const std::vector<CorpusRecord>& records,
                                   std::size_t max_arity) {
  if (records.size() % 2 != 0) {
    throw DataError("corpus has " + std::to_string(records.size()) +
                    " trees; sentence pairs need an even count");
  }
  std::vector<TreePair> out;
  out.reserve(records.size() / 2);
  for (std::size_t i = 0; i < records.size(); i += 2) {
    TreePair p{record_to_tree(records[i], max_arity),
               record_to_tree(records[i + 1], max_arity),
               records[i].label ? records[i].label : records[i + 1].label};
    out.push_back(std::move(p));
  }
  return out;
}

const char* arity_dist_name(ArityDist d) {
  return d == ArityDist::kUniform ? "uniform" : "sick";
}

ArityDist parse_arity_dist(const std::string& name) {
  if (name == "uniform") return ArityDist::kUniform;
  if (name == "sick") return ArityDist::kSickLike;
  throw std::invalid_argument("unknown arity distribution '" + name + "'");
}

namespace {

class TreeGenerator {
 public:
  explicit TreeGenerator(const GenOptions& o) : o_(o), rng_(o.seed) {
    if (o.dist == ArityDist::kSickLike) {
      static const double kWeights[] = {14, 4, 3, 1.5, 0.8, 0.4, 0.2, 0.1, 0.05, 0.025};
      for (std::size_t k = 0; k <= o.max_arity; ++k) {
        weights_.push_back(k < 10 ? kWeights[k] : 0.0);
      }
    } else {
      weights_.assign(o.max_arity + 1, 1.0);
    }
  }

  TreeNode tree() { return node(0); }

  double label() {
    std::uniform_int_distribution<int> tenths(0, 40);
    return 1.0 + tenths(rng_) / 10.0;
  }

 private:
  TreeNode node(std::size_t depth) {
    TreeNode t;
    std::uniform_int_distribution<int> tok(0, static_cast<int>(o_.vocab) - 1);
    t.token = tok(rng_);
    std::size_t arity = 0;
    if (depth < o_.max_depth) {
      std::vector<double> w = weights_;
      // A sentence has more than one word.
      if (depth == 0 && o_.dist == ArityDist::kSickLike && w.size() > 1) w[0] = 0;
      std::discrete_distribution<std::size_t> dist(w.begin(), w.end());
      arity = dist(rng_);
    }
    for (std::size_t i = 0; i < arity; ++i) t.children.push_back(node(depth + 1));
    return t;
  }

  const GenOptions& o_;
  std::mt19937_64 rng_;
  std::vector<double> weights_;
};

}  // namespace

std::vector<CorpusRecord> generate_corpus(const GenOptions& o) {
  if (o.trees == 0 || o.vocab == 0) {
    throw std::invalid_argument("generate_corpus: tree count and vocabulary must be positive");
  }
  TreeGenerator gen(o);
  std::vector<CorpusRecord> out;
  out.reserve(o.trees);
  for (std::size_t i = 0; i < o.trees; ++i) {
    CorpusRecord r = tree_to_record(gen.tree());
    if (o.labels && i % 2 == 0) r.label = gen.label();
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<CorpusRecord> convert_conll(std::istream& in,
                                        std::map<std::string, int>& vocab) {
  std::vector<CorpusRecord> out;
  CorpusRecord cur;
  std::string line;
  std::size_t lineno = 0;
  auto finish = [&] {
    if (!cur.tokens.empty()) {
      try {
        record_to_tree(cur, cur.tokens.size());
      } catch (const DataError& e) {
        throw DataError("sentence ending at line " + std::to_string(lineno) +
                        ": " + e.what());
      }
      out.push_back(std::move(cur));
    }
    cur = CorpusRecord();
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      finish();
      continue;
    }
    if (line[0] == '#') continue;
    std::vector<std::string> cols;
    std::istringstream ls(line);
    for (std::string c; std::getline(ls, c, '\t');) cols.push_back(c);
    if (cols.size() < 7) {
      throw DataError("line " + std::to_string(lineno) + ": expected at least 7 tab-separated columns, got " +
                      std::to_string(cols.size()));
    }
    if (cols[0].find_first_of("-.") != std::string::npos) continue;
    int id = 0, head = 0;
    try {
      id = std::stoi(cols[0]);
      head = std::stoi(cols[6]);
    } catch (const std::exception&) {
      throw DataError("line " + std::to_string(lineno) + ": non-numeric ID or HEAD");
    }
    if (id != static_cast<int>(cur.tokens.size()) + 1) {
      throw DataError("line " + std::to_string(lineno) + ": expected word ID " +
                      std::to_string(cur.tokens.size() + 1) + ", got " + cols[0]);
    }
    std::string form = cols[1];
    std::transform(form.begin(), form.end(), form.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    auto [it, inserted] = vocab.emplace(form, static_cast<int>(vocab.size()));
    cur.tokens.push_back(it->second);
    cur.parents.push_back(head - 1);
  }
  finish();
  return out;
}

}  // namespace jitbatch
