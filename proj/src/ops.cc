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

#include "jitbatch/ops.h"

#include <sstream>
#include <stdexcept>

namespace jitbatch {

namespace {

void expect_arity(OpKind kind, std::size_t got, std::size_t want) {
  if (got != want) {
    throw std::invalid_argument(std::string(op_name(kind)) + ": expected " +
                                std::to_string(want) + " input(s), got " +
                                std::to_string(got));
  }
}

void expect_attrs(OpKind kind, const Attrs& attrs, std::size_t want) {
  if (attrs.size() != want) {
    throw std::invalid_argument(std::string(op_name(kind)) + ": expected " +
                                std::to_string(want) + " attribute(s), got " +
                                std::to_string(attrs.size()));
  }
}

EwiseKind ewise_attr(const Attrs& attrs) {
  expect_attrs(OpKind::kEwise, attrs, 1);
  if (attrs[0] < 0 || attrs[0] > static_cast<std::int64_t>(EwiseKind::kSign)) {
    throw std::invalid_argument("ewise: unknown kind " + std::to_string(attrs[0]));
  }
  return static_cast<EwiseKind>(attrs[0]);
}

Shape shape_attr(const Attrs& attrs) {
  Shape s;
  for (auto d : attrs) {
    if (d < 0) throw std::invalid_argument("broadcast: negative extent");
    s.push_back(static_cast<std::size_t>(d));
  }
  return s;
}

void require_equal(const char* op, const Shape& a, const Shape& b) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_to_string(a) + " vs " + shape_to_string(b));
  }
}

}  // namespace

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kConstant: return "constant";
    case OpKind::kParameter: return "parameter";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kEwise: return "ewise";
    case OpKind::kStack: return "stack";
    case OpKind::kSlice: return "slice";
    case OpKind::kReduceSum: return "reduce_sum";
    case OpKind::kSum: return "sum";
    case OpKind::kBroadcast: return "broadcast";
    case OpKind::kGatherRow: return "gather_row";
    case OpKind::kScatterRows: return "scatter_rows";
    case OpKind::kMatmulSum: return "matmul_sum";
  }
  return "?";
}

std::string describe_op(OpKind kind, const Attrs& attrs) {
  std::ostringstream os;
  switch (kind) {
    case OpKind::kEwise:
      os << "ewise." << ewise_name(ewise_attr(attrs));
      return os.str();
    case OpKind::kMatmul:
      os << "matmul[" << (attrs.at(0) ? 'T' : 'N') << ','
         << (attrs.at(1) ? 'T' : 'N') << ']';
      return os.str();
    default:
      break;
  }
  os << op_name(kind);
  if (!attrs.empty()) {
    os << '[';
    for (std::size_t i = 0; i < attrs.size(); ++i) {
      if (i) os << ',';
      os << attrs[i];
    }
    os << ']';
  }
  return os.str();
}

bool is_kernel(OpKind kind) {
  return kind != OpKind::kConstant && kind != OpKind::kParameter;
}

Shape infer_shape(OpKind kind, const Attrs& attrs,
                  std::span<const Shape> in) {
  switch (kind) {
    case OpKind::kConstant:
    case OpKind::kParameter:
      throw std::invalid_argument(std::string(op_name(kind)) +
                                  " is not a kernel");
    case OpKind::kMatmul: {
      expect_arity(kind, in.size(), 2);
      expect_attrs(kind, attrs, 2);
      if (in[0].size() != 2 || in[1].size() != 2) {
        throw ShapeError("matmul: expected matrices, got " +
                         shape_to_string(in[0]) + " x " + shape_to_string(in[1]));
      }
      const bool ta = attrs[0] != 0, tb = attrs[1] != 0;
      const std::size_t m = ta ? in[0][1] : in[0][0];
      const std::size_t k = ta ? in[0][0] : in[0][1];
      const std::size_t k2 = tb ? in[1][1] : in[1][0];
      const std::size_t n = tb ? in[1][0] : in[1][1];
      if (k != k2) {
        throw ShapeError("matmul: shape mismatch " + shape_to_string(in[0]) +
                         (ta ? "^T" : "") + " x " + shape_to_string(in[1]) +
                         (tb ? "^T" : ""));
      }
      return {m, n};
    }
    case OpKind::kEwise: {
      const EwiseKind ek = ewise_attr(attrs);
      expect_arity(kind, in.size(), is_unary(ek) ? 1 : 2);
      if (in.size() == 1 || in[0] == in[1]) return in[0];
      if (in[0].empty()) return in[1];
      if (in[1].empty()) return in[0];
      throw ShapeError(std::string("ewise ") + ewise_name(ek) +
                       ": shape mismatch " + shape_to_string(in[0]) + " vs " +
                       shape_to_string(in[1]));
    }
    case OpKind::kStack: {
      if (in.empty()) throw std::invalid_argument("stack: empty part list");
      for (const Shape& s : in) require_equal("stack", in[0], s);
      Shape out{in.size()};
      out.insert(out.end(), in[0].begin(), in[0].end());
      return out;
    }
    case OpKind::kSlice: {
      expect_arity(kind, in.size(), 1);
      expect_attrs(kind, attrs, 1);
      if (in[0].empty() || attrs[0] < 0 ||
          static_cast<std::size_t>(attrs[0]) >= in[0][0]) {
        throw ShapeError("slice: index " + std::to_string(attrs[0]) +
                         " out of range for shape " + shape_to_string(in[0]));
      }
      return Shape(in[0].begin() + 1, in[0].end());
    }
    case OpKind::kReduceSum: {
      if (in.empty()) throw std::invalid_argument("reduce_sum: empty operand list");
      for (const Shape& s : in) require_equal("reduce_sum", in[0], s);
      return in[0];
    }
    case OpKind::kSum:
      expect_arity(kind, in.size(), 1);
      return {};
    case OpKind::kBroadcast:
      expect_arity(kind, in.size(), 1);
      if (!in[0].empty()) {
        throw ShapeError("broadcast: expected rank-0 operand, got " +
                         shape_to_string(in[0]));
      }
      return shape_attr(attrs);
    case OpKind::kGatherRow:
      expect_arity(kind, in.size(), 2);
      if (in[0].size() != 2 || num_elements(in[1]) != 1) {
        throw ShapeError("gather_row: expected [n, d] table and one index, got " +
                         shape_to_string(in[0]) + " and " + shape_to_string(in[1]));
      }
      return {1, in[0][1]};
    case OpKind::kScatterRows: {
      expect_attrs(kind, attrs, 1);
      if (in.empty() || in.size() % 2 != 0) {
        throw std::invalid_argument("scatter_rows: expected k indices followed by k rows");
      }
      const std::size_t k = in.size() / 2;
      if (in[k].size() != 2 || in[k][0] != 1) {
        throw ShapeError("scatter_rows: rows must be [1, d], got " +
                         shape_to_string(in[k]));
      }
      for (std::size_t j = 0; j < k; ++j) {
        if (num_elements(in[j]) != 1) {
          throw ShapeError("scatter_rows: index operand has shape " +
                           shape_to_string(in[j]));
        }
        require_equal("scatter_rows", in[k], in[k + j]);
      }
      return {static_cast<std::size_t>(attrs[0]), in[k][1]};
    }
    case OpKind::kMatmulSum: {
      expect_attrs(kind, attrs, 1);
      if (in.empty() || in.size() % 2 != 0) {
        throw std::invalid_argument(
            "matmul_sum: expected k left factors followed by k right factors");
      }
      const std::size_t k = in.size() / 2;
      for (std::size_t j = 0; j < k; ++j) {
        const Shape& a = in[j];
        const Shape& g = in[k + j];
        if (a.size() != 2 || g.size() != 2 || a[0] != g[0] ||
            a[1] != in[0][1] || g[1] != in[k][1]) {
          throw ShapeError("matmul_sum: shape mismatch " + shape_to_string(a) +
                           "^T x " + shape_to_string(g));
        }
      }
      const std::size_t p = in[0][1], q = in[k][1];
      return attrs[0] ? Shape{q, p} : Shape{p, q};
    }
  }
  throw std::invalid_argument("unknown op kind");
}

Tensor run_op(OpKind kind, const Attrs& attrs, std::span<const Tensor> in,
              const BatchLayout& layout) {
  switch (kind) {
    case OpKind::kMatmul:
      expect_arity(kind, in.size(), 2);
      expect_attrs(kind, attrs, 2);
      return matmul(in[0], in[1], attrs[0] != 0, attrs[1] != 0, layout);
    case OpKind::kEwise:
      return ewise(ewise_attr(attrs), in, layout);
    case OpKind::kStack:
      return stack_parts(in, layout);
    case OpKind::kSlice:
      expect_arity(kind, in.size(), 1);
      expect_attrs(kind, attrs, 1);
      return slice(in[0], static_cast<std::size_t>(attrs[0]), layout);
    case OpKind::kReduceSum:
      return reduce_sum(in, layout);
    case OpKind::kSum:
      expect_arity(kind, in.size(), 1);
      return sum_all(in[0], layout);
    case OpKind::kBroadcast:
      expect_arity(kind, in.size(), 1);
      return broadcast_to(in[0], shape_attr(attrs), layout);
    case OpKind::kGatherRow:
      expect_arity(kind, in.size(), 2);
      return gather_row(in[0], in[1], layout);
    case OpKind::kScatterRows:
      expect_attrs(kind, attrs, 1);
      return scatter_rows(static_cast<std::size_t>(attrs[0]), in, layout);
    case OpKind::kMatmulSum:
      expect_attrs(kind, attrs, 1);
      return matmul_sum(in, attrs[0] != 0, layout);
    default:
      throw std::invalid_argument(std::string(op_name(kind)) +
                                  " is not a kernel");
  }
}

}  // namespace jitbatch
