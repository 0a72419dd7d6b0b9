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

#include "jitbatch/tensor.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include <Eigen/Core>

namespace jitbatch {

std::size_t num_elements(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::ostream& operator<<(std::ostream& os, const Shape& shape) {
  return os << shape_to_string(shape);
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

std::shared_ptr<double[]> allocate(std::size_t n) {
  // Left uninitialized; every kernel writes its whole output.
  return std::shared_ptr<double[]>(new double[n == 0 ? 1 : n]);
}

}  // namespace

Tensor::Tensor() {
  static const std::shared_ptr<const double[]> zero(new double[1]{0.0});
  buffer_ = zero;
  ptr_ = zero.get();
  size_ = 1;
}

Tensor::Tensor(Shape shape, std::span<const double> data)
    : shape_(shape), size_(num_elements(shape)) {
  if (size_ != data.size()) {
    throw ShapeError("tensor of shape " + shape_to_string(shape_) + " needs " +
                     std::to_string(size_) + " values, got " +
                     std::to_string(data.size()));
  }
  auto buf = allocate(size_);
  std::copy(data.begin(), data.end(), buf.get());
  buffer_ = std::move(buf);
  ptr_ = buffer_.get();
}

Tensor::Tensor(Shape shape, std::initializer_list<double> data)
    : Tensor(shape, std::span<const double>(data.begin(), data.size())) {}

Tensor::Tensor(Shape shape, std::shared_ptr<const double[]> buffer,
               std::size_t offset)
    : shape_(shape), buffer_(std::move(buffer)), size_(num_elements(shape)) {
  if (!buffer_) throw std::invalid_argument("tensor: null buffer");
  ptr_ = buffer_.get() + offset;
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::zeros(Shape shape) { return filled(shape, 0.0); }

Tensor Tensor::filled(Shape shape, double value) {
  const std::size_t n = num_elements(shape);
  auto buf = allocate(n);
  std::fill_n(buf.get(), n, value);
  return Tensor(shape, std::shared_ptr<const double[]>(std::move(buf)));
}

bool Tensor::identical(const Tensor& other) const {
  if (shape_ != other.shape_) return false;
  return std::memcmp(ptr_, other.ptr_, size_ * sizeof(double)) == 0;
}

std::string to_string(const Tensor& t) {
  std::ostringstream os;
  os << "Tensor" << shape_to_string(t.shape()) << '{';
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (i) os << ", ";
    os << t[i];
  }
  os << '}';
  return os.str();
}

std::atomic<std::uint64_t> KernelCounter::launches_{0};
std::atomic<std::uint64_t> KernelCounter::overhead_{0};

LaunchCounts KernelCounter::read() {
  return {launches_.load(std::memory_order_relaxed),
          overhead_.load(std::memory_order_relaxed)};
}

void KernelCounter::reset() {
  launches_.store(0);
  overhead_.store(0);
}

void KernelCounter::add_main() {
  launches_.fetch_add(1, std::memory_order_relaxed);
}

void KernelCounter::add_overhead() {
  launches_.fetch_add(1, std::memory_order_relaxed);
  overhead_.fetch_add(1, std::memory_order_relaxed);
}

bool is_unary(EwiseKind kind) {
  switch (kind) {
    case EwiseKind::kAdd:
    case EwiseKind::kSub:
    case EwiseKind::kMul:
      return false;
    default:
      return true;
  }
}

const char* ewise_name(EwiseKind kind) {
  switch (kind) {
    case EwiseKind::kAdd: return "add";
    case EwiseKind::kSub: return "sub";
    case EwiseKind::kMul: return "mul";
    case EwiseKind::kNeg: return "neg";
    case EwiseKind::kSigmoid: return "sigmoid";
    case EwiseKind::kTanh: return "tanh";
    case EwiseKind::kAbs: return "abs";
    case EwiseKind::kSign: return "sign";
  }
  return "?";
}

EwiseKind parse_ewise(const std::string& name) {
  for (auto k : {EwiseKind::kAdd, EwiseKind::kSub, EwiseKind::kMul,
                 EwiseKind::kNeg, EwiseKind::kSigmoid, EwiseKind::kTanh,
                 EwiseKind::kAbs, EwiseKind::kSign}) {
    if (name == ewise_name(k)) return k;
  }
  throw std::invalid_argument("unknown element-wise kind '" + name + "'");
}

namespace {

// One kernel operand seen per batch element.
struct Operand {
  const double* base = nullptr;
  Shape sample_shape;
  std::size_t sample_size = 0;
  bool stacked = false;

  const double* at(std::size_t b) const {
    return stacked ? base + b * sample_size : base;
  }
};

std::vector<Operand> split_operands(const char* op,
                                    std::span<const Tensor> operands,
                                    const BatchLayout& layout) {
  std::vector<Operand> out;
  out.reserve(operands.size());
  for (std::size_t i = 0; i < operands.size(); ++i) {
    const Tensor& t = operands[i];
    Operand v;
    v.base = t.data().data();
    v.stacked = layout.is_stacked(i);
    if (v.stacked) {
      if (t.rank() == 0 || t.shape()[0] != layout.extent) {
        throw ShapeError(std::string(op) + ": operand " + std::to_string(i) +
                         " of shape " + shape_to_string(t.shape()) +
                         " is not stacked to batch extent " +
                         std::to_string(layout.extent));
      }
      v.sample_shape.assign(t.shape().begin() + 1, t.shape().end());
    } else {
      v.sample_shape = t.shape();
    }
    v.sample_size = num_elements(v.sample_shape);
    out.push_back(std::move(v));
  }
  return out;
}

std::size_t batch_loops(const BatchLayout& layout) {
  return layout.batched() ? layout.extent : 1;
}

// Kernel output buffer.
struct Out {
  std::shared_ptr<double[]> buf;
  double* data() const { return buf.get(); }
  double& operator[](std::size_t i) const { return buf[i]; }
};

Out alloc(std::size_t n) { return {allocate(n)}; }

Out alloc_zeros(std::size_t n) {
  Out o = alloc(n);
  std::fill_n(o.data(), n, 0.0);
  return o;
}

Tensor assemble(const BatchLayout& layout, const Shape& sample_shape, Out out) {
  std::shared_ptr<const double[]> buf(std::move(out.buf));
  if (!layout.batched()) return Tensor(sample_shape, std::move(buf));
  Shape shape{layout.extent};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  return Tensor(shape, std::move(buf));
}

void require_same_shapes(const char* op, const std::vector<Operand>& ops) {
  for (std::size_t i = 1; i < ops.size(); ++i) {
    if (ops[i].sample_shape != ops[0].sample_shape) {
      throw ShapeError(std::string(op) + ": shape mismatch " +
                       shape_to_string(ops[0].sample_shape) + " vs " +
                       shape_to_string(ops[i].sample_shape));
    }
  }
}

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMat = Eigen::Map<const RowMat>;
using OutMat = Eigen::Map<RowMat>;

void gemm(const double* a, std::size_t ar, std::size_t ac, bool ta,
          const double* b, std::size_t br, std::size_t bc, bool tb,
          double* c, std::size_t cr, std::size_t cc) {
  ConstMat A(a, static_cast<Eigen::Index>(ar), static_cast<Eigen::Index>(ac));
  ConstMat B(b, static_cast<Eigen::Index>(br), static_cast<Eigen::Index>(bc));
  OutMat C(c, static_cast<Eigen::Index>(cr), static_cast<Eigen::Index>(cc));
  if (!ta && !tb) {
    C.noalias() = A * B;
  } else if (ta && !tb) {
    C.noalias() = A.transpose() * B;
  } else if (!ta && tb) {
    C.noalias() = A * B.transpose();
  } else {
    C.noalias() = A.transpose() * B.transpose();
  }
}

template <typename F>
void unary_loop(const Operand& x, std::size_t loops, std::size_t n,
                double* out, F f) {
  for (std::size_t b = 0; b < loops; ++b) {
    const double* xs = x.at(b);
    double* o = out + b * n;
    for (std::size_t j = 0; j < n; ++j) o[j] = f(xs[j]);
  }
}

template <typename F>
void binary_loop(const Operand& x, const Operand& y, std::size_t loops,
                 std::size_t n, double* out, F f) {
  const bool x_scalar = x.sample_shape.empty() && n != 1;
  const bool y_scalar = y.sample_shape.empty() && n != 1;
  for (std::size_t b = 0; b < loops; ++b) {
    const double* xs = x.at(b);
    const double* ys = y.at(b);
    double* o = out + b * n;
    if (x_scalar) {
      for (std::size_t j = 0; j < n; ++j) o[j] = f(xs[0], ys[j]);
    } else if (y_scalar) {
      for (std::size_t j = 0; j < n; ++j) o[j] = f(xs[j], ys[0]);
    } else {
      for (std::size_t j = 0; j < n; ++j) o[j] = f(xs[j], ys[j]);
    }
  }
}

// Vectorized transcendentals. Values go through fixed-size blocks so every
// element takes the same packet path wherever it sits in the buffer; batched
// and per-sample calls then agree bit for bit.
using Block8 = Eigen::Array<double, 8, 1>;

template <typename F>
void blockwise(const double* x, double* out, std::size_t n, F f) {
  Block8 in, res;
  for (std::size_t i = 0; i < n; i += 8) {
    const std::size_t m = std::min<std::size_t>(8, n - i);
    in.setZero();
    std::copy_n(x + i, m, in.data());
    res = f(in);
    std::copy_n(res.data(), m, out + i);
  }
}

void sigmoid_block(const double* x, double* out, std::size_t n) {
  blockwise(x, out, n, [](const Block8& v) -> Block8 {
    return 1.0 / (1.0 + (-v).exp());
  });
}

void tanh_block(const double* x, double* out, std::size_t n) {
  blockwise(x, out, n, [](const Block8& v) -> Block8 {
    return 1.0 - 2.0 / ((2.0 * v).exp() + 1.0);
  });
  // The exp form cancels near zero; fall back to libm there.
  for (std::size_t j = 0; j < n; ++j) {
    if (std::fabs(x[j]) < 0.0625) out[j] = std::tanh(x[j]);
  }
}

template <typename F>
void unary_block(const Operand& x, std::size_t loops, std::size_t n,
                 double* out, F f) {
  if (x.stacked || loops == 1) {
    f(x.at(0), out, loops * n);
    return;
  }
  f(x.at(0), out, n);
  for (std::size_t b = 1; b < loops; ++b) std::copy_n(out, n, out + b * n);
}

std::size_t row_index(const double* v, std::size_t rows, const char* op) {
  const double x = *v;
  if (!(x >= 0) || x != std::floor(x) || x >= static_cast<double>(rows)) {
    throw std::out_of_range(std::string(op) + ": row index " +
                            std::to_string(x) + " outside [0, " +
                            std::to_string(rows) + ")");
  }
  return static_cast<std::size_t>(x);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b,
              const BatchLayout& layout) {
  BatchLayout effective = layout;
  if (!layout.batched() && a.rank() == 3) {
    const bool b_batched = b.rank() == 3;
    effective = BatchLayout{a.shape()[0], {true, b_batched}};
  }
  const Tensor operands[] = {a, b};
  auto v = split_operands("matmul", operands, effective);
  if (v[0].sample_shape.size() != 2 || v[1].sample_shape.size() != 2) {
    throw ShapeError("matmul: expected matrices, got " +
                     shape_to_string(a.shape()) + " x " +
                     shape_to_string(b.shape()));
  }
  const std::size_t ar = v[0].sample_shape[0], ac = v[0].sample_shape[1];
  const std::size_t br = v[1].sample_shape[0], bc = v[1].sample_shape[1];
  const std::size_t m = trans_a ? ac : ar, k = trans_a ? ar : ac;
  const std::size_t k2 = trans_b ? bc : br, n = trans_b ? br : bc;
  if (k != k2) {
    throw ShapeError("matmul: shape mismatch " + shape_to_string(a.shape()) +
                     (trans_a ? "^T" : "") + " x " +
                     shape_to_string(b.shape()) + (trans_b ? "^T" : ""));
  }
  KernelCounter::add_main();
  const std::size_t loops = batch_loops(effective);
  Out out = alloc(loops * m * n);
  if (loops > 1 && v[0].stacked && !v[1].stacked && !trans_a) {
    // Shared right operand: one [loops*m, k] x [k, n] product.
    gemm(v[0].base, loops * ar, ac, false, v[1].base, br, bc, trans_b,
         out.data(), loops * m, n);
  } else {
    for (std::size_t i = 0; i < loops; ++i) {
      gemm(v[0].at(i), ar, ac, trans_a, v[1].at(i), br, bc, trans_b,
           out.data() + i * m * n, m, n);
    }
  }
  return assemble(effective, {m, n}, std::move(out));
}

Tensor ewise(EwiseKind kind, std::span<const Tensor> operands,
             const BatchLayout& layout) {
  const std::size_t arity = is_unary(kind) ? 1 : 2;
  if (operands.size() != arity) {
    throw std::invalid_argument(std::string("ewise ") + ewise_name(kind) +
                                ": expected " + std::to_string(arity) +
                                " operand(s), got " +
                                std::to_string(operands.size()));
  }
  auto v = split_operands(ewise_name(kind), operands, layout);
  Shape out_shape = v[0].sample_shape;
  if (arity == 2 && v[0].sample_shape != v[1].sample_shape) {
    if (v[0].sample_shape.empty()) {
      out_shape = v[1].sample_shape;
    } else if (!v[1].sample_shape.empty()) {
      throw ShapeError(std::string("ewise ") + ewise_name(kind) +
                       ": shape mismatch " +
                       shape_to_string(v[0].sample_shape) + " vs " +
                       shape_to_string(v[1].sample_shape));
    }
  }
  KernelCounter::add_main();
  const std::size_t loops = batch_loops(layout);
  const std::size_t n = num_elements(out_shape);
  Out out = alloc(loops * n);
  double* o = out.data();
  switch (kind) {
    case EwiseKind::kAdd:
      binary_loop(v[0], v[1], loops, n, o, [](double x, double y) { return x + y; });
      break;
    case EwiseKind::kSub:
      binary_loop(v[0], v[1], loops, n, o, [](double x, double y) { return x - y; });
      break;
    case EwiseKind::kMul:
      binary_loop(v[0], v[1], loops, n, o, [](double x, double y) { return x * y; });
      break;
    case EwiseKind::kNeg:
      unary_loop(v[0], loops, n, o, [](double x) { return -x; });
      break;
    case EwiseKind::kSigmoid:
      unary_block(v[0], loops, n, o, sigmoid_block);
      break;
    case EwiseKind::kTanh:
      unary_block(v[0], loops, n, o, tanh_block);
      break;
    case EwiseKind::kAbs:
      unary_loop(v[0], loops, n, o, [](double x) { return std::fabs(x); });
      break;
    case EwiseKind::kSign:
      unary_loop(v[0], loops, n, o,
                 [](double x) { return static_cast<double>((x > 0) - (x < 0)); });
      break;
  }
  return assemble(layout, out_shape, std::move(out));
}

Tensor ewise(EwiseKind kind, const Tensor& x) {
  const Tensor operands[] = {x};
  return ewise(kind, operands);
}

Tensor ewise(EwiseKind kind, const Tensor& a, const Tensor& b) {
  const Tensor operands[] = {a, b};
  return ewise(kind, operands);
}

Tensor stack(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("stack: empty part list");
  const Shape& s = parts[0].shape();
  for (const Tensor& p : parts) {
    if (p.shape() != s) {
      throw ShapeError("stack: heterogeneous shapes " + shape_to_string(s) +
                       " vs " + shape_to_string(p.shape()));
    }
  }
  KernelCounter::add_overhead();
  const std::size_t n = parts[0].size();
  Out out = alloc(parts.size() * n);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    std::copy_n(parts[i].data().data(), n, out.data() + i * n);
  }
  Shape shape{parts.size()};
  shape.insert(shape.end(), s.begin(), s.end());
  return Tensor(shape, std::shared_ptr<const double[]>(std::move(out.buf)));
}

std::vector<Tensor> unstack(const Tensor& t) {
  if (t.rank() == 0) throw ShapeError("unstack: rank-0 input");
  KernelCounter::add_overhead();
  const Shape s(t.shape().begin() + 1, t.shape().end());
  const std::size_t n = num_elements(s);
  std::vector<Tensor> out;
  out.reserve(t.shape()[0]);
  for (std::size_t i = 0; i < t.shape()[0]; ++i) {
    out.emplace_back(s, t.buffer(), t.offset() + i * n);
  }
  return out;
}

Tensor contiguous_stack(std::span<const Tensor> parts, bool* ok) {
  *ok = false;
  if (parts.empty()) return {};
  const Tensor& first = parts[0];
  const std::size_t n = first.size();
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const Tensor& p = parts[i];
    if (p.buffer() != first.buffer() || p.shape() != first.shape() ||
        p.data().data() != first.data().data() + i * n) {
      return {};
    }
  }
  *ok = true;
  Shape shape{parts.size()};
  shape.insert(shape.end(), first.shape().begin(), first.shape().end());
  return Tensor(shape, first.buffer(), first.offset());
}

Tensor reduce_sum(std::span<const Tensor> operands, const BatchLayout& layout) {
  if (operands.empty()) throw std::invalid_argument("reduce_sum: empty operand list");
  auto v = split_operands("reduce_sum", operands, layout);
  require_same_shapes("reduce_sum", v);
  KernelCounter::add_main();
  const std::size_t loops = batch_loops(layout);
  const std::size_t n = v[0].sample_size;
  Out out = alloc(loops * n);
  for (std::size_t b = 0; b < loops; ++b) {
    double* o = out.data() + b * n;
    std::copy_n(v[0].at(b), n, o);
    for (std::size_t i = 1; i < v.size(); ++i) {
      const double* x = v[i].at(b);
      for (std::size_t j = 0; j < n; ++j) o[j] += x[j];
    }
  }
  return assemble(layout, v[0].sample_shape, std::move(out));
}

Tensor sum_all(const Tensor& x, const BatchLayout& layout) {
  const Tensor operands[] = {x};
  auto v = split_operands("sum", operands, layout);
  KernelCounter::add_main();
  const std::size_t loops = batch_loops(layout);
  Out out = alloc_zeros(loops);
  for (std::size_t b = 0; b < loops; ++b) {
    const double* xs = v[0].at(b);
    for (std::size_t j = 0; j < v[0].sample_size; ++j) out[b] += xs[j];
  }
  return assemble(layout, {}, std::move(out));
}

Tensor broadcast_to(const Tensor& scalar, const Shape& shape,
                    const BatchLayout& layout) {
  const Tensor operands[] = {scalar};
  auto v = split_operands("broadcast", operands, layout);
  if (!v[0].sample_shape.empty()) {
    throw ShapeError("broadcast: expected rank-0 operand, got " +
                     shape_to_string(v[0].sample_shape));
  }
  KernelCounter::add_main();
  const std::size_t loops = batch_loops(layout);
  const std::size_t n = num_elements(shape);
  Out out = alloc(loops * n);
  for (std::size_t b = 0; b < loops; ++b) {
    std::fill_n(out.data() + b * n, n, *v[0].at(b));
  }
  return assemble(layout, shape, std::move(out));
}

Tensor slice(const Tensor& t, std::size_t index, const BatchLayout& layout) {
  const Tensor operands[] = {t};
  auto v = split_operands("slice", operands, layout);
  const Shape& s = v[0].sample_shape;
  if (s.empty() || index >= s[0]) {
    throw ShapeError("slice: index " + std::to_string(index) +
                     " out of range for shape " + shape_to_string(s));
  }
  KernelCounter::add_main();
  Shape out_shape(s.begin() + 1, s.end());
  const std::size_t n = num_elements(out_shape);
  const std::size_t loops = batch_loops(layout);
  Out out = alloc(loops * n);
  for (std::size_t b = 0; b < loops; ++b) {
    std::copy_n(v[0].at(b) + index * n, n, out.data() + b * n);
  }
  return assemble(layout, out_shape, std::move(out));
}

Tensor stack_parts(std::span<const Tensor> parts, const BatchLayout& layout) {
  if (parts.empty()) throw std::invalid_argument("stack: empty part list");
  auto v = split_operands("stack", parts, layout);
  require_same_shapes("stack", v);
  KernelCounter::add_main();
  const std::size_t loops = batch_loops(layout);
  const std::size_t n = v[0].sample_size;
  const std::size_t per_sample = n * v.size();
  Out out = alloc(loops * per_sample);
  for (std::size_t b = 0; b < loops; ++b) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      std::copy_n(v[i].at(b), n, out.data() + b * per_sample + i * n);
    }
  }
  Shape out_shape{v.size()};
  out_shape.insert(out_shape.end(), v[0].sample_shape.begin(),
                   v[0].sample_shape.end());
  return assemble(layout, out_shape, std::move(out));
}

Tensor gather_row(const Tensor& table, const Tensor& index,
                  const BatchLayout& layout) {
  const Tensor operands[] = {table, index};
  auto v = split_operands("gather_row", operands, layout);
  if (v[0].sample_shape.size() != 2 || v[1].sample_size != 1) {
    throw ShapeError("gather_row: expected [n, d] table and one index, got " +
                     shape_to_string(v[0].sample_shape) + " and " +
                     shape_to_string(v[1].sample_shape));
  }
  const std::size_t rows = v[0].sample_shape[0], d = v[0].sample_shape[1];
  const std::size_t loops = batch_loops(layout);
  std::vector<std::size_t> picked(loops);
  for (std::size_t b = 0; b < loops; ++b) {
    picked[b] = row_index(v[1].at(b), rows, "gather_row");
  }
  KernelCounter::add_main();
  Out out = alloc(loops * d);
  for (std::size_t b = 0; b < loops; ++b) {
    std::copy_n(v[0].at(b) + picked[b] * d, d, out.data() + b * d);
  }
  return assemble(layout, {1, d}, std::move(out));
}

Tensor scatter_rows(std::size_t rows, std::span<const Tensor> operands,
                    const BatchLayout& layout) {
  if (operands.empty() || operands.size() % 2 != 0) {
    throw std::invalid_argument(
        "scatter_rows: expected k indices followed by k rows, got " +
        std::to_string(operands.size()) + " operands");
  }
  auto v = split_operands("scatter_rows", operands, layout);
  const std::size_t k = v.size() / 2;
  const Shape& row_shape = v[k].sample_shape;
  if (row_shape.size() != 2 || row_shape[0] != 1) {
    throw ShapeError("scatter_rows: rows must be [1, d], got " +
                     shape_to_string(row_shape));
  }
  for (std::size_t j = 0; j < k; ++j) {
    if (v[j].sample_size != 1) {
      throw ShapeError("scatter_rows: index operand has shape " +
                       shape_to_string(v[j].sample_shape));
    }
    if (v[k + j].sample_shape != row_shape) {
      throw ShapeError("scatter_rows: shape mismatch " +
                       shape_to_string(row_shape) + " vs " +
                       shape_to_string(v[k + j].sample_shape));
    }
  }
  const std::size_t d = row_shape[1];
  const std::size_t loops = batch_loops(layout);
  Out out = alloc_zeros(loops * rows * d);
  for (std::size_t b = 0; b < loops; ++b) {
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t r = row_index(v[j].at(b), rows, "scatter_rows");
      double* o = out.data() + (b * rows + r) * d;
      const double* g = v[k + j].at(b);
      for (std::size_t c = 0; c < d; ++c) o[c] += g[c];
    }
  }
  KernelCounter::add_main();
  return assemble(layout, {rows, d}, std::move(out));
}

Tensor matmul_sum(std::span<const Tensor> operands, bool trans_out,
                  const BatchLayout& layout) {
  if (operands.empty() || operands.size() % 2 != 0) {
    throw std::invalid_argument(
        "matmul_sum: expected k left factors followed by k right factors, got " +
        std::to_string(operands.size()) + " operands");
  }
  auto v = split_operands("matmul_sum", operands, layout);
  const std::size_t k = v.size() / 2;
  std::size_t rows = 0;
  for (std::size_t j = 0; j < k; ++j) {
    const Shape& a = v[j].sample_shape;
    const Shape& g = v[k + j].sample_shape;
    if (a.size() != 2 || g.size() != 2 || a[0] != g[0] ||
        a[1] != v[0].sample_shape[1] || g[1] != v[k].sample_shape[1]) {
      throw ShapeError("matmul_sum: shape mismatch " + shape_to_string(a) +
                       "^T x " + shape_to_string(g));
    }
    rows += a[0];
  }
  const std::size_t p = v[0].sample_shape[1], q = v[k].sample_shape[1];
  KernelCounter::add_main();
  const std::size_t loops = batch_loops(layout);
  Out out = alloc(loops * p * q);
  std::vector<double> lhs(rows * p), rhs(rows * q);
  for (std::size_t b = 0; b < loops; ++b) {
    std::size_t r = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t m = v[j].sample_shape[0];
      std::copy_n(v[j].at(b), m * p, lhs.data() + r * p);
      std::copy_n(v[k + j].at(b), m * q, rhs.data() + r * q);
      r += m;
    }
    if (trans_out) {
      gemm(rhs.data(), rows, q, true, lhs.data(), rows, p, false,
           out.data() + b * p * q, q, p);
    } else {
      gemm(lhs.data(), rows, p, true, rhs.data(), rows, q, false,
           out.data() + b * p * q, p, q);
    }
  }
  return assemble(layout, trans_out ? Shape{q, p} : Shape{p, q}, std::move(out));
}

}  // namespace jitbatch
