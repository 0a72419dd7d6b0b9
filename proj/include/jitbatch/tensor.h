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

#ifndef JITBATCH_TENSOR_H_
#define JITBATCH_TENSOR_H_

#include <algorithm>
#include <array>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <iosfwd>
#include <iterator>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace jitbatch {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Dimension list with inline storage, so copying a shape never allocates.
class Shape {
 public:
  static constexpr std::size_t kMaxRank = 8;
  using value_type = std::size_t;
  using iterator = std::size_t*;
  using const_iterator = const std::size_t*;

  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims) { assign(dims.begin(), dims.end()); }
  template <std::input_iterator It>
  Shape(It first, It last) { assign(first, last); }

  template <std::input_iterator It>
  void assign(It first, It last) {
    rank_ = 0;
    for (; first != last; ++first) push_back(static_cast<std::size_t>(*first));
  }
  void push_back(std::size_t d) {
    if (rank_ == kMaxRank) {
      throw ShapeError("rank exceeds " + std::to_string(kMaxRank));
    }
    dims_[rank_++] = d;
  }
  template <std::input_iterator It>
  void insert(const_iterator pos, It first, It last) {
    if (pos != end()) throw std::logic_error("Shape::insert only appends");
    for (; first != last; ++first) push_back(static_cast<std::size_t>(*first));
  }
  void reserve(std::size_t) {}
  void clear() { rank_ = 0; }

  std::size_t size() const { return rank_; }
  bool empty() const { return rank_ == 0; }
  std::size_t operator[](std::size_t i) const { return dims_[i]; }
  std::size_t& operator[](std::size_t i) { return dims_[i]; }
  std::size_t at(std::size_t i) const {
    if (i >= rank_) throw std::out_of_range("Shape::at");
    return dims_[i];
  }
  std::size_t back() const { return dims_[rank_ - 1]; }
  const_iterator begin() const { return dims_.data(); }
  const_iterator end() const { return dims_.data() + rank_; }
  iterator begin() { return dims_.data(); }
  iterator end() { return dims_.data() + rank_; }

  friend bool operator==(const Shape& a, const Shape& b) {
    return std::equal(a.begin(), a.end(), b.begin(), b.end());
  }
  friend bool operator<(const Shape& a, const Shape& b) {
    return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
  }

 private:
  std::array<std::size_t, kMaxRank> dims_{};
  std::size_t rank_ = 0;
};

std::size_t num_elements(const Shape& shape);
std::string shape_to_string(const Shape& shape);
std::ostream& operator<<(std::ostream& os, const Shape& shape);

// Dense row-major float64 array. The buffer is shared and never written after
// construction, so copies are cheap and safe to hand across threads. Several
// tensors may view disjoint ranges of one buffer.
class Tensor {
 public:
  // Rank-0 tensor holding 0.0.
  Tensor();
  Tensor(Shape shape, std::span<const double> data);
  Tensor(Shape shape, std::initializer_list<double> data);
  // Views num_elements(shape) values of `buffer` starting at `offset`.
  Tensor(Shape shape, std::shared_ptr<const double[]> buffer,
         std::size_t offset = 0);

  static Tensor scalar(double value);
  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, double value);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return size_; }
  std::span<const double> data() const { return {ptr_, size_}; }
  double operator[](std::size_t i) const { return ptr_[i]; }
  std::vector<double> to_vector() const { return {ptr_, ptr_ + size_}; }

  const std::shared_ptr<const double[]>& buffer() const { return buffer_; }
  std::size_t offset() const { return static_cast<std::size_t>(ptr_ - buffer_.get()); }

  // Shape and bitwise-equal contents.
  bool identical(const Tensor& other) const;

 private:
  Shape shape_;
  std::shared_ptr<const double[]> buffer_;
  const double* ptr_ = nullptr;
  std::size_t size_ = 0;
};

std::string to_string(const Tensor& t);

struct LaunchCounts {
  std::uint64_t launches = 0;
  // Stack/unstack bookkeeping launches; included in `launches`.
  std::uint64_t overhead = 0;

  std::uint64_t main() const { return launches - overhead; }
  LaunchCounts operator-(const LaunchCounts& o) const {
    return {launches - o.launches, overhead - o.overhead};
  }
};

// Process-wide count of kernel invocations. One increment per call, whatever
// the batch extent of the call.
class KernelCounter {
 public:
  static LaunchCounts read();
  static void reset();
  static void add_main();
  static void add_overhead();

 private:
  static std::atomic<std::uint64_t> launches_;
  static std::atomic<std::uint64_t> overhead_;
};

// Describes how the operands of one kernel call carry a leading batch axis.
// extent == 0 is an ordinary per-sample call. Otherwise each operand is either
// stacked (leading axis of size extent) or shared by every batch element.
struct BatchLayout {
  std::size_t extent = 0;
  std::vector<bool> stacked;

  bool batched() const { return extent > 0; }
  bool is_stacked(std::size_t operand) const {
    return batched() && operand < stacked.size() && stacked[operand];
  }
  static BatchLayout all_stacked(std::size_t extent, std::size_t operands) {
    return {extent, std::vector<bool>(operands, true)};
  }
};

enum class EwiseKind : std::uint8_t {
  kAdd,
  kSub,
  kMul,
  kNeg,
  kSigmoid,
  kTanh,
  kAbs,
  kSign,
};

bool is_unary(EwiseKind kind);
const char* ewise_name(EwiseKind kind);
// Throws std::invalid_argument on an unknown name.
EwiseKind parse_ewise(const std::string& name);

// Matrix product on the last two axes. Without a batch layout, `a` may carry
// one leading batch axis (rank 3) and `b` is a plain matrix.
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false,
              bool trans_b = false, const BatchLayout& layout = {});

// Element-wise kernels. Binary kinds need equal per-sample shapes, or one
// rank-0 operand which is applied to every element of the other.
Tensor ewise(EwiseKind kind, std::span<const Tensor> operands,
             const BatchLayout& layout = {});
Tensor ewise(EwiseKind kind, const Tensor& x);
Tensor ewise(EwiseKind kind, const Tensor& a, const Tensor& b);

// Bookkeeping kernels used to form and split batches. Counted as overhead.
// unstack returns views of the input's buffer.
Tensor stack(std::span<const Tensor> parts);
std::vector<Tensor> unstack(const Tensor& t);

// The stacked tensor of `parts` without copying when they already are
// consecutive equal-sized views of one buffer. Otherwise sets `*ok` to false
// and returns an empty tensor. Not a kernel launch.
Tensor contiguous_stack(std::span<const Tensor> parts, bool* ok);

// Element-wise sum of any number of same-shaped operands in one launch.
Tensor reduce_sum(std::span<const Tensor> operands,
                  const BatchLayout& layout = {});

// Sum of all elements, rank-0 result.
Tensor sum_all(const Tensor& x, const BatchLayout& layout = {});
// Fills `shape` with the single value of a rank-0 tensor.
Tensor broadcast_to(const Tensor& scalar, const Shape& shape,
                    const BatchLayout& layout = {});
// Sub-tensor at `index` along the first axis.
Tensor slice(const Tensor& t, std::size_t index,
             const BatchLayout& layout = {});
// Concatenates same-shaped parts along a new first axis; the recorded-op form
// of stack, counted as a main launch.
Tensor stack_parts(std::span<const Tensor> parts,
                   const BatchLayout& layout = {});
// Row `index` of a [n, d] table as a [1, d] tensor. `index` holds one integral
// value.
Tensor gather_row(const Tensor& table, const Tensor& index,
                  const BatchLayout& layout = {});
// [rows, d] zeros with grads[j] ([1, d]) added into row indices[j]. Operands
// are laid out as k indices followed by k grads.
Tensor scatter_rows(std::size_t rows, std::span<const Tensor> operands,
                    const BatchLayout& layout = {});

// Sum over j of a_j^T * g_j (transposed when trans_out). Operands are laid out
// as k left factors [m_j, p] followed by k right factors [m_j, q]. Accumulates
// a shared weight's gradient without one [p, q] term per use.
Tensor matmul_sum(std::span<const Tensor> operands, bool trans_out = false,
                  const BatchLayout& layout = {});

}  // namespace jitbatch

#endif  // JITBATCH_TENSOR_H_
