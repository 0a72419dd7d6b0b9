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

// Registry of recordable operations: shape rules and dispatch onto the
// kernels in tensor.h.

#ifndef JITBATCH_OPS_H_
#define JITBATCH_OPS_H_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "jitbatch/tensor.h"

namespace jitbatch {

enum class OpKind : std::uint8_t {
  kConstant,
  kParameter,
  kMatmul,       // attrs: {trans_a, trans_b}
  kEwise,        // attrs: {EwiseKind}
  kStack,        // variadic
  kSlice,        // attrs: {index}
  kReduceSum,    // variadic
  kSum,
  kBroadcast,    // attrs: output shape
  kGatherRow,
  kScatterRows,  // attrs: {rows}; operands: k indices then k rows
  kMatmulSum,    // attrs: {trans_out}; operands: k left then k right factors
};

using Attrs = std::vector<std::int64_t>;

const char* op_name(OpKind kind);
// e.g. "ewise.tanh", "matmul[N,T]", "slice[2]".
std::string describe_op(OpKind kind, const Attrs& attrs);

// False for the leaf kinds (constants, parameters).
bool is_kernel(OpKind kind);

// Per-sample output shape. Throws ShapeError for shape violations and
// std::invalid_argument for bad arity or attributes.
Shape infer_shape(OpKind kind, const Attrs& attrs,
                  std::span<const Shape> inputs);

// Launches the kernel for `kind` once.
Tensor run_op(OpKind kind, const Attrs& attrs, std::span<const Tensor> inputs,
              const BatchLayout& layout = {});

}  // namespace jitbatch

#endif  // JITBATCH_OPS_H_
