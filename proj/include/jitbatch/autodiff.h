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

// Reverse-mode differentiation recorded into the open batching scope.
//
// backward() walks the recorded graph from the loss towards the requested
// parameters and records one gradient node per rule, so gradient work of many
// samples lands in the same depth table as the forward pass and is batched
// the same way. Contributions to a node with several consumers are summed by
// a single reduce_sum node.

#ifndef JITBATCH_AUTODIFF_H_
#define JITBATCH_AUTODIFF_H_

#include <span>
#include <vector>

#include "jitbatch/lazy.h"

namespace jitbatch {

// Records d(loss)/d(wrt[i]) for every i. `loss` must hold exactly one
// element. Targets the loss does not depend on get a zeros constant. All
// tensors must belong to the same open scope.
std::vector<LazyTensor> backward(const LazyTensor& loss,
                                 std::span<const LazyTensor> wrt);

// p <- p - lr * g for each pair. Throws ShapeError on a shape mismatch.
void sgd_step(std::span<Parameter* const> params,
              std::span<const Tensor> grads, double lr);

}  // namespace jitbatch

#endif  // JITBATCH_AUTODIFF_H_
