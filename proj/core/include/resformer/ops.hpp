#pragma once

#include <vector>

#include "resformer/tensor.hpp"

namespace resformer {

// Elementwise ops broadcast numpy-style (right-aligned, dims equal or 1).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

// y = mul_c * x + add_c, elementwise.
Tensor affine(const Tensor& x, double mul_c, double add_c);
Tensor scale(const Tensor& x, double s);

// a: [..., m, k], b: [..., k, n]. Batch dims must match, or either operand
// may be a plain matrix shared across the other's batch.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& x, int axis0, int axis1);
Tensor reshape(const Tensor& x, Shape new_shape);
Tensor slice(const Tensor& x, int axis, int64_t start, int64_t length);
Tensor concat(const std::vector<Tensor>& parts, int axis);

Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// Max-subtracted softmax along `axis` (negative axes count from the back).
Tensor softmax(const Tensor& x, int axis);

// Normalizes over the last axis, then applies gamma/beta (both of size d).
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Gathers rows of `table` ([V, d]); output shape is id_shape + [d].
Tensor embedding_lookup(const Tensor& table, const std::vector<int64_t>& ids,
                        const Shape& id_shape);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor reduce_sum(const Tensor& x, int axis);
Tensor reduce_mean(const Tensor& x, int axis);

// x: [B, T, C], kernel: [K, C] with K odd; same-length zero-padded depthwise
// convolution, tap k of channel c weighting x[b, t + k - (K-1)/2, c].
Tensor depthwise_conv1d(const Tensor& x, const Tensor& kernel);

// logits: [N, V]; weighted mean of -log softmax(logits)[i, target_i] with the
// given per-row weights (pad rows carry weight 0).
Tensor cross_entropy(const Tensor& logits, const std::vector<int64_t>& targets,
                     const std::vector<double>& weights);

// Leaf copy that blocks gradient flow.
Tensor detach(const Tensor& x);

}  // namespace resformer
