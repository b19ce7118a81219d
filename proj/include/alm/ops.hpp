#pragma once

#include <cstdint>
#include <span>

#include "alm/tensor.hpp"

namespace alm::ops {

inline constexpr int kIgnoreIndex = -1;

// Every op checks shapes (DimensionError naming both) and output finiteness
// (OverflowError). Outputs record a graph node only when grad mode is on and
// some input requires grad.

Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k] x [k,n] -> [m,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m,k] x [n,k]^T -> [m,n]

// b broadcasts over the leading axes of a: b.shape must equal a's trailing axes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor sum(const Tensor& a);
Tensor reshape(const Tensor& a, const Shape& shape);

// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
Tensor gelu(const Tensor& x);

Tensor softmax(const Tensor& x, int axis = -1);
Tensor log_softmax(const Tensor& x);  // over the last axis

// Normalizes over the last axis; gain/bias have shape [x.shape.back()].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, int axis = -1, double eps = 1e-5);

Tensor embedding(const Tensor& table, std::span<const int> ids);  // [V,d] -> [N,d]
Tensor select_rows(const Tensor& x, std::span<const std::size_t> rows);

// Mean negative log-likelihood over rows whose target != kIgnoreIndex.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);

// Inverted dropout: identity when !train or p == 0.
Tensor dropout(const Tensor& x, double p, std::uint64_t seed, bool train);

// Masked multi-head self-attention over packed projections.
// qkv: [batch*seq, 3*d] laid out as [q | k | v]; returns [batch*seq, d].
// Scores use scale 1/sqrt(d/heads) and position t attends to s <= t only.
// Attention-probability dropout is applied when train && p > 0.
Tensor causal_attention(const Tensor& qkv, std::size_t batch, std::size_t seq, std::size_t heads,
                        double dropout_p = 0.0, std::uint64_t dropout_seed = 0, bool train = false);

}  // namespace alm::ops
