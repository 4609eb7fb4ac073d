#pragma once

#include <cstddef>
#include <vector>

#include "mpt/rng.hpp"
#include "mpt/tensor.hpp"

namespace mpt {

// Elementwise binary ops broadcast with numpy rules (shapes right-aligned,
// size-1 or missing axes expand). Broadcast axes are sum-reduced in backward.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);
Tensor relu(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);

/// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);

/// Sum of all entries, shape [1].
Tensor sum(const Tensor& x);
/// Sum over one axis; the axis is removed unless keepdim.
Tensor sum(const Tensor& x, std::size_t axis, bool keepdim = false);
Tensor mean(const Tensor& x);

/// Max-stabilized softmax along `axis`.
Tensor softmax_axis(const Tensor& x, std::size_t axis);

Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
/// Slice [start, start+length) along `axis`.
Tensor narrow(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);

/// rows[i] = x[indices[i]] for x of shape [n, ...].
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& indices);
/// out[indices[i]] += x[i]; out has `num_rows` rows. Empty sums are zero.
Tensor scatter_add_rows(const Tensor& x, const std::vector<std::size_t>& indices,
                        std::size_t num_rows);

/// Inverted dropout: kept entries are scaled by 1/(1-rate) in training;
/// identity when !train or rate == 0.
Tensor dropout(const Tensor& x, double rate, bool train, Rng& rng);

/// Normalizes over the last axis, then applies per-feature gain and bias.
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

}  // namespace mpt
