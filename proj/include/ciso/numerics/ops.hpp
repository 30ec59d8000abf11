#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "ciso/numerics/tensor.hpp"

// Differentiable kernels. Every op records a backward rule on the active tape
// when at least one input requires a gradient; otherwise it is a plain
// computation. All kernels are single-threaded and fixed-order, so results are
// bit-reproducible.
namespace ciso::num {

inline constexpr double kProbEps = 1e-12;

// 2-D product [m,k] x [k,n].
Tensor matmul(const Tensor& a, const Tensor& b);
// Batched product over a leading group axis: [g,m,k] x [g,k,n], or
// [g,m,k] x [g,n,k]^T when transpose_b is set.
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);

// Binary ops accept b with a's shape, a single element, or a shape equal to a
// trailing suffix of a's shape (row broadcast).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

Tensor relu(const Tensor& x);
// Output clamped to [kProbEps, 1 - kProbEps].
Tensor sigmoid(const Tensor& x);
// Inputs below kProbEps are clamped (warns once per process).
Tensor log(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor sin(const Tensor& x);
Tensor cos(const Tensor& x);
Tensor square(const Tensor& x);
// Softmax over the last axis.
Tensor softmax_rows(const Tensor& x);
// Normalizes over the last axis; gamma and beta have the last axis' length.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor reshape(const Tensor& x, Shape shape);
// [a,b,c,d] -> [a,c,b,d]
Tensor swap_axes12(const Tensor& x);
// Concatenate along the last axis; leading shapes must agree.
Tensor concat_last(const Tensor& a, const Tensor& b);
// [B,n1,d] ++ [B,n2,d] -> [B,n1+n2,d]
Tensor concat_axis1(const Tensor& a, const Tensor& b);
// [B,L,d] -> [B,len,d] starting at `start`.
Tensor slice_axis1(const Tensor& x, std::size_t start, std::size_t len);
// Row lookup into a [V,d] table; gradients accumulate on repeated indices.
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> index);
// Copy of base [N,d] with rows[i] overwritten by src row i.
Tensor replace_rows(const Tensor& base, std::span<const std::size_t> rows, const Tensor& src);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Sum over the last axis, dropping it.
Tensor sum_last(const Tensor& x);

// Inverted dropout. p == 0 returns x unchanged.
Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng);

// Sum over entries with mask != 0 of -[y log p + (1-y) log(1-p)], divided by
// the number of rows. pred and target are [B,C]; mask has B*C entries.
Tensor bce_masked(const Tensor& pred, const Tensor& target, std::span<const std::uint8_t> mask);

}  // namespace ciso::num
