#pragma once

#include <vector>

#include "splice/autodiff.hpp"

namespace splice::ad {

// ---- elementwise / broadcast ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, Scalar c);
// a is [R,C]; adds bias[C] to every row.
Var add_row_bias(const Var& a, const Var& bias);

Var square(const Var& a);
Var sigmoid(const Var& a);
Var leaky_relu(const Var& a, Scalar slope);
Var gelu(const Var& a);

// ---- reductions / norms ----
Var sum(const Var& a);
// sqrt(sum((a-b)^2)); gradient is 0 at coincident inputs.
Var l2_diff(const Var& a, const Var& b);
// mean((a-b)^2)
Var mean_square_diff(const Var& a, const Var& b);

// ---- linear algebra (rank-2 operands) ----
Var matmul(const Var& a, const Var& b, bool trans_a = false,
           bool trans_b = false);
Var softmax_rows(const Var& a);
Var row_l2_normalize(const Var& a);
Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta,
                    Scalar eps = 1e-6f);

// ---- slicing / concatenation (rank-2) ----
Var slice_rows(const Var& a, Index r0, Index nrows);
Var slice_cols(const Var& a, Index c0, Index ncols);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var reshape(const Var& a, Shape shape);
Var transpose(const Var& a);

// ---- image ops (single image, [C,H,W]) ----
Var conv2d(const Var& x, const Var& w, const Var& b, Index stride,
           Index pad);
Var scale_channels(const Var& x, const Var& s);
Var add_channel_bias(const Var& x, const Var& b);
// d[o] = (sum_{i,k,l} (w[o,i,k,l] * s[i])^2 + eps)^(-1/2)
Var demod_coeff(const Var& w, const Var& s, Scalar eps);
Var upsample_nearest2x(const Var& x);
Var avg_pool2d(const Var& x, Index window);
// Training-mode batch norm over H*W per channel; batch stats written to
// *saved_mean / *saved_var when non-null (for running-average updates).
Var batch_norm2d(const Var& x, const Var& gamma, const Var& beta, Scalar eps,
                 Tensor* saved_mean = nullptr, Tensor* saved_var = nullptr);
// y_c = A * x_c * B^T for each channel; A [Hout,Hin], B [Wout,Win].
Var resize_linear(const Var& x, const MatrixRM& row_w, const MatrixRM& col_w);

// Cubic-convolution interpolation matrix (Catmull-Rom, a = -0.5),
// half-pixel-centered sampling with edge clamping.
MatrixRM bicubic_matrix(Index out_size, Index in_size);

}  // namespace splice::ad
