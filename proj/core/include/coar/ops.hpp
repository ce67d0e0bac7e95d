#pragma once

// Differentiable tensor ops. Tensors of rank > 2 are treated as
// rows() x cols() matrices wherever an op is matrix-shaped, which is how
// channels-last spatial maps (H x W x C) flow through matmuls unchanged.

#include <span>
#include <vector>

#include "coar/autograd.hpp"

namespace coar::ag {

// linear algebra
Var matmul(Var a, Var b);     // a * b
Var matmul_nt(Var a, Var b);  // a * b^T
Var matmul_tn(Var a, Var b);  // a^T * b
Var transpose(Var a);

// elementwise
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var add_row(Var a, Var row);  // broadcast a length-cols() vector over rows
Var mul_row(Var a, Var row);
Var relu(Var a);
Var gelu(Var a);
Var square(Var a);

// reductions
Var sum(Var a);
Var mean(Var a);
Var mean_rows(Var a);  // 1 x cols, average over rows
Var col_max(Var a);    // 1 x cols; gradient routed to the first maximal row

// normalisation
Var softmax_rows(Var a);
Var softmax_cols(Var a);
Var layer_norm_rows(Var a, double eps = 1e-5);
/// Column standardisation over the rows currently present, population
/// variance, no affine transform.
Var class_normalize(Var a, double eps = 1e-5);
/// x / max(|x|, eps) per row.
Var normalize_rows(Var a, double eps = 1e-12);

// structure
Var reshape(Var a, std::vector<int> shape);
Var gather_rows(Var a, std::span<const int> rows);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(Var a, int begin, int end);
Var concat_cols(const std::vector<Var>& parts);
/// Picks row i, column cols[i] for every row; result is rows() x 1.
Var pick_cols(Var a, std::span<const int> cols);

// spatial, channels-last
/// 3x3 convolution, stride 1, zero padding 1. x: H x W x Cin,
/// weight: (9*Cin) x Cout indexed ((ky*3 + kx)*Cin + ci), bias: Cout.
Var conv3x3(Var x, Var weight, Var bias);
/// 2x2 max pooling, stride 2. H and W must be even.
Var max_pool2x2(Var x);
/// Bilinear resampling (half-pixel centres, edge clamped) of an
/// in_h x in_w x C map to out_h x out_w x C.
Var resize_bilinear(Var x, int in_h, int in_w, int out_h, int out_w);
/// The (out_h*out_w) x (in_h*in_w) interpolation matrix used by resize_bilinear.
Tensor bilinear_resize_matrix(int in_h, int in_w, int out_h, int out_w);

/// Mean cross-entropy of row-wise softmax(logits) against integer labels.
Var cross_entropy_rows(Var logits, std::span<const int> labels);

}  // namespace coar::ag
