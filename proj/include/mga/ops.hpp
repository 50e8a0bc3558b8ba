#pragma once

#include <vector>

#include "mga/tensor.hpp"

namespace mga::nn {

// Primitive differentiable ops. Each runs its forward immediately and records
// an exact analytic backward closure on the tape. Row-major throughout; any
// shape violation throws ShapeError with the offending dimensions.
//
// Matmul kernels use fixed per-row loop orders, so output row i is a bitwise
// function of input row i and the full right operand. The decoder's
// future-mutation invariance test relies on this.

Tensor matmul(Tape& tp, Tensor a, Tensor b);     // [m,k]x[k,n] -> [m,n]
Tensor matmul_nt(Tape& tp, Tensor a, Tensor b);  // [m,k]x[n,k]^T -> [m,n]

Tensor add(Tape& tp, Tensor a, Tensor b);         // same shape
Tensor sub(Tape& tp, Tensor a, Tensor b);
Tensor mul(Tape& tp, Tensor a, Tensor b);         // elementwise
Tensor add_rowvec(Tape& tp, Tensor a, Tensor b);  // [m,n] + [n]
Tensor scale(Tape& tp, Tensor a, double c);
Tensor add_const(Tape& tp, Tensor a, double c);
Tensor mul_scalar(Tape& tp, Tensor a, Tensor s);  // s: [1], grads to both

Tensor relu(Tape& tp, Tensor a);
Tensor exp_elem(Tape& tp, Tensor a);
Tensor softplus(Tape& tp, Tensor a);  // log(1+e^x), stable
Tensor square(Tape& tp, Tensor a);

// Inverted dropout: mask entries are 0 or 1/(1-p), supplied by the caller so
// the draw lives outside the tape.
Tensor dropout(Tape& tp, Tensor a, const std::vector<double>& mask);

Tensor layer_norm(Tape& tp, Tensor x, Tensor gamma, Tensor beta,
                  double eps);
Tensor l2_normalize_rows(Tape& tp, Tensor x, double eps);

Tensor rowwise_dot(Tape& tp, Tensor a, Tensor b);  // [m,n],[m,n] -> [m]
Tensor logsumexp_rows(Tape& tp, Tensor x);                // [m,n] -> [m]
Tensor take_diag(Tape& tp, Tensor x);                     // [n,n] -> [n]
Tensor set_diag(Tape& tp, Tensor x, Tensor d);     // replace diagonal
Tensor row_scale(Tape& tp, Tensor x, Tensor s);    // row i *= s[i]

Tensor scatter_rows(Tape& tp, Tensor src, const std::vector<int>& rows, int m);
Tensor gather_rows(Tape& tp, Tensor x, const std::vector<int>& rows);
Tensor broadcast_row(Tape& tp, Tensor v, int m);          // [n] -> [m,n]
Tensor concat_cols(Tape& tp, Tensor a, Tensor b);  // [m,p]+[m,q] -> [m,p+q]
Tensor slice_cols(Tape& tp, Tensor x, int from, int count);

// Row i is softmaxed over columns 0..i; entries above the diagonal are
// exactly zero, never merely small.
Tensor causal_softmax(Tape& tp, Tensor scores);

Tensor sum_all(Tape& tp, Tensor x);   // -> [1]
Tensor mean_all(Tape& tp, Tensor x);  // -> [1]
Tensor dot(Tape& tp, Tensor a, Tensor b);  // [n],[n] -> [1]

// x*W + b with exact analytic gradients to all three inputs.
Tensor dense(Tape& tp, Tensor x, Tensor w, Tensor b);

bool all_finite(const Tensor& t);

// Sinusoidal position encoding over sequence index, [len, dim] constant.
Tensor sinusoidal_positions(int len, int dim);

}  // namespace mga::nn
