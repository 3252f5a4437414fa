#pragma once

#include <cstddef>

namespace fssuavl::kernels {

// C[M×N] = op(A)·op(B) (+ C when accumulate). op(A) is M×K, op(B) is K×N;
// a transposed operand is stored in its un-transposed row-major layout.
// Products are formed in f32 over blocks of at most 128 terms of K; block
// partial sums are carried in f64. Summation order is fixed, so results are
// bit-reproducible for identical inputs.
void gemm(bool trans_a, bool trans_b, int M, int N, int K, const float* A, const float* B, float* C,
          bool accumulate);

// Row-major [rows×cols] -> [cols×rows].
void transpose(const float* src, float* dst, int rows, int cols);

// Unfolds one C×H×W image into a (C·kh·kw)×(Ho·Wo) column matrix.
void im2col(const float* image, int C, int H, int W, int kh, int kw, int stride, int pad, int Ho,
            int Wo, float* col);

// Adjoint of im2col: scatters-and-adds the columns back into the image.
void col2im(const float* col, int C, int H, int W, int kh, int kw, int stride, int pad, int Ho,
            int Wo, float* image);

// f64-accumulated dot product and sum in index order.
double dot(const float* a, const float* b, std::size_t n);
double sum(const float* a, std::size_t n);

}  // namespace fssuavl::kernels
