#include "fssuavl/kernels.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

namespace fssuavl::kernels {

namespace {

constexpr int kRowTile = 4;
constexpr int kColTile = 16;
constexpr int kColBlock = 256;
constexpr int kDepthBlock = 128;

// Row-major contiguous C = A[M×K] · B[K×N].
void gemm_nn(int M, int N, int K, const float* A, const float* B, float* C, bool accumulate) {
  std::vector<double> acc(static_cast<std::size_t>(kRowTile) * kColBlock);
  for (int jb = 0; jb < N; jb += kColBlock) {
    const int nb = std::min(kColBlock, N - jb);
    for (int i0 = 0; i0 < M; i0 += kRowTile) {
      const int mi = std::min(kRowTile, M - i0);
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int kb = 0; kb < K; kb += kDepthBlock) {
        const int ke = std::min(K, kb + kDepthBlock);
        int j = 0;
        if (mi == kRowTile) {
          for (; j + kColTile <= nb; j += kColTile) {
            float c[kRowTile][kColTile] = {};
            const float* a0 = A + static_cast<std::size_t>(i0) * K;
            const float* a1 = a0 + K;
            const float* a2 = a1 + K;
            const float* a3 = a2 + K;
            for (int k = kb; k < ke; ++k) {
              const float* bp = B + static_cast<std::size_t>(k) * N + jb + j;
              const float x0 = a0[k], x1 = a1[k], x2 = a2[k], x3 = a3[k];
              for (int t = 0; t < kColTile; ++t) {
                const float b = bp[t];
                c[0][t] += x0 * b;
                c[1][t] += x1 * b;
                c[2][t] += x2 * b;
                c[3][t] += x3 * b;
              }
            }
            for (int r = 0; r < kRowTile; ++r)
              for (int t = 0; t < kColTile; ++t) acc[r * kColBlock + j + t] += c[r][t];
          }
        }
        // Remainder columns / rows.
        for (int r = 0; r < mi; ++r) {
          const float* ar = A + static_cast<std::size_t>(i0 + r) * K;
          for (int jj = (mi == kRowTile ? j : 0); jj < nb; ++jj) {
            float c = 0.0f;
            for (int k = kb; k < ke; ++k) c += ar[k] * B[static_cast<std::size_t>(k) * N + jb + jj];
            acc[r * kColBlock + jj] += c;
          }
        }
      }
      for (int r = 0; r < mi; ++r) {
        float* cr = C + static_cast<std::size_t>(i0 + r) * N + jb;
        const double* ar = acc.data() + r * kColBlock;
        if (accumulate) {
          for (int t = 0; t < nb; ++t) cr[t] = static_cast<float>(static_cast<double>(cr[t]) + ar[t]);
        } else {
          for (int t = 0; t < nb; ++t) cr[t] = static_cast<float>(ar[t]);
        }
      }
    }
  }
}

}  // namespace

void transpose(const float* src, float* dst, int rows, int cols) {
  constexpr int kTile = 32;
  for (int r0 = 0; r0 < rows; r0 += kTile)
    for (int c0 = 0; c0 < cols; c0 += kTile) {
      const int re = std::min(rows, r0 + kTile), ce = std::min(cols, c0 + kTile);
      for (int r = r0; r < re; ++r)
        for (int c = c0; c < ce; ++c)
          dst[static_cast<std::size_t>(c) * rows + r] = src[static_cast<std::size_t>(r) * cols + c];
    }
}

void gemm(bool trans_a, bool trans_b, int M, int N, int K, const float* A, const float* B, float* C,
          bool accumulate) {
  if (M <= 0 || N <= 0) return;
  if (K <= 0) {
    if (!accumulate) std::memset(C, 0, sizeof(float) * static_cast<std::size_t>(M) * N);
    return;
  }
  std::vector<float> at, bt;
  if (trans_a) {
    at.resize(static_cast<std::size_t>(M) * K);
    transpose(A, at.data(), K, M);
    A = at.data();
  }
  if (trans_b) {
    bt.resize(static_cast<std::size_t>(K) * N);
    transpose(B, bt.data(), N, K);
    B = bt.data();
  }
  gemm_nn(M, N, K, A, B, C, accumulate);
}

void im2col(const float* image, int C, int H, int W, int kh, int kw, int stride, int pad, int Ho,
            int Wo, float* col) {
  const std::size_t P = static_cast<std::size_t>(Ho) * Wo;
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        float* dst = col + (static_cast<std::size_t>(c * kh + ky) * kw + kx) * P;
        const float* plane = image + static_cast<std::size_t>(c) * H * W;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          float* drow = dst + static_cast<std::size_t>(oy) * Wo;
          if (iy < 0 || iy >= H) {
            std::fill(drow, drow + Wo, 0.0f);
            continue;
          }
          const float* srow = plane + static_cast<std::size_t>(iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            drow[ox] = (ix >= 0 && ix < W) ? srow[ix] : 0.0f;
          }
        }
      }
}

void col2im(const float* col, int C, int H, int W, int kh, int kw, int stride, int pad, int Ho,
            int Wo, float* image) {
  const std::size_t P = static_cast<std::size_t>(Ho) * Wo;
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        const float* src = col + (static_cast<std::size_t>(c * kh + ky) * kw + kx) * P;
        float* plane = image + static_cast<std::size_t>(c) * H * W;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          const float* srow = src + static_cast<std::size_t>(oy) * Wo;
          float* drow = plane + static_cast<std::size_t>(iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < W) drow[ix] += srow[ox];
          }
        }
      }
}

double dot(const float* a, const float* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

double sum(const float* a, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i];
  return s;
}

}  // namespace fssuavl::kernels
