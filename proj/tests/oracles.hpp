#pragma once

// Independent reference implementations for test oracles. Everything here is
// deliberately naive (dense loops, std:: math, plain vectors) and shares no
// code with the library under test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace oracle {

struct Img {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<double> v;

  Img() = default;
  Img(int n_, int c_, int h_, int w_) : n(n_), c(c_), h(h_), w(w_), v(size_t(n_) * c_ * h_ * w_, 0.0) {}
  double& at(int i, int j, int y, int x) { return v[size_t(((i * c + j) * h + y) * w + x)]; }
  double at(int i, int j, int y, int x) const { return v[size_t(((i * c + j) * h + y) * w + x)]; }
};

// dense cross-correlation, zero padding `pad`, square kernel k x k
inline Img conv2d(const Img& x, const std::vector<double>& W, const std::vector<double>& b,
                  int cout, int k, int stride, int pad) {
  const int ho = (x.h + stride - 1) / stride, wo = (x.w + stride - 1) / stride;
  Img y(x.n, cout, ho, wo);
  for (int n = 0; n < x.n; ++n)
    for (int co = 0; co < cout; ++co)
      for (int yo = 0; yo < ho; ++yo)
        for (int xo = 0; xo < wo; ++xo) {
          double s = b.empty() ? 0.0 : b[size_t(co)];
          for (int ci = 0; ci < x.c; ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int yi = yo * stride + ky - pad, xi = xo * stride + kx - pad;
                if (yi < 0 || yi >= x.h || xi < 0 || xi >= x.w) continue;
                s += x.at(n, ci, yi, xi) * W[size_t(((co * x.c + ci) * k + ky) * k + kx)];
              }
          y.at(n, co, yo, xo) = s;
        }
  return y;
}

// depthwise fixed-kernel variant
inline Img conv2d_depthwise(const Img& x, const std::vector<double>& k3) {
  Img y(x.n, x.c, x.h, x.w);
  for (int n = 0; n < x.n; ++n)
    for (int c = 0; c < x.c; ++c)
      for (int yo = 0; yo < x.h; ++yo)
        for (int xo = 0; xo < x.w; ++xo) {
          double s = 0.0;
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int yi = yo + ky - 1, xi = xo + kx - 1;
              if (yi < 0 || yi >= x.h || xi < 0 || xi >= x.w) continue;
              s += x.at(n, c, yi, xi) * k3[size_t(ky * 3 + kx)];
            }
          y.at(n, c, yo, xo) = s;
        }
  return y;
}

inline Img maxpool2(const Img& x) {
  Img y(x.n, x.c, x.h / 2, x.w / 2);
  for (int n = 0; n < x.n; ++n)
    for (int c = 0; c < x.c; ++c)
      for (int yo = 0; yo < y.h; ++yo)
        for (int xo = 0; xo < y.w; ++xo) {
          double m = x.at(n, c, 2 * yo, 2 * xo);
          m = std::max(m, x.at(n, c, 2 * yo, 2 * xo + 1));
          m = std::max(m, x.at(n, c, 2 * yo + 1, 2 * xo));
          m = std::max(m, x.at(n, c, 2 * yo + 1, 2 * xo + 1));
          y.at(n, c, yo, xo) = m;
        }
  return y;
}

inline std::vector<double> global_avg_pool(const Img& x) {
  std::vector<double> y(size_t(x.n) * x.c, 0.0);
  for (int n = 0; n < x.n; ++n)
    for (int c = 0; c < x.c; ++c) {
      double s = 0.0;
      for (int yy = 0; yy < x.h; ++yy)
        for (int xx = 0; xx < x.w; ++xx) s += x.at(n, c, yy, xx);
      y[size_t(n * x.c + c)] = s / double(x.h * x.w);
    }
  return y;
}

// x [N,D] row-major, W [K,D], b [K] -> [N,K]
inline std::vector<double> linear(const std::vector<double>& x, int N, int D,
                                  const std::vector<double>& W, const std::vector<double>& b,
                                  int K) {
  std::vector<double> y(size_t(N) * K, 0.0);
  for (int n = 0; n < N; ++n)
    for (int k = 0; k < K; ++k) {
      double s = b[size_t(k)];
      for (int d = 0; d < D; ++d) s += x[size_t(n * D + d)] * W[size_t(k * D + d)];
      y[size_t(n * K + k)] = s;
    }
  return y;
}

struct Xent {
  double loss = 0.0;
  std::vector<double> probs;
};

inline Xent softmax_xent(const std::vector<double>& z, int N, int C, const std::vector<int>& y) {
  Xent out;
  out.probs.assign(size_t(N) * C, 0.0);
  double total = 0.0;
  for (int n = 0; n < N; ++n) {
    double m = z[size_t(n * C)];
    for (int c = 1; c < C; ++c) m = std::max(m, z[size_t(n * C + c)]);
    double s = 0.0;
    for (int c = 0; c < C; ++c) {
      out.probs[size_t(n * C + c)] = std::exp(z[size_t(n * C + c)] - m);
      s += out.probs[size_t(n * C + c)];
    }
    for (int c = 0; c < C; ++c) out.probs[size_t(n * C + c)] /= s;
    total += -std::log(out.probs[size_t(n * C + y[size_t(n)])]);
  }
  out.loss = total / double(N);
  return out;
}

// momentum SGD recurrence on scalars
struct SgdTrace {
  std::vector<double> p, v;
};
inline SgdTrace sgd_scalar(double p0, const std::vector<double>& grads, double lr, double mu) {
  SgdTrace t;
  double p = p0, v = 0.0;
  for (double g : grads) {
    v = mu * v + g;
    p = p - lr * v;
    t.v.push_back(v);
    t.p.push_back(p);
  }
  return t;
}

inline double bilinear(const std::vector<float>& plane, int H, int W, double x, double y) {
  const int x0 = int(std::floor(x)), y0 = int(std::floor(y));
  const double fx = x - x0, fy = y - y0;
  auto px = [&](int yy, int xx) -> double {
    if (xx < 0 || xx >= W || yy < 0 || yy >= H) return 0.0;
    return double(plane[size_t(yy) * W + xx]);
  };
  return (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x0 + 1)) +
         fy * ((1 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1));
}

inline double gaussian(double sigma, double ux, double uy) {
  return std::exp(-(ux * ux + uy * uy) / (2.0 * sigma * sigma));
}

// expected segment index sets per the sampling scheme
inline std::vector<int> test_indices(int L, int beta) {
  const int interval = L / beta;
  const int offset = (L - 1 - (beta - 1) * interval) / 2;
  std::vector<int> out;
  for (int k = 0; k < beta; ++k) out.push_back(offset + k * interval);
  return out;
}

}  // namespace oracle
