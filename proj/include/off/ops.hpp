#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <vector>

#include "off/mathfn.hpp"
#include "off/tensor.hpp"

namespace off {

// Fixed 3x3 derivative kernels (row-major). sobel_x responds to horizontal
// gradients (columns), sobel_y to vertical (rows, used as printed).
template <typename T>
constexpr std::array<T, 9> sobel_x_kernel() {
  return {T(-1), T(0), T(1), T(-1), T(0), T(1), T(-1), T(0), T(1)};
}
template <typename T>
constexpr std::array<T, 9> sobel_y_kernel() {
  return {T(1), T(1), T(1), T(0), T(0), T(0), T(-1), T(-1), T(-1)};
}

namespace detail {

template <typename T>
void check_image(const TensorT<T>& x, const char* op) {
  require(x.defined() && x.shape().rank == 4, ErrKind::invalid_shape,
          std::string(op) + ": expected rank-4 [N,C,H,W] input");
}

// One output row of a 3x3 cross-correlation, stride 1, zero padding, summed
// into a double accumulator. All convolutions accumulate in double and store
// in T. k points at 9 row-major taps; zero taps are skipped (exact: inputs
// are finite).
template <typename T>
inline void corr3x3_row(const T* plane, int H, int W, const T* k, int ho, double* acc) {
  for (int kh = 0; kh < 3; ++kh) {
    int hi = ho + kh - 1;
    if (hi < 0 || hi >= H) continue;
    const T* row = plane + size_t(hi) * W;
    for (int kw = 0; kw < 3; ++kw) {
      double wv = double(k[kh * 3 + kw]);
      if (wv == 0.0) continue;
      int w0 = std::max(0, 1 - kw);
      int w1 = std::min(W, W + 1 - kw);
      const T* src = row + (w0 + kw - 1);
      double* dst = acc + w0;
      for (int wo = w0; wo < w1; ++wo) *dst++ += double(*src++) * wv;
    }
  }
}

// Same, stride 2, ceil-division output width Wo.
template <typename T>
inline void corr3x3_row_s2(const T* plane, int H, int W, int Wo, const T* k, int ho,
                           double* acc) {
  for (int kh = 0; kh < 3; ++kh) {
    int hi = 2 * ho + kh - 1;
    if (hi < 0 || hi >= H) continue;
    const T* row = plane + size_t(hi) * W;
    for (int kw = 0; kw < 3; ++kw) {
      double wv = double(k[kh * 3 + kw]);
      if (wv == 0.0) continue;
      for (int wo = 0; wo < Wo; ++wo) {
        int wi = 2 * wo + kw - 1;
        if (wi >= 0 && wi < W) acc[wo] += double(row[wi]) * wv;
      }
    }
  }
}

}  // namespace detail

// Depthwise cross-correlation with a fixed (non-learned) 3x3 kernel, zero
// padding, stride 1. Gradient flows to x only.
template <typename T>
TensorT<T> conv2d_fixed3x3(TapeT<T>* tape, const TensorT<T>& x, const std::array<T, 9>& k) {
  detail::check_image(x, "conv2d_fixed3x3");
  const int64_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  TensorT<T> y(x.shape());
  y.set_requires_grad(x.requires_grad());

  std::vector<double> acc(size_t(W));
  const T* xd = x.data();
  T* yd = y.data();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const T* plane = xd + size_t(nc) * H * W;
    T* out = yd + size_t(nc) * H * W;
    for (int ho = 0; ho < H; ++ho) {
      std::fill(acc.begin(), acc.end(), 0.0);
      detail::corr3x3_row(plane, int(H), int(W), k.data(), ho, acc.data());
      T* orow = out + size_t(ho) * W;
      for (int64_t wo = 0; wo < W; ++wo) orow[wo] = T(acc[size_t(wo)]);
    }
  }

  if (tape && y.requires_grad()) {
    auto xn = x.node();
    auto yn = y.node();
    std::array<T, 9> kf;  // 180-degree flip turns correlation into its adjoint
    for (int i = 0; i < 9; ++i) kf[size_t(i)] = k[size_t(8 - i)];
    tape->record([xn, yn, kf, N, C, H, W]() {
      if (yn->grad.empty()) return;
      std::vector<double> acc(size_t(W));
      std::vector<T>& gx = [&]() -> std::vector<T>& {
        if (xn->grad.empty()) xn->grad.assign(xn->data.size(), T(0));
        return xn->grad;
      }();
      const T* gyd = yn->grad.data();
      for (int64_t nc = 0; nc < N * C; ++nc) {
        const T* gplane = gyd + size_t(nc) * H * W;
        T* gout = gx.data() + size_t(nc) * H * W;
        for (int ho = 0; ho < H; ++ho) {
          std::fill(acc.begin(), acc.end(), 0.0);
          detail::corr3x3_row(gplane, int(H), int(W), kf.data(), ho, acc.data());
          T* orow = gout + size_t(ho) * W;
          for (int64_t wo = 0; wo < W; ++wo) orow[wo] += T(acc[size_t(wo)]);
        }
      }
    });
  }
  return y;
}

// Learned 3x3 convolution (cross-correlation), zero padding, stride 1 or 2.
// Stride 2 halves odd sizes by ceil division. Gradients to x, W, b.
template <typename T>
TensorT<T> conv3x3(TapeT<T>* tape, const TensorT<T>& x, const TensorT<T>& W,
                   const TensorT<T>& b, int stride = 1) {
  detail::check_image(x, "conv3x3");
  require(stride == 1 || stride == 2, ErrKind::invalid_argument,
          "conv3x3: stride must be 1 or 2");
  const int64_t N = x.shape()[0], Ci = x.shape()[1], H = x.shape()[2], Wd = x.shape()[3];
  require(W.shape().rank == 4 && W.shape()[1] == Ci && W.shape()[2] == 3 && W.shape()[3] == 3,
          ErrKind::invalid_shape,
          "conv3x3: weight must be [Cout," + std::to_string(Ci) + ",3,3], got " + W.shape().str());
  const int64_t Co = W.shape()[0];
  require(b.shape().rank == 1 && b.shape()[0] == Co, ErrKind::invalid_shape,
          "conv3x3: bias must be [" + std::to_string(Co) + "], got " + b.shape().str());
  const int64_t Ho = (H + stride - 1) / stride, Wo = (Wd + stride - 1) / stride;

  TensorT<T> y(Shape{N, Co, Ho, Wo});
  y.set_requires_grad(x.requires_grad() || W.requires_grad() || b.requires_grad());

  const T* xd = x.data();
  const T* wd = W.data();
  const T* bd = b.data();
  T* yd = y.data();
  std::vector<double> acc(size_t(Wo));
  for (int64_t n = 0; n < N; ++n) {
    const T* xb = xd + size_t(n) * Ci * H * Wd;
    for (int64_t co = 0; co < Co; ++co) {
      T* out = yd + size_t(n * Co + co) * Ho * Wo;
      for (int64_t ho = 0; ho < Ho; ++ho) {
        std::fill(acc.begin(), acc.end(), double(bd[co]));
        for (int64_t ci = 0; ci < Ci; ++ci) {
          const T* plane = xb + size_t(ci) * H * Wd;
          const T* k = wd + size_t(co * Ci + ci) * 9;
          if (stride == 1)
            detail::corr3x3_row(plane, int(H), int(Wd), k, int(ho), acc.data());
          else
            detail::corr3x3_row_s2(plane, int(H), int(Wd), int(Wo), k, int(ho), acc.data());
        }
        T* orow = out + size_t(ho) * Wo;
        for (int64_t wo = 0; wo < Wo; ++wo) orow[wo] = T(acc[size_t(wo)]);
      }
    }
  }

  if (tape && y.requires_grad()) {
    auto xn = x.node();
    auto Wn = W.node();
    auto bn = b.node();
    auto yn = y.node();
    tape->record([xn, Wn, bn, yn, N, Ci, Co, H, Wd, Ho, Wo, stride]() {
      if (yn->grad.empty()) return;
      const T* gyd = yn->grad.data();
      const T* xd = xn->data.data();
      const T* wd = Wn->data.data();

      if (xn->requires_grad) {
        if (xn->grad.empty()) xn->grad.assign(xn->data.size(), T(0));
        T* gxd = xn->grad.data();
        std::vector<double> plane_acc(size_t(H * Wd));
        for (int64_t n = 0; n < N; ++n) {
          for (int64_t ci = 0; ci < Ci; ++ci) {
            std::fill(plane_acc.begin(), plane_acc.end(), 0.0);
            for (int64_t co = 0; co < Co; ++co) {
              const T* k = wd + size_t(co * Ci + ci) * 9;
              const T* gplane = gyd + size_t(n * Co + co) * Ho * Wo;
              if (stride == 1) {
                // adjoint of stride-1 correlation: correlate grad with
                // 180-degree flipped kernel
                T kf[9];
                for (int i = 0; i < 9; ++i) kf[i] = k[8 - i];
                for (int64_t hi = 0; hi < H; ++hi)
                  detail::corr3x3_row(gplane, int(Ho), int(Wo), kf, int(hi),
                                      plane_acc.data() + size_t(hi) * Wd);
              } else {
                for (int64_t ho = 0; ho < Ho; ++ho) {
                  const T* grow = gplane + size_t(ho) * Wo;
                  for (int64_t wo = 0; wo < Wo; ++wo) {
                    double g = double(grow[wo]);
                    if (g == 0.0) continue;
                    for (int kh = 0; kh < 3; ++kh) {
                      int64_t hi = 2 * ho + kh - 1;
                      if (hi < 0 || hi >= H) continue;
                      for (int kw = 0; kw < 3; ++kw) {
                        int64_t wi = 2 * wo + kw - 1;
                        if (wi < 0 || wi >= Wd) continue;
                        plane_acc[size_t(hi * Wd + wi)] += double(k[kh * 3 + kw]) * g;
                      }
                    }
                  }
                }
              }
            }
            T* gx = gxd + size_t((n * Ci + ci) * H * Wd);
            for (size_t i = 0; i < plane_acc.size(); ++i) gx[i] += T(plane_acc[i]);
          }
        }
      }

      if (Wn->requires_grad) {
        if (Wn->grad.empty()) Wn->grad.assign(Wn->data.size(), T(0));
        std::vector<double> wacc(size_t(Co * Ci * 9), 0.0);
        for (int64_t n = 0; n < N; ++n) {
          for (int64_t co = 0; co < Co; ++co) {
            const T* gplane = gyd + size_t(n * Co + co) * Ho * Wo;
            for (int64_t ci = 0; ci < Ci; ++ci) {
              const T* plane = xd + size_t((n * Ci + ci) * H * Wd);
              double* wk = wacc.data() + size_t(co * Ci + ci) * 9;
              for (int64_t ho = 0; ho < Ho; ++ho) {
                const T* grow = gplane + size_t(ho) * Wo;
                for (int kh = 0; kh < 3; ++kh) {
                  int64_t hi = stride * ho + kh - 1;
                  if (hi < 0 || hi >= H) continue;
                  const T* xrow = plane + size_t(hi) * Wd;
                  for (int kw = 0; kw < 3; ++kw) {
                    double s = 0.0;
                    if (stride == 1) {
                      int w0 = std::max<int>(0, 1 - kw);
                      int w1 = std::min<int>(int(Wd), int(Wd) + 1 - kw);
                      const T* src = xrow + (w0 + kw - 1);
                      const T* g = grow + w0;
                      for (int wo = w0; wo < w1; ++wo) s += double(*src++) * double(*g++);
                    } else {
                      for (int64_t wo = 0; wo < Wo; ++wo) {
                        int64_t wi = 2 * wo + kw - 1;
                        if (wi >= 0 && wi < Wd) s += double(xrow[wi]) * double(grow[wo]);
                      }
                    }
                    wk[kh * 3 + kw] += s;
                  }
                }
              }
            }
          }
        }
        for (size_t i = 0; i < wacc.size(); ++i) Wn->grad[i] += T(wacc[i]);
      }

      if (bn->requires_grad) {
        if (bn->grad.empty()) bn->grad.assign(bn->data.size(), T(0));
        for (int64_t co = 0; co < Co; ++co) {
          double s = 0.0;
          for (int64_t n = 0; n < N; ++n) {
            const T* gplane = gyd + size_t(n * Co + co) * Ho * Wo;
            for (int64_t i = 0; i < Ho * Wo; ++i) s += double(gplane[i]);
          }
          bn->grad[size_t(co)] += T(s);
        }
      }
    });
  }
  return y;
}

// Learned 1x1 convolution, stride 1 or 2 (strided spatial subsampling, used
// by projection shortcuts). Gradients to x, W, b.
template <typename T>
TensorT<T> conv1x1(TapeT<T>* tape, const TensorT<T>& x, const TensorT<T>& W,
                   const TensorT<T>& b, int stride = 1) {
  detail::check_image(x, "conv1x1");
  require(stride == 1 || stride == 2, ErrKind::invalid_argument,
          "conv1x1: stride must be 1 or 2");
  const int64_t N = x.shape()[0], Ci = x.shape()[1], H = x.shape()[2], Wd = x.shape()[3];
  require(W.shape().rank == 4 && W.shape()[1] == Ci && W.shape()[2] == 1 && W.shape()[3] == 1,
          ErrKind::invalid_shape,
          "conv1x1: weight must be [Cout," + std::to_string(Ci) + ",1,1], got " + W.shape().str());
  const int64_t Co = W.shape()[0];
  require(b.shape().rank == 1 && b.shape()[0] == Co, ErrKind::invalid_shape,
          "conv1x1: bias must be [" + std::to_string(Co) + "], got " + b.shape().str());
  const int64_t Ho = (H + stride - 1) / stride, Wo = (Wd + stride - 1) / stride;

  TensorT<T> y(Shape{N, Co, Ho, Wo});
  y.set_requires_grad(x.requires_grad() || W.requires_grad() || b.requires_grad());

  const T* xd = x.data();
  const T* wd = W.data();
  const T* bd = b.data();
  T* yd = y.data();
  std::vector<double> acc(size_t(Ho * Wo));
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t co = 0; co < Co; ++co) {
      std::fill(acc.begin(), acc.end(), double(bd[co]));
      for (int64_t ci = 0; ci < Ci; ++ci) {
        double wv = double(wd[co * Ci + ci]);
        if (wv == 0.0) continue;
        const T* plane = xd + size_t((n * Ci + ci) * H * Wd);
        for (int64_t ho = 0; ho < Ho; ++ho) {
          const T* xrow = plane + size_t(ho * stride) * Wd;
          double* arow = acc.data() + size_t(ho) * Wo;
          for (int64_t wo = 0; wo < Wo; ++wo) arow[wo] += double(xrow[wo * stride]) * wv;
        }
      }
      T* out = yd + size_t(n * Co + co) * Ho * Wo;
      for (size_t i = 0; i < acc.size(); ++i) out[i] = T(acc[i]);
    }
  }

  if (tape && y.requires_grad()) {
    auto xn = x.node();
    auto Wn = W.node();
    auto bn = b.node();
    auto yn = y.node();
    tape->record([xn, Wn, bn, yn, N, Ci, Co, H, Wd, Ho, Wo, stride]() {
      if (yn->grad.empty()) return;
      const T* gyd = yn->grad.data();
      const T* xd = xn->data.data();
      const T* wd = Wn->data.data();

      if (xn->requires_grad) {
        if (xn->grad.empty()) xn->grad.assign(xn->data.size(), T(0));
        T* gxd = xn->grad.data();
        std::vector<double> pacc(size_t(H * Wd));
        for (int64_t n = 0; n < N; ++n) {
          for (int64_t ci = 0; ci < Ci; ++ci) {
            std::fill(pacc.begin(), pacc.end(), 0.0);
            for (int64_t co = 0; co < Co; ++co) {
              double wv = double(wd[co * Ci + ci]);
              if (wv == 0.0) continue;
              const T* gplane = gyd + size_t((n * Co + co) * Ho * Wo);
              for (int64_t ho = 0; ho < Ho; ++ho) {
                const T* grow = gplane + size_t(ho) * Wo;
                double* arow = pacc.data() + size_t(ho * stride) * Wd;
                for (int64_t wo = 0; wo < Wo; ++wo) arow[wo * stride] += double(grow[wo]) * wv;
              }
            }
            T* gx = gxd + size_t((n * Ci + ci) * H * Wd);
            for (size_t i = 0; i < pacc.size(); ++i) gx[i] += T(pacc[i]);
          }
        }
      }

      if (Wn->requires_grad) {
        if (Wn->grad.empty()) Wn->grad.assign(Wn->data.size(), T(0));
        for (int64_t co = 0; co < Co; ++co) {
          for (int64_t ci = 0; ci < Ci; ++ci) {
            double s = 0.0;
            for (int64_t n = 0; n < N; ++n) {
              const T* gplane = gyd + size_t((n * Co + co) * Ho * Wo);
              const T* plane = xd + size_t((n * Ci + ci) * H * Wd);
              for (int64_t ho = 0; ho < Ho; ++ho) {
                const T* grow = gplane + size_t(ho) * Wo;
                const T* xrow = plane + size_t(ho * stride) * Wd;
                for (int64_t wo = 0; wo < Wo; ++wo) s += double(xrow[wo * stride]) * double(grow[wo]);
              }
            }
            Wn->grad[size_t(co * Ci + ci)] += T(s);
          }
        }
      }

      if (bn->requires_grad) {
        if (bn->grad.empty()) bn->grad.assign(bn->data.size(), T(0));
        for (int64_t co = 0; co < Co; ++co) {
          double s = 0.0;
          for (int64_t n = 0; n < N; ++n) {
            const T* gplane = gyd + size_t((n * Co + co) * Ho * Wo);
            for (int64_t i = 0; i < Ho * Wo; ++i) s += double(gplane[i]);
          }
          bn->grad[size_t(co)] += T(s);
        }
      }
    });
  }
  return y;
}

// Elementwise max(x, 0); subgradient at 0 is 0.
template <typename T>
TensorT<T> relu(TapeT<T>* tape, const TensorT<T>& x) {
  TensorT<T> y(x.shape());
  y.set_requires_grad(x.requires_grad());
  const T* xd = x.data();
  T* yd = y.data();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) yd[i] = xd[i] > T(0) ? xd[i] : T(0);
  if (tape && y.requires_grad()) {
    auto xn = x.node();
    auto yn = y.node();
    tape->record([xn, yn, n]() {
      if (yn->grad.empty()) return;
      if (xn->grad.empty()) xn->grad.assign(xn->data.size(), T(0));
      for (int64_t i = 0; i < n; ++i)
        if (xn->data[size_t(i)] > T(0)) xn->grad[size_t(i)] += yn->grad[size_t(i)];
    });
  }
  return y;
}

// 2x2 max pooling, stride 2. Odd trailing rows/columns are dropped; inputs
// smaller than the window are an error. Ties keep the first occurrence in
// row-major window order.
template <typename T>
TensorT<T> maxpool2(TapeT<T>* tape, const TensorT<T>& x) {
  detail::check_image(x, "maxpool2");
  const int64_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  require(H >= 2 && W >= 2, ErrKind::invalid_shape,
          "maxpool2: spatial dims must be at least 2, got " + x.shape().str());
  const int64_t Ho = H / 2, Wo = W / 2;
  TensorT<T> y(Shape{N, C, Ho, Wo});
  y.set_requires_grad(x.requires_grad());

  auto argmax = std::make_shared<std::vector<int8_t>>(size_t(N * C * Ho * Wo));
  const T* xd = x.data();
  T* yd = y.data();
  int8_t* am = argmax->data();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const T* plane = xd + size_t(nc) * H * W;
    T* out = yd + size_t(nc) * Ho * Wo;
    int8_t* aout = am + size_t(nc) * Ho * Wo;
    for (int64_t ho = 0; ho < Ho; ++ho) {
      for (int64_t wo = 0; wo < Wo; ++wo) {
        T best = plane[(2 * ho) * W + 2 * wo];
        int8_t bi = 0;
        static constexpr int dh[4] = {0, 0, 1, 1};
        static constexpr int dw[4] = {0, 1, 0, 1};
        for (int8_t c = 1; c < 4; ++c) {
          T v = plane[(2 * ho + dh[c]) * W + 2 * wo + dw[c]];
          if (v > best) {
            best = v;
            bi = c;
          }
        }
        out[ho * Wo + wo] = best;
        aout[ho * Wo + wo] = bi;
      }
    }
  }

  if (tape && y.requires_grad()) {
    auto xn = x.node();
    auto yn = y.node();
    tape->record([xn, yn, argmax, N, C, H, W, Ho, Wo]() {
      if (yn->grad.empty()) return;
      if (xn->grad.empty()) xn->grad.assign(xn->data.size(), T(0));
      static constexpr int dh[4] = {0, 0, 1, 1};
      static constexpr int dw[4] = {0, 1, 0, 1};
      for (int64_t nc = 0; nc < N * C; ++nc) {
        const T* grow = yn->grad.data() + size_t(nc) * Ho * Wo;
        const int8_t* aout = argmax->data() + size_t(nc) * Ho * Wo;
        T* gx = xn->grad.data() + size_t(nc) * H * W;
        for (int64_t ho = 0; ho < Ho; ++ho)
          for (int64_t wo = 0; wo < Wo; ++wo) {
            int8_t c = aout[ho * Wo + wo];
            gx[(2 * ho + dh[c]) * W + 2 * wo + dw[c]] += grow[ho * Wo + wo];
          }
      }
    });
  }
  return y;
}

// [N,C,H,W] -> [N,C] spatial mean.
template <typename T>
TensorT<T> global_avg_pool(TapeT<T>* tape, const TensorT<T>& x) {
  detail::check_image(x, "global_avg_pool");
  const int64_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  TensorT<T> y(Shape{N, C});
  y.set_requires_grad(x.requires_grad());
  const T* xd = x.data();
  T* yd = y.data();
  const double inv = 1.0 / double(H * W);
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const T* plane = xd + size_t(nc) * H * W;
    double s = 0.0;
    for (int64_t i = 0; i < H * W; ++i) s += double(plane[i]);
    yd[nc] = T(s * inv);
  }
  if (tape && y.requires_grad()) {
    auto xn = x.node();
    auto yn = y.node();
    tape->record([xn, yn, N, C, H, W, inv]() {
      if (yn->grad.empty()) return;
      if (xn->grad.empty()) xn->grad.assign(xn->data.size(), T(0));
      for (int64_t nc = 0; nc < N * C; ++nc) {
        T g = T(double(yn->grad[size_t(nc)]) * inv);
        T* gx = xn->grad.data() + size_t(nc) * H * W;
        for (int64_t i = 0; i < H * W; ++i) gx[i] += g;
      }
    });
  }
  return y;
}

// Concatenate along channels; all inputs must share N, H, W.
template <typename T>
TensorT<T> concat_channels(TapeT<T>* tape, const std::vector<TensorT<T>>& xs) {
  require(!xs.empty(), ErrKind::invalid_argument, "concat_channels: empty input list");
  for (const auto& x : xs) detail::check_image(x, "concat_channels");
  const int64_t N = xs[0].shape()[0], H = xs[0].shape()[2], W = xs[0].shape()[3];
  int64_t Ct = 0;
  for (const auto& x : xs) {
    require(x.shape()[0] == N && x.shape()[2] == H && x.shape()[3] == W, ErrKind::invalid_shape,
            "concat_channels: mismatched N/H/W: " + x.shape().str() + " vs " + xs[0].shape().str());
    Ct += x.shape()[1];
  }
  TensorT<T> y(Shape{N, Ct, H, W});
  bool rg = false;
  for (const auto& x : xs) rg = rg || x.requires_grad();
  y.set_requires_grad(rg);

  const int64_t hw = H * W;
  T* yd = y.data();
  int64_t coff = 0;
  for (const auto& x : xs) {
    const int64_t C = x.shape()[1];
    const T* xd = x.data();
    for (int64_t n = 0; n < N; ++n)
      std::copy(xd + size_t(n * C * hw), xd + size_t((n + 1) * C * hw),
                yd + size_t((n * Ct + coff) * hw));
    coff += C;
  }

  if (tape && y.requires_grad()) {
    std::vector<std::shared_ptr<NodeT<T>>> xns;
    for (const auto& x : xs) xns.push_back(x.node());
    auto yn = y.node();
    tape->record([xns, yn, N, Ct, hw]() {
      if (yn->grad.empty()) return;
      int64_t coff = 0;
      for (auto& xn : xns) {
        const int64_t C = int64_t(xn->shape.d[1]);
        if (xn->requires_grad) {
          if (xn->grad.empty()) xn->grad.assign(xn->data.size(), T(0));
          for (int64_t n = 0; n < N; ++n) {
            const T* g = yn->grad.data() + size_t((n * Ct + coff) * hw);
            T* gx = xn->grad.data() + size_t(n * C * hw);
            for (int64_t i = 0; i < C * hw; ++i) gx[i] += g[i];
          }
        }
        coff += C;
      }
    });
  }
  return y;
}

namespace detail {
template <typename T>
TensorT<T> ewise_binary(TapeT<T>* tape, const TensorT<T>& a, const TensorT<T>& b, T bsign,
                        const char* op) {
  require(a.shape() == b.shape(), ErrKind::invalid_shape,
          std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  TensorT<T> y(a.shape());
  y.set_requires_grad(a.requires_grad() || b.requires_grad());
  const int64_t n = a.numel();
  const T* ad = a.data();
  const T* bd = b.data();
  T* yd = y.data();
  for (int64_t i = 0; i < n; ++i) yd[i] = ad[i] + bsign * bd[i];
  if (tape && y.requires_grad()) {
    auto an = a.node();
    auto bn = b.node();
    auto yn = y.node();
    tape->record([an, bn, yn, bsign, n]() {
      if (yn->grad.empty()) return;
      if (an->requires_grad) {
        if (an->grad.empty()) an->grad.assign(an->data.size(), T(0));
        for (int64_t i = 0; i < n; ++i) an->grad[size_t(i)] += yn->grad[size_t(i)];
      }
      if (bn->requires_grad) {
        if (bn->grad.empty()) bn->grad.assign(bn->data.size(), T(0));
        for (int64_t i = 0; i < n; ++i) bn->grad[size_t(i)] += bsign * yn->grad[size_t(i)];
      }
    });
  }
  return y;
}
}  // namespace detail

template <typename T>
TensorT<T> sub(TapeT<T>* tape, const TensorT<T>& a, const TensorT<T>& b) {
  return detail::ewise_binary(tape, a, b, T(-1), "sub");
}

template <typename T>
TensorT<T> add(TapeT<T>* tape, const TensorT<T>& a, const TensorT<T>& b) {
  return detail::ewise_binary(tape, a, b, T(1), "add");
}

// Weighted elementwise sum of same-shaped tensors: y = sum_i w_i * x_i.
// Backs aggregate_segments / fuse_streams / weighted loss totals.
template <typename T>
TensorT<T> wsum(TapeT<T>* tape, const std::vector<TensorT<T>>& xs,
                const std::vector<double>& ws) {
  require(!xs.empty(), ErrKind::invalid_argument, "wsum: empty input list");
  require(xs.size() == ws.size(), ErrKind::invalid_argument, "wsum: weight count mismatch");
  for (const auto& x : xs)
    require(x.shape() == xs[0].shape(), ErrKind::invalid_shape,
            "wsum: shape mismatch " + x.shape().str() + " vs " + xs[0].shape().str());
  TensorT<T> y(xs[0].shape());
  bool rg = false;
  for (const auto& x : xs) rg = rg || x.requires_grad();
  y.set_requires_grad(rg);
  const int64_t n = y.numel();
  std::vector<double> acc(size_t(n), 0.0);
  for (size_t j = 0; j < xs.size(); ++j) {
    const T* xd = xs[j].data();
    const double w = ws[j];
    for (int64_t i = 0; i < n; ++i) acc[size_t(i)] += w * double(xd[i]);
  }
  T* yd = y.data();
  for (int64_t i = 0; i < n; ++i) yd[i] = T(acc[size_t(i)]);

  if (tape && y.requires_grad()) {
    std::vector<std::shared_ptr<NodeT<T>>> xns;
    for (const auto& x : xs) xns.push_back(x.node());
    auto yn = y.node();
    auto wcopy = ws;
    tape->record([xns, yn, wcopy, n]() {
      if (yn->grad.empty()) return;
      for (size_t j = 0; j < xns.size(); ++j) {
        auto& xn = xns[j];
        if (!xn->requires_grad) continue;
        if (xn->grad.empty()) xn->grad.assign(xn->data.size(), T(0));
        const T w = T(wcopy[j]);
        for (int64_t i = 0; i < n; ++i) xn->grad[size_t(i)] += w * yn->grad[size_t(i)];
      }
    });
  }
  return y;
}

// Fully connected layer: x[N,D], W[K,D], b[K] -> y[N,K].
template <typename T>
TensorT<T> linear(TapeT<T>* tape, const TensorT<T>& x, const TensorT<T>& W,
                  const TensorT<T>& b) {
  require(x.defined() && x.shape().rank == 2, ErrKind::invalid_shape,
          "linear: input must be [N,D], got " + (x.defined() ? x.shape().str() : "undefined"));
  const int64_t N = x.shape()[0], D = x.shape()[1];
  require(W.shape().rank == 2 && W.shape()[1] == D, ErrKind::invalid_shape,
          "linear: weight must be [K," + std::to_string(D) + "], got " + W.shape().str());
  const int64_t K = W.shape()[0];
  require(b.shape().rank == 1 && b.shape()[0] == K, ErrKind::invalid_shape,
          "linear: bias must be [" + std::to_string(K) + "], got " + b.shape().str());
  TensorT<T> y(Shape{N, K});
  y.set_requires_grad(x.requires_grad() || W.requires_grad() || b.requires_grad());
  const T* xd = x.data();
  const T* wd = W.data();
  const T* bd = b.data();
  T* yd = y.data();
  for (int64_t n = 0; n < N; ++n) {
    const T* xrow = xd + size_t(n) * D;
    for (int64_t k = 0; k < K; ++k) {
      const T* wrow = wd + size_t(k) * D;
      double s = double(bd[k]);
      for (int64_t d = 0; d < D; ++d) s += double(xrow[d]) * double(wrow[d]);
      yd[n * K + k] = T(s);
    }
  }
  if (tape && y.requires_grad()) {
    auto xn = x.node();
    auto Wn = W.node();
    auto bn = b.node();
    auto yn = y.node();
    tape->record([xn, Wn, bn, yn, N, D, K]() {
      if (yn->grad.empty()) return;
      const T* g = yn->grad.data();
      if (xn->requires_grad) {
        if (xn->grad.empty()) xn->grad.assign(xn->data.size(), T(0));
        for (int64_t n = 0; n < N; ++n)
          for (int64_t d = 0; d < D; ++d) {
            double s = 0.0;
            for (int64_t k = 0; k < K; ++k)
              s += double(g[n * K + k]) * double(Wn->data[size_t(k * D + d)]);
            xn->grad[size_t(n * D + d)] += T(s);
          }
      }
      if (Wn->requires_grad) {
        if (Wn->grad.empty()) Wn->grad.assign(Wn->data.size(), T(0));
        for (int64_t k = 0; k < K; ++k)
          for (int64_t d = 0; d < D; ++d) {
            double s = 0.0;
            for (int64_t n = 0; n < N; ++n)
              s += double(g[n * K + k]) * double(xn->data[size_t(n * D + d)]);
            Wn->grad[size_t(k * D + d)] += T(s);
          }
      }
      if (bn->requires_grad) {
        if (bn->grad.empty()) bn->grad.assign(bn->data.size(), T(0));
        for (int64_t k = 0; k < K; ++k) {
          double s = 0.0;
          for (int64_t n = 0; n < N; ++n) s += double(g[n * K + k]);
          bn->grad[size_t(k)] += T(s);
        }
      }
    });
  }
  return y;
}

template <typename T>
struct SoftmaxXentOut {
  TensorT<T> loss;   // scalar, mean over the batch
  TensorT<T> probs;  // [N,C], detached
};

// Softmax cross-entropy with max-subtraction. loss_i = logsumexp(z_i) - z_iy,
// averaged over the batch; probs are returned detached.
template <typename T>
SoftmaxXentOut<T> softmax_xent(TapeT<T>* tape, const TensorT<T>& logits,
                               const std::vector<int>& labels) {
  require(logits.defined() && logits.shape().rank == 2, ErrKind::invalid_shape,
          "softmax_xent: logits must be [N,C]");
  const int64_t N = logits.shape()[0], C = logits.shape()[1];
  require(int64_t(labels.size()) == N, ErrKind::invalid_argument,
          "softmax_xent: label count " + std::to_string(labels.size()) + " != batch " +
              std::to_string(N));
  for (int64_t i = 0; i < N; ++i)
    require(labels[size_t(i)] >= 0 && labels[size_t(i)] < C, ErrKind::invalid_label,
            "softmax_xent: label " + std::to_string(labels[size_t(i)]) + " at row " +
                std::to_string(i) + " outside [0," + std::to_string(C) + ")");

  auto pd = std::make_shared<std::vector<double>>(size_t(N * C));
  const T* zd = logits.data();
  double total = 0.0;
  for (int64_t i = 0; i < N; ++i) {
    const T* row = zd + size_t(i) * C;
    double m = double(row[0]);
    for (int64_t c = 1; c < C; ++c) m = std::max(m, double(row[c]));
    double s = 0.0;
    for (int64_t c = 0; c < C; ++c) {
      double e = pexp(double(row[c]) - m);
      (*pd)[size_t(i * C + c)] = e;
      s += e;
    }
    const double inv = 1.0 / s;
    for (int64_t c = 0; c < C; ++c) (*pd)[size_t(i * C + c)] *= inv;
    total += (plog(s) + m) - double(row[labels[size_t(i)]]);
  }

  SoftmaxXentOut<T> out;
  out.loss = TensorT<T>(Shape{});
  out.loss.data()[0] = T(total / double(N));
  out.loss.set_requires_grad(logits.requires_grad());
  out.probs = TensorT<T>(Shape{N, C});
  for (int64_t i = 0; i < N * C; ++i) out.probs.data()[i] = T((*pd)[size_t(i)]);

  if (tape && logits.requires_grad()) {
    auto zn = logits.node();
    auto ln = out.loss.node();
    auto lab = labels;
    tape->record([zn, ln, pd, lab, N, C]() {
      if (ln->grad.empty()) return;
      if (zn->grad.empty()) zn->grad.assign(zn->data.size(), T(0));
      const double g = double(ln->grad[0]) / double(N);
      for (int64_t i = 0; i < N; ++i)
        for (int64_t c = 0; c < C; ++c) {
          double p = (*pd)[size_t(i * C + c)];
          double delta = (c == lab[size_t(i)]) ? 1.0 : 0.0;
          zn->grad[size_t(i * C + c)] += T(g * (p - delta));
        }
    });
  }
  return out;
}

// Scalar reduction y = sum_i c_i * x_i with fixed coefficients; the gradcheck
// harness uses it to project op outputs to a scalar loss.
template <typename T>
TensorT<T> dot_const(TapeT<T>* tape, const TensorT<T>& x, const std::vector<double>& c) {
  require(int64_t(c.size()) == x.numel(), ErrKind::invalid_argument,
          "dot_const: coefficient count does not match tensor size");
  TensorT<T> y(Shape{});
  y.set_requires_grad(x.requires_grad());
  double s = 0.0;
  const T* xd = x.data();
  for (int64_t i = 0; i < x.numel(); ++i) s += c[size_t(i)] * double(xd[i]);
  y.data()[0] = T(s);
  if (tape && y.requires_grad()) {
    auto xn = x.node();
    auto yn = y.node();
    auto cc = c;
    tape->record([xn, yn, cc]() {
      if (yn->grad.empty()) return;
      if (xn->grad.empty()) xn->grad.assign(xn->data.size(), T(0));
      const double g = double(yn->grad[0]);
      for (size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += T(cc[i] * g);
    });
  }
  return y;
}

// Max relative error between analytic and central-difference gradients of a
// scalar-valued op with respect to x. rel = |a-n| / max(1e-8, |a|+|n|).
template <typename F>
double finite_diff_check(F&& op, TensorT<double>& x, double eps) {
  require(eps > 0.0, ErrKind::invalid_argument, "finite_diff_check: eps must be positive");
  x.set_requires_grad(true);
  x.zero_grad();
  TapeT<double> tape;
  TensorT<double> loss = op(&tape, x);
  require(loss.numel() == 1, ErrKind::invalid_argument,
          "finite_diff_check: op must produce a scalar loss");
  backward(tape, loss);
  std::vector<double> analytic = x.has_grad() ? x.grad() : std::vector<double>(size_t(x.numel()), 0.0);

  double worst = 0.0;
  double* xd = x.data();
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double orig = xd[i];
    xd[i] = orig + eps;
    TapeT<double> t1;
    double lp = op(&t1, x).data()[0];
    xd[i] = orig - eps;
    TapeT<double> t2;
    double lm = op(&t2, x).data()[0];
    xd[i] = orig;
    const double numeric = (lp - lm) / (2.0 * eps);
    const double a = analytic[size_t(i)];
    const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace off
