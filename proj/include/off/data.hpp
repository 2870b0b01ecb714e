#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "off/mathfn.hpp"
#include "off/ops.hpp"
#include "off/rng.hpp"
#include "off/tensor.hpp"

namespace off {

// Continuous test patterns, evaluated in pattern-local coordinates with the
// origin at the pattern center. gaussian_blob is point-sampled from its
// closed form; square and bars are area-sampled over the pixel box, which
// makes their profiles piecewise linear in position (friendly to bilinear
// checks).
enum class PatternKind { gaussian_blob, square, bars };

struct Pattern {
  PatternKind kind = PatternKind::gaussian_blob;
  double param = 1.6;  // sigma for gaussian_blob, side for square and bars

  static Pattern gaussian(double sigma) { return {PatternKind::gaussian_blob, sigma}; }
  static Pattern square_pat(double side) { return {PatternKind::square, side}; }
  static Pattern bars_pat(double side) { return {PatternKind::bars, side}; }
};

namespace detail {
// overlap of [u-0.5, u+0.5] with [-half, half], in [0,1]
inline double box_overlap(double u, double half) {
  double lo = std::max(u - 0.5, -half);
  double hi = std::min(u + 0.5, half);
  return hi > lo ? hi - lo : 0.0;
}
// integral of the bars on/off profile (width 1.5 on, period 3) over [0, q]
inline double bars_cdf(double q) {
  static constexpr double kPeriod = 3.0, kWidth = 1.5;
  if (q <= 0.0) return 0.0;
  double k = std::floor(q / kPeriod);
  double r = q - k * kPeriod;
  return k * kWidth + std::min(r, kWidth);
}
}  // namespace detail

inline void validate_pattern(const Pattern& p) {
  require(p.param > 0.0, ErrKind::invalid_argument, "pattern: parameter must be positive");
}

// Intensity at offset (ux, uy) from the pattern center, in [0, 1].
inline double pattern_value(const Pattern& p, double ux, double uy) {
  switch (p.kind) {
    case PatternKind::gaussian_blob: {
      const double s2 = p.param * p.param;
      return pexp(-(ux * ux + uy * uy) / (2.0 * s2));
    }
    case PatternKind::square:
      return detail::box_overlap(ux, p.param / 2.0) * detail::box_overlap(uy, p.param / 2.0);
    case PatternKind::bars: {
      const double half = p.param / 2.0;
      double oy = detail::box_overlap(uy, half);
      if (oy == 0.0) return 0.0;
      double qa = std::max(ux - 0.5, -half) + half;
      double qb = std::min(ux + 0.5, half) + half;
      if (qb <= qa) return 0.0;
      return (detail::bars_cdf(qb) - detail::bars_cdf(qa)) * oy;
    }
  }
  return 0.0;
}

// Half-width of the region the renderer treats as the pattern's support.
inline double pattern_extent(const Pattern& p) {
  switch (p.kind) {
    case PatternKind::gaussian_blob:
      return 3.0 * p.param;
    case PatternKind::square:
    case PatternKind::bars:
      return p.param / 2.0 + 0.5;
  }
  return 0.0;
}

struct Clip {
  int T = 0, C = 1, H = 0, W = 0;
  std::vector<float> data;  // [T,C,H,W] row-major
  int label = -1;
  bool has_velocity = false;
  double vx = 0.0, vy = 0.0;
  int64_t id = -1;

  float at(int t, int c, int h, int w) const {
    return data[size_t(((int64_t(t) * C + c) * H + h) * W + w)];
  }
  const float* frame_ptr(int t) const { return data.data() + size_t(t) * C * H * W; }
  Tensor frame(int t) const {
    require(t >= 0 && t < T, ErrKind::invalid_argument, "clip: frame index out of range");
    std::vector<float> v(frame_ptr(t), frame_ptr(t) + size_t(C) * H * W);
    return Tensor::from_data(Shape{1, C, H, W}, std::move(v));
  }
};

// Render T frames of a pattern translating at (vx, vy) px/frame, with its
// center at (sx, sy) in frame 0. Errors if the pattern support would leave
// the frame at any time.
inline Clip gen_translating_clip(const Pattern& pat, double vx, double vy, int T, int size,
                                 double sx, double sy) {
  validate_pattern(pat);
  require(T >= 1, ErrKind::invalid_argument, "gen_translating_clip: T must be at least 1");
  require(size >= 2, ErrKind::invalid_argument, "gen_translating_clip: size must be at least 2");
  const double ext = pattern_extent(pat);
  for (int t : {0, T - 1}) {
    const double cx = sx + vx * t, cy = sy + vy * t;
    require(cx - ext >= 0.0 && cx + ext <= double(size - 1) && cy - ext >= 0.0 &&
                cy + ext <= double(size - 1),
            ErrKind::out_of_bounds,
            "gen_translating_clip: pattern exits frame at t=" + std::to_string(t));
  }
  Clip c;
  c.T = T;
  c.C = 1;
  c.H = size;
  c.W = size;
  c.has_velocity = true;
  c.vx = vx;
  c.vy = vy;
  c.data.resize(size_t(T) * size * size);
  float* dst = c.data.data();
  for (int t = 0; t < T; ++t) {
    const double cx = sx + vx * t, cy = sy + vy * t;
    for (int h = 0; h < size; ++h) {
      const double uy = double(h) - cy;
      for (int w = 0; w < size; ++w) *dst++ = float(pattern_value(pat, double(w) - cx, uy));
    }
  }
  return c;
}

struct Dataset {
  std::vector<Clip> clips;
  int classes = 0;
};

// The 8 direction classes are multiples of 45 degrees; diagonal components
// come from sqrt(1/2) so no trig call is needed.
inline void direction_unit(int k, double& ux, double& uy) {
  require(k >= 0 && k < 8, ErrKind::invalid_argument, "direction_unit: class out of range");
  static const double r = std::sqrt(0.5);
  static const double tab[8][2] = {{1, 0},  {r, r},   {0, 1},  {-r, r},
                                   {-1, 0}, {-r, -r}, {0, -1}, {r, -r}};
  ux = tab[k][0];
  uy = tab[k][1];
}

// 8 classes of identical appearance, differing only in motion direction.
// Start positions are drawn so the whole trajectory is centered in the frame
// with a safety margin; each clip gets its own (seed, id) RNG stream.
inline Dataset gen_direction_dataset(int clips_per_class, int T, int size, double speed,
                                     const Pattern& pat, uint64_t seed) {
  validate_pattern(pat);
  require(clips_per_class >= 1, ErrKind::invalid_argument,
          "gen_direction_dataset: clips_per_class must be positive");
  require(T >= 2, ErrKind::invalid_argument, "gen_direction_dataset: T must be at least 2");
  require(speed >= 0.0, ErrKind::invalid_argument, "gen_direction_dataset: negative speed");
  const double ext = pattern_extent(pat);
  const double margin = ext + speed * double(T - 1) / 2.0 + 1.0;
  require(2.0 * margin <= double(size - 1), ErrKind::invalid_argument,
          "gen_direction_dataset: frame size " + std::to_string(size) +
              " too small for pattern and trajectory (need margin " + std::to_string(margin) +
              " per side)");
  Dataset ds;
  ds.classes = 8;
  ds.clips.reserve(size_t(8) * clips_per_class);
  for (int k = 0; k < 8; ++k) {
    double ux, uy;
    direction_unit(k, ux, uy);
    const double vx = speed * ux, vy = speed * uy;
    for (int j = 0; j < clips_per_class; ++j) {
      const int64_t id = int64_t(k) * clips_per_class + j;
      Rng rng(seed, uint64_t(id));
      const double cx = rng.uniform(margin, double(size - 1) - margin);
      const double cy = rng.uniform(margin, double(size - 1) - margin);
      const double half_span = double(T - 1) / 2.0;
      Clip clip = gen_translating_clip(pat, vx, vy, T, size, cx - vx * half_span,
                                       cy - vy * half_span);
      clip.label = k;
      clip.id = id;
      ds.clips.push_back(std::move(clip));
    }
  }
  return ds;
}

// Segment sampling: a clip of length L is cut into beta segments of length
// interval = floor(L/beta); training picks a random phase p and takes alpha
// consecutive segment frames p + k*interval; testing uses the centered phase
// over all beta segments.
inline int segment_interval(int L, int beta) { return L / beta; }

inline std::vector<int> train_sample_indices(int L, int alpha, int beta, Rng& rng) {
  require(beta >= 1 && alpha >= 1, ErrKind::invalid_argument,
          "train_sample_indices: alpha and beta must be positive");
  require(L >= beta, ErrKind::invalid_argument,
          "train_sample_indices: clip length " + std::to_string(L) + " shorter than beta " +
              std::to_string(beta));
  require(alpha <= beta, ErrKind::invalid_argument,
          "train_sample_indices: alpha " + std::to_string(alpha) + " exceeds beta " +
              std::to_string(beta));
  const int interval = segment_interval(L, beta);
  const int pmax = L - 1 - (alpha - 1) * interval;
  const int p = int(rng.below(uint64_t(pmax + 1)));
  std::vector<int> idx(size_t(alpha));
  for (int k = 0; k < alpha; ++k) idx[size_t(k)] = p + k * interval;
  return idx;
}

inline std::vector<int> test_sample_indices(int L, int beta) {
  require(beta >= 1, ErrKind::invalid_argument, "test_sample_indices: beta must be positive");
  require(L >= beta, ErrKind::invalid_argument,
          "test_sample_indices: clip length " + std::to_string(L) + " shorter than beta " +
              std::to_string(beta));
  const int interval = segment_interval(L, beta);
  const int offset = (L - 1 - (beta - 1) * interval) / 2;
  std::vector<int> idx(size_t(beta));
  for (int k = 0; k < beta; ++k) idx[size_t(k)] = offset + k * interval;
  return idx;
}

inline double bilerp(const float* plane, int H, int W, double x, double y) {
  int x0 = int(std::floor(x)), y0 = int(std::floor(y));
  double fx = x - x0, fy = y - y0;
  auto px = [&](int yy, int xx) -> double {
    if (xx < 0 || xx >= W || yy < 0 || yy >= H) return 0.0;
    return double(plane[size_t(yy) * W + xx]);
  };
  return (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x0 + 1)) +
         fy * ((1 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1));
}

// Normalized first-order flow residual |vx*gx + vy*gy + gt| / (|gx|+|gy|+|gt|)
// between frames t and t+1, using the clip's ground-truth velocity. The
// discrete operators are consistency-matched: spatial derivatives are the
// Sobel responses scaled to unit gradient (/6) and centered in time between
// the two frames; the temporal difference is smoothed by the same 3x3 box
// the Sobel effectively applies. Exactly 0 for a static clip. Means are
// taken over the interior (1-pixel border excluded).
inline double orthogonality_residual(const Clip& clip, int t) {
  require(clip.has_velocity, ErrKind::invalid_argument,
          "orthogonality_residual: clip has no ground-truth velocity");
  require(t >= 0 && t + 1 < clip.T, ErrKind::invalid_argument,
          "orthogonality_residual: frame pair out of range");
  require(clip.C == 1, ErrKind::invalid_argument,
          "orthogonality_residual: expected single-channel clip");
  const int H = clip.H, W = clip.W;
  require(H >= 3 && W >= 3, ErrKind::invalid_shape, "orthogonality_residual: frame too small");

  auto to_tensor = [&](int ti) {
    std::vector<double> v(size_t(H) * W);
    const float* src = clip.frame_ptr(ti);
    for (size_t i = 0; i < v.size(); ++i) v[i] = double(src[i]);
    return TensorT<double>::from_data(Shape{1, 1, H, W}, std::move(v));
  };
  TensorT<double> fa = to_tensor(t), fb = to_tensor(t + 1);
  TensorT<double> sxa = conv2d_fixed3x3<double>(nullptr, fa, sobel_x_kernel<double>());
  TensorT<double> sxb = conv2d_fixed3x3<double>(nullptr, fb, sobel_x_kernel<double>());
  TensorT<double> sya = conv2d_fixed3x3<double>(nullptr, fa, sobel_y_kernel<double>());
  TensorT<double> syb = conv2d_fixed3x3<double>(nullptr, fb, sobel_y_kernel<double>());
  TensorT<double> diff = sub<double>(nullptr, fb, fa);
  const std::array<double, 9> box = {1, 1, 1, 1, 1, 1, 1, 1, 1};
  TensorT<double> ftb = conv2d_fixed3x3<double>(nullptr, diff, box);

  double num = 0.0, den = 0.0;
  int64_t count = 0;
  for (int h = 1; h + 1 < H; ++h) {
    for (int w = 1; w + 1 < W; ++w) {
      const int64_t i = int64_t(h) * W + w;
      const double gx = (sxa.data()[i] + sxb.data()[i]) / 12.0;
      const double gy = -(sya.data()[i] + syb.data()[i]) / 12.0;
      const double gt = ftb.data()[i] / 9.0;
      num += std::abs(clip.vx * gx + clip.vy * gy + gt);
      den += std::abs(gx) + std::abs(gy) + std::abs(gt);
      ++count;
    }
  }
  den = den / double(count) + 1e-8;
  return (num / double(count)) / den;
}

// On-disk dataset: a text manifest plus one raw little-endian f32 file per
// clip in [T,C,H,W] order.
inline std::string clip_filename(int64_t id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "clip_%06lld.raw", (long long)id);
  return buf;
}

inline void save_dataset(const std::string& dir, const Dataset& ds) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream mf(fs::path(dir) / "manifest.txt");
  require(mf.good(), ErrKind::format, "save_dataset: cannot write manifest in " + dir);
  char line[256];
  for (const auto& c : ds.clips) {
    require(c.has_velocity, ErrKind::invalid_argument, "save_dataset: clip lacks velocity");
    std::snprintf(line, sizeof line, "%lld %d %d %d %d %.17g %.17g\n", (long long)c.id, c.label,
                  c.T, c.H, c.W, c.vx, c.vy);
    mf << line;
    std::ofstream rf(fs::path(dir) / clip_filename(c.id), std::ios::binary);
    require(rf.good(), ErrKind::format, "save_dataset: cannot write " + clip_filename(c.id));
    rf.write(reinterpret_cast<const char*>(c.data.data()),
             std::streamsize(c.data.size() * sizeof(float)));
    require(rf.good(), ErrKind::format, "save_dataset: short write for " + clip_filename(c.id));
  }
  require(mf.good(), ErrKind::format, "save_dataset: manifest write failed");
}

inline Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream mf(fs::path(dir) / "manifest.txt");
  require(mf.good(), ErrKind::format, "load_dataset: missing manifest.txt in " + dir);
  Dataset ds;
  std::string line;
  int lineno = 0;
  int max_label = -1;
  while (std::getline(mf, line)) {
    ++lineno;
    if (line.empty()) continue;
    Clip c;
    long long id = 0;
    if (std::sscanf(line.c_str(), "%lld %d %d %d %d %lg %lg", &id, &c.label, &c.T, &c.H, &c.W,
                    &c.vx, &c.vy) != 7)
      fail(ErrKind::format, "load_dataset: bad manifest line " + std::to_string(lineno));
    require(c.label >= 0 && c.T >= 1 && c.H >= 1 && c.W >= 1, ErrKind::format,
            "load_dataset: invalid record at manifest line " + std::to_string(lineno));
    c.id = id;
    c.C = 1;
    c.has_velocity = true;
    const std::string fname = clip_filename(c.id);
    std::ifstream rf(fs::path(dir) / fname, std::ios::binary);
    require(rf.good(), ErrKind::format, "load_dataset: missing clip file " + fname);
    const size_t count = size_t(c.T) * c.C * c.H * c.W;
    c.data.resize(count);
    rf.read(reinterpret_cast<char*>(c.data.data()), std::streamsize(count * sizeof(float)));
    require(size_t(rf.gcount()) == count * sizeof(float), ErrKind::format,
            "load_dataset: clip file " + fname + " truncated");
    rf.peek();
    require(rf.eof(), ErrKind::format, "load_dataset: clip file " + fname + " has trailing data");
    max_label = std::max(max_label, c.label);
    ds.clips.push_back(std::move(c));
  }
  require(!ds.clips.empty(), ErrKind::format, "load_dataset: empty manifest in " + dir);
  ds.classes = max_label + 1;
  return ds;
}

}  // namespace off
