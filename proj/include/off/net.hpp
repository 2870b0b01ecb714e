#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "off/ops.hpp"
#include "off/tensor.hpp"

namespace off {

// Architecture knobs. trunk width is tied to the reduction width: each OFF
// unit projects its concatenated input to 2*reduced_channels.
struct OffConfig {
  int levels = 3;
  int reduced_channels = 8;  // C_r, output width of the shared 1x1 reduce
  int blocks_per_level = 2;
  int classes = 8;
  int backbone_width = 8;  // level l feature width is backbone_width * 2^l
  int input_channels = 1;
  bool ablate_off_layer = false;  // replace [Fx,Fy,Ft] with the raw reduced map

  int trunk_width() const { return 2 * reduced_channels; }
  int level_width(int l) const { return backbone_width << l; }

  void validate() const {
    require(levels >= 1 && levels <= 6, ErrKind::config, "config: levels must be in [1,6]");
    require(reduced_channels >= 1, ErrKind::config, "config: reduced_channels must be positive");
    require(blocks_per_level >= 1, ErrKind::config, "config: blocks_per_level must be positive");
    require(classes >= 2, ErrKind::config, "config: classes must be at least 2");
    require(backbone_width >= 1, ErrKind::config, "config: backbone_width must be positive");
    require(input_channels >= 1, ErrKind::config, "config: input_channels must be positive");
  }
};

template <typename T>
using NamedParams = std::vector<std::pair<std::string, TensorT<T>>>;

template <typename T>
struct Conv3x3T {
  TensorT<T> W, b;
  int stride = 1;

  void init(int cin, int cout, int stride_) {
    stride = stride_;
    W = TensorT<T>(Shape{cout, cin, 3, 3});
    b = TensorT<T>(Shape{cout});
  }
  TensorT<T> forward(TapeT<T>* tape, const TensorT<T>& x) const {
    return conv3x3(tape, x, W, b, stride);
  }
  void collect(NamedParams<T>& out, const std::string& prefix) {
    out.emplace_back(prefix + ".W", W);
    out.emplace_back(prefix + ".b", b);
  }
};

template <typename T>
struct Conv1x1T {
  TensorT<T> W, b;
  int stride = 1;

  void init(int cin, int cout, int stride_) {
    stride = stride_;
    W = TensorT<T>(Shape{cout, cin, 1, 1});
    b = TensorT<T>(Shape{cout});
  }
  TensorT<T> forward(TapeT<T>* tape, const TensorT<T>& x) const {
    return conv1x1(tape, x, W, b, stride);
  }
  void collect(NamedParams<T>& out, const std::string& prefix) {
    out.emplace_back(prefix + ".W", W);
    out.emplace_back(prefix + ".b", b);
  }
};

template <typename T>
struct LinearT {
  TensorT<T> W, b;

  void init(int d, int k) {
    W = TensorT<T>(Shape{k, d});
    b = TensorT<T>(Shape{k});
  }
  TensorT<T> forward(TapeT<T>* tape, const TensorT<T>& x) const { return linear(tape, x, W, b); }
  void collect(NamedParams<T>& out, const std::string& prefix) {
    out.emplace_back(prefix + ".W", W);
    out.emplace_back(prefix + ".b", b);
  }
};

// Pre-activation-free residual block: y = relu(conv2(relu(conv1(x))) + s(x)),
// where s is the identity when stride == 1 and channels match, otherwise a
// stride-matching 1x1 projection.
template <typename T>
struct ResBlockT {
  Conv3x3T<T> c1, c2;
  Conv1x1T<T> proj;
  bool has_proj = false;
  int stride = 1;

  void init(int cin, int cout, int stride_) {
    stride = stride_;
    c1.init(cin, cout, stride_);
    c2.init(cout, cout, 1);
    has_proj = (stride_ != 1 || cin != cout);
    if (has_proj) proj.init(cin, cout, stride_);
  }
  TensorT<T> forward(TapeT<T>* tape, const TensorT<T>& x) const {
    TensorT<T> h = relu(tape, c1.forward(tape, x));
    h = c2.forward(tape, h);
    TensorT<T> s = has_proj ? proj.forward(tape, x) : x;
    return relu(tape, add(tape, h, s));
  }
  void collect(NamedParams<T>& out, const std::string& prefix) {
    c1.collect(out, prefix + ".c1");
    c2.collect(out, prefix + ".c2");
    if (has_proj) proj.collect(out, prefix + ".proj");
  }
};

// Shared 1x1 reduction for one level; no nonlinearity. The same parameters
// reduce both frames of a pair.
template <typename T>
struct OffLayerT {
  Conv1x1T<T> reduce;

  void init(int cin, int cr) { reduce.init(cin, cr, 1); }
  void collect(NamedParams<T>& out, const std::string& prefix) {
    reduce.collect(out, prefix + ".reduce");
  }
};

template <typename T>
struct OffFeatures {
  TensorT<T> fx, fy, ft;
  TensorT<T> ra, rb;  // reduced maps (rb unused downstream, kept for tests)
};

// OFF triple at one level: spatial derivatives of the reduced map of the
// first frame, temporal difference between reduced maps of the two frames.
template <typename T>
OffFeatures<T> off_layer(TapeT<T>* tape, const TensorT<T>& feat_a, const TensorT<T>& feat_b,
                         const OffLayerT<T>& layer) {
  OffFeatures<T> f;
  f.ra = layer.reduce.forward(tape, feat_a);
  f.rb = layer.reduce.forward(tape, feat_b);
  f.fx = conv2d_fixed3x3(tape, f.ra, sobel_x_kernel<T>());
  f.fy = conv2d_fixed3x3(tape, f.ra, sobel_y_kernel<T>());
  f.ft = sub(tape, f.rb, f.ra);
  return f;
}

// One OFF level: concat OFF features with the incoming trunk (if any), then
// blocks_per_level residual blocks, the first of which projects to the trunk
// width.
template <typename T>
struct OffUnitT {
  std::vector<ResBlockT<T>> blocks;

  void init(int cin, int trunk, int nblocks) {
    blocks.resize(size_t(nblocks));
    blocks[0].init(cin, trunk, 1);
    for (int i = 1; i < nblocks; ++i) blocks[size_t(i)].init(trunk, trunk, 1);
  }
  TensorT<T> forward(TapeT<T>* tape, const TensorT<T>& x) const {
    TensorT<T> h = x;
    for (const auto& blk : blocks) h = blk.forward(tape, h);
    return h;
  }
  void collect(NamedParams<T>& out, const std::string& prefix) {
    for (size_t i = 0; i < blocks.size(); ++i)
      blocks[i].collect(out, prefix + ".block" + std::to_string(i));
  }
};

template <typename T>
struct ModelT {
  OffConfig cfg;
  std::vector<Conv3x3T<T>> backbone;     // one conv per level, pool in between
  LinearT<T> rgb_cls;                    // on the last backbone level
  std::vector<OffLayerT<T>> off_reduce;  // per level
  std::vector<OffUnitT<T>> off_units;    // per level
  std::vector<ResBlockT<T>> off_trans;   // stride-2 blocks between levels
  std::vector<LinearT<T>> off_cls;       // per level

  void build(const OffConfig& c) {
    c.validate();
    cfg = c;
    backbone.assign(size_t(c.levels), {});
    off_reduce.assign(size_t(c.levels), {});
    off_units.assign(size_t(c.levels), {});
    off_trans.assign(size_t(c.levels - 1), {});
    off_cls.assign(size_t(c.levels), {});
    for (int l = 0; l < c.levels; ++l) {
      int cin = (l == 0) ? c.input_channels : c.level_width(l - 1);
      backbone[size_t(l)].init(cin, c.level_width(l), 1);
      off_reduce[size_t(l)].init(c.level_width(l), c.reduced_channels);
      int feat_c = c.ablate_off_layer ? c.reduced_channels : 3 * c.reduced_channels;
      int unit_in = feat_c + (l > 0 ? c.trunk_width() : 0);
      off_units[size_t(l)].init(unit_in, c.trunk_width(), c.blocks_per_level);
      if (l + 1 < c.levels) off_trans[size_t(l)].init(c.trunk_width(), c.trunk_width(), 2);
      off_cls[size_t(l)].init(c.trunk_width(), c.classes);
    }
    rgb_cls.init(c.level_width(c.levels - 1), c.classes);
  }

  NamedParams<T> backbone_params() {
    NamedParams<T> out;
    for (size_t l = 0; l < backbone.size(); ++l)
      backbone[l].collect(out, "backbone." + std::to_string(l));
    rgb_cls.collect(out, "rgb_cls");
    return out;
  }
  NamedParams<T> off_params() {
    NamedParams<T> out;
    for (size_t l = 0; l < off_reduce.size(); ++l) {
      const std::string lv = "off.l" + std::to_string(l);
      off_reduce[l].collect(out, lv);
      off_units[l].collect(out, lv);
      off_cls[l].collect(out, lv + ".cls");
    }
    for (size_t l = 0; l < off_trans.size(); ++l)
      off_trans[l].collect(out, "off.trans" + std::to_string(l));
    return out;
  }
  NamedParams<T> all_params() {
    NamedParams<T> out = backbone_params();
    NamedParams<T> off = off_params();
    out.insert(out.end(), off.begin(), off.end());
    return out;
  }
};

// He-uniform for hidden convolutions; residual-branch-final convolutions and
// classifier weights start at zero so every block begins as (a projection of)
// its shortcut and initial logits are exactly uniform. All biases zero.
template <typename T>
void init_model(ModelT<T>& m, Rng& rng) {
  auto he = [&rng](TensorT<T>& W) {
    const Shape& s = W.shape();
    int64_t fan_in = 1;
    for (int i = 1; i < s.rank; ++i) fan_in *= s[i];
    const double bound = std::sqrt(6.0 / double(fan_in));
    for (auto& v : W.vec()) v = T(rng.uniform(-bound, bound));
  };
  auto zero = [](TensorT<T>& t) {
    for (auto& v : t.vec()) v = T(0);
  };
  auto init_block = [&](ResBlockT<T>& blk) {
    he(blk.c1.W);
    zero(blk.c1.b);
    zero(blk.c2.W);
    zero(blk.c2.b);
    if (blk.has_proj) {
      he(blk.proj.W);
      zero(blk.proj.b);
    }
  };
  for (auto& conv : m.backbone) {
    he(conv.W);
    zero(conv.b);
  }
  zero(m.rgb_cls.W);
  zero(m.rgb_cls.b);
  for (auto& red : m.off_reduce) {
    he(red.reduce.W);
    zero(red.reduce.b);
  }
  for (auto& unit : m.off_units)
    for (auto& blk : unit.blocks) init_block(blk);
  for (auto& tr : m.off_trans) init_block(tr);
  for (auto& cls : m.off_cls) {
    zero(cls.W);
    zero(cls.b);
  }
}

// Per-level backbone features: level l is the conv+relu output at spatial
// resolution H/2^l (max-pool between levels).
template <typename T>
std::vector<TensorT<T>> backbone_forward(TapeT<T>* tape, const ModelT<T>& m,
                                         const TensorT<T>& x) {
  detail::check_image(x, "backbone_forward");
  const int64_t H = x.shape()[2], W = x.shape()[3];
  const int64_t div = int64_t(1) << (m.cfg.levels - 1);
  require(H % div == 0 && W % div == 0, ErrKind::invalid_shape,
          "backbone_forward: spatial dims " + x.shape().str() + " not divisible by " +
              std::to_string(div));
  require(x.shape()[1] == m.cfg.input_channels, ErrKind::invalid_shape,
          "backbone_forward: expected " + std::to_string(m.cfg.input_channels) + " channels, got " +
              x.shape().str());
  std::vector<TensorT<T>> feats;
  TensorT<T> h = x;
  for (int l = 0; l < m.cfg.levels; ++l) {
    if (l > 0) h = maxpool2(tape, h);
    h = relu(tape, m.backbone[size_t(l)].forward(tape, h));
    feats.push_back(h);
  }
  return feats;
}

// GAP + linear head.
template <typename T>
TensorT<T> level_classifier(TapeT<T>* tape, const LinearT<T>& cls, const TensorT<T>& fmap) {
  return cls.forward(tape, global_avg_pool(tape, fmap));
}

// Mean of per-segment logits. Empty input is an error.
template <typename T>
TensorT<T> aggregate_segments(TapeT<T>* tape, const std::vector<TensorT<T>>& logits) {
  require(!logits.empty(), ErrKind::invalid_argument, "aggregate_segments: empty logits list");
  return wsum(tape, logits, std::vector<double>(logits.size(), 1.0 / double(logits.size())));
}

// Sum of per-stream logits. Empty input is an error.
template <typename T>
TensorT<T> fuse_streams(TapeT<T>* tape, const std::vector<TensorT<T>>& logits) {
  require(!logits.empty(), ErrKind::invalid_argument, "fuse_streams: empty logits list");
  return wsum(tape, logits, std::vector<double>(logits.size(), 1.0));
}

// OFF trunk outputs for one frame pair, one tensor per level, finest first.
template <typename T>
std::vector<TensorT<T>> off_subnetwork(TapeT<T>* tape, const ModelT<T>& m,
                                       const std::vector<TensorT<T>>& feats_a,
                                       const std::vector<TensorT<T>>& feats_b) {
  require(int(feats_a.size()) == m.cfg.levels && int(feats_b.size()) == m.cfg.levels,
          ErrKind::invalid_argument, "off_subnetwork: wrong number of feature levels");
  std::vector<TensorT<T>> outs;
  TensorT<T> trunk;
  for (int l = 0; l < m.cfg.levels; ++l) {
    OffFeatures<T> f =
        off_layer(tape, feats_a[size_t(l)], feats_b[size_t(l)], m.off_reduce[size_t(l)]);
    std::vector<TensorT<T>> parts;
    if (m.cfg.ablate_off_layer)
      parts = {f.ra};
    else
      parts = {f.fx, f.fy, f.ft};
    if (trunk.defined()) parts.push_back(trunk);
    TensorT<T> h = concat_channels(tape, parts);
    h = m.off_units[size_t(l)].forward(tape, h);
    outs.push_back(h);
    if (l + 1 < m.cfg.levels) trunk = m.off_trans[size_t(l)].forward(tape, h);
  }
  return outs;
}

template <typename T>
struct NetOut {
  TensorT<T> rgb_logits;                 // aggregated over segments
  std::vector<TensorT<T>> off_logits;    // per level, aggregated over pairs
};

// Full two-stream forward over sampled segment frames. The appearance stream
// classifies each frame; the OFF stream runs on adjacent frame pairs and
// needs at least 2 segments.
template <typename T>
NetOut<T> network_forward(TapeT<T>* tape, const ModelT<T>& m,
                          const std::vector<TensorT<T>>& segments, bool with_off = true) {
  require(!segments.empty(), ErrKind::invalid_argument, "network_forward: no segments");
  if (with_off)
    require(segments.size() >= 2, ErrKind::invalid_argument,
            "network_forward: OFF stream needs at least 2 segments, got " +
                std::to_string(segments.size()));

  std::vector<std::vector<TensorT<T>>> feats;
  feats.reserve(segments.size());
  for (const auto& seg : segments) feats.push_back(backbone_forward(tape, m, seg));

  NetOut<T> out;
  std::vector<TensorT<T>> rgb_per_seg;
  for (auto& f : feats)
    rgb_per_seg.push_back(level_classifier(tape, m.rgb_cls, f[size_t(m.cfg.levels - 1)]));
  out.rgb_logits = aggregate_segments(tape, rgb_per_seg);

  if (with_off) {
    std::vector<std::vector<TensorT<T>>> per_level(size_t(m.cfg.levels));
    for (size_t i = 0; i + 1 < feats.size(); ++i) {
      std::vector<TensorT<T>> trunk = off_subnetwork(tape, m, feats[i], feats[i + 1]);
      for (int l = 0; l < m.cfg.levels; ++l)
        per_level[size_t(l)].push_back(
            level_classifier(tape, m.off_cls[size_t(l)], trunk[size_t(l)]));
    }
    for (int l = 0; l < m.cfg.levels; ++l)
      out.off_logits.push_back(aggregate_segments(tape, per_level[size_t(l)]));
  }
  return out;
}

using Model = ModelT<float>;

}  // namespace off
