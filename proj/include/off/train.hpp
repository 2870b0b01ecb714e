#pragma once

#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "off/data.hpp"
#include "off/net.hpp"

namespace off {

// RNG stream ids: model init and batch sampling draw from separate streams of
// the run seed so architecture changes don't shift data order.
inline constexpr uint64_t kInitStream = 0x1217;
inline constexpr uint64_t kTrainStream = 0x7e41;

struct TrainConfig {
  int stage = 1;
  double base_lr = 0.02;  // stage-2 default, scaled for desk-sized runs
  std::vector<int64_t> lr_milestones;
  double momentum = 0.9;
  int batch_size = 16;
  int64_t total_iters = 100;
  int alpha = 3;
  int beta = 5;
  uint64_t seed = 1;
  std::vector<double> intermediate_loss_weights;  // per level; empty = all 1.0

  void validate(int levels) const {
    require(stage == 1 || stage == 2, ErrKind::config, "config: stage must be 1 or 2");
    require(base_lr > 0.0, ErrKind::config, "config: base_lr must be positive");
    require(momentum >= 0.0 && momentum < 1.0, ErrKind::config,
            "config: momentum must be in [0,1)");
    require(batch_size >= 1, ErrKind::config, "config: batch_size must be positive");
    require(total_iters >= 1, ErrKind::config, "config: total_iters must be positive");
    require(alpha >= 1 && beta >= 1 && alpha <= beta, ErrKind::config,
            "config: need 1 <= alpha <= beta");
    for (size_t i = 0; i < lr_milestones.size(); ++i) {
      require(lr_milestones[i] > 0 && lr_milestones[i] < total_iters, ErrKind::config,
              "config: lr_milestones must lie in (0, total_iters)");
      if (i > 0)
        require(lr_milestones[i] > lr_milestones[i - 1], ErrKind::config,
                "config: lr_milestones must be strictly increasing");
    }
    if (!intermediate_loss_weights.empty()) {
      require(int(intermediate_loss_weights.size()) == levels, ErrKind::config,
              "config: intermediate_loss_weights must have one entry per level");
      for (double w : intermediate_loss_weights)
        require(w >= 0.0, ErrKind::config, "config: loss weights must be non-negative");
    }
  }

  std::vector<double> level_weights(int levels) const {
    if (intermediate_loss_weights.empty()) return std::vector<double>(size_t(levels), 1.0);
    return intermediate_loss_weights;
  }
};

// Step decay: lr = base * 0.1^(number of milestones <= iter). The boundary
// iteration already uses the decayed rate.
inline double lr_at(const TrainConfig& tc, int64_t iter) {
  int hits = 0;
  for (int64_t m : tc.lr_milestones)
    if (m <= iter) ++hits;
  double lr = tc.base_lr;
  for (int i = 0; i < hits; ++i) lr *= 0.1;
  return lr;
}

// SGD with classical momentum: v <- mu*v + g; p <- p - lr*v.
class Sgd {
 public:
  explicit Sgd(const NamedParams<float>& params) {
    vel_.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i)
      vel_[i].assign(size_t(params[i].second.numel()), 0.0f);
  }

  void step(NamedParams<float>& params, double lr, double momentum) {
    require(params.size() == vel_.size(), ErrKind::internal, "sgd: parameter set changed");
    for (size_t i = 0; i < params.size(); ++i) {
      TensorT<float>& p = params[i].second;
      std::vector<float>& v = vel_[i];
      const bool has_g = p.has_grad();
      const float* g = has_g ? p.grad().data() : nullptr;
      float* pd = p.data();
      for (size_t j = 0; j < v.size(); ++j) {
        const double gj = has_g ? double(g[j]) : 0.0;
        const double vj = momentum * double(v[j]) + gj;
        v[j] = float(vj);
        pd[j] = float(double(pd[j]) - lr * vj);
      }
    }
  }

 private:
  std::vector<std::vector<float>> vel_;
};

inline void set_requires_grad(NamedParams<float>& params, bool b) {
  for (auto& [name, t] : params) t.set_requires_grad(b);
}

inline void zero_grads(NamedParams<float>& params) {
  for (auto& [name, t] : params) t.zero_grad();
}

inline std::vector<std::vector<float>> snapshot_params(const NamedParams<float>& params) {
  std::vector<std::vector<float>> out;
  out.reserve(params.size());
  for (auto& [name, t] : params) out.push_back(t.vec());
  return out;
}

inline bool params_equal(const NamedParams<float>& params,
                         const std::vector<std::vector<float>>& snap) {
  if (params.size() != snap.size()) return false;
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& v = params[i].second.vec();
    if (v.size() != snap[i].size()) return false;
    if (std::memcmp(v.data(), snap[i].data(), v.size() * sizeof(float)) != 0) return false;
  }
  return true;
}

struct Batch {
  std::vector<Tensor> segments;  // alpha tensors [B,C,H,W]
  std::vector<int> labels;
};

namespace detail {
inline void check_uniform_dims(const Dataset& ds) {
  require(!ds.clips.empty(), ErrKind::invalid_argument, "dataset is empty");
  for (const auto& c : ds.clips)
    require(c.C == ds.clips[0].C && c.H == ds.clips[0].H && c.W == ds.clips[0].W,
            ErrKind::invalid_argument, "dataset clips have mismatched dimensions");
}
}  // namespace detail

// Random training batch: each sample draws a clip, then a segment phase.
inline Batch make_train_batch(const Dataset& ds, Rng& rng, int batch, int alpha, int beta) {
  detail::check_uniform_dims(ds);
  const int C = ds.clips[0].C, H = ds.clips[0].H, W = ds.clips[0].W;
  const int64_t plane = int64_t(C) * H * W;
  Batch b;
  b.segments.assign(size_t(alpha), Tensor());
  for (auto& s : b.segments) s = Tensor(Shape{batch, C, H, W});
  b.labels.resize(size_t(batch));
  for (int i = 0; i < batch; ++i) {
    const Clip& clip = ds.clips[size_t(rng.below(uint64_t(ds.clips.size())))];
    std::vector<int> idx = train_sample_indices(clip.T, alpha, beta, rng);
    for (int s = 0; s < alpha; ++s)
      std::memcpy(b.segments[size_t(s)].data() + int64_t(i) * plane, clip.frame_ptr(idx[size_t(s)]),
                  size_t(plane) * sizeof(float));
    b.labels[size_t(i)] = clip.label;
  }
  return b;
}

inline int argmax_row(const float* row, int n) {
  int best = 0;
  for (int i = 1; i < n; ++i)
    if (row[i] > row[best]) best = i;
  return best;
}

inline double batch_accuracy(const Tensor& logits, const std::vector<int>& labels) {
  const int64_t N = logits.shape()[0], C = logits.shape()[1];
  int correct = 0;
  for (int64_t i = 0; i < N; ++i)
    if (argmax_row(logits.data() + i * C, int(C)) == labels[size_t(i)]) ++correct;
  return double(correct) / double(N);
}

struct MetricsRow {
  int64_t iter = 0;
  int stage = 0;
  double lr = 0.0;
  double loss_total = 0.0;
  double loss_l[3] = {0.0, 0.0, 0.0};
  double train_acc = 0.0;
};

inline const char* metrics_csv_header() {
  return "iter,stage,lr,loss_total,loss_l0,loss_l1,loss_l2,train_acc";
}

inline std::string metrics_csv_row(const MetricsRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%lld,%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", (long long)r.iter,
                r.stage, r.lr, r.loss_total, r.loss_l[0], r.loss_l[1], r.loss_l[2], r.train_acc);
  return buf;
}

struct TrainOutput {
  std::vector<MetricsRow> rows;
};

// Stage 1: appearance stream only. Trains backbone + RGB classifier on
// aggregated per-segment logits; the OFF branch is neither run nor touched.
inline TrainOutput train_stage1(Model& m, const Dataset& train, const TrainConfig& tc) {
  tc.validate(m.cfg.levels);
  require(tc.stage == 1, ErrKind::config, "train_stage1: config stage is not 1");
  NamedParams<float> bb = m.backbone_params();
  NamedParams<float> offp = m.off_params();
  set_requires_grad(bb, true);
  set_requires_grad(offp, false);
  Sgd sgd(bb);
  Rng rng(tc.seed, kTrainStream);
  TrainOutput out;
  out.rows.reserve(size_t(tc.total_iters));
  for (int64_t it = 0; it < tc.total_iters; ++it) {
    Batch batch = make_train_batch(train, rng, tc.batch_size, tc.alpha, tc.beta);
    Tape tape;
    NetOut<float> net = network_forward(&tape, m, batch.segments, false);
    auto sm = softmax_xent(&tape, net.rgb_logits, batch.labels);
    backward(tape, sm.loss);
    const double lr = lr_at(tc, it);
    sgd.step(bb, lr, tc.momentum);
    zero_grads(bb);
    MetricsRow row;
    row.iter = it;
    row.stage = 1;
    row.lr = lr;
    row.loss_total = double(sm.loss.data()[0]);
    row.train_acc = batch_accuracy(net.rgb_logits, batch.labels);
    out.rows.push_back(row);
  }
  return out;
}

// Stage 2: backbone frozen (verified bit-identical afterwards), OFF branch
// trained on the weighted sum of per-level losses.
inline TrainOutput train_stage2(Model& m, const Dataset& train, const TrainConfig& tc) {
  tc.validate(m.cfg.levels);
  require(tc.stage == 2, ErrKind::config, "train_stage2: config stage is not 2");
  NamedParams<float> bb = m.backbone_params();
  NamedParams<float> offp = m.off_params();
  set_requires_grad(bb, false);
  set_requires_grad(offp, true);
  const auto bb_snapshot = snapshot_params(bb);
  const std::vector<double> weights = tc.level_weights(m.cfg.levels);
  Sgd sgd(offp);
  Rng rng(tc.seed, kTrainStream);
  TrainOutput out;
  out.rows.reserve(size_t(tc.total_iters));
  for (int64_t it = 0; it < tc.total_iters; ++it) {
    Batch batch = make_train_batch(train, rng, tc.batch_size, tc.alpha, tc.beta);
    Tape tape;
    NetOut<float> net = network_forward(&tape, m, batch.segments, true);
    std::vector<Tensor> losses;
    MetricsRow row;
    for (int l = 0; l < m.cfg.levels; ++l) {
      auto sm = softmax_xent(&tape, net.off_logits[size_t(l)], batch.labels);
      if (l < 3) row.loss_l[l] = double(sm.loss.data()[0]);
      losses.push_back(sm.loss);
    }
    Tensor total = wsum(&tape, losses, weights);
    backward(tape, total);
    const double lr = lr_at(tc, it);
    sgd.step(offp, lr, tc.momentum);
    zero_grads(offp);
    row.iter = it;
    row.stage = 2;
    row.lr = lr;
    row.loss_total = double(total.data()[0]);
    row.train_acc = batch_accuracy(net.off_logits[size_t(m.cfg.levels - 1)], batch.labels);
    out.rows.push_back(row);
  }
  require(params_equal(bb, bb_snapshot), ErrKind::internal,
          "train_stage2: frozen backbone parameters changed");
  return out;
}

struct EvalReport {
  int n = 0;
  double rgb_acc = 0.0;
  std::vector<double> off_acc;  // per level
  double fused_acc = 0.0;       // rgb + last OFF level
};

// Deterministic test-protocol evaluation: centered segment indices, fixed
// chunking, first-max argmax. with_off=false evaluates the appearance stream
// alone (off/fused reported as 0).
inline EvalReport evaluate(const Model& m, const Dataset& test, int beta, bool with_off = true) {
  detail::check_uniform_dims(test);
  const int C = test.clips[0].C, H = test.clips[0].H, W = test.clips[0].W;
  const int64_t plane = int64_t(C) * H * W;
  const int chunk = 16;
  EvalReport rep;
  rep.off_acc.assign(size_t(m.cfg.levels), 0.0);
  std::vector<int> rgb_ok(1, 0);
  std::vector<int> off_ok(size_t(m.cfg.levels), 0);
  int fused_ok = 0;

  const int n = int(test.clips.size());
  for (int base = 0; base < n; base += chunk) {
    const int bs = std::min(chunk, n - base);
    std::vector<int> labels(size_t(bs));
    std::vector<Tensor> segments(size_t(beta), Tensor());
    for (auto& s : segments) s = Tensor(Shape{bs, C, H, W});
    for (int i = 0; i < bs; ++i) {
      const Clip& clip = test.clips[size_t(base + i)];
      std::vector<int> idx = test_sample_indices(clip.T, beta);
      for (int s = 0; s < beta; ++s)
        std::memcpy(segments[size_t(s)].data() + int64_t(i) * plane,
                    clip.frame_ptr(idx[size_t(s)]), size_t(plane) * sizeof(float));
      labels[size_t(i)] = clip.label;
    }
    NetOut<float> net = network_forward<float>(nullptr, m, segments, with_off);
    Tensor fused;
    if (with_off)
      fused = fuse_streams<float>(
          nullptr, {net.rgb_logits, net.off_logits[size_t(m.cfg.levels - 1)]});
    const int64_t K = net.rgb_logits.shape()[1];
    for (int i = 0; i < bs; ++i) {
      if (argmax_row(net.rgb_logits.data() + i * K, int(K)) == labels[size_t(i)]) ++rgb_ok[0];
      if (!with_off) continue;
      for (int l = 0; l < m.cfg.levels; ++l)
        if (argmax_row(net.off_logits[size_t(l)].data() + i * K, int(K)) == labels[size_t(i)])
          ++off_ok[size_t(l)];
      if (argmax_row(fused.data() + i * K, int(K)) == labels[size_t(i)]) ++fused_ok;
    }
  }
  rep.n = n;
  rep.rgb_acc = double(rgb_ok[0]) / double(n);
  for (int l = 0; l < m.cfg.levels; ++l) rep.off_acc[size_t(l)] = double(off_ok[size_t(l)]) / double(n);
  rep.fused_acc = double(fused_ok) / double(n);
  return rep;
}

}  // namespace off
