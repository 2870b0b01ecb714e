#include "off/commands.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <ostream>

#include "off/checkpoint.hpp"
#include "off/runconfig.hpp"

namespace off {

namespace fs = std::filesystem;

namespace {

int report_error(std::ostream& log, const std::exception& e) {
  log << "error: " << e.what() << "\n";
  return 1;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

int cmd_gen_data(const GenDataArgs& a, std::ostream& log) {
  try {
    require(!a.out.empty(), ErrKind::config, "gen-data: --out is required");
    Pattern pat;
    if (a.pattern == "gaussian")
      pat = Pattern::gaussian(a.sigma);
    else if (a.pattern == "square")
      pat = Pattern::square_pat(a.sigma);
    else if (a.pattern == "bars")
      pat = Pattern::bars_pat(a.sigma);
    else
      fail(ErrKind::invalid_argument,
           "gen-data: unknown pattern '" + a.pattern + "' (expected gaussian|square|bars)");
    if (fs::exists(a.out)) {
      require(fs::is_directory(a.out), ErrKind::config,
              "gen-data: output path " + a.out + " exists and is not a directory");
      require(fs::is_empty(a.out) || a.force, ErrKind::config,
              "gen-data: output directory " + a.out + " is not empty (use --force to overwrite)");
    }
    Dataset ds = gen_direction_dataset(a.clips_per_class, a.frames, a.size, a.speed, pat, a.seed);
    save_dataset(a.out, ds);
    log << "gen-data: wrote " << ds.clips.size() << " clips (" << ds.classes << " classes, T="
        << a.frames << ", " << a.size << "x" << a.size << ") to " << a.out << "\n";
    return 0;
  } catch (const std::exception& e) {
    return report_error(log, e);
  }
}

int cmd_train(const TrainArgs& a, std::ostream& log) {
  try {
    require(!a.config.empty(), ErrKind::config, "train: --config is required");
    require(!a.out.empty(), ErrKind::config, "train: --out is required");
    RunConfig rc = load_runconfig(a.config);
    if (a.stage != 0) {
      require(a.stage == 1 || a.stage == 2, ErrKind::config, "train: --stage must be 1 or 2");
      rc.train.stage = a.stage;
      rc.train.validate(rc.net.levels);
    }
    require(!rc.data_train.empty(), ErrKind::config, "train: config missing data_train");
    Dataset train = load_dataset(rc.data_train);
    for (const auto& c : train.clips)
      require(c.label < rc.net.classes, ErrKind::config,
              "train: dataset label " + std::to_string(c.label) + " >= classes " +
                  std::to_string(rc.net.classes));

    Model m;
    m.build(rc.net);
    Rng init_rng(rc.train.seed, kInitStream);
    init_model(m, init_rng);

    fs::create_directories(a.out);
    TrainOutput to;
    std::string ckpt_path;
    if (rc.train.stage == 1) {
      to = train_stage1(m, train, rc.train);
      NamedParams<float> params = m.backbone_params();
      ckpt_path = (fs::path(a.out) / "stage1.ckpt").string();
      save_checkpoint(ckpt_path, params, {1, rc.train.total_iters, config_echo(rc)});
    } else {
      require(!a.init.empty(), ErrKind::config,
              "train: stage 2 requires --init <stage-1 checkpoint>");
      LoadedCheckpoint ck = load_checkpoint(a.init);
      require(ck.meta.stage == 1, ErrKind::config,
              "train: --init must be a stage-1 checkpoint, got stage " +
                  std::to_string(ck.meta.stage));
      NamedParams<float> all = m.all_params();
      assign_params(all, ck, /*subset=*/true);
      to = train_stage2(m, train, rc.train);
      NamedParams<float> params = m.all_params();
      ckpt_path = (fs::path(a.out) / "stage2.ckpt").string();
      save_checkpoint(ckpt_path, params, {2, rc.train.total_iters, config_echo(rc)});
    }

    const std::string csv_path = (fs::path(a.out) / "metrics.csv").string();
    std::ofstream csv(csv_path, std::ios::binary);
    require(csv.good(), ErrKind::format, "train: cannot write " + csv_path);
    csv << metrics_csv_header() << "\n";
    for (const auto& r : to.rows) csv << metrics_csv_row(r) << "\n";
    require(csv.good(), ErrKind::format, "train: metrics write failed");

    const MetricsRow& last = to.rows.back();
    log << "train: stage " << rc.train.stage << " done, " << to.rows.size() << " iters, final loss "
        << fmt("%.4f", last.loss_total) << ", final batch acc " << fmt("%.4f", last.train_acc)
        << "\n";
    log << "train: checkpoint " << ckpt_path << "\n";
    log << "train: metrics " << csv_path << "\n";
    return 0;
  } catch (const std::exception& e) {
    return report_error(log, e);
  }
}

int cmd_eval(const EvalArgs& a, std::ostream& log, EvalReport* out) {
  try {
    require(!a.ckpt.empty(), ErrKind::config, "eval: --ckpt is required");
    require(!a.data.empty(), ErrKind::config, "eval: --data is required");
    std::vector<std::string> streams = a.streams;
    if (streams.empty()) streams = {"rgb", "off", "fused"};
    for (const auto& s : streams)
      require(s == "rgb" || s == "off" || s == "fused" || s == "hypercolumn",
              ErrKind::invalid_argument,
              "eval: unknown stream '" + s + "' (expected rgb|off|fused|hypercolumn)");

    LoadedCheckpoint ck = load_checkpoint(a.ckpt);
    RunConfig rc = parse_config_echo(ck.meta.config);
    Model m;
    m.build(rc.net);
    bool wants_off = false;
    for (const auto& s : streams) wants_off = wants_off || s != "rgb";
    if (wants_off)
      require(ck.meta.stage == 2, ErrKind::config,
              "eval: stream set needs OFF parameters but checkpoint is stage " +
                  std::to_string(ck.meta.stage));
    for (const auto& s : streams)
      if (s == "hypercolumn")
        require(rc.net.ablate_off_layer, ErrKind::config,
                "eval: hypercolumn stream requires a checkpoint trained with ablate_off_layer=1");

    NamedParams<float> params = (ck.meta.stage == 2) ? m.all_params() : m.backbone_params();
    assign_params(params, ck, false);
    Dataset test = load_dataset(a.data);
    for (const auto& c : test.clips)
      require(c.label < rc.net.classes, ErrKind::config,
              "eval: dataset label " + std::to_string(c.label) + " >= classes " +
                  std::to_string(rc.net.classes));

    EvalReport rep = evaluate(m, test, rc.train.beta, /*with_off=*/ck.meta.stage == 2);
    log << "eval: n " << rep.n << "\n";
    for (const auto& s : streams) {
      if (s == "rgb") log << "eval: rgb_acc " << fmt("%.4f", rep.rgb_acc) << "\n";
      if (s == "off" || s == "hypercolumn") {
        for (int l = 0; l < m.cfg.levels; ++l)
          log << "eval: " << s << "_acc_l" << l << " " << fmt("%.4f", rep.off_acc[size_t(l)])
              << "\n";
      }
      if (s == "fused") log << "eval: fused_acc " << fmt("%.4f", rep.fused_acc) << "\n";
    }
    if (out) *out = rep;
    return 0;
  } catch (const std::exception& e) {
    return report_error(log, e);
  }
}

// ---------------------------------------------------------------------------
// gradcheck

namespace {

using DT = TensorT<double>;
using DTape = TapeT<double>;

std::vector<double> rand_coeffs(Rng& rng, int64_t n) {
  std::vector<double> c(size_t(n));
  for (auto& v : c) v = rng.uniform(-1.0, 1.0);
  return c;
}

DT rand_t(Rng& rng, Shape s, double lo = -1.0, double hi = 1.0) {
  return DT::uniform(s, rng, lo, hi);
}

// uniform magnitudes in [0.1, 1.1] with random sign: keeps relu inputs away
// from the kink at 0
DT rand_away_from_zero(Rng& rng, Shape s) {
  DT t(s);
  for (auto& v : t.vec()) {
    const double mag = rng.uniform(0.1, 1.1);
    v = rng.uniform() < 0.5 ? -mag : mag;
  }
  return t;
}

// regenerate until every 2x2 window's top-two gap clears the fd step
DT rand_pool_safe(Rng& rng, Shape s, double margin) {
  for (;;) {
    DT t = rand_t(rng, s);
    bool ok = true;
    const int64_t N = s[0], C = s[1], H = s[2], W = s[3];
    for (int64_t nc = 0; nc < N * C && ok; ++nc) {
      const double* p = t.data() + nc * H * W;
      for (int64_t h = 0; h + 1 < H && ok; h += 2)
        for (int64_t w = 0; w + 1 < W && ok; w += 2) {
          double v[4] = {p[h * W + w], p[h * W + w + 1], p[(h + 1) * W + w],
                         p[(h + 1) * W + w + 1]};
          std::sort(v, v + 4);
          if (v[3] - v[2] < margin) ok = false;
        }
    }
    if (ok) return t;
  }
}

struct CheckAccum {
  GradcheckReport rep;
  void add(const std::string& name, double err) {
    rep.per_op.emplace_back(name, err);
    rep.worst = std::max(rep.worst, err);
  }
};

}  // namespace

GradcheckReport run_gradcheck(uint64_t seed) {
  Rng rng(seed, 0x6c);
  CheckAccum acc;
  const double eps = 1e-3;

  {  // conv2d_fixed3x3 (both kernels), gradient to x
    DT x = rand_t(rng, Shape{2, 3, 6, 7});
    auto cx = rand_coeffs(rng, x.numel());
    auto kx = sobel_x_kernel<double>();
    auto ky = sobel_y_kernel<double>();
    acc.add("conv2d_fixed3x3_eq5.x", finite_diff_check(
        [&](DTape* t, DT& v) { return dot_const(t, conv2d_fixed3x3(t, v, kx), cx); }, x, eps));
    acc.add("conv2d_fixed3x3_eq6.x", finite_diff_check(
        [&](DTape* t, DT& v) { return dot_const(t, conv2d_fixed3x3(t, v, ky), cx); }, x, eps));
  }

  for (int stride : {1, 2}) {  // conv3x3
    DT x = rand_t(rng, Shape{2, 3, 5, 6});
    DT W = rand_t(rng, Shape{4, 3, 3, 3});
    DT b = rand_t(rng, Shape{4});
    const int64_t ho = (5 + stride - 1) / stride, wo = (6 + stride - 1) / stride;
    auto c = rand_coeffs(rng, 2 * 4 * ho * wo);
    const std::string base = "conv3x3_s" + std::to_string(stride);
    acc.add(base + ".x", finite_diff_check(
        [&](DTape* t, DT& v) { return dot_const(t, conv3x3(t, v, W, b, stride), c); }, x, eps));
    acc.add(base + ".W", finite_diff_check(
        [&](DTape* t, DT& v) { return dot_const(t, conv3x3(t, x, v, b, stride), c); }, W, eps));
    acc.add(base + ".b", finite_diff_check(
        [&](DTape* t, DT& v) { return dot_const(t, conv3x3(t, x, W, v, stride), c); }, b, eps));
  }

  for (int stride : {1, 2}) {  // conv1x1
    DT x = rand_t(rng, Shape{2, 3, 5, 6});
    DT W = rand_t(rng, Shape{4, 3, 1, 1});
    DT b = rand_t(rng, Shape{4});
    const int64_t ho = (5 + stride - 1) / stride, wo = (6 + stride - 1) / stride;
    auto c = rand_coeffs(rng, 2 * 4 * ho * wo);
    const std::string base = "conv1x1_s" + std::to_string(stride);
    acc.add(base + ".x", finite_diff_check(
        [&](DTape* t, DT& v) { return dot_const(t, conv1x1(t, v, W, b, stride), c); }, x, eps));
    acc.add(base + ".W", finite_diff_check(
        [&](DTape* t, DT& v) { return dot_const(t, conv1x1(t, x, v, b, stride), c); }, W, eps));
    acc.add(base + ".b", finite_diff_check(
        [&](DTape* t, DT& v) { return dot_const(t, conv1x1(t, x, W, v, stride), c); }, b, eps));
  }

  {  // relu, inputs held away from the kink
    DT x = rand_away_from_zero(rng, Shape{2, 3, 4, 5});
    auto c = rand_coeffs(rng, x.numel());
    acc.add("relu.x", finite_diff_check(
        [&](DTape* t, DT& v) { return dot_const(t, relu(t, v), c); }, x, eps));
  }

  {  // maxpool2, windows with clear maxima
    DT x = rand_pool_safe(rng, Shape{2, 2, 6, 6}, 20.0 * eps);
    auto c = rand_coeffs(rng, 2 * 2 * 3 * 3);
    acc.add("maxpool2.x", finite_diff_check(
        [&](DTape* t, DT& v) { return dot_const(t, maxpool2(t, v), c); }, x, eps));
  }

  {  // global_avg_pool
    DT x = rand_t(rng, Shape{2, 3, 4, 5});
    auto c = rand_coeffs(rng, 2 * 3);
    acc.add("global_avg_pool.x", finite_diff_check(
        [&](DTape* t, DT& v) { return dot_const(t, global_avg_pool(t, v), c); }, x, eps));
  }

  {  // concat_channels
    DT a = rand_t(rng, Shape{2, 2, 3, 4});
    DT b = rand_t(rng, Shape{2, 3, 3, 4});
    auto c = rand_coeffs(rng, 2 * 5 * 3 * 4);
    acc.add("concat_channels.a", finite_diff_check(
        [&](DTape* t, DT& v) { return dot_const(t, concat_channels(t, {v, b}), c); }, a, eps));
    acc.add("concat_channels.b", finite_diff_check(
        [&](DTape* t, DT& v) { return dot_const(t, concat_channels(t, {a, v}), c); }, b, eps));
  }

  {  // sub and add
    DT a = rand_t(rng, Shape{2, 3, 4, 2});
    DT b = rand_t(rng, Shape{2, 3, 4, 2});
    auto c = rand_coeffs(rng, a.numel());
    acc.add("sub.a", finite_diff_check(
        [&](DTape* t, DT& v) { return dot_const(t, sub(t, v, b), c); }, a, eps));
    acc.add("sub.b", finite_diff_check(
        [&](DTape* t, DT& v) { return dot_const(t, sub(t, a, v), c); }, b, eps));
    acc.add("add.a", finite_diff_check(
        [&](DTape* t, DT& v) { return dot_const(t, add(t, v, b), c); }, a, eps));
  }

  {  // wsum
    DT a = rand_t(rng, Shape{2, 3});
    DT b = rand_t(rng, Shape{2, 3});
    DT d = rand_t(rng, Shape{2, 3});
    const std::vector<double> w = {0.3, 1.2, -0.7};
    auto c = rand_coeffs(rng, a.numel());
    acc.add("wsum.x1", finite_diff_check(
        [&](DTape* t, DT& v) { return dot_const(t, wsum(t, {a, v, d}, w), c); }, b, eps));
  }

  {  // linear
    DT x = rand_t(rng, Shape{3, 5});
    DT W = rand_t(rng, Shape{4, 5});
    DT b = rand_t(rng, Shape{4});
    auto c = rand_coeffs(rng, 3 * 4);
    acc.add("linear.x", finite_diff_check(
        [&](DTape* t, DT& v) { return dot_const(t, linear(t, v, W, b), c); }, x, eps));
    acc.add("linear.W", finite_diff_check(
        [&](DTape* t, DT& v) { return dot_const(t, linear(t, x, v, b), c); }, W, eps));
    acc.add("linear.b", finite_diff_check(
        [&](DTape* t, DT& v) { return dot_const(t, linear(t, x, W, v), c); }, b, eps));
  }

  {  // softmax_xent
    DT z = rand_t(rng, Shape{4, 5}, -2.0, 2.0);
    const std::vector<int> labels = {0, 3, 2, 4};
    acc.add("softmax_xent.logits", finite_diff_check(
        [&](DTape* t, DT& v) { return softmax_xent(t, v, labels).loss; }, z, eps));
  }

  {  // residual blocks (projection and stride-2 variants)
    for (int stride : {1, 2}) {
      ResBlockT<double> blk;
      blk.init(3, 5, stride);
      for (auto& v : blk.c1.W.vec()) v = rng.uniform(-0.4, 0.4);
      for (auto& v : blk.c2.W.vec()) v = rng.uniform(-0.4, 0.4);
      for (auto& v : blk.proj.W.vec()) v = rng.uniform(-0.4, 0.4);
      for (auto& v : blk.c1.b.vec()) v = rng.uniform(-0.2, 0.2);
      for (auto& v : blk.c2.b.vec()) v = rng.uniform(-0.2, 0.2);
      for (auto& v : blk.proj.b.vec()) v = rng.uniform(-0.2, 0.2);
      DT x = rand_t(rng, Shape{2, 3, 6, 6});
      const int64_t ho = (6 + stride - 1) / stride;
      auto c = rand_coeffs(rng, 2 * 5 * ho * ho);
      const std::string base = "residual_block_s" + std::to_string(stride);
      acc.add(base + ".x", finite_diff_check(
          [&](DTape* t, DT& v) { return dot_const(t, blk.forward(t, v), c); }, x, 1e-5));
      acc.add(base + ".c1.W", finite_diff_check(
          [&](DTape* t, DT&) { return dot_const(t, blk.forward(t, x), c); }, blk.c1.W, 1e-5));
      acc.add(base + ".c2.W", finite_diff_check(
          [&](DTape* t, DT&) { return dot_const(t, blk.forward(t, x), c); }, blk.c2.W, 1e-5));
    }
  }

  {  // off_layer triple
    OffLayerT<double> layer;
    layer.init(3, 2);
    for (auto& v : layer.reduce.W.vec()) v = rng.uniform(-0.5, 0.5);
    for (auto& v : layer.reduce.b.vec()) v = rng.uniform(-0.2, 0.2);
    DT fa = rand_t(rng, Shape{2, 3, 6, 6});
    DT fb = rand_t(rng, Shape{2, 3, 6, 6});
    auto c = rand_coeffs(rng, 2 * 6 * 6 * 6);
    auto run = [&](DTape* t) {
      OffFeatures<double> f = off_layer(t, fa, fb, layer);
      return dot_const(t, concat_channels(t, {f.fx, f.fy, f.ft}), c);
    };
    acc.add("off_layer.feat_a", finite_diff_check(
        [&](DTape* t, DT&) { return run(t); }, fa, eps));
    acc.add("off_layer.feat_b", finite_diff_check(
        [&](DTape* t, DT&) { return run(t); }, fb, eps));
    acc.add("off_layer.reduce.W", finite_diff_check(
        [&](DTape* t, DT&) { return run(t); }, layer.reduce.W, eps));
  }

  {  // full 2-level network: rgb + per-level OFF losses
    OffConfig cfg;
    cfg.levels = 2;
    cfg.reduced_channels = 2;
    cfg.blocks_per_level = 2;
    cfg.classes = 3;
    cfg.backbone_width = 3;
    cfg.input_channels = 1;
    ModelT<double> m;
    m.build(cfg);
    NamedParams<double> params = m.all_params();
    for (auto& [name, t] : params)
      for (auto& v : t.vec()) v = rng.uniform(-0.5, 0.5);
    std::vector<DT> segments;
    for (int s = 0; s < 3; ++s) segments.push_back(rand_t(rng, Shape{2, 1, 8, 8}, 0.0, 1.0));
    const std::vector<int> labels = {0, 2};
    auto net_loss = [&](DTape* t) {
      NetOut<double> out = network_forward(t, m, segments, true);
      std::vector<DT> losses;
      losses.push_back(softmax_xent(t, out.rgb_logits, labels).loss);
      for (auto& lg : out.off_logits) losses.push_back(softmax_xent(t, lg, labels).loss);
      return wsum(t, losses, std::vector<double>(losses.size(), 1.0));
    };
    double worst = 0.0;
    for (auto& [name, t] : params) {
      const double e = finite_diff_check([&](DTape* tp, DT&) { return net_loss(tp); }, t, 1e-5);
      worst = std::max(worst, e);
    }
    acc.add("network_2level.params", worst);
    acc.add("network_2level.input", finite_diff_check(
        [&](DTape* tp, DT&) { return net_loss(tp); }, segments[0], 1e-5));
  }

  {  // mutation guard: an op with a deliberately wrong backward rule must fail
    auto bad_scale = [](DTape* tape, const DT& x) {
      DT y(x.shape());
      y.set_requires_grad(x.requires_grad());
      for (int64_t i = 0; i < x.numel(); ++i) y.data()[i] = 2.0 * x.data()[i];
      if (tape && y.requires_grad()) {
        auto xn = x.node();
        auto yn = y.node();
        tape->record([xn, yn]() {
          if (yn->grad.empty()) return;
          if (xn->grad.empty()) xn->grad.assign(xn->data.size(), 0.0);
          for (size_t i = 0; i < xn->grad.size(); ++i)
            xn->grad[i] += 2.05 * yn->grad[i];  // wrong: forward scale is 2.0
        });
      }
      return y;
    };
    DT x = rand_t(rng, Shape{2, 3});
    auto c = rand_coeffs(rng, x.numel());
    acc.rep.mutation_err = finite_diff_check(
        [&](DTape* t, DT& v) { return dot_const(t, bad_scale(t, v), c); }, x, eps);
    acc.rep.mutation_detected = acc.rep.mutation_err >= 1e-4;
  }

  acc.rep.pass = acc.rep.worst < 1e-4 && acc.rep.mutation_detected;
  return acc.rep;
}

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& log) {
  try {
    GradcheckReport rep = run_gradcheck(a.seed);
    for (const auto& [name, err] : rep.per_op) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "gradcheck: %-28s max_rel_err %.3e %s", name.c_str(), err,
                    err < 1e-4 ? "ok" : "FAIL");
      log << buf << "\n";
    }
    log << "gradcheck: mutation_guard err " << fmt("%.3e", rep.mutation_err)
        << (rep.mutation_detected ? " detected ok" : " NOT DETECTED") << "\n";
    log << "gradcheck: worst " << fmt("%.3e", rep.worst) << " -> "
        << (rep.pass ? "PASS" : "FAIL") << "\n";
    return rep.pass ? 0 : 1;
  } catch (const std::exception& e) {
    return report_error(log, e);
  }
}

// ---------------------------------------------------------------------------
// orthocheck

OrthoReport run_orthocheck(const std::vector<double>& sigmas, const std::vector<double>& speeds) {
  require(!sigmas.empty() && !speeds.empty(), ErrKind::invalid_argument,
          "orthocheck: empty sigma or speed list");
  const int size = 64, T = 2;
  OrthoReport rep;
  rep.zero_exact = true;
  rep.monotone = true;
  const double mid = double(size - 1) / 2.0;

  for (double sigma : sigmas) {
    Clip still = gen_translating_clip(Pattern::gaussian(sigma), 0.0, 0.0, T, size, mid, mid);
    if (orthogonality_residual(still, 0) != 0.0) rep.zero_exact = false;
    double prev = -1.0;
    for (double speed : speeds) {
      double worst_dir = 0.0;
      for (int k = 0; k < 8; ++k) {
        double ux, uy;
        direction_unit(k, ux, uy);
        const double vx = speed * ux, vy = speed * uy;
        Clip c = gen_translating_clip(Pattern::gaussian(sigma), vx, vy, T, size, mid - vx / 2.0,
                                      mid - vy / 2.0);
        worst_dir = std::max(worst_dir, orthogonality_residual(c, 0));
      }
      rep.rows.push_back({sigma, speed, worst_dir});
      rep.worst = std::max(rep.worst, worst_dir);
      if (prev >= 0.0 && worst_dir < prev) rep.monotone = false;
      prev = worst_dir;
    }
  }
  rep.pass = rep.worst < 0.05 && rep.zero_exact && rep.monotone;
  return rep;
}

int cmd_orthocheck(const OrthoArgs& a, std::ostream& log) {
  try {
    std::vector<double> sigmas = a.sigma > 0.0 ? std::vector<double>{a.sigma}
                                               : std::vector<double>{3.0, 4.0, 6.0};
    std::vector<double> speeds = a.speed > 0.0 ? std::vector<double>{a.speed}
                                               : std::vector<double>{0.5, 1.0, 1.5, 2.0};
    if (a.sigma != 0.0)
      require(a.sigma > 0.0, ErrKind::invalid_argument, "orthocheck: --sigma must be positive");
    if (a.speed != 0.0)
      require(a.speed > 0.0, ErrKind::invalid_argument, "orthocheck: --speed must be positive");
    OrthoReport rep = run_orthocheck(sigmas, speeds);
    for (const auto& r : rep.rows) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "orthocheck: sigma %-4g speed %-4g worst_dir_residual %.5f",
                    r.sigma, r.speed, r.residual);
      log << buf << "\n";
    }
    log << "orthocheck: static clip residual exactly zero: " << (rep.zero_exact ? "yes" : "NO")
        << "\n";
    log << "orthocheck: monotone in speed: " << (rep.monotone ? "yes" : "NO") << "\n";
    log << "orthocheck: worst " << fmt("%.5f", rep.worst) << " -> "
        << (rep.pass ? "PASS" : "FAIL") << "\n";
    return rep.pass ? 0 : 1;
  } catch (const std::exception& e) {
    return report_error(log, e);
  }
}

// ---------------------------------------------------------------------------
// bench

BenchReport run_bench(const BenchArgs& a) {
  require(a.repeat >= 1, ErrKind::invalid_argument, "bench: --repeat must be at least 1");
  require(a.frames >= 2, ErrKind::invalid_argument, "bench: --frames must be at least 2");
  Model m;
  int size = 32;
  if (!a.ckpt.empty()) {
    LoadedCheckpoint ck = load_checkpoint(a.ckpt);
    RunConfig rc = parse_config_echo(ck.meta.config);
    m.build(rc.net);
    NamedParams<float> params = m.all_params();
    assign_params(params, ck, /*subset=*/true);
  } else {
    OffConfig cfg;
    m.build(cfg);
    Rng rng(1, kInitStream);
    init_model(m, rng);
  }
  Rng drng(7, 0xda7a);
  std::vector<Tensor> segments;
  for (int i = 0; i < a.frames; ++i)
    segments.push_back(Tensor::uniform(Shape{1, m.cfg.input_channels, size, size}, drng, 0.0, 1.0));

  auto time_forward = [&](bool with_off) {
    using clock = std::chrono::steady_clock;
    double best = 1e100;
    for (int r = 0; r < a.repeat; ++r) {
      const auto t0 = clock::now();
      network_forward<float>(nullptr, m, segments, with_off);
      const auto t1 = clock::now();
      best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
    }
    return best;
  };
  network_forward<float>(nullptr, m, segments, true);  // warmup

  BenchReport rep;
  const double t_bb = time_forward(false);
  const double t_off = time_forward(true);
  rep.fps_backbone = double(a.frames) / t_bb;
  rep.fps_off = double(a.frames) / t_off;
  rep.ratio = rep.fps_off / rep.fps_backbone;
  char buf[96];
  std::snprintf(buf, sizeof buf, "l%d_cr%d_b%d_w%d_f%d", m.cfg.levels, m.cfg.reduced_channels,
                m.cfg.blocks_per_level, m.cfg.backbone_width, a.frames);
  rep.config = buf;
  return rep;
}

int cmd_bench(const BenchArgs& a, std::ostream& log) {
  try {
    BenchReport rep = run_bench(a);
    log << "config,fps_backbone,fps_off,ratio\n";
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s,%.2f,%.2f,%.4f", rep.config.c_str(), rep.fps_backbone,
                  rep.fps_off, rep.ratio);
    log << buf << "\n";
    const bool ok = rep.ratio > 0.0 && rep.ratio <= 1.0;
    log << "bench: ratio " << fmt("%.4f", rep.ratio) << " -> " << (ok ? "PASS" : "FAIL") << "\n";
    return ok ? 0 : 1;
  } catch (const std::exception& e) {
    return report_error(log, e);
  }
}

}  // namespace off
