#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "off/train.hpp"

namespace off {

struct GenDataArgs {
  std::string out;
  int clips_per_class = 8;
  int frames = 16;
  int size = 32;
  uint64_t seed = 1;
  double speed = 0.75;
  double sigma = 1.6;
  std::string pattern = "gaussian";
  bool force = false;
};
int cmd_gen_data(const GenDataArgs& args, std::ostream& log);

struct TrainArgs {
  std::string config;
  int stage = 0;  // 0 = take from config
  std::string out;
  std::string init;  // stage-1 checkpoint, required for stage 2
};
int cmd_train(const TrainArgs& args, std::ostream& log);

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::vector<std::string> streams;  // subset of {rgb, off, fused, hypercolumn}
};
int cmd_eval(const EvalArgs& args, std::ostream& log, EvalReport* out = nullptr);

struct GradcheckArgs {
  uint64_t seed = 1;
};
struct GradcheckReport {
  std::vector<std::pair<std::string, double>> per_op;  // name -> worst rel err
  double worst = 0.0;
  double mutation_err = 0.0;  // injected-wrong-backward check, must be >= 1e-4
  bool mutation_detected = false;
  bool pass = false;
};
GradcheckReport run_gradcheck(uint64_t seed);
int cmd_gradcheck(const GradcheckArgs& args, std::ostream& log);

struct OrthoArgs {
  double sigma = 0.0;  // 0 = default grid {3,4,6}
  double speed = 0.0;  // 0 = default sweep {0.5,1,1.5,2}
};
struct OrthoReport {
  struct Row {
    double sigma = 0.0;
    double speed = 0.0;
    double residual = 0.0;  // worst over the 8 directions
  };
  std::vector<Row> rows;
  double worst = 0.0;
  bool zero_exact = false;  // static clip residual is exactly 0
  bool monotone = false;    // per sigma, worst residual non-decreasing in speed
  bool pass = false;
};
OrthoReport run_orthocheck(const std::vector<double>& sigmas, const std::vector<double>& speeds);
int cmd_orthocheck(const OrthoArgs& args, std::ostream& log);

struct BenchArgs {
  std::string ckpt;  // optional; default desk architecture, random weights
  int frames = 64;
  int repeat = 3;
};
struct BenchReport {
  std::string config;
  double fps_backbone = 0.0;
  double fps_off = 0.0;
  double ratio = 0.0;
};
BenchReport run_bench(const BenchArgs& args);
int cmd_bench(const BenchArgs& args, std::ostream& log);

}  // namespace off
