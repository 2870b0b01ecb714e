#include <iostream>

#include "CLI11.hpp"
#include "off/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"offkit: optical-flow-guided feature toolkit"};
  app.require_subcommand(1);

  off::GenDataArgs gd;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic translating-pattern dataset");
  gen->add_option("--out", gd.out, "output directory")->required();
  gen->add_option("--clips-per-class", gd.clips_per_class, "clips per direction class");
  gen->add_option("--frames", gd.frames, "frames per clip");
  gen->add_option("--size", gd.size, "frame height and width");
  gen->add_option("--seed", gd.seed, "master seed");
  gen->add_option("--speed", gd.speed, "translation speed, px/frame");
  gen->add_option("--sigma", gd.sigma, "pattern parameter: sigma (gaussian) or side (square/bars)");
  gen->add_option("--pattern", gd.pattern, "gaussian|square|bars");
  gen->add_flag("--force", gd.force, "overwrite a non-empty output directory");

  off::TrainArgs tr;
  auto* train = app.add_subcommand("train", "train one stage");
  train->add_option("--config", tr.config, "run config file")->required();
  train->add_option("--stage", tr.stage, "1 or 2 (overrides config)");
  train->add_option("--out", tr.out, "output directory for checkpoint and metrics")->required();
  train->add_option("--init", tr.init, "stage-1 checkpoint (required for stage 2)");

  off::EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval->add_option("--ckpt", ev.ckpt, "checkpoint manifest path")->required();
  eval->add_option("--data", ev.data, "dataset directory")->required();
  eval->add_option("--streams", ev.streams, "subset of rgb,off,fused,hypercolumn")->delimiter(',');

  off::GradcheckArgs gc;
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every op and a 2-level net");
  grad->add_option("--seed", gc.seed, "seed for check inputs");

  off::OrthoArgs oc;
  auto* ortho = app.add_subcommand("orthocheck", "orthogonality residual sweep on synthetic clips");
  ortho->add_option("--sigma", oc.sigma, "single blob sigma (default grid 3,4,6)");
  ortho->add_option("--speed", oc.speed, "single speed (default sweep 0.5,1,1.5,2)");

  off::BenchArgs bc;
  auto* bench = app.add_subcommand("bench", "forward-only throughput of backbone vs backbone+OFF");
  bench->add_option("--ckpt", bc.ckpt, "checkpoint (default: fresh desk-size model)");
  bench->add_option("--frames", bc.frames, "frames per timed pass");
  bench->add_option("--repeat", bc.repeat, "timed repetitions, best-of");

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed()) return off::cmd_gen_data(gd, std::cout);
  if (train->parsed()) return off::cmd_train(tr, std::cout);
  if (eval->parsed()) return off::cmd_eval(ev, std::cout);
  if (grad->parsed()) return off::cmd_gradcheck(gc, std::cout);
  if (ortho->parsed()) return off::cmd_orthocheck(oc, std::cout);
  if (bench->parsed()) return off::cmd_bench(bc, std::cout);
  return 1;
}
