#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "off/net.hpp"
#include "off/train.hpp"

namespace off {

// Flat key=value run configuration. '#' starts a comment; unknown keys are
// rejected; absent keys keep their defaults.
struct RunConfig {
  OffConfig net;
  TrainConfig train;
  std::string data_train;
  std::string data_test;
};

namespace detail {

inline std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline int64_t parse_int(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const long long x = std::strtoll(v.c_str(), &end, 10);
  require(end && *end == '\0' && !v.empty(), ErrKind::config,
          "config: invalid integer for key '" + key + "': '" + v + "'");
  return int64_t(x);
}

inline double parse_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  require(end && *end == '\0' && !v.empty(), ErrKind::config,
          "config: invalid number for key '" + key + "': '" + v + "'");
  return x;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "0" || v == "false") return false;
  if (v == "1" || v == "true") return true;
  fail(ErrKind::config, "config: invalid boolean for key '" + key + "': '" + v + "'");
}

template <typename T, typename F>
std::vector<T> parse_list(const std::string& key, const std::string& v, F&& one) {
  std::vector<T> out;
  if (detail::trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(one(key, detail::trim(tok)));
  return out;
}

inline bool apply_key(RunConfig& rc, const std::string& key, const std::string& val) {
  if (key == "levels")
    rc.net.levels = int(parse_int(key, val));
  else if (key == "reduced_channels")
    rc.net.reduced_channels = int(parse_int(key, val));
  else if (key == "blocks_per_level")
    rc.net.blocks_per_level = int(parse_int(key, val));
  else if (key == "classes")
    rc.net.classes = int(parse_int(key, val));
  else if (key == "backbone_width")
    rc.net.backbone_width = int(parse_int(key, val));
  else if (key == "input_channels")
    rc.net.input_channels = int(parse_int(key, val));
  else if (key == "ablate_off_layer")
    rc.net.ablate_off_layer = parse_bool(key, val);
  else if (key == "stage")
    rc.train.stage = int(parse_int(key, val));
  else if (key == "base_lr")
    rc.train.base_lr = parse_double(key, val);
  else if (key == "lr_milestones")
    rc.train.lr_milestones = parse_list<int64_t>(key, val, parse_int);
  else if (key == "momentum")
    rc.train.momentum = parse_double(key, val);
  else if (key == "batch_size")
    rc.train.batch_size = int(parse_int(key, val));
  else if (key == "total_iters")
    rc.train.total_iters = parse_int(key, val);
  else if (key == "alpha")
    rc.train.alpha = int(parse_int(key, val));
  else if (key == "beta")
    rc.train.beta = int(parse_int(key, val));
  else if (key == "seed")
    rc.train.seed = uint64_t(parse_int(key, val));
  else if (key == "intermediate_loss_weights")
    rc.train.intermediate_loss_weights = parse_list<double>(key, val, parse_double);
  else if (key == "data_train")
    rc.data_train = val;
  else if (key == "data_test")
    rc.data_test = val;
  else
    return false;
  return true;
}

}  // namespace detail

inline RunConfig parse_runconfig_text(const std::string& text) {
  RunConfig rc;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    require(eq != std::string::npos, ErrKind::config,
            "config: line " + std::to_string(lineno) + " is not key=value: '" + line + "'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string val = detail::trim(line.substr(eq + 1));
    require(!key.empty(), ErrKind::config,
            "config: empty key on line " + std::to_string(lineno));
    require(detail::apply_key(rc, key, val), ErrKind::config, "config: unknown key '" + key + "'");
  }
  rc.net.validate();
  rc.train.validate(rc.net.levels);
  return rc;
}

inline RunConfig load_runconfig(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), ErrKind::config, "config: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_runconfig_text(ss.str());
}

// Single-line config echo embedded in checkpoints so eval can rebuild the
// architecture. Data paths are deliberately not echoed.
inline std::string config_echo(const RunConfig& rc) {
  char buf[512];
  std::string ms;
  for (size_t i = 0; i < rc.train.lr_milestones.size(); ++i)
    ms += (i ? "," : "") + std::to_string(rc.train.lr_milestones[i]);
  std::string lw;
  for (size_t i = 0; i < rc.train.intermediate_loss_weights.size(); ++i) {
    char w[40];
    std::snprintf(w, sizeof w, "%.17g", rc.train.intermediate_loss_weights[i]);
    lw += (i ? "," : "") + std::string(w);
  }
  std::snprintf(buf, sizeof buf,
                "levels=%d reduced_channels=%d blocks_per_level=%d classes=%d backbone_width=%d "
                "input_channels=%d ablate_off_layer=%d stage=%d base_lr=%.17g lr_milestones=%s "
                "momentum=%.17g batch_size=%d total_iters=%lld alpha=%d beta=%d seed=%llu "
                "intermediate_loss_weights=%s",
                rc.net.levels, rc.net.reduced_channels, rc.net.blocks_per_level, rc.net.classes,
                rc.net.backbone_width, rc.net.input_channels, rc.net.ablate_off_layer ? 1 : 0,
                rc.train.stage, rc.train.base_lr, ms.c_str(), rc.train.momentum,
                rc.train.batch_size, (long long)rc.train.total_iters, rc.train.alpha,
                rc.train.beta, (unsigned long long)rc.train.seed, lw.c_str());
  return buf;
}

inline RunConfig parse_config_echo(const std::string& echo) {
  std::string as_lines = echo;
  for (auto& ch : as_lines)
    if (ch == ' ') ch = '\n';
  return parse_runconfig_text(as_lines);
}

}  // namespace off
