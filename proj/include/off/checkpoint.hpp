#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "off/net.hpp"
#include "off/tensor.hpp"

namespace off {

// Checkpoint = text manifest at `path` plus a raw little-endian f32 blob at
// `path`.blob. Manifest lines:
//   offckpt 1
//   stage <n>
//   iter <n>
//   config <single-line key=value echo>
//   tensor <name> f32 <rank> <d0..dk> <byte offset>
//   ...
//   end
struct CheckpointMeta {
  int stage = 0;
  int64_t iter = 0;
  std::string config;  // single line, no newlines
};

inline std::string blob_path(const std::string& path) { return path + ".blob"; }

inline void save_checkpoint(const std::string& path, NamedParams<float>& params,
                            const CheckpointMeta& meta) {
  require(meta.config.find('\n') == std::string::npos, ErrKind::format,
          "save_checkpoint: config echo must be a single line");
  std::ostringstream mf;
  mf << "offckpt 1\n";
  mf << "stage " << meta.stage << "\n";
  mf << "iter " << meta.iter << "\n";
  mf << "config " << meta.config << "\n";
  std::vector<char> blob;
  int64_t offset = 0;
  for (auto& [name, t] : params) {
    const Shape& s = t.shape();
    mf << "tensor " << name << " f32 " << s.rank;
    for (int i = 0; i < s.rank; ++i) mf << " " << s[i];
    mf << " " << offset << "\n";
    const size_t bytes = size_t(t.numel()) * sizeof(float);
    blob.resize(size_t(offset) + bytes);
    std::memcpy(blob.data() + offset, t.data(), bytes);
    offset += int64_t(bytes);
  }
  mf << "end\n";

  std::ofstream mfs(path, std::ios::binary);
  require(mfs.good(), ErrKind::format, "save_checkpoint: cannot write " + path);
  const std::string ms = mf.str();
  mfs.write(ms.data(), std::streamsize(ms.size()));
  require(mfs.good(), ErrKind::format, "save_checkpoint: manifest write failed");
  std::ofstream bfs(blob_path(path), std::ios::binary);
  require(bfs.good(), ErrKind::format, "save_checkpoint: cannot write " + blob_path(path));
  bfs.write(blob.data(), std::streamsize(blob.size()));
  require(bfs.good(), ErrKind::format, "save_checkpoint: blob write failed");
}

struct LoadedCheckpoint {
  CheckpointMeta meta;
  std::vector<std::pair<std::string, TensorT<float>>> tensors;  // manifest order

  const TensorT<float>* find(const std::string& name) const {
    for (auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream mfs(path, std::ios::binary);
  require(mfs.good(), ErrKind::format, "load_checkpoint: cannot open " + path);
  std::ifstream bfs(blob_path(path), std::ios::binary | std::ios::ate);
  require(bfs.good(), ErrKind::format, "load_checkpoint: cannot open " + blob_path(path));
  const int64_t blob_size = int64_t(bfs.tellg());
  bfs.seekg(0);

  LoadedCheckpoint out;
  std::string line;
  require(std::getline(mfs, line) && line == "offckpt 1", ErrKind::format,
          "load_checkpoint: bad magic line in " + path);
  bool saw_end = false;
  struct Entry {
    std::string name;
    Shape shape;
    int64_t offset;
  };
  std::vector<Entry> entries;
  while (std::getline(mfs, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "stage") {
      require(bool(ls >> out.meta.stage), ErrKind::format, "load_checkpoint: bad stage line");
    } else if (tag == "iter") {
      require(bool(ls >> out.meta.iter), ErrKind::format, "load_checkpoint: bad iter line");
    } else if (tag == "config") {
      std::getline(ls, out.meta.config);
      if (!out.meta.config.empty() && out.meta.config[0] == ' ')
        out.meta.config.erase(0, 1);
    } else if (tag == "tensor") {
      Entry e;
      std::string dtype;
      int rank = 0;
      require(bool(ls >> e.name >> dtype >> rank), ErrKind::format,
              "load_checkpoint: malformed tensor line: " + line);
      require(dtype == "f32", ErrKind::format,
              "load_checkpoint: entry " + e.name + " has unsupported dtype " + dtype);
      require(rank >= 0 && rank <= 4, ErrKind::format,
              "load_checkpoint: entry " + e.name + " has invalid rank");
      std::vector<int64_t> dims(size_t(rank));
      for (auto& d : dims)
        require(bool(ls >> d) && d > 0, ErrKind::format,
                "load_checkpoint: entry " + e.name + " has invalid shape");
      require(bool(ls >> e.offset) && e.offset >= 0, ErrKind::format,
              "load_checkpoint: entry " + e.name + " has invalid offset");
      Shape s;
      s.rank = rank;
      for (int i = 0; i < rank; ++i) s.d[size_t(i)] = dims[size_t(i)];
      e.shape = s;
      require(e.offset + s.numel() * int64_t(sizeof(float)) <= blob_size, ErrKind::format,
              "load_checkpoint: entry " + e.name + " extends past blob end");
      entries.push_back(std::move(e));
    } else if (tag == "end") {
      saw_end = true;
      break;
    } else {
      fail(ErrKind::format, "load_checkpoint: unknown manifest tag '" + tag + "'");
    }
  }
  require(saw_end, ErrKind::format, "load_checkpoint: manifest missing end marker");

  int64_t expected = 0;
  for (const auto& e : entries) {
    require(e.offset == expected, ErrKind::format,
            "load_checkpoint: entry " + e.name + " has non-contiguous offset");
    expected += e.shape.numel() * int64_t(sizeof(float));
  }
  require(expected == blob_size, ErrKind::format,
          "load_checkpoint: blob size " + std::to_string(blob_size) + " does not match manifest (" +
              std::to_string(expected) + ")");

  for (const auto& e : entries) {
    TensorT<float> t(e.shape);
    bfs.seekg(e.offset);
    bfs.read(reinterpret_cast<char*>(t.data()), std::streamsize(t.numel() * sizeof(float)));
    require(bfs.good(), ErrKind::format, "load_checkpoint: short read for entry " + e.name);
    out.tensors.emplace_back(e.name, std::move(t));
  }
  return out;
}

// Copy checkpoint values into an existing parameter set, matching by name and
// shape. `subset` allows loading a stage-1 checkpoint (backbone only) into a
// full model.
inline void assign_params(NamedParams<float>& params, const LoadedCheckpoint& ck,
                          bool subset = false) {
  for (auto& [name, t] : params) {
    const TensorT<float>* src = ck.find(name);
    if (!src) {
      if (subset) continue;
      fail(ErrKind::format, "checkpoint: missing parameter " + name);
    }
    require(src->shape() == t.shape(), ErrKind::format,
            "checkpoint: parameter " + name + " has shape " + src->shape().str() + ", expected " +
                t.shape().str());
    t.vec() = src->vec();
  }
}

}  // namespace off
