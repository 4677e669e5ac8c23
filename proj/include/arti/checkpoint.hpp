#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "arti/nets.hpp"

namespace arti {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Container format: magic "XAVT", u32 version, u32 array count, then per
// array a length-prefixed name and its layers as u32 rows, u32 cols,
// rows*cols float32 weights (row major), rows float32 biases. Optimizer
// moments travel as additional named arrays in the same file.
struct LayerBlob {
  std::uint32_t rows = 0, cols = 0;
  std::vector<float> W;  // row major
  std::vector<float> b;
};

struct NamedBlob {
  std::string name;
  std::vector<LayerBlob> layers;
};

void save_blobs(const std::string& path, std::span<const NamedBlob> blobs);
std::vector<NamedBlob> load_blobs(const std::string& path);
const NamedBlob* find_blob(std::span<const NamedBlob> blobs, std::string_view name);

NamedBlob blob_from_mlp(const std::string& name, const Mlp& net);
// Shape-checked: the target net must already have matching dimensions.
void load_mlp(const NamedBlob& blob, Mlp* net);

}  // namespace arti
