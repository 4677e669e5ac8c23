#include "arti/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <fstream>

namespace arti {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'X', 'A', 'V', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t get_u32(std::istream& in, const std::string& what) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 4))
    throw CheckpointError("truncated checkpoint reading " + what);
  return v;
}

}  // namespace

void save_blobs(const std::string& path, std::span<const NamedBlob> blobs) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write " + path);
  out.write(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(blobs.size()));
  for (const NamedBlob& nb : blobs) {
    put_u32(out, static_cast<std::uint32_t>(nb.name.size()));
    out.write(nb.name.data(), static_cast<std::streamsize>(nb.name.size()));
    put_u32(out, static_cast<std::uint32_t>(nb.layers.size()));
    for (const LayerBlob& l : nb.layers) {
      put_u32(out, l.rows);
      put_u32(out, l.cols);
      out.write(reinterpret_cast<const char*>(l.W.data()),
                static_cast<std::streamsize>(l.W.size() * sizeof(float)));
      out.write(reinterpret_cast<const char*>(l.b.data()),
                static_cast<std::streamsize>(l.b.size() * sizeof(float)));
    }
  }
  if (!out) throw CheckpointError("write failure on " + path);
}

std::vector<NamedBlob> load_blobs(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw CheckpointError(path + ": bad magic");
  const std::uint32_t version = get_u32(in, "version");
  if (version != kVersion)
    throw CheckpointError(path + ": unsupported version " + std::to_string(version));
  const std::uint32_t count = get_u32(in, "array count");
  std::vector<NamedBlob> blobs;
  blobs.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedBlob nb;
    const std::uint32_t len = get_u32(in, "name length");
    if (len > 4096) throw CheckpointError(path + ": unreasonable name length");
    nb.name.resize(len);
    if (!in.read(nb.name.data(), len)) throw CheckpointError(path + ": truncated name");
    const std::uint32_t layers = get_u32(in, "layer count");
    for (std::uint32_t k = 0; k < layers; ++k) {
      LayerBlob l;
      l.rows = get_u32(in, "rows");
      l.cols = get_u32(in, "cols");
      if (static_cast<std::uint64_t>(l.rows) * l.cols > (1u << 28))
        throw CheckpointError(path + ": unreasonable layer size");
      l.W.resize(static_cast<std::size_t>(l.rows) * l.cols);
      l.b.resize(l.rows);
      if (!in.read(reinterpret_cast<char*>(l.W.data()),
                   static_cast<std::streamsize>(l.W.size() * sizeof(float))) ||
          !in.read(reinterpret_cast<char*>(l.b.data()),
                   static_cast<std::streamsize>(l.b.size() * sizeof(float))))
        throw CheckpointError(path + ": truncated layer data");
      nb.layers.push_back(std::move(l));
    }
    blobs.push_back(std::move(nb));
  }
  return blobs;
}

const NamedBlob* find_blob(std::span<const NamedBlob> blobs, std::string_view name) {
  for (const NamedBlob& nb : blobs)
    if (nb.name == name) return &nb;
  return nullptr;
}

NamedBlob blob_from_mlp(const std::string& name, const Mlp& net) {
  NamedBlob nb;
  nb.name = name;
  for (int k = 0; k < net.layer_count(); ++k) {
    const auto& W = net.W32(k);
    const auto& b = net.b32(k);
    LayerBlob l;
    l.rows = static_cast<std::uint32_t>(W.rows());
    l.cols = static_cast<std::uint32_t>(W.cols());
    l.W.resize(static_cast<std::size_t>(W.rows()) * W.cols());
    for (Eigen::Index r = 0; r < W.rows(); ++r)
      for (Eigen::Index c = 0; c < W.cols(); ++c)
        l.W[static_cast<std::size_t>(r) * W.cols() + c] = W(r, c);
    l.b.assign(b.data(), b.data() + b.size());
    nb.layers.push_back(std::move(l));
  }
  return nb;
}

void load_mlp(const NamedBlob& blob, Mlp* net) {
  if (static_cast<int>(blob.layers.size()) != net->layer_count())
    throw CheckpointError("array '" + blob.name + "': layer count mismatch");
  for (int k = 0; k < net->layer_count(); ++k) {
    auto& W = net->W32(k);
    auto& b = net->b32(k);
    const LayerBlob& l = blob.layers[static_cast<std::size_t>(k)];
    if (static_cast<Eigen::Index>(l.rows) != W.rows() ||
        static_cast<Eigen::Index>(l.cols) != W.cols())
      throw CheckpointError("array '" + blob.name + "': layer " + std::to_string(k) +
                            " shape mismatch");
    for (Eigen::Index r = 0; r < W.rows(); ++r)
      for (Eigen::Index c = 0; c < W.cols(); ++c)
        W(r, c) = l.W[static_cast<std::size_t>(r) * W.cols() + c];
    for (Eigen::Index r = 0; r < b.size(); ++r) b[r] = l.b[static_cast<std::size_t>(r)];
  }
  net->sync();
}

}  // namespace arti
