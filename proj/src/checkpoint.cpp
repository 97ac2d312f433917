#include "cbamnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace cbamnet {

namespace {

constexpr char kMagic[4] = {'C', 'B', 'N', 'C'};

// Scalars are stored little-endian; this codebase targets little-endian
// hosts, so payloads are written with plain memcpy.
static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads assume a little-endian host");

template <typename V>
void write_pod(std::ofstream& out, const V& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_pod(std::ifstream& in, const char* what) {
  V v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!in) throw CheckpointError(std::string("checkpoint: truncated while reading ") + what);
  return v;
}

template <typename T>
constexpr uint8_t dtype_tag() {
  return sizeof(T) == 4 ? 0 : 1;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParameterRegistry<T>& registry,
                     uint64_t spec_digest) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("checkpoint: cannot open '" + path.string() + "' for writing");
  out.write(kMagic, 4);
  write_pod(out, kCheckpointVersion);
  write_pod(out, spec_digest);
  write_pod(out, static_cast<uint32_t>(registry.entries().size()));
  for (const auto& e : registry.entries()) {
    write_pod(out, static_cast<uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    write_pod(out, dtype_tag<T>());
    write_pod(out, static_cast<uint8_t>(e.tensor.rank()));
    for (int64_t d : e.tensor.shape()) write_pod(out, static_cast<uint32_t>(d));
    const auto values = e.tensor.values();
    write_pod(out, static_cast<uint64_t>(values.size() * sizeof(T)));
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(T)));
  }
  if (!out) throw CheckpointError("checkpoint: write failed for '" + path.string() + "'");
}

uint64_t checkpoint_spec_digest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open '" + path.string() + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw CheckpointError("checkpoint: '" + path.string() + "' is not a checkpoint file");
  const auto version = read_pod<uint32_t>(in, "version");
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint: unsupported format version " + std::to_string(version));
  return read_pod<uint64_t>(in, "spec digest");
}

template <typename T>
void load_checkpoint(const std::filesystem::path& path, ParameterRegistry<T>& registry,
                     uint64_t expected_digest) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open '" + path.string() + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw CheckpointError("checkpoint: '" + path.string() + "' is not a checkpoint file");
  const auto version = read_pod<uint32_t>(in, "version");
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint: unsupported format version " + std::to_string(version));
  const auto digest = read_pod<uint64_t>(in, "spec digest");
  if (digest != expected_digest)
    throw CheckpointError("checkpoint: spec digest mismatch (stored " + to_hex(digest) + ", expected " +
                          to_hex(expected_digest) + ")");
  const auto count = read_pod<uint32_t>(in, "entry count");
  if (count != registry.entries().size())
    throw CheckpointError("checkpoint: holds " + std::to_string(count) + " entries, model has " +
                          std::to_string(registry.entries().size()));
  for (auto& e : registry.entries()) {
    const auto name_len = read_pod<uint32_t>(in, "name length");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw CheckpointError("checkpoint: truncated while reading a name");
    if (name != e.name)
      throw CheckpointError("checkpoint: entry '" + name + "' does not match model parameter '" +
                            e.name + "'");
    const auto tag = read_pod<uint8_t>(in, "dtype tag");
    if (tag != dtype_tag<T>())
      throw CheckpointError("checkpoint: dtype tag " + std::to_string(tag) + " for '" + name +
                            "' does not match the active precision mode");
    const auto rank = read_pod<uint8_t>(in, "rank");
    if (rank != e.tensor.rank())
      throw CheckpointError("checkpoint: rank mismatch for '" + name + "'");
    Shape shape(rank);
    for (auto& d : shape) d = read_pod<uint32_t>(in, "dim");
    if (shape != e.tensor.shape())
      throw CheckpointError("checkpoint: shape " + shape_str(shape) + " for '" + name +
                            "' does not match model shape " + shape_str(e.tensor.shape()));
    const auto byte_len = read_pod<uint64_t>(in, "payload length");
    const auto expected = static_cast<uint64_t>(e.tensor.numel()) * sizeof(T);
    if (byte_len != expected)
      throw CheckpointError("checkpoint: payload for '" + name + "' holds " + std::to_string(byte_len) +
                            " bytes, expected " + std::to_string(expected));
    auto dst = e.tensor.raw();
    in.read(reinterpret_cast<char*>(dst.data()), static_cast<std::streamsize>(byte_len));
    if (!in) throw CheckpointError("checkpoint: truncated payload for '" + name + "'");
  }
}

template void save_checkpoint<float>(const std::filesystem::path&, const ParameterRegistry<float>&,
                                     uint64_t);
template void save_checkpoint<double>(const std::filesystem::path&, const ParameterRegistry<double>&,
                                      uint64_t);
template void load_checkpoint<float>(const std::filesystem::path&, ParameterRegistry<float>&, uint64_t);
template void load_checkpoint<double>(const std::filesystem::path&, ParameterRegistry<double>&,
                                      uint64_t);

}  // namespace cbamnet
