#include "stpi/nn/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace stpi::nn {

namespace {

constexpr char kMagic[8] = {'S', 'T', 'P', 'I', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

std::string get_string(std::istream& is, std::size_t n) {
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return s;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& file, const ParameterSet& params, const std::string& metadata) {
  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + file.string() + " for writing");
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(metadata.size()));
  os.write(metadata.data(), static_cast<std::streamsize>(metadata.size()));
  put<std::uint64_t>(os, params.entries().size());
  for (const auto& [path, var] : params.entries()) {
    const Tensor& t = var.value();
    put<std::uint32_t>(os, static_cast<std::uint32_t>(path.size()));
    os.write(path.data(), static_cast<std::streamsize>(path.size()));
    put<std::uint8_t>(os, params.is_buffer(path) ? 1 : 0);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + file.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + file.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + file.string());
  }
  const auto version = get<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.metadata = get_string(is, get<std::uint32_t>(is));
  const auto count = get<std::uint64_t>(is);
  for (std::uint64_t e = 0; e < count; ++e) {
    std::string path = get_string(is, get<std::uint32_t>(is));
    CheckpointEntry entry;
    entry.buffer = get<std::uint8_t>(is) != 0;
    const auto rank = get<std::uint32_t>(is);
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(static_cast<std::size_t>(get<std::uint64_t>(is)));
    std::vector<double> data(shape_numel(shape));
    is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!is) throw std::runtime_error("checkpoint: truncated data for " + path);
    entry.value = Tensor(std::move(shape), std::move(data));
    ckpt.entries.emplace(std::move(path), std::move(entry));
  }
  return ckpt;
}

void load_into(const Checkpoint& ckpt, ParameterSet& params) {
  for (const auto& [path, var] : params.entries()) {
    auto it = ckpt.entries.find(path);
    if (it == ckpt.entries.end()) throw std::runtime_error("checkpoint: missing parameter " + path);
    if (it->second.value.shape() != var.shape()) {
      throw std::runtime_error("checkpoint: shape mismatch for " + path + ": " +
                               shape_string(it->second.value.shape()) + " vs " + shape_string(var.shape()));
    }
  }
  for (const auto& [path, entry] : ckpt.entries) {
    if (!params.contains(path)) throw std::runtime_error("checkpoint: unexpected parameter " + path);
  }
  for (const auto& [path, entry] : ckpt.entries) params.at(path).mutable_value() = entry.value;
}

}  // namespace stpi::nn
