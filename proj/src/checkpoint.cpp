#include "seekr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "seekr/error.hpp"

namespace seekr {

namespace {

static_assert(std::endian::native == std::endian::little, "container IO assumes a little-endian host");

constexpr std::size_t kMagicLength = sizeof(kContainerMagic) - 1;

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
bool get(std::istream& is, T& v) {
  return static_cast<bool>(is.read(reinterpret_cast<char*>(&v), sizeof(T)));
}

template <class T>
T require(std::istream& is, const std::filesystem::path& path, const char* what) {
  T v{};
  if (!get(is, v)) throw IoError(path.string() + ": truncated while reading " + what);
  return v;
}

}  // namespace

const Tensor* TensorContainer::find(const std::string& name) const {
  for (const auto& nt : tensors)
    if (nt.name == name) return &nt.tensor;
  return nullptr;
}

const Tensor& TensorContainer::get(const std::string& name) const {
  const Tensor* t = find(name);
  if (!t) throw IoError("container has no tensor named '" + name + "'");
  return *t;
}

void write_container(const std::filesystem::path& path, const TensorContainer& c) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write(kContainerMagic, kMagicLength);
  put<std::uint32_t>(os, kContainerVersion);
  for (std::uint64_t v : {c.config.n_layers, c.config.n_heads, c.config.d_model, c.config.d_k, c.config.d_ff,
                          c.config.vocab_size, c.config.max_seq_len})
    put<std::uint64_t>(os, v);
  for (const auto& nt : c.tensors) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(nt.name.size()));
    os.write(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(nt.tensor.rank()));
    for (std::uint64_t d : nt.tensor.dims()) put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(nt.tensor.data()),
             static_cast<std::streamsize>(nt.tensor.size() * sizeof(double)));
  }
  if (!os) throw IoError("write failed for " + path.string());
}

TensorContainer read_container(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  char magic[kMagicLength];
  if (!is.read(magic, kMagicLength) || std::memcmp(magic, kContainerMagic, kMagicLength) != 0)
    throw IoError(path.string() + ": bad magic, not a SEEKR-CKPT container");
  const auto version = require<std::uint32_t>(is, path, "version");
  if (version != kContainerVersion) throw IoError(path.string() + ": unsupported version " + std::to_string(version));
  TensorContainer c;
  std::uint64_t cfg[7];
  for (auto& v : cfg) v = require<std::uint64_t>(is, path, "config block");
  c.config = {cfg[0], cfg[1], cfg[2], cfg[3], cfg[4], cfg[5], cfg[6]};
  while (true) {
    std::uint32_t name_len = 0;
    if (!get(is, name_len)) {
      if (is.eof()) break;
      throw IoError(path.string() + ": read error");
    }
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw IoError(path.string() + ": truncated tensor name");
    const auto rank = require<std::uint32_t>(is, path, "rank");
    Dims dims(rank);
    for (auto& d : dims) d = require<std::uint64_t>(is, path, "dims");
    Tensor t(dims);
    if (!is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double))))
      throw IoError(path.string() + ": truncated payload for " + name);
    c.tensors.push_back({std::move(name), std::move(t)});
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const ModelState& model) {
  TensorContainer c;
  c.config = model.config;
  model.for_each_parameter([&](const std::string& name, const Tensor& t) { c.tensors.push_back({name, t}); });
  write_container(path, c);
}

ModelState load_checkpoint(const std::filesystem::path& path) {
  TensorContainer c = read_container(path);
  ModelState m = ModelState::zeros(c.config);
  m.for_each_parameter([&](const std::string& name, Tensor& t) {
    const Tensor& src = c.get(name);
    if (src.dims() != t.dims())
      throw IoError(path.string() + ": tensor " + name + " has dims " + dims_to_string(src.dims()) + ", expected " +
                    dims_to_string(t.dims()));
    t = src;
  });
  return m;
}

}  // namespace seekr
