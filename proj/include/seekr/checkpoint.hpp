#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "seekr/model.hpp"
#include "seekr/tensor.hpp"

namespace seekr {

inline constexpr char kContainerMagic[] = "SEEKR-CKPT";
inline constexpr std::uint32_t kContainerVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Named-tensor container:
//   magic "SEEKR-CKPT" (10 bytes), u32 version, config block (7 x u64:
//   n_layers, n_heads, d_model, d_k, d_ff, vocab_size, max_seq_len), then
//   tensors until end of file, each: u32 name length, name bytes, u32 rank,
//   rank x u64 dims, little-endian f64 payload.
struct TensorContainer {
  TransformerConfig config;
  std::vector<NamedTensor> tensors;

  const Tensor& get(const std::string& name) const;
  const Tensor* find(const std::string& name) const;
};

void write_container(const std::filesystem::path& path, const TensorContainer& container);
TensorContainer read_container(const std::filesystem::path& path);

void save_checkpoint(const std::filesystem::path& path, const ModelState& model);
ModelState load_checkpoint(const std::filesystem::path& path);

}  // namespace seekr
