#pragma once

#include <string>
#include <vector>

#include "core/nn.hpp"

namespace efcn {

// One serialized tensor.  dims is the stored rank, values row-major float32.
struct NamedTensor {
  std::string name;
  std::vector<int> dims;
  std::vector<float> values;

  bool operator==(const NamedTensor&) const = default;
  i64 numel() const {
    i64 n = 1;
    for (int d : dims) n *= d;
    return dims.empty() ? 0 : n;
  }
};

// Binary weight container: magic "EFCN", version byte 1, little-endian
// u32 tensor count, then per tensor u16 name length + name bytes, u8 rank,
// rank u32 dims, raw float32 payload.  Round-trips bitwise.
void save_weights(const std::vector<NamedTensor>& tensors, const std::string& path);
std::vector<NamedTensor> load_weights(const std::string& path);

// In-memory codec used by both the file layer and the C API.
std::vector<std::uint8_t> encode_weights(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_weights(const std::uint8_t* bytes, size_t size);

// Bridge to parameter lists (learnable and running statistics alike).
std::vector<NamedTensor> snapshot_params(ParamList<float>& params);
void restore_params(ParamList<float>& params, const std::vector<NamedTensor>& tensors);

}  // namespace efcn
