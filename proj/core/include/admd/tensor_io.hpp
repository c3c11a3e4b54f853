#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include <torch/types.h>

namespace admd::io {

// Binary tensor record: "ADMDTNSR", u32 version, u32 dtype (0=f32, 1=i64),
// u32 ndim, i64 dims[ndim], contiguous little-endian payload.
void write_tensor(std::ostream& out, const torch::Tensor& tensor);
torch::Tensor read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const torch::Tensor& tensor);
torch::Tensor load_tensor(const std::filesystem::path& path);

/// FNV-1a over the tensor's shape and raw bytes.
std::uint64_t tensor_fingerprint(const torch::Tensor& tensor, std::uint64_t state);

std::string hex64(std::uint64_t value);

}  // namespace admd::io
