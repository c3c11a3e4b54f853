#include "admd/tensor_io.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <sstream>
#include <iomanip>

#include <torch/torch.h>

#include "admd/errors.hpp"
#include "admd/rng.hpp"

namespace admd::io {
namespace {

constexpr std::array<char, 8> kMagic = {'A', 'D', 'M', 'D', 'T', 'N', 'S', 'R'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw DataError("truncated tensor record");
  return value;
}

}  // namespace

void write_tensor(std::ostream& out, const torch::Tensor& tensor) {
  auto t = tensor.detach().contiguous().cpu();
  std::uint32_t dtype = 0;
  if (t.scalar_type() == torch::kFloat32) {
    dtype = 0;
  } else if (t.scalar_type() == torch::kInt64) {
    dtype = 1;
  } else {
    t = t.to(torch::kFloat32);
  }
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, dtype);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim()));
  for (auto d : t.sizes()) put<std::int64_t>(out, d);
  out.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.nbytes()));
}

torch::Tensor read_tensor(std::istream& in) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw DataError("not an admd tensor record (bad magic)");
  const auto version = get<std::uint32_t>(in);
  if (version != kVersion) {
    throw DataError("unsupported tensor record version " + std::to_string(version));
  }
  const auto dtype = get<std::uint32_t>(in);
  const auto ndim = get<std::uint32_t>(in);
  std::vector<std::int64_t> dims(ndim);
  for (auto& d : dims) d = get<std::int64_t>(in);
  const auto options = torch::TensorOptions().dtype(dtype == 1 ? torch::kInt64 : torch::kFloat32);
  auto t = torch::empty(dims, options);
  in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(t.nbytes()));
  if (!in) throw DataError("truncated tensor payload");
  return t;
}

void save_tensor(const std::filesystem::path& path, const torch::Tensor& tensor) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  write_tensor(out, tensor);
}

torch::Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open tensor file " + path.string());
  return read_tensor(in);
}

std::uint64_t tensor_fingerprint(const torch::Tensor& tensor, std::uint64_t state) {
  auto t = tensor.detach().contiguous().cpu();
  for (auto d : t.sizes()) state = fnv1a64(&d, sizeof(d), state);
  return fnv1a64(t.data_ptr(), t.nbytes(), state);
}

std::string hex64(std::uint64_t value) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << value;
  return os.str();
}

}  // namespace admd::io
