#include "smanet/tensor.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "smanet/common.hpp"
#include "smanet/rng.hpp"

namespace smanet {

std::size_t checked_numel(const std::vector<int>& dims) {
  require<ShapeError>(!dims.empty() && dims.size() <= 5, "tensor rank must be 1..5, got ",
                      dims.size());
  std::size_t n = 1;
  for (int d : dims) {
    require<ShapeError>(d > 0, "tensor extents must be positive");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor::Tensor(std::vector<int> dims) {
  const std::size_t n = checked_numel(dims);
  data_ = std::make_shared<detail::TensorData>();
  data_->dims = std::move(dims);
  data_->values.assign(n, 0.0f);
}

Tensor::Tensor(std::vector<int> dims, std::vector<float> values) {
  const std::size_t n = checked_numel(dims);
  require<ShapeError>(values.size() == n, "tensor data length ", values.size(),
                      " does not match extents product ", n);
  for (float v : values) {
    require<NumericError>(std::isfinite(v), "tensor rejects non-finite value at construction");
  }
  data_ = std::make_shared<detail::TensorData>();
  data_->dims = std::move(dims);
  data_->values = std::move(values);
}

Tensor Tensor::full(std::vector<int> dims, float value) {
  Tensor t(std::move(dims));
  for (float& v : t.values()) v = value;
  require<NumericError>(std::isfinite(value), "tensor rejects non-finite fill value");
  return t;
}

Tensor Tensor::scalar(float value) { return full({1}, value); }

Tensor Tensor::uniform(std::vector<int> dims, float bound, Rng& rng) {
  Tensor t(std::move(dims));
  for (float& v : t.values()) {
    v = static_cast<float>(rng.uniform(-static_cast<double>(bound), bound));
  }
  return t;
}

Tensor& Tensor::set_requires_grad(bool on) {
  data_->requires_grad = on;
  if (on) {
    data_->grad.assign(numel(), 0.0f);
  } else {
    data_->grad.clear();
  }
  return *this;
}

std::span<float> Tensor::grad() {
  require<Error>(data_->requires_grad, "grad requested on a tensor without requires_grad");
  return data_->grad;
}

std::span<const float> Tensor::grad() const {
  require<Error>(data_->requires_grad, "grad requested on a tensor without requires_grad");
  return data_->grad;
}

void Tensor::zero_grad() {
  if (!data_->grad.empty()) std::fill(data_->grad.begin(), data_->grad.end(), 0.0f);
}

std::span<float> Tensor::ensure_grad() {
  if (data_->grad.empty()) data_->grad.assign(numel(), 0.0f);
  return data_->grad;
}

bool Tensor::all_finite() const {
  for (float v : data_->values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor Tensor::clone() const {
  Tensor t;
  t.data_ = std::make_shared<detail::TensorData>();
  t.data_->dims = data_->dims;
  t.data_->values = data_->values;
  return t;
}

std::string Tensor::shape_str() const {
  std::string s = "[";
  for (std::size_t i = 0; i < data_->dims.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(data_->dims[i]);
  }
  return s + "]";
}

namespace {

constexpr char kMagic[4] = {'S', 'M', 'A', 'T'};
constexpr std::uint8_t kVersion = 0x01;
constexpr std::uint8_t kDtypeF32 = 0x00;

void put_u32_le(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

std::uint32_t get_u32_le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  require<IoError>(static_cast<bool>(is), "truncated SMAT stream");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_tensor(std::ostream& os, const Tensor& t) {
  os.write(kMagic, 4);
  os.put(static_cast<char>(kVersion));
  os.put(static_cast<char>(kDtypeF32));
  os.put(static_cast<char>(t.rank()));
  os.put(0);
  os.put(0);
  os.put(0);
  for (int d : t.dims()) put_u32_le(os, static_cast<std::uint32_t>(d));
  for (float v : t.values()) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32_le(os, bits);
  }
  require<IoError>(static_cast<bool>(os), "failed to write SMAT stream");
}

Tensor load_tensor(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  require<IoError>(static_cast<bool>(is) && std::memcmp(magic, kMagic, 4) == 0,
                   "bad SMAT magic");
  const int version = is.get();
  require<IoError>(version == kVersion, "unsupported SMAT version ", version);
  const int dtype = is.get();
  require<IoError>(dtype == kDtypeF32, "unsupported SMAT dtype ", dtype);
  const int rank = is.get();
  require<IoError>(rank >= 1 && rank <= 5, "SMAT rank out of range: ", rank);
  char reserved[3];
  is.read(reserved, 3);
  require<IoError>(static_cast<bool>(is) && reserved[0] == 0 && reserved[1] == 0 &&
                       reserved[2] == 0,
                   "SMAT reserved bytes must be zero");
  std::vector<int> dims(static_cast<std::size_t>(rank));
  for (int& d : dims) d = static_cast<int>(get_u32_le(is));
  const std::size_t n = checked_numel(dims);
  std::vector<float> values(n);
  for (float& v : values) {
    const std::uint32_t bits = get_u32_le(is);
    std::memcpy(&v, &bits, 4);
  }
  return Tensor(std::move(dims), std::move(values));
}

void save_tensor_file(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  require<IoError>(os.is_open(), "cannot open for write: ", path.string());
  save_tensor(os, t);
}

Tensor load_tensor_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require<IoError>(is.is_open(), "cannot open for read: ", path.string());
  return load_tensor(is);
}

}  // namespace smanet
