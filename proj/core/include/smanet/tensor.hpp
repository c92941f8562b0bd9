#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace smanet {

class Rng;

namespace detail {

struct TensorData {
  std::vector<int> dims;
  std::vector<float> values;
  std::vector<float> grad;  // allocated only while requires_grad
  bool requires_grad = false;
};

}  // namespace detail

// Dense row-major float tensor with an optional gradient buffer. Copies are
// shallow: two Tensor handles may refer to the same storage, which is what
// the autodiff tape relies on to address operands.
class Tensor {
 public:
  Tensor() = default;

  // Zero-filled tensor of the given extents.
  explicit Tensor(std::vector<int> dims);

  // Validating constructor: extents must be positive, rank 1..5, the buffer
  // must match the element count, and every value must be finite.
  Tensor(std::vector<int> dims, std::vector<float> values);

  static Tensor full(std::vector<int> dims, float value);
  static Tensor scalar(float value);
  // Entries drawn uniformly from [-bound, bound].
  static Tensor uniform(std::vector<int> dims, float bound, Rng& rng);

  bool defined() const { return data_ != nullptr; }
  const std::vector<int>& dims() const { return data_->dims; }
  int dim(int i) const { return data_->dims[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(data_->dims.size()); }
  std::size_t numel() const { return data_->values.size(); }

  std::span<const float> values() const { return data_->values; }
  std::span<float> values() { return data_->values; }
  float value_at(std::size_t i) const { return data_->values[i]; }
  float& at(std::size_t i) { return data_->values[i]; }

  bool requires_grad() const { return data_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  std::span<float> grad();
  std::span<const float> grad() const;
  void zero_grad();
  // Lazily allocates the grad buffer; used by the tape for intermediates.
  std::span<float> ensure_grad();

  bool same_dims(const Tensor& other) const { return dims() == other.dims(); }
  bool all_finite() const;

  // Stable identity of the underlying storage.
  const void* id() const { return data_.get(); }
  detail::TensorData* raw() const { return data_.get(); }

  // Deep copy; the clone never requires grad.
  Tensor clone() const;

  std::string shape_str() const;

 private:
  std::shared_ptr<detail::TensorData> data_;
};

std::size_t checked_numel(const std::vector<int>& dims);

// SMAT container: "SMAT" | version 0x01 | dtype 0x00 (f32) | rank |
// 3 reserved zero bytes | rank little-endian u32 extents | row-major
// little-endian f32 payload.
void save_tensor(std::ostream& os, const Tensor& t);
Tensor load_tensor(std::istream& is);
void save_tensor_file(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor_file(const std::filesystem::path& path);

}  // namespace smanet
