#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace msnn {

// Dense rank-3 array laid out as [channels, time, maps], maps fastest.
// A raw multichannel signal is a Tensor with one map.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t channels, std::size_t time, std::size_t maps, double fill = 0.0);
  Tensor(std::size_t channels, std::size_t time, std::size_t maps, std::vector<double> data);

  std::size_t channels() const { return channels_; }
  std::size_t time() const { return time_; }
  std::size_t maps() const { return maps_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t c, std::size_t t, std::size_t f) {
    return data_[(c * time_ + t) * maps_ + f];
  }
  double operator()(std::size_t c, std::size_t t, std::size_t f) const {
    return data_[(c * time_ + t) * maps_ + f];
  }

  // Pointer to the `maps()` contiguous values at (c, t).
  double* row(std::size_t c, std::size_t t) { return data_.data() + (c * time_ + t) * maps_; }
  const double* row(std::size_t c, std::size_t t) const {
    return data_.data() + (c * time_ + t) * maps_;
  }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  bool same_shape(const Tensor& other) const {
    return channels_ == other.channels_ && time_ == other.time_ && maps_ == other.maps_;
  }
  std::string shape_string() const;

  bool all_finite() const;
  void fill(double v);

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.same_shape(b) && a.data_ == b.data_;
  }

 private:
  std::size_t channels_ = 0;
  std::size_t time_ = 0;
  std::size_t maps_ = 0;
  std::vector<double> data_;
};

// Leading batch axis, kept outside the per-sample [c, t, f] layout.
using Batch = std::vector<Tensor>;

}  // namespace msnn
