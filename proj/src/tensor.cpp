#include "msnn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace msnn {

Tensor::Tensor(std::size_t channels, std::size_t time, std::size_t maps, double fill)
    : channels_(channels), time_(time), maps_(maps), data_(channels * time * maps, fill) {}

Tensor::Tensor(std::size_t channels, std::size_t time, std::size_t maps, std::vector<double> data)
    : channels_(channels), time_(time), maps_(maps), data_(std::move(data)) {
  if (data_.size() != channels * time * maps) {
    throw std::invalid_argument("Tensor: data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_string());
  }
}

std::string Tensor::shape_string() const {
  return "[" + std::to_string(channels_) + ", " + std::to_string(time_) + ", " +
         std::to_string(maps_) + "]";
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

}  // namespace msnn
