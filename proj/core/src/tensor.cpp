#include "ckgan/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace ckgan {

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {}

Tensor::Tensor(Shape shape, Uninit) : shape_(std::move(shape)), data_(shape_numel(shape_)) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  if (data_.size() != shape_numel(shape_))
    throw std::invalid_argument("Tensor: data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_str(shape_));
}

Tensor Tensor::scalar(double v) {
  Tensor t;
  t.data_[0] = v;
  return t;
}

Tensor Tensor::full(Shape shape, double v) {
  Tensor t(std::move(shape), Uninit{});
  for (auto& x : t.data_) x = v;
  return t;
}

Tensor Tensor::uninit(Shape shape) { return Tensor(std::move(shape), Uninit{}); }

double Tensor::item() const {
  if (data_.size() != 1)
    throw std::logic_error("Tensor::item on non-scalar of shape " + shape_str(shape_));
  return data_[0];
}

bool Tensor::all_finite() const {
  // |x| accumulation: any NaN/Inf poisons the sum, and the loop vectorizes
  double acc = 0.0;
  for (double v : data_) acc += std::fabs(v);
  return std::isfinite(acc);
}

Tensor Tensor::row(std::size_t i) const {
  if (rank() != 2) throw std::logic_error("Tensor::row requires rank 2");
  std::size_t m = shape_[1];
  std::vector<double> out(data_.begin() + i * m, data_.begin() + (i + 1) * m);
  return Tensor({m}, std::move(out));
}

}  // namespace ckgan
