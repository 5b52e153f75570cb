#include "stprog/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "stprog/errors.hpp"

namespace stprog {

std::size_t shape_size(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {
void check_extents(const std::vector<std::size_t>& shape) {
  for (std::size_t e : shape) {
    if (e == 0) throw ShapeError("tensor: zero extent in shape " + shape_str(shape));
  }
}
}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(shape_size(shape_), 0.0);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  if (data_.size() != shape_size(shape_)) {
    throw ShapeError("tensor: buffer length " + std::to_string(data_.size()) +
                     " does not match shape " + stprog::shape_str(shape_));
  }
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::full(std::vector<std::size_t> shape, double v) {
  Tensor t(std::move(shape));
  t.fill(v);
  return t;
}

std::size_t Tensor::extent(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("tensor: axis " + std::to_string(axis) +
                     " out of range for shape " + stprog::shape_str(shape_));
  }
  return shape_[axis];
}

std::vector<std::size_t> Tensor::strides() const {
  std::vector<std::size_t> st(shape_.size(), 1);
  for (std::size_t i = shape_.size(); i-- > 1;) st[i - 1] = st[i] * shape_[i];
  return st;
}

namespace {
std::size_t flat_index(const std::vector<std::size_t>& shape,
                       std::initializer_list<std::size_t> idx) {
  if (idx.size() != shape.size()) {
    throw ShapeError("tensor: index rank " + std::to_string(idx.size()) +
                     " does not match shape " + shape_str(shape));
  }
  std::size_t flat = 0;
  std::size_t i = 0;
  for (std::size_t v : idx) {
    if (v >= shape[i]) throw ShapeError("tensor: index out of bounds");
    flat = flat * shape[i] + v;
    ++i;
  }
  return flat;
}
}  // namespace

double& Tensor::at(std::initializer_list<std::size_t> idx) {
  return data_[flat_index(shape_, idx)];
}

double Tensor::at(std::initializer_list<std::size_t> idx) const {
  return data_[flat_index(shape_, idx)];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_str() const { return stprog::shape_str(shape_); }

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

}  // namespace stprog
