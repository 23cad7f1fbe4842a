#pragma once

#include <cstdint>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace rdwn {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class Tape;

/// Dense row-major tensor of 64-bit floats, optionally attached to a Tape
/// node so gradients can flow through it.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int64_t> shape)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<double>>(count(shape_), 0.0)) {}

  Tensor(std::vector<int64_t> shape, std::vector<double> values)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<double>>(std::move(values))) {
    if (static_cast<int64_t>(data_->size()) != count(shape_))
      throw Error("tensor: value count does not match shape");
  }

  static Tensor full(std::vector<int64_t> shape, double v) {
    Tensor t(std::move(shape));
    for (double& x : *t.data_) x = v;
    return t;
  }

  static Tensor scalar(double v) { return Tensor({}, {v}); }

  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t size() const { return count(shape_); }
  int64_t dim(size_t i) const { return shape_.at(i); }
  size_t rank() const { return shape_.size(); }

  double* data() { return data_->data(); }
  const double* data() const { return data_->data(); }
  double item() const {
    if (size() != 1) throw Error("tensor: item() requires a single element");
    return (*data_)[0];
  }

  bool defined() const { return data_ != nullptr; }

  Tape* tape() const { return tape_; }
  int node() const { return node_; }
  bool attached() const { return tape_ != nullptr && node_ >= 0; }

  void attach(Tape* tape, int node) {
    tape_ = tape;
    node_ = node;
  }

  /// Same storage, no graph attachment.
  Tensor detached() const {
    Tensor t = *this;
    t.tape_ = nullptr;
    t.node_ = -1;
    return t;
  }

  /// Fresh storage, no graph attachment.
  Tensor clone() const { return Tensor(shape_, *data_); }

  static int64_t count(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
      if (d < 0) throw Error("tensor: negative dimension");
      n *= d;
    }
    return n;
  }

 private:
  std::vector<int64_t> shape_;
  std::shared_ptr<std::vector<double>> data_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

inline bool same_shape(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape();
}

inline std::string shape_str(const std::vector<int64_t>& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

}  // namespace rdwn
