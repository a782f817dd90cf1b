#pragma once

#include <cstring>
#include <string>
#include <vector>

#include "ipreid/common.hpp"

namespace ipreid {

// NCHW shape. Vectors are represented as (n, d, 1, 1).
struct Shape {
  int n = 0, c = 0, h = 0, w = 0;

  long count() const { return static_cast<long>(n) * c * h * w; }
  long per_sample() const { return static_cast<long>(c) * h * w; }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" +
           std::to_string(h) + "x" + std::to_string(w);
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape s) : shape_(s), v_(static_cast<std::size_t>(s.count()), 0.0) {}
  Tensor(Shape s, Scalar fill)
      : shape_(s), v_(static_cast<std::size_t>(s.count()), fill) {}

  const Shape& shape() const { return shape_; }
  long count() const { return shape_.count(); }

  Scalar* data() { return v_.data(); }
  const Scalar* data() const { return v_.data(); }
  std::vector<Scalar>& vec() { return v_; }
  const std::vector<Scalar>& vec() const { return v_; }

  Scalar& at(int n, int c, int y, int x) {
    return v_[((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x];
  }
  Scalar at(int n, int c, int y, int x) const {
    return v_[((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x];
  }

  Scalar* sample(int n) { return v_.data() + static_cast<std::size_t>(n) * shape_.per_sample(); }
  const Scalar* sample(int n) const {
    return v_.data() + static_cast<std::size_t>(n) * shape_.per_sample();
  }

  void fill(Scalar x) { std::fill(v_.begin(), v_.end(), x); }

  // Copies sample `src` of `from` into sample `dst` of this tensor.
  void set_sample(int dst, const Tensor& from, int src) {
    std::memcpy(sample(dst), from.sample(src),
                sizeof(Scalar) * static_cast<std::size_t>(shape_.per_sample()));
  }

  Tensor slice_samples(int begin, int count) const {
    Tensor out(Shape{count, shape_.c, shape_.h, shape_.w});
    std::memcpy(out.data(), sample(begin),
                sizeof(Scalar) * static_cast<std::size_t>(out.count()));
    return out;
  }

 private:
  Shape shape_;
  std::vector<Scalar> v_;
};

inline Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }

}  // namespace ipreid
