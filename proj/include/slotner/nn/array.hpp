#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace slotner {

// Base for every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

namespace nn {

using Shape = std::vector<std::size_t>;

// Accumulator for reductions: 32-bit arrays reduce in double.
template <class T>
using accum_t = std::conditional_t<(sizeof(T) < sizeof(double)), double, T>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

[[noreturn]] inline void throw_shape(const std::string& op, const Shape& a,
                                     const Shape& b) {
  throw ShapeError(op + ": shape mismatch " + shape_string(a) + " vs " +
                   shape_string(b));
}

// Dense row-major array. Most model code works on rank-2 arrays
// (rows x cols), with the hidden size as the trailing dimension.
template <class T>
struct Array {
  Shape shape;
  std::vector<T> data;

  Array() = default;
  explicit Array(Shape s, T fill = T{0})
      : shape(std::move(s)), data(shape_size(shape), fill) {}
  Array(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != shape_size(shape)) {
      throw ShapeError("Array: " + std::to_string(data.size()) +
                       " values for shape " + shape_string(shape));
    }
  }

  static Array zeros(std::size_t rows, std::size_t cols) {
    return Array({rows, cols});
  }

  bool empty() const { return data.empty(); }
  std::size_t size() const { return data.size(); }
  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const {
    std::size_t c = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) c *= shape[i];
    return c;
  }

  T& operator()(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  T operator()(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  T* row(std::size_t r) { return data.data() + r * cols(); }
  const T* row(std::size_t r) const { return data.data() + r * cols(); }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  template <class U>
  Array<U> cast() const {
    Array<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }
};

template <class T>
inline void require_rank2(const std::string& op, const Array<T>& a) {
  if (a.shape.size() != 2) {
    throw ShapeError(op + ": expected a rank-2 array, got " + shape_string(a.shape));
  }
}

}  // namespace nn
}  // namespace slotner
