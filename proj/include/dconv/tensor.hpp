// Dense row-major tensors (rank 1..4) plus the small numeric utilities the
// rest of the library builds on: shape helpers, a deterministic RNG, and
// GEMM wrappers used by the convolution kernels.

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dconv {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << ")";
  return os.str();
}

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline void check_shape_valid(const Shape& s) {
  if (s.empty() || s.size() > 4)
    throw std::invalid_argument("tensor rank must be 1..4, got rank " +
                                std::to_string(s.size()));
  for (int d : s)
    if (d <= 0)
      throw std::invalid_argument("tensor dims must be positive, got " +
                                  shape_str(s));
}

template <class S>
struct TensorT {
  Shape shape;
  std::vector<S> data;
  bool requires_grad = false;
  std::vector<S> grad;  // empty until gradients are accumulated

  TensorT() = default;
  explicit TensorT(Shape s, S fill = S(0)) : shape(std::move(s)) {
    check_shape_valid(shape);
    data.assign(static_cast<size_t>(shape_numel(shape)), fill);
  }
  TensorT(Shape s, std::vector<S> values) : shape(std::move(s)), data(std::move(values)) {
    check_shape_valid(shape);
    if (static_cast<int64_t>(data.size()) != shape_numel(shape))
      throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape));
  }

  int rank() const { return static_cast<int>(shape.size()); }
  int64_t numel() const { return static_cast<int64_t>(data.size()); }

  S& at(int i) { return data[static_cast<size_t>(i)]; }
  S at(int i) const { return data[static_cast<size_t>(i)]; }
  S& at(int i, int j) { return data[static_cast<size_t>(i) * shape[1] + j]; }
  S at(int i, int j) const { return data[static_cast<size_t>(i) * shape[1] + j]; }
  S& at(int i, int j, int k) {
    return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  S at(int i, int j, int k) const {
    return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
  }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), S(0));
  }
  void zero_grad() {
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), S(0));
  }

  bool all_finite() const {
    for (S v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <class T>
  TensorT<T> cast() const {
    TensorT<T> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<T>(data[i]);
    return out;
  }
};

using Tensor = TensorT<float>;

// Boolean validity mask; 1 marks a valid position.
struct Mask {
  Shape shape;
  std::vector<uint8_t> data;

  Mask() = default;
  explicit Mask(Shape s, uint8_t fill = 0) : shape(std::move(s)) {
    check_shape_valid(shape);
    data.assign(static_cast<size_t>(shape_numel(shape)), fill);
  }
  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  uint8_t at(int i, int j) const { return data[static_cast<size_t>(i) * shape[1] + j]; }
  uint8_t& at(int i, int j) { return data[static_cast<size_t>(i) * shape[1] + j]; }
};

// Integer id grid (utterance slot x token position).
struct IdGrid {
  Shape shape;  // (T, L)
  std::vector<int32_t> data;

  IdGrid() = default;
  IdGrid(int t, int l) : shape{t, l}, data(static_cast<size_t>(t) * l, 0) {}
  int32_t at(int i, int j) const { return data[static_cast<size_t>(i) * shape[1] + j]; }
  int32_t& at(int i, int j) { return data[static_cast<size_t>(i) * shape[1] + j]; }
};

// ---------------------------------------------------------------------------
// Deterministic RNG. std::mt19937 is bit-specified by the standard; all
// derived draws below avoid implementation-defined std distributions so that
// seeded runs are reproducible.

class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(static_cast<uint32_t>(seed ^ (seed >> 32))) {}

  uint32_t next_u32() { return eng_(); }

  // Unbiased draw in [0, bound) via rejection.
  uint32_t below(uint32_t bound) {
    if (bound == 0) throw std::invalid_argument("Rng::below(0)");
    const uint32_t limit = UINT32_MAX - UINT32_MAX % bound;
    uint32_t x;
    do {
      x = eng_();
    } while (x >= limit);
    return x % bound;
  }

  // Uniform in [0, 1) with 24 random bits (exact in float).
  double unit() { return (eng_() >> 8) * (1.0 / 16777216.0); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = below(static_cast<uint32_t>(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937 eng_;
};

// ---------------------------------------------------------------------------
// Row-major GEMM accumulators backing the convolution kernels. Everything
// else in the tensor core is hand-rolled; these three calls are the hot loop.

template <class S>
using EigenMapC = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class S>
using EigenMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// C(m,n) += A(m,k) * B(k,n)
template <class S>
inline void gemm_nn_acc(const S* a, const S* b, S* c, int m, int k, int n) {
  EigenMap<S>(c, m, n).noalias() += EigenMapC<S>(a, m, k) * EigenMapC<S>(b, k, n);
}

// C(m,n) += A(m,k) * B(n,k)^T
template <class S>
inline void gemm_nt_acc(const S* a, const S* b, S* c, int m, int k, int n) {
  EigenMap<S>(c, m, n).noalias() += EigenMapC<S>(a, m, k) * EigenMapC<S>(b, n, k).transpose();
}

// C(k,n) += A(m,k)^T * B(m,n)
template <class S>
inline void gemm_tn_acc(const S* a, const S* b, S* c, int m, int k, int n) {
  EigenMap<S>(c, k, n).noalias() += EigenMapC<S>(a, m, k).transpose() * EigenMapC<S>(b, m, n);
}

}  // namespace dconv
