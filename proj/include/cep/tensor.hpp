#pragma once

#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace cep {

// Computation precision. Training runs natively in f32; gradient checking
// in f64. A tape owns one precision and every tensor on it matches.
enum class Precision { f32, f64 };

// Global epsilon shared by square roots and normalization statistics.
inline constexpr double kEps = 1e-5;

using Shape = std::vector<int64_t>;

namespace detail {

// Leaves scalars default-initialized on resize so freshly allocated tensor
// storage skips the zero fill; explicit fills still zero.
template <typename T>
struct NoInitAlloc : std::allocator<T> {
  template <typename U>
  struct rebind {
    using other = NoInitAlloc<U>;
  };
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    if constexpr (sizeof...(Args) == 0) {
      ::new (static_cast<void*>(p)) U;
    } else {
      ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }
  }
};

}  // namespace detail

inline int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

// Dense row-major real array with precision-tagged storage. Value type;
// copies are deep.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, Precision prec = Precision::f64)
      : shape_(std::move(shape)), prec_(prec) {
    validate_shape();
    const size_t n = static_cast<size_t>(numel_of(shape_));
    if (prec_ == Precision::f32) {
      f_.assign(n, 0.0f);
    } else {
      d_.assign(n, 0.0);
    }
  }

  Tensor(Shape shape, const std::vector<double>& data)
      : shape_(std::move(shape)), prec_(Precision::f64) {
    validate_shape();
    if (static_cast<int64_t>(data.size()) != numel_of(shape_)) {
      throw std::invalid_argument("tensor: data length " +
                                  std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape_));
    }
    d_.assign(data.begin(), data.end());
  }

  static Tensor scalar(double v, Precision prec = Precision::f64) {
    Tensor t({1}, prec);
    t.set(0, v);
    return t;
  }

  static Tensor vec(std::initializer_list<double> vals) {
    return Tensor({static_cast<int64_t>(vals.size())},
                  std::vector<double>(vals));
  }

  static Tensor zeros_like(const Tensor& t) {
    return Tensor(t.shape(), t.precision());
  }

  // Allocation without the zero fill, for outputs every element of which
  // is about to be written.
  static Tensor uninit(Shape shape, Precision prec) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.prec_ = prec;
    t.validate_shape();
    const size_t n = static_cast<size_t>(numel_of(t.shape_));
    if (prec == Precision::f32) {
      t.f_.resize(n);
    } else {
      t.d_.resize(n);
    }
    return t;
  }

  const Shape& shape() const { return shape_; }
  Precision precision() const { return prec_; }
  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  int64_t extent(int64_t i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t numel() const {
    return static_cast<int64_t>(prec_ == Precision::f32 ? f_.size()
                                                        : d_.size());
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  // Converting element access; storage-typed pointers below for kernels.
  double at(int64_t i) const {
    return prec_ == Precision::f32 ? static_cast<double>(f_[static_cast<size_t>(i)])
                                   : d_[static_cast<size_t>(i)];
  }
  void set(int64_t i, double v) {
    if (prec_ == Precision::f32) {
      f_[static_cast<size_t>(i)] = static_cast<float>(v);
    } else {
      d_[static_cast<size_t>(i)] = v;
    }
  }
  void add_at(int64_t i, double v) { set(i, at(i) + v); }

  template <typename T>
  T* data();
  template <typename T>
  const T* data() const;

  // Converting copy; no-op copy when precisions already agree.
  Tensor to(Precision p) const {
    if (p == prec_) return *this;
    Tensor out(shape_, p);
    for (int64_t i = 0; i < numel(); ++i) out.set(i, at(i));
    return out;
  }

  // One scalar element; used for loss values.
  double item() const {
    if (numel() != 1) {
      throw std::invalid_argument("tensor: item() on non-scalar shape " +
                                  shape_str(shape_));
    }
    return at(0);
  }

 private:
  void validate_shape() const {
    for (int64_t e : shape_) {
      if (e <= 0) {
        throw std::invalid_argument("tensor: non-positive extent in shape " +
                                    shape_str(shape_));
      }
    }
  }

  Shape shape_;
  Precision prec_ = Precision::f64;
  std::vector<float, detail::NoInitAlloc<float>> f_;
  std::vector<double, detail::NoInitAlloc<double>> d_;
};

template <>
inline float* Tensor::data<float>() {
  if (prec_ != Precision::f32) {
    throw std::logic_error("tensor: f32 access to f64 storage");
  }
  return f_.data();
}
template <>
inline const float* Tensor::data<float>() const {
  if (prec_ != Precision::f32) {
    throw std::logic_error("tensor: f32 access to f64 storage");
  }
  return f_.data();
}
template <>
inline double* Tensor::data<double>() {
  if (prec_ != Precision::f64) {
    throw std::logic_error("tensor: f64 access to f32 storage");
  }
  return d_.data();
}
template <>
inline const double* Tensor::data<double>() const {
  if (prec_ != Precision::f64) {
    throw std::logic_error("tensor: f64 access to f32 storage");
  }
  return d_.data();
}

// Keeps big short-lived buffers on the heap instead of mmap so repeated
// training steps reuse pages. Call once from main().
void runtime_tune();

}  // namespace cep
