#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cineseg/error.hpp"

namespace cineseg {

// Global scalar precision. f64 is the test/oracle mode (gradient checks need
// it); f32 is the training mode. Precision is a run mode, not a per-tensor
// flag: tensors created under one mode cannot be mixed with the other.
enum class Precision { f64, f32 };

Precision precision();
void set_precision(Precision p);

struct PrecisionGuard {
  explicit PrecisionGuard(Precision p) : saved_(precision()) { set_precision(p); }
  ~PrecisionGuard() { set_precision(saved_); }
  PrecisionGuard(const PrecisionGuard&) = delete;
  PrecisionGuard& operator=(const PrecisionGuard&) = delete;

 private:
  Precision saved_;
};

// Flat scalar storage at a fixed precision. Exactly one of the two vectors is
// in use, selected by `prec`.
struct Buffer {
  Precision prec = Precision::f64;
  std::vector<double> d64;
  std::vector<float> d32;

  Buffer() = default;
  Buffer(Precision p, std::size_t n, double fill_value = 0.0);

  std::size_t size() const { return prec == Precision::f64 ? d64.size() : d32.size(); }

  double get(std::size_t i) const {
    return prec == Precision::f64 ? d64[i] : static_cast<double>(d32[i]);
  }
  void set(std::size_t i, double v) {
    if (prec == Precision::f64) {
      d64[i] = v;
    } else {
      d32[i] = static_cast<float>(v);
    }
  }
  void fill(double v);

  template <class T>
  T* as();
  template <class T>
  const T* as() const;
};

template <>
inline double* Buffer::as<double>() {
  return d64.data();
}
template <>
inline float* Buffer::as<float>() {
  return d32.data();
}
template <>
inline const double* Buffer::as<double>() const {
  return d64.data();
}
template <>
inline const float* Buffer::as<float>() const {
  return d32.data();
}

// Dispatches a code block at the buffer's scalar type; the block sees
// `scalar_t` as either float or double.
#define CINESEG_DISPATCH(PREC, ...)                \
  do {                                             \
    if ((PREC) == ::cineseg::Precision::f32) {     \
      using scalar_t = float;                      \
      __VA_ARGS__;                                 \
    } else {                                       \
      using scalar_t = double;                     \
      __VA_ARGS__;                                 \
    }                                              \
  } while (0)

std::string shape_str(const std::vector<int>& shape);
std::int64_t shape_numel(const std::vector<int>& shape);

// One tensor: shape + data, plus a gradient accumulator when the tensor
// participates in differentiation. Data is immutable after construction
// except through the optimizer; grad is the only mutable accumulator.
struct Node {
  std::vector<int> shape;
  Buffer data;
  std::unique_ptr<Buffer> grad;  // allocated lazily, same extent as data
  bool requires_grad = false;
  std::string name;

  std::int64_t numel() const { return shape_numel(shape); }
};

Buffer& ensure_grad(Node& n);

// Value-semantic handle to a Node. Copies share the underlying storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, double value);
  static Tensor from_vector(std::vector<int> shape, const std::vector<double>& values);
  static Tensor scalar(double value) { return full({1}, value); }

  bool defined() const { return n_ != nullptr; }
  const std::vector<int>& shape() const { return unwrap().shape; }
  int rank() const { return static_cast<int>(unwrap().shape.size()); }
  int dim(int i) const { return unwrap().shape.at(static_cast<std::size_t>(i)); }
  std::int64_t numel() const { return unwrap().numel(); }
  Precision precision() const { return unwrap().data.prec; }

  double item() const;
  double at(std::int64_t flat) const { return unwrap().data.get(static_cast<std::size_t>(flat)); }
  std::vector<double> to_vector() const;

  bool requires_grad() const { return unwrap().requires_grad; }
  Tensor& set_requires_grad(bool b) {
    unwrap().requires_grad = b;
    return *this;
  }
  Tensor& set_name(std::string n) {
    unwrap().name = std::move(n);
    return *this;
  }
  const std::string& name() const { return unwrap().name; }

  bool has_grad() const { return unwrap().grad != nullptr; }
  std::vector<double> grad_vector() const;
  void zero_grad();

  // Detached deep copy (no grad, no recording).
  Tensor clone() const;

  std::shared_ptr<Node> node() const { return n_; }
  Node& unwrap() const {
    if (!n_) throw ValueError("use of undefined tensor");
    return *n_;
  }

  static Tensor wrap(std::shared_ptr<Node> n) { return Tensor(std::move(n)); }

 private:
  explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}
  std::shared_ptr<Node> n_;
};

// Creates an uninitialized tensor at the current global precision.
Tensor make_tensor(std::vector<int> shape);

// Dynamic tape; ops record their backward rules while a tape is active.
// Tapes nest (the innermost is active). backward() may be called once; the
// graph must be re-recorded afterwards.
class GradTape {
 public:
  GradTape();
  ~GradTape();
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  static GradTape* active();

  void record(std::shared_ptr<Node> out, std::function<void()> backward_fn);
  void backward(const Tensor& loss);
  std::size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    std::shared_ptr<Node> out;
    std::function<void()> back;
  };
  std::vector<Entry> entries_;
  GradTape* prev_ = nullptr;
  bool consumed_ = false;
};

// True when a tape is active and any argument wants gradients.
inline bool tracing(const Tensor& a) { return GradTape::active() && a.requires_grad(); }
inline bool tracing(const Tensor& a, const Tensor& b) {
  return GradTape::active() && (a.requires_grad() || b.requires_grad());
}

}  // namespace cineseg
