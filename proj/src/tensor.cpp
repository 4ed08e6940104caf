#include "cineseg/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace cineseg {

namespace {
Precision g_precision = Precision::f64;
GradTape* g_active_tape = nullptr;
}  // namespace

Precision precision() { return g_precision; }
void set_precision(Precision p) { g_precision = p; }

Buffer::Buffer(Precision p, std::size_t n, double fill_value) : prec(p) {
  if (p == Precision::f64) {
    d64.assign(n, fill_value);
  } else {
    d32.assign(n, static_cast<float>(fill_value));
  }
}

void Buffer::fill(double v) {
  if (prec == Precision::f64) {
    std::fill(d64.begin(), d64.end(), v);
  } else {
    std::fill(d32.begin(), d32.end(), static_cast<float>(v));
  }
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::int64_t shape_numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

Buffer& ensure_grad(Node& n) {
  if (!n.grad) {
    n.grad = std::make_unique<Buffer>(n.data.prec, static_cast<std::size_t>(n.numel()), 0.0);
  }
  return *n.grad;
}

Tensor make_tensor(std::vector<int> shape) {
  for (int d : shape) {
    if (d <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
  auto n = std::make_shared<Node>();
  n->data = Buffer(g_precision, static_cast<std::size_t>(shape_numel(shape)));
  n->shape = std::move(shape);
  return Tensor::wrap(std::move(n));
}

Tensor Tensor::zeros(std::vector<int> shape) { return make_tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<int> shape, double value) {
  Tensor t = make_tensor(std::move(shape));
  t.unwrap().data.fill(value);
  return t;
}

Tensor Tensor::from_vector(std::vector<int> shape, const std::vector<double>& values) {
  Tensor t = make_tensor(std::move(shape));
  Node& n = t.unwrap();
  if (static_cast<std::int64_t>(values.size()) != n.numel()) {
    throw ShapeError("from_vector: " + std::to_string(values.size()) + " values for shape " +
                     shape_str(n.shape));
  }
  for (std::size_t i = 0; i < values.size(); ++i) n.data.set(i, values[i]);
  return t;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item(): tensor has shape " + shape_str(shape()));
  return unwrap().data.get(0);
}

std::vector<double> Tensor::to_vector() const {
  const Node& n = unwrap();
  std::vector<double> out(static_cast<std::size_t>(n.numel()));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = n.data.get(i);
  return out;
}

std::vector<double> Tensor::grad_vector() const {
  const Node& n = unwrap();
  if (!n.grad) throw ValueError("grad_vector: no gradient recorded for tensor '" + n.name + "'");
  std::vector<double> out(static_cast<std::size_t>(n.numel()));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = n.grad->get(i);
  return out;
}

void Tensor::zero_grad() {
  Node& n = unwrap();
  if (n.grad) n.grad->fill(0.0);
}

Tensor Tensor::clone() const {
  const Node& n = unwrap();
  auto c = std::make_shared<Node>();
  c->shape = n.shape;
  c->data = n.data;
  return Tensor::wrap(std::move(c));
}

GradTape::GradTape() : prev_(g_active_tape) { g_active_tape = this; }

GradTape::~GradTape() { g_active_tape = prev_; }

GradTape* GradTape::active() { return g_active_tape; }

void GradTape::record(std::shared_ptr<Node> out, std::function<void()> backward_fn) {
  entries_.push_back(Entry{std::move(out), std::move(backward_fn)});
}

void GradTape::backward(const Tensor& loss) {
  if (consumed_) {
    throw ValueError("backward already called on this tape; re-record the graph first");
  }
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  }
  if (entries_.empty()) throw ValueError("backward: tape is empty");
  consumed_ = true;

  Buffer& lg = ensure_grad(loss.unwrap());
  lg.set(0, lg.get(0) + 1.0);

  // Recording order is a topological order, so the reverse is valid for
  // accumulation. Entries whose output never received a gradient are not on
  // any path to the loss.
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->out->grad) it->back();
  }
}

}  // namespace cineseg
