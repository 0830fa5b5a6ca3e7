#include "bat/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "bat/errors.hpp"
#include "bat/log.hpp"

namespace bat::ad {

namespace {

thread_local Tape* g_current_tape = nullptr;

#if defined(__GLIBC__)
// A taped step allocates many multi-megabyte buffers and frees them all at
// once. Keeping them on the heap instead of returning them to the kernel
// avoids a page-fault storm on the next step.
[[maybe_unused]] const bool g_allocator_tuned = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return true;
}();
#endif

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

std::shared_ptr<Node> make_node(Shape shape, std::vector<double> value) {
  if (numel(shape) != value.size()) {
    throw ShapeError("tensor data length " + std::to_string(value.size()) +
                     " does not match shape " + to_string(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  return node;
}

const Node& checked(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
  return *t.node();
}

bool wants_grad(const std::shared_ptr<Node>& n) { return n->requires_grad; }

// Per-dimension strides of `in` when broadcast against `out` (0 on
// broadcast dimensions). `in` is right-aligned against `out`.
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t stride = 1;
  const std::size_t offset = out.size() - in.size();
  for (std::size_t i = in.size(); i-- > 0;) {
    if (in[i] != 1) strides[offset + i] = stride;
    stride *= in[i];
  }
  return strides;
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + to_string(a) + " with " +
                       to_string(b));
    }
    out[i] = std::max(da, db);
    if (da == 0 || db == 0) out[i] = 0;
  }
  return out;
}

// Calls f(i, ia, ib) for every flat output index with the matching flat
// indices into the two broadcast operands.
template <class F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t total = numel(out);
  if (total == 0) return;
  const std::size_t rank = out.size();
  if (rank == 0) {
    f(std::size_t{0}, std::size_t{0}, std::size_t{0});
    return;
  }
  const std::size_t inner = out[rank - 1];
  const std::size_t ia_step = sa[rank - 1];
  const std::size_t ib_step = sb[rank - 1];
  std::vector<std::size_t> counter(rank, 0);
  std::size_t oa = 0;
  std::size_t ob = 0;
  for (std::size_t base = 0; base < total; base += inner) {
    std::size_t ia = oa;
    std::size_t ib = ob;
    for (std::size_t j = 0; j < inner; ++j) {
      f(base + j, ia, ib);
      ia += ia_step;
      ib += ib_step;
    }
    for (std::size_t d = rank - 1; d-- > 0;) {
      ++counter[d];
      oa += sa[d];
      ob += sb[d];
      if (counter[d] < out[d]) break;
      oa -= sa[d] * counter[d];
      ob -= sb[d] * counter[d];
      counter[d] = 0;
    }
  }
}

enum class BinaryKind { kAdd, kSub, kMul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, const char* op) {
  const Node& na = checked(a, op);
  const Node& nb = checked(b, op);
  const Shape out = na.shape == nb.shape ? na.shape : broadcast_shape(na.shape, nb.shape, op);
  std::vector<double> value(numel(out));
  const double* av = na.value.data();
  const double* bv = nb.value.data();

  const bool same = na.shape == nb.shape;
  std::vector<std::size_t> sa;
  std::vector<std::size_t> sb;
  if (!same) {
    sa = broadcast_strides(na.shape, out);
    sb = broadcast_strides(nb.shape, out);
  }
  auto apply = [&](auto&& fn) {
    if (same) {
      for (std::size_t i = 0; i < value.size(); ++i) fn(i, i, i);
    } else {
      for_each_broadcast(out, sa, sb, fn);
    }
  };
  switch (kind) {
    case BinaryKind::kAdd:
      apply([&](std::size_t i, std::size_t ia, std::size_t ib) { value[i] = av[ia] + bv[ib]; });
      break;
    case BinaryKind::kSub:
      apply([&](std::size_t i, std::size_t ia, std::size_t ib) { value[i] = av[ia] - bv[ib]; });
      break;
    case BinaryKind::kMul:
      apply([&](std::size_t i, std::size_t ia, std::size_t ib) { value[i] = av[ia] * bv[ib]; });
      break;
  }

  return make_result(out, std::move(value), {a, b},
                     [same, sa, sb, kind](Node& self) {
                       auto& pa = self.parents[0];
                       auto& pb = self.parents[1];
                       const double* g = self.grad.data();
                       double* ga = wants_grad(pa) ? pa->grad_buffer().data() : nullptr;
                       double* gb = wants_grad(pb) ? pb->grad_buffer().data() : nullptr;
                       const double* av = pa->value.data();
                       const double* bv = pb->value.data();
                       auto fn = [&](std::size_t i, std::size_t ia, std::size_t ib) {
                         switch (kind) {
                           case BinaryKind::kAdd:
                             if (ga) ga[ia] += g[i];
                             if (gb) gb[ib] += g[i];
                             break;
                           case BinaryKind::kSub:
                             if (ga) ga[ia] += g[i];
                             if (gb) gb[ib] -= g[i];
                             break;
                           case BinaryKind::kMul:
                             if (ga) ga[ia] += g[i] * bv[ib];
                             if (gb) gb[ib] += g[i] * av[ia];
                             break;
                         }
                       };
                       if (same) {
                         for (std::size_t i = 0; i < self.value.size(); ++i) fn(i, i, i);
                       } else {
                         for_each_broadcast(self.shape, sa, sb, fn);
                       }
                     });
}

// Elementwise unary op with derivative expressed through (x, y).
template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, const char* op, Fwd fwd, Deriv deriv) {
  const Node& nx = checked(x, op);
  std::vector<double> value(nx.value.size());
  for (std::size_t i = 0; i < value.size(); ++i) value[i] = fwd(nx.value[i]);
  return make_result(nx.shape, std::move(value), {x}, [deriv](Node& self) {
    auto& px = self.parents[0];
    auto& gx = px->grad_buffer();
    for (std::size_t i = 0; i < self.value.size(); ++i) {
      gx[i] += self.grad[i] * deriv(px->value[i], self.value[i]);
    }
  });
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_axes(const Shape& shape, std::size_t first, std::size_t last, const char* op) {
  if (first > last || last >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis range [" + std::to_string(first) + ", " +
                     std::to_string(last) + "] invalid for shape " + to_string(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < first; ++i) s.outer *= shape[i];
  for (std::size_t i = first; i <= last; ++i) s.len *= shape[i];
  for (std::size_t i = last + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape drop_axes(const Shape& shape, std::size_t first, std::size_t last) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i < first || i > last) out.push_back(shape[i]);
  }
  return out;
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::vector<double>& Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

// ---------------------------------------------------------------- Tensor

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = numel(shape);
  return Tensor(make_node(std::move(shape), std::vector<double>(n, value)));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  return Tensor(make_node(std::move(shape), std::move(values)));
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values, std::string name) {
  Tensor t = from(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  t.node_->name = std::move(name);
  return t;
}

const Shape& Tensor::shape() const { return checked(*this, "shape").shape; }
std::size_t Tensor::size() const { return checked(*this, "size").value.size(); }
std::span<const double> Tensor::data() const { return checked(*this, "data").value; }
std::span<double> Tensor::mutable_data() {
  checked(*this, "mutable_data");
  return node_->value;
}

double Tensor::item() const {
  const Node& n = checked(*this, "item");
  if (n.value.size() != 1) {
    throw ContractError("item() on non-scalar tensor of shape " + to_string(n.shape));
  }
  return n.value[0];
}

bool Tensor::requires_grad() const { return defined() && node_->requires_grad; }
void Tensor::set_requires_grad(bool on) {
  checked(*this, "set_requires_grad");
  node_->requires_grad = on;
}
bool Tensor::has_grad() const { return defined() && !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return checked(*this, "grad").grad; }
std::span<double> Tensor::mutable_grad() {
  checked(*this, "mutable_grad");
  return node_->grad_buffer();
}
void Tensor::zero_grad() {
  if (defined()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}
const std::string& Tensor::name() const { return checked(*this, "name").name; }
void Tensor::set_name(std::string name) {
  checked(*this, "set_name");
  node_->name = std::move(name);
}

Tensor Tensor::detach() const {
  const Node& n = checked(*this, "detach");
  return from(n.shape, n.value);
}

Tensor Tensor::clone() const {
  const Node& n = checked(*this, "clone");
  Tensor t = from(n.shape, n.value);
  t.node_->requires_grad = n.requires_grad;
  t.node_->name = n.name;
  return t;
}

// ------------------------------------------------------------------ Tape

Tape::Tape() : previous_(g_current_tape) { g_current_tape = this; }
Tape::~Tape() { g_current_tape = previous_; }

Tape* Tape::current() { return g_current_tape; }

void Tape::record(std::shared_ptr<Node> node) { nodes_.push_back(std::move(node)); }

void Tape::reset() {
  nodes_.clear();
  consumed_ = false;
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) {
    throw ContractError("backward: tape already replayed; reset() before reuse");
  }
  const Node& nl = checked(loss, "backward");
  if (nl.value.size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + to_string(nl.shape));
  }
  consumed_ = true;
  if (!nl.requires_grad) {
    log::warn("backward: loss is detached from every parameter; no gradients populated");
    return;
  }
  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& node = **it;
    if (node.grad.empty() || !node.backward_fn) continue;
    node.backward_fn(node);
  }
}

Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward_fn) {
  auto node = make_node(std::move(shape), std::move(value));
  Tape* tape = Tape::current();
  if (tape != nullptr) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(inputs.size());
      for (auto& in : inputs) node->parents.push_back(in.node_ptr());
      node->backward_fn = std::move(backward_fn);
      tape->record(node);
    }
  }
  return Tensor(std::move(node));
}

// ------------------------------------------------------------ arithmetic

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kMul, "mul"); }

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, "scale", [factor](double x) { return x * factor; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double offset) {
  return unary(
      a, "add_scalar", [offset](double x) { return x + offset; },
      [](double, double) { return 1.0; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Node& na = checked(a, "matmul");
  const Node& nb = checked(b, "matmul");
  const auto mismatch = [&] {
    return ShapeError("matmul: inner dimensions differ for " + to_string(na.shape) + " x " +
                      to_string(nb.shape));
  };
  if (na.shape.size() < 2 || nb.shape.size() < 2) throw mismatch();

  const std::size_t k = na.shape.back();
  const std::size_t m = na.shape[na.shape.size() - 2];
  const std::size_t n = nb.shape.back();
  if (nb.shape[nb.shape.size() - 2] != k) throw mismatch();

  Shape out = na.shape;
  out.back() = n;

  if (nb.shape.size() == 2) {
    // Shared right operand: fold every leading axis of `a` into rows.
    const std::size_t rows = numel(na.shape) / std::max<std::size_t>(k, 1);
    std::vector<double> value(rows * n);
    MutMap(value.data(), rows, n).noalias() =
        ConstMap(na.value.data(), rows, k) * ConstMap(nb.value.data(), k, n);
    return make_result(out, std::move(value), {a, b}, [rows, k, n](Node& self) {
      auto& pa = self.parents[0];
      auto& pb = self.parents[1];
      ConstMap g(self.grad.data(), rows, n);
      if (wants_grad(pa)) {
        MutMap(pa->grad_buffer().data(), rows, k).noalias() +=
            g * ConstMap(pb->value.data(), k, n).transpose();
      }
      if (wants_grad(pb)) {
        MutMap(pb->grad_buffer().data(), k, n).noalias() +=
            ConstMap(pa->value.data(), rows, k).transpose() * g;
      }
    });
  }

  if (na.shape.size() != nb.shape.size() ||
      !std::equal(na.shape.begin(), na.shape.end() - 2, nb.shape.begin())) {
    throw ShapeError("matmul: batch dimensions differ for " + to_string(na.shape) + " x " +
                     to_string(nb.shape));
  }
  (void)m;
  const std::size_t batch = numel(Shape(na.shape.begin(), na.shape.end() - 2));
  std::vector<double> value(batch * m * n);
  for (std::size_t i = 0; i < batch; ++i) {
    MutMap(value.data() + i * m * n, m, n).noalias() =
        ConstMap(na.value.data() + i * m * k, m, k) * ConstMap(nb.value.data() + i * k * n, k, n);
  }
  return make_result(out, std::move(value), {a, b}, [batch, m, k, n](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    double* ga = wants_grad(pa) ? pa->grad_buffer().data() : nullptr;
    double* gb = wants_grad(pb) ? pb->grad_buffer().data() : nullptr;
    for (std::size_t i = 0; i < batch; ++i) {
      ConstMap g(self.grad.data() + i * m * n, m, n);
      if (ga) {
        MutMap(ga + i * m * k, m, k).noalias() +=
            g * ConstMap(pb->value.data() + i * k * n, k, n).transpose();
      }
      if (gb) {
        MutMap(gb + i * k * n, k, n).noalias() +=
            ConstMap(pa->value.data() + i * m * k, m, k).transpose() * g;
      }
    }
  });
}

// ----------------------------------------------------- normalizations

Tensor softmax(const Tensor& x, std::size_t axis) {
  const Node& nx = checked(x, "softmax");
  const AxisSplit s = split_axes(nx.shape, axis, axis, "softmax");
  std::vector<double> y(nx.value.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t j = 0; j < s.inner; ++j) {
      const std::size_t base = o * s.len * s.inner + j;
      double hi = -std::numeric_limits<double>::infinity();
      for (std::size_t r = 0; r < s.len; ++r) hi = std::max(hi, nx.value[base + r * s.inner]);
      double total = 0.0;
      for (std::size_t r = 0; r < s.len; ++r) {
        const double e = std::exp(nx.value[base + r * s.inner] - hi);
        y[base + r * s.inner] = e;
        total += e;
      }
      for (std::size_t r = 0; r < s.len; ++r) y[base + r * s.inner] /= total;
    }
  }
  return make_result(nx.shape, std::move(y), {x}, [s](Node& self) {
    auto& gx = self.parents[0]->grad_buffer();
    const auto& y = self.value;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t j = 0; j < s.inner; ++j) {
        const std::size_t base = o * s.len * s.inner + j;
        double dot = 0.0;
        for (std::size_t r = 0; r < s.len; ++r) {
          const std::size_t i = base + r * s.inner;
          dot += g[i] * y[i];
        }
        for (std::size_t r = 0; r < s.len; ++r) {
          const std::size_t i = base + r * s.inner;
          gx[i] += y[i] * (g[i] - dot);
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, std::size_t axis,
                  double eps) {
  const Node& nx = checked(x, "layer_norm");
  const Node& ng = checked(gain, "layer_norm");
  const Node& nb = checked(bias, "layer_norm");
  const AxisSplit s = split_axes(nx.shape, axis, axis, "layer_norm");
  if (ng.value.size() != s.len || nb.value.size() != s.len) {
    throw ShapeError("layer_norm: gain/bias of shapes " + to_string(ng.shape) + "/" +
                     to_string(nb.shape) + " do not match axis length " + std::to_string(s.len));
  }
  const std::size_t slices = s.outer * s.inner;
  auto xhat = std::make_shared<std::vector<double>>(nx.value.size());
  auto rstd = std::make_shared<std::vector<double>>(slices);
  std::vector<double> y(nx.value.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t j = 0; j < s.inner; ++j) {
      const std::size_t base = o * s.len * s.inner + j;
      double mu = 0.0;
      for (std::size_t r = 0; r < s.len; ++r) mu += nx.value[base + r * s.inner];
      mu /= static_cast<double>(s.len);
      double var = 0.0;
      for (std::size_t r = 0; r < s.len; ++r) {
        const double d = nx.value[base + r * s.inner] - mu;
        var += d * d;
      }
      var /= static_cast<double>(s.len);
      const double inv = 1.0 / std::sqrt(var + eps);
      (*rstd)[o * s.inner + j] = inv;
      for (std::size_t r = 0; r < s.len; ++r) {
        const std::size_t i = base + r * s.inner;
        const double h = (nx.value[i] - mu) * inv;
        (*xhat)[i] = h;
        y[i] = h * ng.value[r] + nb.value[r];
      }
    }
  }
  return make_result(nx.shape, std::move(y), {x, gain, bias}, [s, xhat, rstd](Node& self) {
    auto& px = self.parents[0];
    auto& pg = self.parents[1];
    auto& pb = self.parents[2];
    const auto& g = self.grad;
    const auto& gainv = pg->value;
    double* gx = wants_grad(px) ? px->grad_buffer().data() : nullptr;
    double* gg = wants_grad(pg) ? pg->grad_buffer().data() : nullptr;
    double* gbias = wants_grad(pb) ? pb->grad_buffer().data() : nullptr;
    const double inv_len = 1.0 / static_cast<double>(s.len);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t j = 0; j < s.inner; ++j) {
        const std::size_t base = o * s.len * s.inner + j;
        double m1 = 0.0;
        double m2 = 0.0;
        for (std::size_t r = 0; r < s.len; ++r) {
          const std::size_t i = base + r * s.inner;
          const double dh = g[i] * gainv[r];
          m1 += dh;
          m2 += dh * (*xhat)[i];
          if (gg) gg[r] += g[i] * (*xhat)[i];
          if (gbias) gbias[r] += g[i];
        }
        if (!gx) continue;
        m1 *= inv_len;
        m2 *= inv_len;
        const double inv = (*rstd)[o * s.inner + j];
        for (std::size_t r = 0; r < s.len; ++r) {
          const std::size_t i = base + r * s.inner;
          gx[i] += inv * (g[i] * gainv[r] - m1 - (*xhat)[i] * m2);
        }
      }
    }
  });
}

// ------------------------------------------------------- nonlinearities

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  // tanh through exp: noticeably cheaper than std::tanh and exact to a few ulp.
  const auto fast_tanh = [](double u) { return 1.0 - 2.0 / (std::exp(2.0 * u) + 1.0); };
  return unary(
      x, "gelu",
      [=](double v) { return 0.5 * v * (1.0 + fast_tanh(kC * (v + kA * v * v * v))); },
      [=](double v, double) {
        const double t = fast_tanh(kC * (v + kA * v * v * v));
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kC * (1.0 + 3.0 * kA * v * v);
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, "sigmoid",
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor log(const Tensor& x) {
  return unary(
      x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary(
      x, "clamp", [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Tensor dropout(const Tensor& x, double p, bool training, std::mt19937_64& rng) {
  if (!training || p <= 0.0) return x;
  if (p >= 1.0) throw ContractError("dropout: rate must be < 1");
  const Node& nx = checked(x, "dropout");
  const double keep_scale = 1.0 / (1.0 - p);
  auto keep = std::make_shared<std::vector<double>>(nx.value.size());
  // One raw draw per element: keep iff draw >= p * 2^64.
  const auto cutoff = static_cast<std::uint64_t>(std::ldexp(p, 64));
  std::vector<double> y(nx.value.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    (*keep)[i] = rng() >= cutoff ? keep_scale : 0.0;
    y[i] = nx.value[i] * (*keep)[i];
  }
  return make_result(nx.shape, std::move(y), {x}, [keep](Node& self) {
    auto& gx = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i] * (*keep)[i];
  });
}

// --------------------------------------------------------------- layout

Tensor reshape(const Tensor& x, Shape shape) {
  const Node& nx = checked(x, "reshape");
  if (numel(shape) != nx.value.size()) {
    throw ShapeError("reshape: cannot view " + to_string(nx.shape) + " as " + to_string(shape));
  }
  return make_result(std::move(shape), nx.value, {x}, [](Node& self) {
    auto& gx = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
  const Node& nx = checked(x, "permute");
  const std::size_t rank = nx.shape.size();
  if (order.size() != rank) throw ShapeError("permute: order length differs from rank");
  std::vector<bool> seen(rank, false);
  for (auto o : order) {
    if (o >= rank || seen[o]) throw ShapeError("permute: invalid axis order");
    seen[o] = true;
  }
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * nx.shape[i];
  Shape out(rank);
  std::vector<std::size_t> strides(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out[i] = nx.shape[order[i]];
    strides[i] = in_strides[order[i]];
  }
  std::vector<double> y(nx.value.size());
  const std::vector<std::size_t> unused(rank, 0);
  for_each_broadcast(out, strides, unused,
                     [&](std::size_t i, std::size_t src, std::size_t) { y[i] = nx.value[src]; });
  return make_result(out, std::move(y), {x}, [out, strides, unused](Node& self) {
    auto& gx = self.parents[0]->grad_buffer();
    for_each_broadcast(out, strides, unused, [&](std::size_t i, std::size_t src, std::size_t) {
      gx[src] += self.grad[i];
    });
  });
}

Tensor transpose(const Tensor& x, std::size_t axis0, std::size_t axis1) {
  std::vector<std::size_t> order(x.rank());
  std::iota(order.begin(), order.end(), 0);
  if (axis0 >= order.size() || axis1 >= order.size()) {
    throw ShapeError("transpose: axis out of range for shape " + to_string(x.shape()));
  }
  std::swap(order[axis0], order[axis1]);
  return permute(x, order);
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = checked(parts[0], "concat").shape;
  if (axis >= first.size()) throw ShapeError("concat: axis out of range");
  Shape out = first;
  out[axis] = 0;
  std::vector<std::size_t> chunk(parts.size());
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Shape& s = checked(parts[p], "concat").shape;
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) {
      throw ShapeError("concat: shape " + to_string(s) + " incompatible with " + to_string(first));
    }
    out[axis] += s[axis];
    chunk[p] = outer == 0 ? 0 : parts[p].size() / outer;
  }
  const std::size_t row = std::accumulate(chunk.begin(), chunk.end(), std::size_t{0});
  std::vector<double> y(outer * row);
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t offset = o * row;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      const auto src = parts[p].data();
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(o * chunk[p]), chunk[p],
                  y.begin() + static_cast<std::ptrdiff_t>(offset));
      offset += chunk[p];
    }
  }
  return make_result(out, std::move(y), parts, [outer, row, chunk](Node& self) {
    std::size_t start = 0;
    for (std::size_t p = 0; p < chunk.size(); ++p) {
      auto& parent = self.parents[p];
      if (wants_grad(parent)) {
        auto& gp = parent->grad_buffer();
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t c = 0; c < chunk[p]; ++c) {
            gp[o * chunk[p] + c] += self.grad[o * row + start + c];
          }
        }
      }
      start += chunk[p];
    }
  });
}

// ------------------------------------------------------------ reductions

Tensor sum(const Tensor& x, std::size_t first, std::size_t last) {
  const Node& nx = checked(x, "sum");
  const AxisSplit s = split_axes(nx.shape, first, last, "sum");
  std::vector<double> y(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t r = 0; r < s.len; ++r) {
      const double* src = nx.value.data() + (o * s.len + r) * s.inner;
      double* dst = y.data() + o * s.inner;
      for (std::size_t j = 0; j < s.inner; ++j) dst[j] += src[j];
    }
  }
  return make_result(drop_axes(nx.shape, first, last), std::move(y), {x}, [s](Node& self) {
    auto& gx = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t r = 0; r < s.len; ++r) {
        double* dst = gx.data() + (o * s.len + r) * s.inner;
        const double* g = self.grad.data() + o * s.inner;
        for (std::size_t j = 0; j < s.inner; ++j) dst[j] += g[j];
      }
    }
  });
}

Tensor mean(const Tensor& x, std::size_t first, std::size_t last) {
  const AxisSplit s = split_axes(x.shape(), first, last, "mean");
  if (s.len == 0) throw ShapeError("mean: empty reduction");
  return scale(sum(x, first, last), 1.0 / static_cast<double>(s.len));
}

Tensor max(const Tensor& x, std::size_t first, std::size_t last) {
  const Node& nx = checked(x, "max");
  const AxisSplit s = split_axes(nx.shape, first, last, "max");
  if (s.len == 0) throw ShapeError("max: empty reduction");
  std::vector<double> y(s.outer * s.inner, -std::numeric_limits<double>::infinity());
  auto arg = std::make_shared<std::vector<std::size_t>>(y.size(), 0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t r = 0; r < s.len; ++r) {
      const std::size_t src = (o * s.len + r) * s.inner;
      for (std::size_t j = 0; j < s.inner; ++j) {
        const std::size_t out = o * s.inner + j;
        if (r == 0 || nx.value[src + j] > y[out]) {
          y[out] = nx.value[src + j];
          (*arg)[out] = src + j;
        }
      }
    }
  }
  return make_result(drop_axes(nx.shape, first, last), std::move(y), {x}, [arg](Node& self) {
    auto& gx = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[(*arg)[i]] += self.grad[i];
  });
}

Tensor sum(const Tensor& x) {
  if (x.rank() == 0) return x;
  return sum(x, 0, x.rank() - 1);
}

Tensor mean(const Tensor& x) {
  if (x.rank() == 0) return x;
  return mean(x, 0, x.rank() - 1);
}

}  // namespace bat::ad
