#pragma once

// Dense float64 tensors with a reverse-mode gradient tape.
//
// Operations record onto the tape installed by the innermost live `Tape`
// on the calling thread, and only when at least one input requires a
// gradient. Without a live tape every operation is a plain forward
// computation, which is how evaluation runs.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace bat::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

struct Node;

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);
  /// A leaf that accumulates gradients.
  static Tensor parameter(Shape shape, std::vector<double> values, std::string name = {});

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const { return shape().at(axis); }
  std::size_t size() const;

  std::span<const double> data() const;
  /// Mutable access for leaves (optimizer updates, test perturbation).
  std::span<double> mutable_data();
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  const std::string& name() const;
  void set_name(std::string name);

  /// Same values, no history, no gradient.
  Tensor detach() const;
  /// Deep copy of the values into a fresh leaf with the same flags.
  Tensor clone() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;

  friend Tensor make_result(Shape, std::vector<double>, std::vector<Tensor>,
                            std::function<void(Node&)>);
};

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a gradient reaches the node
  bool requires_grad = false;
  std::string name;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<double>& grad_buffer();  // allocates zeros on first use
};

/// Ordered record of primitive operations for one forward/backward pass.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Populates gradients of every requires_grad tensor reachable from
  /// `loss`. A tape replays backward at most once; call reset() to reuse.
  void backward(const Tensor& loss);
  void reset();
  std::size_t size() const { return nodes_.size(); }

  static Tape* current();
  void record(std::shared_ptr<Node> node);

 private:
  std::vector<std::shared_ptr<Node>> nodes_;
  bool consumed_ = false;
  Tape* previous_ = nullptr;
};

/// Builds an op result; records it on the current tape when any input
/// requires a gradient.
Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward_fn);

// Elementwise arithmetic with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);

Tensor matmul(const Tensor& a, const Tensor& b);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, std::size_t axis,
                  double eps = 1e-5);

Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor log(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);

/// Inverted dropout; identity when `training` is false or p == 0.
Tensor dropout(const Tensor& x, double p, bool training, std::mt19937_64& rng);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
Tensor transpose(const Tensor& x, std::size_t axis0, std::size_t axis1);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

// Reductions over a contiguous range of axes [first, last]; the reduced
// axes are dropped from the result shape.
Tensor sum(const Tensor& x, std::size_t first, std::size_t last);
Tensor mean(const Tensor& x, std::size_t first, std::size_t last);
Tensor max(const Tensor& x, std::size_t first, std::size_t last);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

}  // namespace bat::ad
