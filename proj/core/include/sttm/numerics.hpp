#pragma once

// Dense 64-bit arrays with tape-free reverse-mode differentiation.
//
// A Tensor is a shared handle to a graph node. Operations create new nodes
// that remember their inputs; backward() walks the reachable subgraph in
// reverse topological order. Leaf gradients accumulate across calls until the
// caller clears them (Adam::step does this after each update).

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace sttm::numerics {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Pushes this node's grad into its parents' grads.
  std::function<void(Node&)> backprop;
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<const double> data() const;
  // Mutating data of a node that already has consumers is the caller's problem.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();  // zero-allocates when absent
  void clear_grad();

  bool defined() const { return node_ != nullptr; }
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  // Deep copy of value (and requires_grad flag) detached from any graph.
  Tensor clone() const;

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// While alive on the current thread, operations do not record graph edges.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// a: [..., k], b: [k, n] -> [..., n]
Tensor matmul(const Tensor& a, const Tensor& b);
// a: [g, t, k], b: [g, k, s] (or [g, s, k] when transpose_b) -> [g, t, s]
Tensor batched_matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);
Tensor transpose(const Tensor& matrix);

// b's shape must equal a's shape or a trailing suffix of it (broadcast over leading axes).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);

Tensor relu(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mean_axis(const Tensor& x, std::size_t axis);

Tensor softmax(const Tensor& x, std::size_t axis);
// Normalizes over the last axis; gain and bias have shape [last].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double epsilon = 1e-5);

// Inverted dropout. Identity (same node) when !training or rate == 0.
Tensor dropout(const Tensor& x, double rate, bool training, std::mt19937_64& rng);

// Rows of table [vocab, width] selected by ids -> [ids.size(), width].
Tensor embedding_lookup(const Tensor& table, std::span<const std::int64_t> ids,
                        const std::string& feature_name);

Tensor concat(const std::vector<Tensor>& parts);  // along the last axis
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
// Selects one index along axis and drops that axis.
Tensor take(const Tensor& x, std::size_t axis, std::size_t index);

// Loss must hold exactly one element.
void backward(const Tensor& loss);

}  // namespace sttm::numerics
