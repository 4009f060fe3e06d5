#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "gca/tensor.hpp"

namespace gca {

// A learnable tensor plus its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string name_, Tensor value_, bool trainable_ = true);

  void zero_grad();
};

void zero_grads(std::span<Parameter* const> params);

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  // Adjoint of this node; only meaningful after Tape::backward.
  const Tensor& grad() const;

  Tape* tape() const noexcept { return tape_; }
  std::size_t index() const noexcept { return index_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

// Define-by-run record of differentiable operations. Values are computed
// eagerly when an op is recorded; backward() walks the record in reverse.
// Nodes only ever reference earlier nodes, so insertion order is a
// topological order.
class Tape {
 public:
  // Propagates the adjoint of node `self` into the adjoints of its inputs.
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Leaf bound to `p`. Repeated calls with the same Parameter return the same node.
  Var parameter(Parameter& p);
  // Read-only leaf viewing `value`, which must outlive the tape. No gradient
  // is delivered anywhere.
  Var alias(const Tensor& value);

  // Records a new op. Inputs must live on this tape; the value must be finite.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);

  // Fills every trainable Parameter's grad with d(loss)/d(value), added to
  // whatever the accumulator held; non-trainable Parameters get zero grad.
  void backward(Var loss);

  const Tensor& value(std::size_t i) const;
  // Adjoint of node i, allocated as zeros on first access during backward.
  Tensor& grad(std::size_t i);
  const Tensor& grad_view(std::size_t i) const;
  const std::vector<std::size_t>& inputs(std::size_t i) const { return nodes_[i].inputs; }
  // False for constants, aliases, frozen parameters, and ops built only from those.
  bool requires_grad(std::size_t i) const { return nodes_[i].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;  // parameter leaves alias the Parameter's value
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  void check_owned(const Var& v, const char* what) const;

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

enum class Activation { relu, sigmoid, softmax, tanh };
enum class Loss { categorical_ce, binary_ce, mse };

// Clamp applied to probabilities before taking logarithms.
inline constexpr double kProbabilityEpsilon = 1e-12;

// Recorded ops.
Var affine(Var w, Var x, Var b);
Var matvec(Var w, Var x);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_n(std::span<const Var> parts);
Var dot(Var a, Var b);
Var activation(Activation kind, Var x);
Var concat(std::span<const Var> parts);
inline Var concat(std::initializer_list<Var> parts) {
  return concat(std::span<const Var>(parts.begin(), parts.size()));
}
Var slice(Var x, std::size_t offset, std::size_t length);
Var column(Var matrix, std::size_t j);
Var loss_eval(Loss kind, Var prediction, const Tensor& target);

// Plain value kernels shared by the ops above and by forward-only code.
double sigmoid(double x) noexcept;
Tensor softmax(const Tensor& x);

const char* to_string(Activation kind) noexcept;
const char* to_string(Loss kind) noexcept;

}  // namespace gca
