#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "vm3ac/autodiff/tensor.hpp"

namespace vm3ac::ad {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

enum class OpKind {
  leaf,
  matmul,
  add,
  sub,
  mul,
  scale,
  add_scalar,
  tanh,
  relu,
  exp,
  log,
  square,
  sum,
  mean,
  sum_cols,
  concat_cols,
  add_row,
  slice_cols,
  clamp,
};

const char* op_name(OpKind kind);

/// Extra scalar arguments for ops that need them (scale factor, clamp
/// bounds, slice range).
struct OpArgs {
  double a = 0.0;
  double b = 0.0;
  std::size_t begin = 0;
  std::size_t end = 0;
};

/// Gradients returned by `Tape::backward`, keyed by the parameter tensor
/// that was watched. Parameters not reachable from the root read as zeros.
class Gradients {
 public:
  Tensor of(const Tensor& parameter) const;
  bool contains(const Tensor& parameter) const;

 private:
  friend class Tape;
  std::unordered_map<const Tensor*, Tensor> grads_;
};

/// Append-only record of a forward computation. One tape per training step;
/// a tape is confined to the thread that builds it.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers a parameter as a differentiable leaf. Watching the same
  /// parameter twice returns the same node, so its gradient accumulates.
  Tensor watch(const Tensor& parameter);

  /// Records a constant leaf (no gradient is tracked through it).
  Tensor constant(const Tensor& value);

  /// Records a differentiable leaf that is not a parameter; its gradient is
  /// available through `grad_of` after backward.
  Tensor input(const Tensor& value);

  Tensor record(OpKind kind, std::span<const Tensor> inputs, const OpArgs& args);

  Gradients backward(const Tensor& root);

  /// Gradient of any tracked tensor after the last backward call.
  Tensor grad_of(const Tensor& t) const;

  std::size_t size() const { return nodes_.size(); }
  OpKind kind_of(std::size_t node) const { return nodes_.at(node).kind; }

 private:
  struct Node {
    OpKind kind = OpKind::leaf;
    std::size_t in0 = Tensor::no_node;
    std::size_t in1 = Tensor::no_node;
    OpArgs args;
    Shape shape;
    std::vector<double> value;
    bool requires_grad = false;
  };

  std::size_t push(Node node);
  std::size_t lift(const Tensor& t);
  Tensor handle(std::size_t id);

  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  std::unordered_map<const Tensor*, std::size_t> watched_;
};

/// Generic entry point: evaluates `kind` on `inputs`. If any input is
/// tracked, the result is recorded on that tape; otherwise nothing is
/// recorded (evaluation mode).
Tensor forward(OpKind kind, std::span<const Tensor> inputs, const OpArgs& args = {});

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Sum over the last axis: [r, c] -> [r, 1].
Tensor sum_cols(const Tensor& a);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor concat_cols(std::span<const Tensor> parts);
/// Matrix [r, c] plus a row vector [c] (or [1, c]) broadcast over rows.
Tensor add_row(const Tensor& matrix, const Tensor& row);
/// Columns [begin, end) of a rank-2 tensor.
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
/// Elementwise clamp; gradient is zero where the bound is active.
Tensor clamp(const Tensor& a, double lo, double hi);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

}  // namespace vm3ac::ad
