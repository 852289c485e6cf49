#include "vm3ac/autodiff/tape.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace vm3ac::ad {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

std::size_t arity(OpKind kind) {
  switch (kind) {
    case OpKind::leaf:
      return 0;
    case OpKind::matmul:
    case OpKind::add:
    case OpKind::sub:
    case OpKind::mul:
    case OpKind::concat_cols:
    case OpKind::add_row:
      return 2;
    default:
      return 1;
  }
}

[[noreturn]] void shape_mismatch(OpKind kind, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op_name(kind)) + ": incompatible shapes " + shape_string(a) + " and " +
                   shape_string(b));
}

void require_rank2(OpKind kind, const Tensor& t) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op_name(kind)) + ": expected a rank-2 tensor, got shape " +
                     shape_string(t.shape()));
  }
}

template <class F>
Tensor map_unary(const Tensor& a, F f) {
  std::vector<double> out(a.size());
  const auto in = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return Tensor(a.shape(), std::move(out));
}

template <class F>
Tensor map_binary(OpKind kind, const Tensor& a, const Tensor& b, F f) {
  if (a.shape() != b.shape()) shape_mismatch(kind, a.shape(), b.shape());
  std::vector<double> out(a.size());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i], y[i]);
  return Tensor(a.shape(), std::move(out));
}

// Forward evaluation without any recording.
Tensor compute(OpKind kind, std::span<const Tensor> in, const OpArgs& args) {
  if (in.size() != arity(kind)) {
    throw std::invalid_argument(std::string(op_name(kind)) + ": expected " + std::to_string(arity(kind)) +
                                " inputs, got " + std::to_string(in.size()));
  }
  switch (kind) {
    case OpKind::leaf:
      throw std::invalid_argument("leaf: not an operation");
    case OpKind::matmul: {
      const Tensor& a = in[0];
      const Tensor& b = in[1];
      if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
        shape_mismatch(kind, a.shape(), b.shape());
      }
      const auto m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
      std::vector<double> out(m * n);
      MutMap(out.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n)).noalias() =
          ConstMap(a.data().data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k)) *
          ConstMap(b.data().data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
      return Tensor({m, n}, std::move(out));
    }
    case OpKind::add:
      return map_binary(kind, in[0], in[1], [](double x, double y) { return x + y; });
    case OpKind::sub:
      return map_binary(kind, in[0], in[1], [](double x, double y) { return x - y; });
    case OpKind::mul:
      return map_binary(kind, in[0], in[1], [](double x, double y) { return x * y; });
    case OpKind::scale:
      return map_unary(in[0], [s = args.a](double x) { return s * x; });
    case OpKind::add_scalar:
      return map_unary(in[0], [s = args.a](double x) { return x + s; });
    case OpKind::tanh:
      return map_unary(in[0], [](double x) { return std::tanh(x); });
    case OpKind::relu:
      return map_unary(in[0], [](double x) { return x > 0.0 ? x : 0.0; });
    case OpKind::exp:
      return map_unary(in[0], [](double x) { return std::exp(x); });
    case OpKind::log: {
      for (double x : in[0].data()) {
        if (!(x > 0.0)) {
          throw DomainError("log: non-positive input " + std::to_string(x) + " in tensor of shape " +
                            shape_string(in[0].shape()));
        }
      }
      return map_unary(in[0], [](double x) { return std::log(x); });
    }
    case OpKind::square:
      return map_unary(in[0], [](double x) { return x * x; });
    case OpKind::sum:
    case OpKind::mean: {
      double total = 0.0;
      for (double x : in[0].data()) total += x;
      if (kind == OpKind::mean) {
        if (in[0].size() == 0) throw ShapeError("mean: empty tensor");
        total /= static_cast<double>(in[0].size());
      }
      return Tensor::scalar(total);
    }
    case OpKind::sum_cols: {
      const Tensor& a = in[0];
      if (a.rank() > 2) throw ShapeError("sum_cols: rank > 2 shape " + shape_string(a.shape()));
      const auto r = a.rows(), c = a.cols();
      std::vector<double> out(r, 0.0);
      const auto x = a.data();
      for (std::size_t i = 0; i < r; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < c; ++j) acc += x[i * c + j];
        out[i] = acc;
      }
      return Tensor({r, 1}, std::move(out));
    }
    case OpKind::concat_cols: {
      const Tensor& a = in[0];
      const Tensor& b = in[1];
      if (a.rank() != b.rank() || a.rank() == 0 || a.rank() > 2 || a.rows() != b.rows()) {
        shape_mismatch(kind, a.shape(), b.shape());
      }
      const auto r = a.rows(), ca = a.cols(), cb = b.cols();
      std::vector<double> out(r * (ca + cb));
      const auto x = a.data();
      const auto y = b.data();
      for (std::size_t i = 0; i < r; ++i) {
        std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(i * ca), ca,
                    out.begin() + static_cast<std::ptrdiff_t>(i * (ca + cb)));
        std::copy_n(y.begin() + static_cast<std::ptrdiff_t>(i * cb), cb,
                    out.begin() + static_cast<std::ptrdiff_t>(i * (ca + cb) + ca));
      }
      Shape shape = a.rank() == 2 ? Shape{r, ca + cb} : Shape{ca + cb};
      return Tensor(std::move(shape), std::move(out));
    }
    case OpKind::add_row: {
      const Tensor& m = in[0];
      const Tensor& row = in[1];
      require_rank2(kind, m);
      const bool row_ok = (row.rank() == 1 && row.shape()[0] == m.shape()[1]) ||
                          (row.rank() == 2 && row.shape()[0] == 1 && row.shape()[1] == m.shape()[1]);
      if (!row_ok) shape_mismatch(kind, m.shape(), row.shape());
      const auto r = m.shape()[0], c = m.shape()[1];
      std::vector<double> out(m.values());
      const auto bias = row.data();
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] += bias[j];
      }
      return Tensor(m.shape(), std::move(out));
    }
    case OpKind::slice_cols: {
      const Tensor& a = in[0];
      require_rank2(kind, a);
      const auto r = a.shape()[0], c = a.shape()[1];
      if (args.begin > args.end || args.end > c) {
        throw ShapeError("slice_cols: range [" + std::to_string(args.begin) + ", " + std::to_string(args.end) +
                         ") out of bounds for shape " + shape_string(a.shape()));
      }
      const auto w = args.end - args.begin;
      std::vector<double> out(r * w);
      const auto x = a.data();
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < w; ++j) out[i * w + j] = x[i * c + args.begin + j];
      }
      return Tensor({r, w}, std::move(out));
    }
    case OpKind::clamp:
      return map_unary(in[0], [lo = args.a, hi = args.b](double x) { return std::clamp(x, lo, hi); });
  }
  throw std::logic_error("unreachable op kind");
}

}  // namespace

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::add_scalar: return "add_scalar";
    case OpKind::tanh: return "tanh";
    case OpKind::relu: return "relu";
    case OpKind::exp: return "exp";
    case OpKind::log: return "log";
    case OpKind::square: return "square";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::sum_cols: return "sum_cols";
    case OpKind::concat_cols: return "concat_cols";
    case OpKind::add_row: return "add_row";
    case OpKind::slice_cols: return "slice_cols";
    case OpKind::clamp: return "clamp";
  }
  return "unknown";
}

Tensor Gradients::of(const Tensor& parameter) const {
  auto it = grads_.find(&parameter);
  if (it == grads_.end()) return Tensor::zeros(parameter.shape());
  return it->second;
}

bool Gradients::contains(const Tensor& parameter) const { return grads_.count(&parameter) != 0; }

std::size_t Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

Tensor Tape::handle(std::size_t id) {
  Tensor t(nodes_[id].shape, nodes_[id].value);
  t.tape_ = this;
  t.node_ = id;
  return t;
}

Tensor Tape::watch(const Tensor& parameter) {
  if (parameter.tracked()) throw std::invalid_argument("watch: parameter is already a tracked tensor");
  if (auto it = watched_.find(&parameter); it != watched_.end()) return handle(it->second);
  Node node;
  node.shape = parameter.shape();
  node.value = parameter.values();
  node.requires_grad = true;
  const auto id = push(std::move(node));
  watched_.emplace(&parameter, id);
  return handle(id);
}

Tensor Tape::constant(const Tensor& value) {
  Node node;
  node.shape = value.shape();
  node.value = value.values();
  return handle(push(std::move(node)));
}

Tensor Tape::input(const Tensor& value) {
  Node node;
  node.shape = value.shape();
  node.value = value.values();
  node.requires_grad = true;
  return handle(push(std::move(node)));
}

std::size_t Tape::lift(const Tensor& t) {
  if (t.tape() == this) return t.node();
  if (t.tracked()) throw std::invalid_argument("tape: tensor belongs to a different tape");
  Node node;
  node.shape = t.shape();
  node.value = t.values();
  return push(std::move(node));
}

Tensor Tape::record(OpKind kind, std::span<const Tensor> inputs, const OpArgs& args) {
  Tensor value = compute(kind, inputs, args);
  Node node;
  node.kind = kind;
  node.args = args;
  if (!inputs.empty()) node.in0 = lift(inputs[0]);
  if (inputs.size() > 1) node.in1 = lift(inputs[1]);
  node.requires_grad = nodes_[node.in0].requires_grad ||
                       (node.in1 != Tensor::no_node && nodes_[node.in1].requires_grad);
  node.shape = value.shape();
  node.value = std::move(value.data_);
  return handle(push(std::move(node)));
}

Gradients Tape::backward(const Tensor& root) {
  if (root.tape() != this) throw std::invalid_argument("backward: root is not recorded on this tape");
  if (root.size() != 1) {
    throw ShapeError("backward: root must be a scalar, got shape " + shape_string(root.shape()));
  }
  grads_.assign(nodes_.size(), {});
  grads_[root.node()] = {1.0};

  auto accumulate = [&](std::size_t id) -> std::vector<double>* {
    if (id == Tensor::no_node || !nodes_[id].requires_grad) return nullptr;
    auto& g = grads_[id];
    if (g.empty()) g.assign(nodes_[id].value.size(), 0.0);
    return &g;
  };

  for (std::size_t id = root.node() + 1; id-- > 0;) {
    const Node& n = nodes_[id];
    if (n.kind == OpKind::leaf || grads_[id].empty() || !n.requires_grad) continue;
    const std::vector<double>& g = grads_[id];
    const std::vector<double>& y = n.value;
    const std::vector<double>& x = nodes_[n.in0].value;
    std::vector<double>* ga = accumulate(n.in0);
    std::vector<double>* gb = n.in1 == Tensor::no_node ? nullptr : accumulate(n.in1);

    switch (n.kind) {
      case OpKind::leaf:
        break;
      case OpKind::matmul: {
        const auto& xs = nodes_[n.in0].shape;
        const auto& ys = nodes_[n.in1].shape;
        const auto m = static_cast<Eigen::Index>(xs[0]);
        const auto k = static_cast<Eigen::Index>(xs[1]);
        const auto c = static_cast<Eigen::Index>(ys[1]);
        ConstMap G(g.data(), m, c);
        if (ga) MutMap(ga->data(), m, k).noalias() += G * ConstMap(nodes_[n.in1].value.data(), k, c).transpose();
        if (gb) MutMap(gb->data(), k, c).noalias() += ConstMap(x.data(), m, k).transpose() * G;
        break;
      }
      case OpKind::add:
        if (ga) for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
        if (gb) for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i];
        break;
      case OpKind::sub:
        if (ga) for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
        if (gb) for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
        break;
      case OpKind::mul: {
        const auto& other = nodes_[n.in1].value;
        if (ga) for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * other[i];
        if (gb) for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * x[i];
        break;
      }
      case OpKind::scale:
        if (ga) for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += n.args.a * g[i];
        break;
      case OpKind::add_scalar:
        if (ga) for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
        break;
      case OpKind::tanh:
        if (ga) for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * (1.0 - y[i] * y[i]);
        break;
      case OpKind::relu:
        if (ga) for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += x[i] > 0.0 ? g[i] : 0.0;
        break;
      case OpKind::exp:
        if (ga) for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * y[i];
        break;
      case OpKind::log:
        if (ga) for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] / x[i];
        break;
      case OpKind::square:
        if (ga) for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += 2.0 * x[i] * g[i];
        break;
      case OpKind::sum:
        if (ga) for (auto& v : *ga) v += g[0];
        break;
      case OpKind::mean:
        if (ga) {
          const double share = g[0] / static_cast<double>(ga->size());
          for (auto& v : *ga) v += share;
        }
        break;
      case OpKind::sum_cols:
        if (ga) {
          const auto rows = g.size();
          const auto cols = ga->size() / rows;
          for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < cols; ++j) (*ga)[i * cols + j] += g[i];
          }
        }
        break;
      case OpKind::concat_cols: {
        const auto& as = nodes_[n.in0].shape;
        const auto& bs = nodes_[n.in1].shape;
        const auto ca = as.back(), cb = bs.back();
        const auto rows = as.size() == 2 ? as[0] : 1;
        for (std::size_t i = 0; i < rows; ++i) {
          if (ga) for (std::size_t j = 0; j < ca; ++j) (*ga)[i * ca + j] += g[i * (ca + cb) + j];
          if (gb) for (std::size_t j = 0; j < cb; ++j) (*gb)[i * cb + j] += g[i * (ca + cb) + ca + j];
        }
        break;
      }
      case OpKind::add_row: {
        const auto cols = n.shape[1];
        const auto rows = n.shape[0];
        if (ga) for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
        if (gb) {
          for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < cols; ++j) (*gb)[j] += g[i * cols + j];
          }
        }
        break;
      }
      case OpKind::slice_cols: {
        if (ga) {
          const auto rows = n.shape[0];
          const auto w = n.shape[1];
          const auto cols = nodes_[n.in0].shape[1];
          for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < w; ++j) (*ga)[i * cols + n.args.begin + j] += g[i * w + j];
          }
        }
        break;
      }
      case OpKind::clamp:
        if (ga) {
          for (std::size_t i = 0; i < g.size(); ++i) {
            if (x[i] >= n.args.a && x[i] <= n.args.b) (*ga)[i] += g[i];
          }
        }
        break;
    }
  }

  Gradients out;
  for (const auto& [param, id] : watched_) {
    out.grads_.emplace(param, grads_[id].empty() ? Tensor::zeros(nodes_[id].shape)
                                                 : Tensor(nodes_[id].shape, grads_[id]));
  }
  return out;
}

Tensor Tape::grad_of(const Tensor& t) const {
  if (t.tape() != this) throw std::invalid_argument("grad_of: tensor is not recorded on this tape");
  const auto id = t.node();
  if (id >= grads_.size() || grads_[id].empty()) return Tensor::zeros(t.shape());
  return Tensor(t.shape(), grads_[id]);
}

Tensor forward(OpKind kind, std::span<const Tensor> inputs, const OpArgs& args) {
  Tape* tape = nullptr;
  for (const auto& t : inputs) {
    if (t.tracked()) {
      if (tape && tape != t.tape()) throw std::invalid_argument("forward: inputs recorded on different tapes");
      tape = t.tape();
    }
  }
  if (tape) return tape->record(kind, inputs, args);
  return compute(kind, inputs, args);
}

namespace {
Tensor unary(OpKind kind, const Tensor& a, const OpArgs& args = {}) {
  return forward(kind, std::span<const Tensor>(&a, 1), args);
}
Tensor binary(OpKind kind, const Tensor& a, const Tensor& b) {
  const Tensor in[2] = {a, b};
  return forward(kind, in);
}
}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) { return binary(OpKind::matmul, a, b); }
Tensor add(const Tensor& a, const Tensor& b) { return binary(OpKind::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(OpKind::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(OpKind::mul, a, b); }
Tensor scale(const Tensor& a, double factor) { return unary(OpKind::scale, a, {.a = factor}); }
Tensor add_scalar(const Tensor& a, double offset) { return unary(OpKind::add_scalar, a, {.a = offset}); }
Tensor tanh(const Tensor& a) { return unary(OpKind::tanh, a); }
Tensor relu(const Tensor& a) { return unary(OpKind::relu, a); }
Tensor exp(const Tensor& a) { return unary(OpKind::exp, a); }
Tensor log(const Tensor& a) { return unary(OpKind::log, a); }
Tensor square(const Tensor& a) { return unary(OpKind::square, a); }
Tensor sum(const Tensor& a) { return unary(OpKind::sum, a); }
Tensor mean(const Tensor& a) { return unary(OpKind::mean, a); }
Tensor sum_cols(const Tensor& a) { return unary(OpKind::sum_cols, a); }
Tensor concat_cols(const Tensor& a, const Tensor& b) { return binary(OpKind::concat_cols, a, b); }

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Tensor out = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) out = concat_cols(out, parts[i]);
  return out;
}

Tensor add_row(const Tensor& matrix, const Tensor& row) { return binary(OpKind::add_row, matrix, row); }

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  return unary(OpKind::slice_cols, a, {.begin = begin, .end = end});
}

Tensor clamp(const Tensor& a, double lo, double hi) { return unary(OpKind::clamp, a, {.a = lo, .b = hi}); }

}  // namespace vm3ac::ad
