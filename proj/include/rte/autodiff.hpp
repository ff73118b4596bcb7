#pragma once

// Minimal reverse-mode differentiation over dense row-major matrices.
//
// A Graph records nodes eagerly: every op computes its value when it is
// created and stores a forward closure so the whole graph can be replayed
// after leaf values are rebound (gradient checking, fixed-shape reuse).
// Tensors are rank 2 (rows = samples); image geometry is an attribute of
// the ops that need it (conv2d, max_pool2d) rather than of the tensor.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rte/rng.hpp"
#include "rte/types.hpp"

namespace rte {

template <typename Scalar>
class Graph;

template <typename Scalar>
struct Var {
  Graph<Scalar>* graph = nullptr;
  int id = -1;

  const Matrix<Scalar>& value() const { return graph->value(*this); }
  const Matrix<Scalar>& grad() const { return graph->grad(*this); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Scalar scalar() const { return value()(0, 0); }
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Mode { train, eval };

template <typename Scalar>
class Graph {
 public:
  using Mat = Matrix<Scalar>;

  struct Node {
    std::string op;
    std::vector<int> parents;
    Mat value;
    Mat grad;
    bool requires_grad = false;
    bool is_parameter = false;
    std::function<void(Graph&, Node&)> forward;
    std::function<void(Graph&, const Node&)> backward;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf without gradient; may be rebound with bind().
  Var<Scalar> input(Mat value, std::string name = "input") {
    return leaf(std::move(value), std::move(name), false);
  }

  /// Leaf that receives a gradient.
  Var<Scalar> parameter(Mat value, std::string name = "parameter") {
    return leaf(std::move(value), std::move(name), true);
  }

  void bind(Var<Scalar> v, Mat value) {
    Node& n = node(v.id);
    if (n.forward) throw std::logic_error(label(v.id) + ": only leaves can be bound");
    n.value = std::move(value);
  }

  Mat& mutable_value(Var<Scalar> v) { return node(v.id).value; }

  /// Re-evaluates every op node in creation (topological) order.
  void forward() {
    for (auto& n : nodes_)
      if (n.forward) n.forward(*this, n);
  }

  /// Reverse sweep from a scalar loss. Only nodes reachable from the loss
  /// through differentiable edges are visited, each exactly once; gradients
  /// of all other nodes are zero.
  void backward(Var<Scalar> loss) {
    const Node& l = node(loss.id);
    if (l.value.rows() != 1 || l.value.cols() != 1) {
      std::ostringstream os;
      os << label(loss.id) << ": backward needs a scalar loss, got " << l.value.rows() << "x"
         << l.value.cols();
      throw ShapeError(os.str());
    }
    for (auto& n : nodes_) n.grad.setZero(n.value.rows(), n.value.cols());
    std::vector<char> reachable(nodes_.size(), 0);
    reachable[loss.id] = 1;
    visits_ = 0;
    nodes_[loss.id].grad.setOnes();
    for (int i = loss.id; i >= 0; --i) {
      if (!reachable[i]) continue;
      ++visits_;
      Node& n = nodes_[i];
      if (!n.requires_grad || !n.backward) continue;
      for (int p : n.parents) reachable[p] = 1;
      n.backward(*this, n);
    }
  }

  /// Number of nodes visited by the last backward() call.
  int last_backward_visits() const { return visits_; }

  const Mat& value(Var<Scalar> v) const { return node(v.id).value; }
  const Mat& grad(Var<Scalar> v) const {
    const Node& n = node(v.id);
    if (n.grad.rows() != n.value.rows() || n.grad.cols() != n.value.cols())
      throw std::logic_error(label(v.id) + ": no gradient, run backward() first");
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }
  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  Node& node(int id) { return nodes_.at(static_cast<std::size_t>(id)); }

  std::vector<Var<Scalar>> parameters() {
    std::vector<Var<Scalar>> out;
    for (int i = 0; i < static_cast<int>(nodes_.size()); ++i)
      if (nodes_[i].is_parameter) out.push_back({this, i});
    return out;
  }

  std::string label(int id) const { return node(id).op + "#" + std::to_string(id); }

  [[noreturn]] void shape_error(const Node& n, const std::string& what) const {
    const auto id = static_cast<int>(&n - nodes_.data());
    throw ShapeError(label(id) + ": shape mismatch, " + what);
  }

  /// Adds d(loss)/d(parent) produced by `make` if the parent wants a gradient.
  template <typename F>
  void accumulate(int parent, F&& make) {
    Node& p = nodes_[parent];
    if (p.requires_grad) p.grad += make();
  }

  Var<Scalar> emit(std::string op, std::vector<int> parents,
                   std::function<void(Graph&, Node&)> fwd,
                   std::function<void(Graph&, const Node&)> bwd) {
    Node n;
    n.op = std::move(op);
    n.parents = std::move(parents);
    for (int p : n.parents) n.requires_grad = n.requires_grad || nodes_.at(p).requires_grad;
    n.forward = std::move(fwd);
    n.backward = std::move(bwd);
    nodes_.push_back(std::move(n));
    Node& back = nodes_.back();
    back.forward(*this, back);
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

 private:
  Var<Scalar> leaf(Mat value, std::string name, bool trainable) {
    Node n;
    n.op = std::move(name);
    n.value = std::move(value);
    n.requires_grad = trainable;
    n.is_parameter = trainable;
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
  int visits_ = 0;
};

namespace detail {

template <typename Scalar>
std::string dims(const Matrix<Scalar>& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

template <typename Scalar>
void require_same_shape(const Graph<Scalar>& g, const typename Graph<Scalar>::Node& n,
                        const Matrix<Scalar>& a, const Matrix<Scalar>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) g.shape_error(n, dims(a) + " vs " + dims(b));
}

template <typename Scalar>
Graph<Scalar>& graph_of(Var<Scalar> a, Var<Scalar> b) {
  if (a.graph != b.graph) throw std::logic_error("operands belong to different graphs");
  return *a.graph;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and linear-algebra ops

template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  using G = Graph<Scalar>;
  return detail::graph_of(a, b).emit(
      "matmul", {a.id, b.id},
      [](G& g, typename G::Node& n) {
        const auto& A = g.node(n.parents[0]).value;
        const auto& B = g.node(n.parents[1]).value;
        if (A.cols() != B.rows()) g.shape_error(n, detail::dims(A) + " * " + detail::dims(B));
        n.value.noalias() = A * B;
      },
      [](G& g, const typename G::Node& n) {
        const auto& A = g.node(n.parents[0]).value;
        const auto& B = g.node(n.parents[1]).value;
        g.accumulate(n.parents[0], [&] { return Matrix<Scalar>(n.grad * B.transpose()); });
        g.accumulate(n.parents[1], [&] { return Matrix<Scalar>(A.transpose() * n.grad); });
      });
}

/// x (n x k) plus a 1 x k row added to every row.
template <typename Scalar>
Var<Scalar> add_bias(Var<Scalar> x, Var<Scalar> bias) {
  using G = Graph<Scalar>;
  return detail::graph_of(x, bias).emit(
      "add_bias", {x.id, bias.id},
      [](G& g, typename G::Node& n) {
        const auto& X = g.node(n.parents[0]).value;
        const auto& b = g.node(n.parents[1]).value;
        if (b.rows() != 1 || b.cols() != X.cols())
          g.shape_error(n, detail::dims(X) + " + bias " + detail::dims(b));
        n.value = X.rowwise() + b.row(0);
      },
      [](G& g, const typename G::Node& n) {
        g.accumulate(n.parents[0], [&] { return n.grad; });
        g.accumulate(n.parents[1], [&] { return Matrix<Scalar>(n.grad.colwise().sum()); });
      });
}

template <typename Scalar>
Var<Scalar> operator+(Var<Scalar> a, Var<Scalar> b) {
  using G = Graph<Scalar>;
  return detail::graph_of(a, b).emit(
      "add", {a.id, b.id},
      [](G& g, typename G::Node& n) {
        const auto& A = g.node(n.parents[0]).value;
        const auto& B = g.node(n.parents[1]).value;
        detail::require_same_shape(g, n, A, B);
        n.value = A + B;
      },
      [](G& g, const typename G::Node& n) {
        g.accumulate(n.parents[0], [&] { return n.grad; });
        g.accumulate(n.parents[1], [&] { return n.grad; });
      });
}

template <typename Scalar>
Var<Scalar> operator-(Var<Scalar> a, Var<Scalar> b) {
  using G = Graph<Scalar>;
  return detail::graph_of(a, b).emit(
      "sub", {a.id, b.id},
      [](G& g, typename G::Node& n) {
        const auto& A = g.node(n.parents[0]).value;
        const auto& B = g.node(n.parents[1]).value;
        detail::require_same_shape(g, n, A, B);
        n.value = A - B;
      },
      [](G& g, const typename G::Node& n) {
        g.accumulate(n.parents[0], [&] { return n.grad; });
        g.accumulate(n.parents[1], [&] { return Matrix<Scalar>(-n.grad); });
      });
}

/// Hadamard product.
template <typename Scalar>
Var<Scalar> operator*(Var<Scalar> a, Var<Scalar> b) {
  using G = Graph<Scalar>;
  return detail::graph_of(a, b).emit(
      "mul", {a.id, b.id},
      [](G& g, typename G::Node& n) {
        const auto& A = g.node(n.parents[0]).value;
        const auto& B = g.node(n.parents[1]).value;
        detail::require_same_shape(g, n, A, B);
        n.value = A.cwiseProduct(B);
      },
      [](G& g, const typename G::Node& n) {
        const auto& A = g.node(n.parents[0]).value;
        const auto& B = g.node(n.parents[1]).value;
        g.accumulate(n.parents[0], [&] { return Matrix<Scalar>(n.grad.cwiseProduct(B)); });
        g.accumulate(n.parents[1], [&] { return Matrix<Scalar>(n.grad.cwiseProduct(A)); });
      });
}

/// alpha * x + beta, elementwise.
template <typename Scalar>
Var<Scalar> affine(Var<Scalar> x, Scalar alpha, Scalar beta = Scalar(0)) {
  using G = Graph<Scalar>;
  return x.graph->emit(
      "affine", {x.id},
      [alpha, beta](G& g, typename G::Node& n) {
        n.value = (alpha * g.node(n.parents[0]).value.array() + beta).matrix();
      },
      [alpha](G& g, const typename G::Node& n) {
        g.accumulate(n.parents[0], [&] { return Matrix<Scalar>(alpha * n.grad); });
      });
}

template <typename Scalar>
Var<Scalar> operator*(Scalar s, Var<Scalar> x) {
  return affine(x, s);
}

template <typename Scalar>
Var<Scalar> relu(Var<Scalar> x) {
  using G = Graph<Scalar>;
  return x.graph->emit(
      "relu", {x.id},
      [](G& g, typename G::Node& n) { n.value = g.node(n.parents[0]).value.cwiseMax(Scalar(0)); },
      [](G& g, const typename G::Node& n) {
        const auto& X = g.node(n.parents[0]).value;
        g.accumulate(n.parents[0], [&] {
          return Matrix<Scalar>((X.array() > Scalar(0)).select(n.grad.array(), Scalar(0)));
        });
      });
}

/// Row-wise softmax with max subtraction.
template <typename Scalar>
Var<Scalar> softmax(Var<Scalar> x) {
  using G = Graph<Scalar>;
  return x.graph->emit(
      "softmax", {x.id},
      [](G& g, typename G::Node& n) {
        const auto& X = g.node(n.parents[0]).value;
        n.value = (X.colwise() - X.rowwise().maxCoeff()).array().exp().matrix();
        n.value.array().colwise() /= n.value.rowwise().sum().array();
      },
      [](G& g, const typename G::Node& n) {
        g.accumulate(n.parents[0], [&] {
          const auto& Y = n.value;
          Vector<Scalar> dot = n.grad.cwiseProduct(Y).rowwise().sum();
          return Matrix<Scalar>(Y.cwiseProduct(Matrix<Scalar>(n.grad.colwise() - dot)));
        });
      });
}

template <typename Scalar>
Var<Scalar> log(Var<Scalar> x) {
  using G = Graph<Scalar>;
  return x.graph->emit(
      "log", {x.id},
      [](G& g, typename G::Node& n) { n.value = g.node(n.parents[0]).value.array().log().matrix(); },
      [](G& g, const typename G::Node& n) {
        const auto& X = g.node(n.parents[0]).value;
        g.accumulate(n.parents[0], [&] { return Matrix<Scalar>(n.grad.cwiseQuotient(X)); });
      });
}

/// Elementwise x^p for a constant exponent.
template <typename Scalar>
Var<Scalar> pow(Var<Scalar> x, Scalar p) {
  using G = Graph<Scalar>;
  return x.graph->emit(
      "pow", {x.id},
      [p](G& g, typename G::Node& n) { n.value = g.node(n.parents[0]).value.array().pow(p).matrix(); },
      [p](G& g, const typename G::Node& n) {
        const auto& X = g.node(n.parents[0]).value;
        g.accumulate(n.parents[0], [&] {
          return Matrix<Scalar>(n.grad.array() * p * X.array().pow(p - Scalar(1)));
        });
      });
}

template <typename Scalar>
Var<Scalar> square(Var<Scalar> x) {
  using G = Graph<Scalar>;
  return x.graph->emit(
      "square", {x.id},
      [](G& g, typename G::Node& n) { n.value = g.node(n.parents[0]).value.array().square().matrix(); },
      [](G& g, const typename G::Node& n) {
        const auto& X = g.node(n.parents[0]).value;
        g.accumulate(n.parents[0], [&] { return Matrix<Scalar>(Scalar(2) * n.grad.cwiseProduct(X)); });
      });
}

template <typename Scalar>
Var<Scalar> sqrt(Var<Scalar> x) {
  using G = Graph<Scalar>;
  return x.graph->emit(
      "sqrt", {x.id},
      [](G& g, typename G::Node& n) { n.value = g.node(n.parents[0]).value.cwiseSqrt(); },
      [](G& g, const typename G::Node& n) {
        g.accumulate(n.parents[0], [&] {
          return Matrix<Scalar>(n.grad.array() / (Scalar(2) * n.value.array()));
        });
      });
}

/// max(x, lo); the gradient passes only where x > lo.
template <typename Scalar>
Var<Scalar> clamp_min(Var<Scalar> x, Scalar lo) {
  using G = Graph<Scalar>;
  return x.graph->emit(
      "clamp_min", {x.id},
      [lo](G& g, typename G::Node& n) { n.value = g.node(n.parents[0]).value.cwiseMax(lo); },
      [lo](G& g, const typename G::Node& n) {
        const auto& X = g.node(n.parents[0]).value;
        g.accumulate(n.parents[0], [&] {
          return Matrix<Scalar>((X.array() > lo).select(n.grad.array(), Scalar(0)));
        });
      });
}

/// Blocks gradient flow; the value is passed through unchanged.
template <typename Scalar>
Var<Scalar> stop_gradient(Var<Scalar> x) {
  using G = Graph<Scalar>;
  Var<Scalar> out = x.graph->emit(
      "stop_gradient", {x.id},
      [](G& g, typename G::Node& n) { n.value = g.node(n.parents[0]).value; }, nullptr);
  x.graph->node(out.id).requires_grad = false;
  return out;
}

// ---------------------------------------------------------------------------
// Reductions and reshaping

template <typename Scalar>
Var<Scalar> sum(Var<Scalar> x) {
  using G = Graph<Scalar>;
  return x.graph->emit(
      "sum", {x.id},
      [](G& g, typename G::Node& n) {
        n.value.resize(1, 1);
        n.value(0, 0) = g.node(n.parents[0]).value.sum();
      },
      [](G& g, const typename G::Node& n) {
        const auto& X = g.node(n.parents[0]).value;
        g.accumulate(n.parents[0], [&] { return Matrix<Scalar>::Constant(X.rows(), X.cols(), n.grad(0, 0)); });
      });
}

template <typename Scalar>
Var<Scalar> mean(Var<Scalar> x) {
  using G = Graph<Scalar>;
  return x.graph->emit(
      "mean", {x.id},
      [](G& g, typename G::Node& n) {
        const auto& X = g.node(n.parents[0]).value;
        if (X.size() == 0) g.shape_error(n, "mean of an empty tensor");
        n.value.resize(1, 1);
        n.value(0, 0) = X.mean();
      },
      [](G& g, const typename G::Node& n) {
        const auto& X = g.node(n.parents[0]).value;
        g.accumulate(n.parents[0], [&] {
          return Matrix<Scalar>::Constant(X.rows(), X.cols(), n.grad(0, 0) / static_cast<Scalar>(X.size()));
        });
      });
}

/// n x k -> n x 1.
template <typename Scalar>
Var<Scalar> row_sum(Var<Scalar> x) {
  using G = Graph<Scalar>;
  return x.graph->emit(
      "row_sum", {x.id},
      [](G& g, typename G::Node& n) { n.value = g.node(n.parents[0]).value.rowwise().sum(); },
      [](G& g, const typename G::Node& n) {
        const auto& X = g.node(n.parents[0]).value;
        g.accumulate(n.parents[0], [&] { return Matrix<Scalar>(n.grad.replicate(1, X.cols())); });
      });
}

/// Divides every row by its sum.
template <typename Scalar>
Var<Scalar> normalize_rows(Var<Scalar> x) {
  using G = Graph<Scalar>;
  return x.graph->emit(
      "normalize_rows", {x.id},
      [](G& g, typename G::Node& n) {
        const auto& X = g.node(n.parents[0]).value;
        n.value = X;
        n.value.array().colwise() /= X.rowwise().sum().array();
      },
      [](G& g, const typename G::Node& n) {
        const auto& X = g.node(n.parents[0]).value;
        g.accumulate(n.parents[0], [&] {
          Vector<Scalar> s = X.rowwise().sum();
          Vector<Scalar> dot = n.grad.cwiseProduct(n.value).rowwise().sum();
          Matrix<Scalar> d = n.grad.colwise() - dot;
          d.array().colwise() /= s.array();
          return d;
        });
      });
}

/// y_i = x(i, labels[i]) as an n x 1 column.
template <typename Scalar>
Var<Scalar> pick(Var<Scalar> x, std::vector<int> labels) {
  using G = Graph<Scalar>;
  return x.graph->emit(
      "pick", {x.id},
      [labels](G& g, typename G::Node& n) {
        const auto& X = g.node(n.parents[0]).value;
        if (static_cast<Eigen::Index>(labels.size()) != X.rows())
          g.shape_error(n, std::to_string(labels.size()) + " labels for " + detail::dims(X));
        n.value.resize(X.rows(), 1);
        for (Eigen::Index i = 0; i < X.rows(); ++i) {
          const int c = labels[static_cast<std::size_t>(i)];
          if (c < 0 || c >= X.cols()) g.shape_error(n, "label " + std::to_string(c) + " out of range");
          n.value(i, 0) = X(i, c);
        }
      },
      [labels](G& g, const typename G::Node& n) {
        const auto& X = g.node(n.parents[0]).value;
        g.accumulate(n.parents[0], [&] {
          Matrix<Scalar> d = Matrix<Scalar>::Zero(X.rows(), X.cols());
          for (Eigen::Index i = 0; i < X.rows(); ++i) d(i, labels[static_cast<std::size_t>(i)]) = n.grad(i, 0);
          return d;
        });
      });
}

template <typename Scalar>
Var<Scalar> slice_rows(Var<Scalar> x, Eigen::Index begin, Eigen::Index count) {
  using G = Graph<Scalar>;
  return x.graph->emit(
      "slice_rows", {x.id},
      [begin, count](G& g, typename G::Node& n) {
        const auto& X = g.node(n.parents[0]).value;
        if (begin < 0 || count < 0 || begin + count > X.rows())
          g.shape_error(n, "rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) + ") of " +
                               detail::dims(X));
        n.value = X.middleRows(begin, count);
      },
      [begin, count](G& g, const typename G::Node& n) {
        const auto& X = g.node(n.parents[0]).value;
        g.accumulate(n.parents[0], [&] {
          Matrix<Scalar> d = Matrix<Scalar>::Zero(X.rows(), X.cols());
          d.middleRows(begin, count) = n.grad;
          return d;
        });
      });
}

template <typename Scalar>
Var<Scalar> concat_rows(std::span<const Var<Scalar>> parts) {
  using G = Graph<Scalar>;
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  std::vector<int> ids;
  for (const auto& p : parts) {
    if (p.graph != parts[0].graph) throw std::logic_error("operands belong to different graphs");
    ids.push_back(p.id);
  }
  return parts[0].graph->emit(
      "concat_rows", std::move(ids),
      [](G& g, typename G::Node& n) {
        Eigen::Index rows = 0;
        const Eigen::Index cols = g.node(n.parents[0]).value.cols();
        for (int p : n.parents) {
          const auto& X = g.node(p).value;
          if (X.cols() != cols) g.shape_error(n, detail::dims(X) + " has " + std::to_string(X.cols()) + " columns");
          rows += X.rows();
        }
        n.value.resize(rows, cols);
        Eigen::Index at = 0;
        for (int p : n.parents) {
          const auto& X = g.node(p).value;
          n.value.middleRows(at, X.rows()) = X;
          at += X.rows();
        }
      },
      [](G& g, const typename G::Node& n) {
        Eigen::Index at = 0;
        for (int p : n.parents) {
          const Eigen::Index r = g.node(p).value.rows();
          g.accumulate(p, [&] { return Matrix<Scalar>(n.grad.middleRows(at, r)); });
          at += r;
        }
      });
}

// ---------------------------------------------------------------------------
// Stochastic and spatial ops

/// Inverted dropout. The mask is drawn once when the node is created and
/// reused on replay, so finite-difference checks see a fixed function.
/// In eval mode (or at rate 0) this is the identity.
template <typename Scalar>
Var<Scalar> dropout(Var<Scalar> x, Scalar rate, Mode mode, Rng& rng) {
  using G = Graph<Scalar>;
  if (rate < Scalar(0) || rate >= Scalar(1)) throw std::invalid_argument("dropout rate must be in [0, 1)");
  if (mode == Mode::eval || rate == Scalar(0)) {
    return x.graph->emit(
        "dropout(eval)", {x.id}, [](G& g, typename G::Node& n) { n.value = g.node(n.parents[0]).value; },
        [](G& g, const typename G::Node& n) { g.accumulate(n.parents[0], [&] { return n.grad; }); });
  }
  const auto& X = x.value();
  auto mask = std::make_shared<Matrix<Scalar>>(X.rows(), X.cols());
  const Scalar keep_scale = Scalar(1) / (Scalar(1) - rate);
  for (Eigen::Index i = 0; i < mask->size(); ++i)
    mask->data()[i] = rng.uniform() < static_cast<double>(rate) ? Scalar(0) : keep_scale;
  return x.graph->emit(
      "dropout", {x.id},
      [mask](G& g, typename G::Node& n) {
        const auto& X = g.node(n.parents[0]).value;
        detail::require_same_shape(g, n, X, *mask);
        n.value = X.cwiseProduct(*mask);
      },
      [mask](G& g, const typename G::Node& n) {
        g.accumulate(n.parents[0], [&] { return Matrix<Scalar>(n.grad.cwiseProduct(*mask)); });
      });
}

struct Conv2dGeometry {
  FeatureShape in;
  int out_channels = 1;
  int kernel = 3;
  int pad = 1;

  FeatureShape out() const {
    return {out_channels, in.height + 2 * pad - kernel + 1, in.width + 2 * pad - kernel + 1};
  }
};

namespace detail {

// One sample (C,H,W) -> (H'W') x (C*k*k) patch matrix.
template <typename Scalar>
void im2col(const Scalar* x, const Conv2dGeometry& geo, Matrix<Scalar>& cols) {
  const FeatureShape o = geo.out();
  const int k = geo.kernel;
  cols.setZero(o.height * o.width, geo.in.channels * k * k);
  for (int oy = 0; oy < o.height; ++oy)
    for (int ox = 0; ox < o.width; ++ox) {
      const int row = oy * o.width + ox;
      for (int c = 0; c < geo.in.channels; ++c)
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy + ky - geo.pad;
          if (iy < 0 || iy >= geo.in.height) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox + kx - geo.pad;
            if (ix < 0 || ix >= geo.in.width) continue;
            cols(row, (c * k + ky) * k + kx) = x[(c * geo.in.height + iy) * geo.in.width + ix];
          }
        }
    }
}

template <typename Scalar>
void col2im_add(const Matrix<Scalar>& cols, const Conv2dGeometry& geo, Scalar* dx) {
  const FeatureShape o = geo.out();
  const int k = geo.kernel;
  for (int oy = 0; oy < o.height; ++oy)
    for (int ox = 0; ox < o.width; ++ox) {
      const int row = oy * o.width + ox;
      for (int c = 0; c < geo.in.channels; ++c)
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy + ky - geo.pad;
          if (iy < 0 || iy >= geo.in.height) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox + kx - geo.pad;
            if (ix < 0 || ix >= geo.in.width) continue;
            dx[(c * geo.in.height + iy) * geo.in.width + ix] += cols(row, (c * k + ky) * k + kx);
          }
        }
    }
}

}  // namespace detail

/// 2-D convolution, stride 1. Rows of x are (C,H,W)-flattened samples;
/// weight is (C*k*k) x out_channels, bias is 1 x out_channels.
template <typename Scalar>
Var<Scalar> conv2d(Var<Scalar> x, Var<Scalar> weight, Var<Scalar> bias, Conv2dGeometry geo) {
  using G = Graph<Scalar>;
  using Mat = Matrix<Scalar>;
  return detail::graph_of(x, weight).emit(
      "conv2d", {x.id, weight.id, bias.id},
      [geo](G& g, typename G::Node& n) {
        const auto& X = g.node(n.parents[0]).value;
        const auto& W = g.node(n.parents[1]).value;
        const auto& b = g.node(n.parents[2]).value;
        const int patch = geo.in.channels * geo.kernel * geo.kernel;
        if (X.cols() != geo.in.size()) g.shape_error(n, "input " + detail::dims(X) + " vs sample size " + std::to_string(geo.in.size()));
        if (W.rows() != patch || W.cols() != geo.out_channels) g.shape_error(n, "weight " + detail::dims(W));
        if (b.rows() != 1 || b.cols() != geo.out_channels) g.shape_error(n, "bias " + detail::dims(b));
        const FeatureShape o = geo.out();
        const int spatial = o.height * o.width;
        n.value.resize(X.rows(), o.size());
        Mat cols;
        for (Eigen::Index s = 0; s < X.rows(); ++s) {
          detail::im2col(X.row(s).data(), geo, cols);
          Mat y = (cols * W).rowwise() + b.row(0);  // spatial x out_channels
          Eigen::Map<Mat> out(n.value.row(s).data(), geo.out_channels, spatial);
          out = y.transpose();
        }
      },
      [geo](G& g, const typename G::Node& n) {
        const auto& X = g.node(n.parents[0]).value;
        const auto& W = g.node(n.parents[1]).value;
        const FeatureShape o = geo.out();
        const int spatial = o.height * o.width;
        const bool need_x = g.node(n.parents[0]).requires_grad;
        Mat dW = Mat::Zero(W.rows(), W.cols());
        Mat db = Mat::Zero(1, geo.out_channels);
        Mat dX = need_x ? Mat::Zero(X.rows(), X.cols()) : Mat();
        Mat cols;
        for (Eigen::Index s = 0; s < X.rows(); ++s) {
          Eigen::Map<const Mat> gout(n.grad.row(s).data(), geo.out_channels, spatial);
          Mat gy = gout.transpose();  // spatial x out_channels
          detail::im2col(X.row(s).data(), geo, cols);
          dW.noalias() += cols.transpose() * gy;
          db += gy.colwise().sum();
          if (need_x) {
            Mat dcols = gy * W.transpose();
            detail::col2im_add(dcols, geo, dX.row(s).data());
          }
        }
        g.accumulate(n.parents[0], [&] { return dX; });
        g.accumulate(n.parents[1], [&] { return dW; });
        g.accumulate(n.parents[2], [&] { return db; });
      });
}

/// Non-overlapping max pooling with a square window.
template <typename Scalar>
Var<Scalar> max_pool2d(Var<Scalar> x, FeatureShape in, int window = 2) {
  using G = Graph<Scalar>;
  const FeatureShape o{in.channels, in.height / window, in.width / window};
  auto argmax = std::make_shared<std::vector<Eigen::Index>>();
  return x.graph->emit(
      "max_pool2d", {x.id},
      [in, o, window, argmax](G& g, typename G::Node& n) {
        const auto& X = g.node(n.parents[0]).value;
        if (X.cols() != in.size()) g.shape_error(n, "input " + detail::dims(X) + " vs sample size " + std::to_string(in.size()));
        n.value.resize(X.rows(), o.size());
        argmax->assign(static_cast<std::size_t>(X.rows() * o.size()), 0);
        for (Eigen::Index s = 0; s < X.rows(); ++s)
          for (int c = 0; c < o.channels; ++c)
            for (int oy = 0; oy < o.height; ++oy)
              for (int ox = 0; ox < o.width; ++ox) {
                Eigen::Index best = (c * in.height + oy * window) * in.width + ox * window;
                for (int dy = 0; dy < window; ++dy)
                  for (int dx = 0; dx < window; ++dx) {
                    const Eigen::Index idx = (c * in.height + oy * window + dy) * in.width + ox * window + dx;
                    if (X(s, idx) > X(s, best)) best = idx;
                  }
                const Eigen::Index out = (c * o.height + oy) * o.width + ox;
                n.value(s, out) = X(s, best);
                (*argmax)[static_cast<std::size_t>(s * o.size() + out)] = best;
              }
      },
      [o, argmax](G& g, const typename G::Node& n) {
        const auto& X = g.node(n.parents[0]).value;
        g.accumulate(n.parents[0], [&] {
          Matrix<Scalar> d = Matrix<Scalar>::Zero(X.rows(), X.cols());
          for (Eigen::Index s = 0; s < X.rows(); ++s)
            for (Eigen::Index j = 0; j < o.size(); ++j)
              d(s, (*argmax)[static_cast<std::size_t>(s * o.size() + j)]) += n.grad(s, j);
          return d;
        });
      });
}

}  // namespace rte
