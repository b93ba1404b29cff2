#pragma once

// Minimal tape-based reverse-mode differentiation.
//
// A Tape records every op applied during one forward pass. Leaves are either
// constants (inputs, labels) or parameters bound to a slice of a flat
// parameter array; backward() returns the gradient of a scalar loss laid out
// in that same flat order, with zeros for parameters the loss never touched.

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ulab/error.hpp"
#include "ulab/tensor.hpp"

namespace ulab {

/// Handle to a node on a Tape. Only meaningful for the tape that issued it.
struct Var {
  std::size_t id;
};

class Tape {
 public:
  explicit Tape(std::size_t param_count = 0) : param_count_(param_count) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var constant(Tensor value) { return push(std::move(value), false, {}); }

  /// Leaf whose gradient lands in [offset, offset + value.size()) of the
  /// array returned by backward().
  Var parameter(Tensor value, std::size_t offset) {
    if (offset + value.size() > param_count_) {
      throw ContractError("tape: parameter slice [" + std::to_string(offset) + ", " +
                          std::to_string(offset + value.size()) + ") exceeds parameter count " +
                          std::to_string(param_count_));
    }
    Var v = push(std::move(value), true, {});
    params_.push_back({v.id, offset});
    return v;
  }

  const Tensor& value(Var v) const { return node(v).value; }
  std::size_t size() const { return nodes_.size(); }

  Var affine(Var x, Var w, Var b) {
    Tensor out = affine_forward(value(x), value(w), value(b));
    return push(std::move(out), any_grad({x, w, b}), [x, w, b](Tape& t, const Tensor& g) {
      const Tensor& xv = t.value(x);
      const Tensor& wv = t.value(w);
      const std::size_t n = xv.rows(), d = xv.cols(), k = wv.cols();
      if (t.node(x).requires_grad) {
        Tensor gx = Tensor::matrix(n, d);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t m = 0; m < d; ++m) {
            double s = 0.0;
            for (std::size_t j = 0; j < k; ++j) s += g.at(i, j) * wv.at(m, j);
            gx.at(i, m) = s;
          }
        t.accumulate(x, gx);
      }
      if (t.node(w).requires_grad) {
        Tensor gw = Tensor::matrix(d, k);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t m = 0; m < d; ++m) {
            const double xim = xv.at(i, m);
            for (std::size_t j = 0; j < k; ++j) gw.at(m, j) += xim * g.at(i, j);
          }
        t.accumulate(w, gw);
      }
      if (t.node(b).requires_grad) {
        Tensor gb(t.value(b).shape());
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < k; ++j) gb[j] += g.at(i, j);
        t.accumulate(b, gb);
      }
    });
  }

  /// max(a, 0); the subgradient at exactly 0 is 0.
  Var relu(Var a) {
    Tensor out = value(a);
    for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
    return push(std::move(out), any_grad({a}), [a](Tape& t, const Tensor& g) {
      const Tensor& av = t.value(a);
      Tensor ga(av.shape());
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = av[i] > 0.0 ? g[i] : 0.0;
      t.accumulate(a, ga);
    });
  }

  Var softmax(Var a) {
    Tensor out = ulab::softmax(value(a));
    const std::size_t self = nodes_.size();
    return push(std::move(out), any_grad({a}), [a, self](Tape& t, const Tensor& g) {
      const Tensor& p = t.nodes_[self].value;
      Tensor ga(p.shape());
      for (std::size_t i = 0; i < p.rows(); ++i) {
        double dot = 0.0;
        for (std::size_t c = 0; c < p.cols(); ++c) dot += g.at(i, c) * p.at(i, c);
        for (std::size_t c = 0; c < p.cols(); ++c) ga.at(i, c) = p.at(i, c) * (g.at(i, c) - dot);
      }
      t.accumulate(a, ga);
    });
  }

  Var log_softmax(Var a) {
    Tensor out = ulab::log_softmax(value(a));
    const std::size_t self = nodes_.size();
    return push(std::move(out), any_grad({a}), [a, self](Tape& t, const Tensor& g) {
      const Tensor& lp = t.nodes_[self].value;
      Tensor ga(lp.shape());
      for (std::size_t i = 0; i < lp.rows(); ++i) {
        double gsum = 0.0;
        for (std::size_t c = 0; c < lp.cols(); ++c) gsum += g.at(i, c);
        for (std::size_t c = 0; c < lp.cols(); ++c)
          ga.at(i, c) = g.at(i, c) - std::exp(lp.at(i, c)) * gsum;
      }
      t.accumulate(a, ga);
    });
  }

  /// Elementwise natural log. Inputs must be strictly positive.
  Var log(Var a) {
    Tensor out = value(a);
    for (double& v : out.values()) {
      if (!(v > 0.0)) throw NumericError("tape: log of non-positive value");
      v = std::log(v);
    }
    return push(std::move(out), any_grad({a}), [a](Tape& t, const Tensor& g) {
      const Tensor& av = t.value(a);
      Tensor ga(av.shape());
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = g[i] / av[i];
      t.accumulate(a, ga);
    });
  }

  Var mul(Var a, Var b) {
    require_same_shape(a, b, "mul");
    Tensor out = value(a);
    const Tensor& bv = value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return push(std::move(out), any_grad({a, b}), [a, b](Tape& t, const Tensor& g) {
      const Tensor& av = t.value(a);
      const Tensor& bv = t.value(b);
      if (t.node(a).requires_grad) {
        Tensor ga(av.shape());
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = g[i] * bv[i];
        t.accumulate(a, ga);
      }
      if (t.node(b).requires_grad) {
        Tensor gb(bv.shape());
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] = g[i] * av[i];
        t.accumulate(b, gb);
      }
    });
  }

  Var add(Var a, Var b) {
    require_same_shape(a, b, "add");
    Tensor out = value(a);
    const Tensor& bv = value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return push(std::move(out), any_grad({a, b}), [a, b](Tape& t, const Tensor& g) {
      if (t.node(a).requires_grad) t.accumulate(a, g);
      if (t.node(b).requires_grad) t.accumulate(b, g);
    });
  }

  Var scale(Var a, double c) {
    Tensor out = value(a);
    for (double& v : out.values()) v *= c;
    return push(std::move(out), any_grad({a}), [a, c](Tape& t, const Tensor& g) {
      Tensor ga = g;
      for (double& v : ga.values()) v *= c;
      t.accumulate(a, ga);
    });
  }

  Var sum(Var a) {
    double s = 0.0;
    for (double v : value(a).values()) s += v;
    return push(Tensor::scalar(s), any_grad({a}), [a](Tape& t, const Tensor& g) {
      Tensor ga(t.value(a).shape());
      for (double& v : ga.values()) v = g[0];
      t.accumulate(a, ga);
    });
  }

  Var mean(Var a) {
    const std::size_t n = value(a).size();
    if (n == 0) throw ShapeError("tape: mean of empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(n));
  }

  /// Fused -(1/n) * sum_i w[y_i] * log softmax(logits_i)[y_i]. The gradient
  /// w.r.t. row i of the logits is (w[y_i]/n) * (p_i - onehot(y_i)).
  Var softmax_cross_entropy(Var logits, std::span<const int> labels,
                            std::span<const double> class_weights) {
    const Tensor& z = value(logits);
    if (!z.is_matrix()) throw ShapeError("cross_entropy: logits must be a matrix");
    const std::size_t n = z.rows(), k = z.cols();
    if (labels.size() != n) {
      throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                       std::to_string(n) + " rows");
    }
    if (n == 0) throw ShapeError("cross_entropy: empty batch");
    if (!class_weights.empty() && class_weights.size() != k)
      throw ShapeError("cross_entropy: class weight count != class count");
    std::vector<int> y(labels.begin(), labels.end());
    std::vector<double> w(k, 1.0);
    if (!class_weights.empty()) w.assign(class_weights.begin(), class_weights.end());
    for (int label : y)
      if (label < 0 || static_cast<std::size_t>(label) >= k)
        throw ShapeError("cross_entropy: label " + std::to_string(label) + " out of range");

    const Tensor lp = ulab::log_softmax(z);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total -= w[y[i]] * lp.at(i, y[i]);
    const double loss = total / static_cast<double>(n);

    return push(Tensor::scalar(loss), any_grad({logits}),
                [logits, y = std::move(y), w = std::move(w), lp](Tape& t, const Tensor& g) {
                  const std::size_t rows = lp.rows(), cols = lp.cols();
                  Tensor gz(lp.shape());
                  for (std::size_t i = 0; i < rows; ++i) {
                    const double coef = g[0] * w[y[i]] / static_cast<double>(rows);
                    for (std::size_t c = 0; c < cols; ++c) {
                      const double onehot = static_cast<std::size_t>(y[i]) == c ? 1.0 : 0.0;
                      gz.at(i, c) = coef * (std::exp(lp.at(i, c)) - onehot);
                    }
                  }
                  t.accumulate(logits, gz);
                });
  }

  /// Gradient of a scalar node w.r.t. every registered parameter, in flat
  /// parameter order.
  std::vector<double> backward(Var loss) {
    if (loss.id >= nodes_.size()) throw ContractError("tape: unknown node");
    if (!value(loss).is_scalar()) {
      throw ContractError("tape: backward needs a scalar loss, got shape " +
                          Tensor::shape_string(value(loss).shape()));
    }
    for (auto& n : nodes_) n.grad = Tensor();
    nodes_[loss.id].grad = Tensor(value(loss).shape(), {1.0});
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (n.grad.size() == 0 || !n.backward) continue;
      n.backward(*this, n.grad);
    }
    std::vector<double> flat(param_count_, 0.0);
    for (const auto& [id, offset] : params_) {
      const Tensor& g = nodes_[id].grad;
      for (std::size_t i = 0; i < g.size(); ++i) flat[offset + i] += g[i];
    }
    return flat;
  }

 private:
  using BackwardFn = std::function<void(Tape&, const Tensor&)>;

  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Tensor value, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Tensor(), requires_grad,
                          requires_grad ? std::move(fn) : BackwardFn()});
    return Var{nodes_.size() - 1};
  }

  const Node& node(Var v) const {
    if (v.id >= nodes_.size()) throw ContractError("tape: unknown node");
    return nodes_[v.id];
  }

  bool any_grad(std::initializer_list<Var> vars) const {
    for (Var v : vars)
      if (node(v).requires_grad) return true;
    return false;
  }

  void require_same_shape(Var a, Var b, const char* op) const {
    if (value(a).shape() != value(b).shape()) {
      throw ShapeError(std::string("tape: ") + op + " shape mismatch " +
                       Tensor::shape_string(value(a).shape()) + " vs " +
                       Tensor::shape_string(value(b).shape()));
    }
  }

  void accumulate(Var v, const Tensor& g) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
      return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
  }

  std::size_t param_count_;
  std::vector<Node> nodes_;
  std::vector<std::pair<std::size_t, std::size_t>> params_;
};

/// Central-difference estimate (f(x + eps e_i) - f(x - eps e_i)) / (2 eps)
/// for every coordinate of x.
template <typename F>
std::vector<double> finite_difference_gradient(F&& f, std::span<const double> x, double eps) {
  if (!(eps > 0.0)) throw ContractError("finite difference: eps must be positive");
  std::vector<double> probe(x.begin(), x.end());
  std::vector<double> grad(x.size(), 0.0);
  auto eval = [&](std::size_t i) {
    const double v = f(std::span<const double>(probe));
    if (!std::isfinite(v)) {
      throw NumericError("finite difference: non-finite value at coordinate " + std::to_string(i));
    }
    return v;
  };
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = eval(i);
    probe[i] = orig - eps;
    const double down = eval(i);
    probe[i] = orig;
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

}  // namespace ulab
