#include "mpc/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mpc {

const Tensor& Var::value() const { return graph->value(*this); }

Var Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Graph::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Graph::variable(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Graph::param(const std::string& name) {
  if (auto it = param_ids_.find(name); it != param_ids_.end()) return Var{this, it->second};
  if (params_ == nullptr) throw Error("graph: no parameter store bound (requested '" + name + "')");
  auto it = params_->find(name);
  if (it == params_->end()) throw Error("graph: unknown parameter '" + name + "'");
  Var v = variable(it->second);
  param_ids_.emplace(name, v.id);
  param_order_.emplace_back(name, v.id);
  return v;
}

Var Graph::record(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  for (const Var& in : inputs) {
    if (in.graph != this) throw Error("graph: operand belongs to a different graph");
    n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  return push(std::move(n));
}

Tensor& Graph::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.grad_ready) {
    n.grad = Tensor(n.value.shape());
    n.grad_ready = true;
  }
  return n.grad;
}

Gradients Graph::backward(Var loss) {
  if (loss.graph != this) throw Error("backward: loss belongs to a different graph");
  if (value(loss).size() != 1) {
    throw Error("backward: loss must be scalar, got shape " + shape_string(value(loss).shape()));
  }
  for (Node& n : nodes_) {
    n.grad = Tensor();
    n.grad_ready = false;
  }
  grad(loss.id)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad_ready && n.backward) n.backward(*this, i);
  }
  Gradients out;
  for (const auto& [name, id] : param_order_) {
    out.emplace(name, nodes_[id].grad_ready ? nodes_[id].grad : Tensor(nodes_[id].value.shape()));
  }
  return out;
}

Tensor Graph::gradient(Var v) const {
  const Node& n = nodes_[v.id];
  return n.grad_ready ? n.grad : Tensor(n.value.shape());
}

namespace {

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw Error(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw Error(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                shape_string(b.shape()));
  }
}

// C += A(m x k) * B(k x n)
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// C(m x k) += G(m x n) * B(k x n)^T
void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += gi[j] * bp[j];
      c[i * k + p] += acc;
    }
  }
}

// C(k x n) += A(m x k)^T * G(m x n)
void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += aip * gi[j];
    }
  }
}

template <class Forward, class Derivative>
Var unary(Var a, Forward f, Derivative df) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const std::size_t ia = a.id;
  const Var ins[] = {a};
  return a.graph->record(std::move(y), ins, [ia, df](Graph& g, std::size_t self) {
    const Tensor& x = g.node_value(ia);
    const Tensor& y = g.node_value(self);
    const Tensor& gy = g.grad(self);
    if (!g.requires_grad(ia)) return;
    Tensor& gx = g.grad(ia);
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += gy[i] * df(x[i], y[i]);
  });
}

void softmax_row(std::span<const double> x, std::span<double> y) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : x) mx = std::max(mx, v);
  double total = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    y[j] = std::exp(x[j] - mx);
    total += y[j];
  }
  for (double& v : y) v /= total;
}

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) {
    throw Error("matmul: incompatible shapes " + shape_string(av.shape()) + " and " + shape_string(bv.shape()));
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor c(Shape{m, n});
  gemm_nn(av.data().data(), bv.data().data(), c.data().data(), m, k, n);
  const std::size_t ia = a.id, ib = b.id;
  const Var ins[] = {a, b};
  return a.graph->record(std::move(c), ins, [ia, ib, m, k, n](Graph& g, std::size_t self) {
    const Tensor& gc = g.grad(self);
    if (g.requires_grad(ia)) {
      gemm_nt(gc.data().data(), g.node_value(ib).data().data(), g.grad(ia).data().data(), m, k, n);
    }
    if (g.requires_grad(ib)) {
      gemm_tn(g.node_value(ia).data().data(), gc.data().data(), g.grad(ib).data().data(), m, k, n);
    }
  });
}

Var transpose(Var a) {
  const Tensor& x = a.value();
  require_matrix(x, "transpose");
  const std::size_t m = x.rows(), n = x.cols();
  Tensor y(Shape{n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y.at(j, i) = x.at(i, j);
  const std::size_t ia = a.id;
  const Var ins[] = {a};
  return a.graph->record(std::move(y), ins, [ia, m, n](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    Tensor& gx = g.grad(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) gx.at(i, j) += gy.at(j, i);
  });
}

namespace {
template <class Combine, class GradA, class GradB>
Var binary(Var a, Var b, const char* op, Combine f, GradA da, GradB db) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same_shape(x, y, op);
  Tensor z(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) z[i] = f(x[i], y[i]);
  const std::size_t ia = a.id, ib = b.id;
  const Var ins[] = {a, b};
  return a.graph->record(std::move(z), ins, [ia, ib, da, db](Graph& g, std::size_t self) {
    const Tensor& gz = g.grad(self);
    const Tensor& x = g.node_value(ia);
    const Tensor& y = g.node_value(ib);
    if (g.requires_grad(ia)) {
      Tensor& gx = g.grad(ia);
      for (std::size_t i = 0; i < gz.size(); ++i) gx[i] += gz[i] * da(x[i], y[i]);
    }
    if (g.requires_grad(ib)) {
      Tensor& gy = g.grad(ib);
      for (std::size_t i = 0; i < gz.size(); ++i) gy[i] += gz[i] * db(x[i], y[i]);
    }
  });
}
}  // namespace

Var add(Var a, Var b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var scale(Var a, double factor) {
  return unary(
      a, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Var add_row(Var a, Var bias) {
  const Tensor& x = a.value();
  const Tensor& b = bias.value();
  require_matrix(x, "add_row");
  if (b.size() != x.cols() || b.rank() > 2 || (b.rank() == 2 && b.rows() != 1)) {
    throw Error("add_row: bias " + shape_string(b.shape()) + " does not match " + shape_string(x.shape()));
  }
  const std::size_t m = x.rows(), n = x.cols();
  Tensor y = x;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y.at(i, j) += b[j];
  const std::size_t ia = a.id, ib = bias.id;
  const Var ins[] = {a, bias};
  return a.graph->record(std::move(y), ins, [ia, ib, m, n](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    if (g.requires_grad(ia)) {
      Tensor& gx = g.grad(ia);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    }
    if (g.requires_grad(ib)) {
      Tensor& gb = g.grad(ib);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += gy[i * n + j];
    }
  });
}

Var relu(Var a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var tanh(Var a) {
  return unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double, double y) { return y * (1.0 - y); });
}

Var abs(Var a) {
  return unary(
      a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var one_minus(Var a) {
  return unary(
      a, [](double x) { return 1.0 - x; }, [](double, double) { return -1.0; });
}

Var softmax(Var x, int axis) {
  const Tensor& xv = x.value();
  if (xv.rank() == 1 && (axis == 0 || axis == -1)) {
    const std::size_t n = xv.size();
    return reshape(softmax(reshape(x, Shape{1, n}), 1), Shape{n});
  }
  require_matrix(xv, "softmax");
  if (axis == 0) return transpose(softmax(transpose(x), 1));
  if (axis != 1 && axis != -1) throw Error("softmax: invalid axis " + std::to_string(axis));
  const std::size_t m = xv.rows(), n = xv.cols();
  if (n == 0) throw Error("softmax: empty axis");
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < m; ++i) softmax_row(xv.row(i), y.row(i));
  const std::size_t ix = x.id;
  const Var ins[] = {x};
  return x.graph->record(std::move(y), ins, [ix, m, n](Graph& g, std::size_t self) {
    const Tensor& y = g.node_value(self);
    const Tensor& gy = g.grad(self);
    Tensor& gx = g.grad(ix);
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += gy.at(i, j) * y.at(i, j);
      for (std::size_t j = 0; j < n; ++j) gx.at(i, j) += y.at(i, j) * (gy.at(i, j) - dot);
    }
  });
}

Var masked_softmax(Var x, const std::vector<unsigned char>& allowed) {
  const Tensor& xv = x.value();
  require_matrix(xv, "masked_softmax");
  if (allowed.size() != xv.size()) throw Error("masked_softmax: mask size does not match input");
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (allowed[i * n + j]) mx = std::max(mx, xv.at(i, j));
    if (!std::isfinite(mx)) throw Error("masked_softmax: row " + std::to_string(i) + " has no allowed entries");
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (allowed[i * n + j]) {
        y.at(i, j) = std::exp(xv.at(i, j) - mx);
        total += y.at(i, j);
      }
    }
    for (std::size_t j = 0; j < n; ++j) y.at(i, j) /= total;
  }
  const std::size_t ix = x.id;
  const Var ins[] = {x};
  return x.graph->record(std::move(y), ins, [ix, m, n](Graph& g, std::size_t self) {
    const Tensor& y = g.node_value(self);
    const Tensor& gy = g.grad(self);
    Tensor& gx = g.grad(ix);
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += gy.at(i, j) * y.at(i, j);
      for (std::size_t j = 0; j < n; ++j) gx.at(i, j) += y.at(i, j) * (gy.at(i, j) - dot);
    }
  });
}

Var log_softmax(Var x) {
  const Tensor& xv = x.value();
  require_matrix(xv, "log_softmax");
  const std::size_t m = xv.rows(), n = xv.cols();
  if (n == 0) throw Error("log_softmax: empty axis");
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, xv.at(i, j));
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(xv.at(i, j) - mx);
    const double lse = mx + std::log(total);
    for (std::size_t j = 0; j < n; ++j) y.at(i, j) = xv.at(i, j) - lse;
  }
  const std::size_t ix = x.id;
  const Var ins[] = {x};
  return x.graph->record(std::move(y), ins, [ix, m, n](Graph& g, std::size_t self) {
    const Tensor& y = g.node_value(self);
    const Tensor& gy = g.grad(self);
    Tensor& gx = g.grad(ix);
    for (std::size_t i = 0; i < m; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) total += gy.at(i, j);
      for (std::size_t j = 0; j < n; ++j) gx.at(i, j) += gy.at(i, j) - std::exp(y.at(i, j)) * total;
    }
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Tensor& xv = x.value();
  require_matrix(xv, "layer_norm");
  const std::size_t m = xv.rows(), n = xv.cols();
  if (gamma.value().size() != n || beta.value().size() != n) {
    throw Error("layer_norm: gamma " + shape_string(gamma.shape()) + " / beta " + shape_string(beta.shape()) +
                " do not match width " + std::to_string(n));
  }
  if (!(eps > 0.0)) throw Error("layer_norm: eps must be positive");
  Tensor xhat(xv.shape());
  std::vector<double> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xv.at(i, j);
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xv.at(i, j) - mu) * (xv.at(i, j) - mu);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) xhat.at(i, j) = (xv.at(i, j) - mu) * inv_std[i];
  }
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y.at(i, j) = gv[j] * xhat.at(i, j) + bv[j];
  const std::size_t ix = x.id, ig = gamma.id, ib = beta.id;
  const Var ins[] = {x, gamma, beta};
  return x.graph->record(
      std::move(y), ins,
      [ix, ig, ib, m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& g, std::size_t self) {
        const Tensor& gy = g.grad(self);
        const Tensor& gv = g.node_value(ig);
        if (g.requires_grad(ig)) {
          Tensor& gg = g.grad(ig);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gg[j] += gy.at(i, j) * xhat.at(i, j);
        }
        if (g.requires_grad(ib)) {
          Tensor& gb = g.grad(ib);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gb[j] += gy.at(i, j);
        }
        if (g.requires_grad(ix)) {
          Tensor& gx = g.grad(ix);
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t i = 0; i < m; ++i) {
            double mean_gh = 0.0, mean_ghx = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double gh = gy.at(i, j) * gv[j];
              mean_gh += gh;
              mean_ghx += gh * xhat.at(i, j);
            }
            mean_gh *= inv_n;
            mean_ghx *= inv_n;
            for (std::size_t j = 0; j < n; ++j) {
              const double gh = gy.at(i, j) * gv[j];
              gx.at(i, j) += inv_std[i] * (gh - mean_gh - xhat.at(i, j) * mean_ghx);
            }
          }
        }
      });
}

Var sum(Var a) {
  const Tensor& x = a.value();
  double total = 0.0;
  for (double v : x.data()) total += v;
  const std::size_t ia = a.id;
  const Var ins[] = {a};
  return a.graph->record(Tensor::scalar(total), ins, [ia](Graph& g, std::size_t self) {
    const double gs = g.grad(self)[0];
    Tensor& gx = g.grad(ia);
    for (double& v : gx.data()) v += gs;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw Error("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var select_rows(Var a, std::vector<std::size_t> indices) {
  const Tensor& x = a.value();
  require_matrix(x, "select_rows");
  const std::size_t n = x.cols();
  Tensor y(Shape{indices.size(), n});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= x.rows()) {
      throw Error("select_rows: index " + std::to_string(indices[i]) + " out of range for " +
                  shape_string(x.shape()));
    }
    std::copy_n(x.row(indices[i]).begin(), n, y.row(i).begin());
  }
  const std::size_t ia = a.id;
  const Var ins[] = {a};
  return a.graph->record(std::move(y), ins, [ia, n, indices = std::move(indices)](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    Tensor& gx = g.grad(ia);
    for (std::size_t i = 0; i < indices.size(); ++i)
      for (std::size_t j = 0; j < n; ++j) gx.at(indices[i], j) += gy.at(i, j);
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  const Tensor& x = a.value();
  require_matrix(x, "slice_rows");
  if (begin > end || end > x.rows()) {
    throw Error("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for " +
                shape_string(x.shape()));
  }
  const std::size_t n = x.cols();
  Tensor y(Shape{end - begin, n},
           std::vector<double>(x.data().begin() + static_cast<std::ptrdiff_t>(begin * n),
                               x.data().begin() + static_cast<std::ptrdiff_t>(end * n)));
  const std::size_t ia = a.id;
  const Var ins[] = {a};
  return a.graph->record(std::move(y), ins, [ia, begin, n](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    Tensor& gx = g.grad(ia);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[begin * n + i] += gy[i];
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& x = a.value();
  require_matrix(x, "slice_cols");
  if (begin > end || end > x.cols()) {
    throw Error("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for " +
                shape_string(x.shape()));
  }
  const std::size_t m = x.rows(), n = x.cols(), w = end - begin;
  Tensor y(Shape{m, w});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) y.at(i, j) = x.at(i, begin + j);
  const std::size_t ia = a.id;
  const Var ins[] = {a};
  return a.graph->record(std::move(y), ins, [ia, begin, m, n, w](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    Tensor& gx = g.grad(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) gx[i * n + begin + j] += gy[i * w + j];
  });
}

Var gather_cols(Var a, const std::vector<std::vector<std::size_t>>& indices) {
  const Tensor& x = a.value();
  require_matrix(x, "gather_cols");
  if (indices.size() != x.rows()) throw Error("gather_cols: one index row per input row required");
  const std::size_t k = indices.empty() ? 0 : indices.front().size();
  std::vector<std::size_t> flat;
  flat.reserve(x.rows() * k);
  for (const auto& row : indices) {
    if (row.size() != k) throw Error("gather_cols: ragged index rows");
    for (std::size_t c : row) {
      if (c >= x.cols()) throw Error("gather_cols: column " + std::to_string(c) + " out of range");
      flat.push_back(c);
    }
  }
  const std::size_t m = x.rows(), n = x.cols();
  Tensor y(Shape{m, k});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j) y.at(i, j) = x.at(i, flat[i * k + j]);
  const std::size_t ia = a.id;
  const Var ins[] = {a};
  return a.graph->record(std::move(y), ins, [ia, m, n, k, flat = std::move(flat)](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    Tensor& gx = g.grad(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < k; ++j) gx[i * n + flat[i * k + j]] += gy.at(i, j);
  });
}

Var pick(Var a, const std::vector<std::size_t>& indices) {
  std::vector<std::vector<std::size_t>> rows;
  rows.reserve(indices.size());
  for (std::size_t c : indices) rows.push_back({c});
  return gather_cols(a, rows);
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw Error("concat_cols: no inputs");
  const std::size_t m = parts.front().value().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    require_matrix(p.value(), "concat_cols");
    if (p.value().rows() != m) throw Error("concat_cols: row counts differ");
    widths.push_back(p.value().cols());
    total += widths.back();
  }
  Tensor y(Shape{m, total});
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& x = parts[k].value();
    for (std::size_t i = 0; i < m; ++i) std::copy_n(x.row(i).begin(), widths[k], y.row(i).begin() + offset);
    offset += widths[k];
  }
  std::vector<std::size_t> ids;
  for (const Var& p : parts) ids.push_back(p.id);
  return parts.front().graph->record(
      std::move(y), parts, [ids, widths, m, total](Graph& g, std::size_t self) {
        const Tensor& gy = g.grad(self);
        std::size_t offset = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (g.requires_grad(ids[k])) {
            Tensor& gx = g.grad(ids[k]);
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t j = 0; j < widths[k]; ++j) gx.at(i, j) += gy[i * total + offset + j];
          }
          offset += widths[k];
        }
      });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw Error("concat_rows: no inputs");
  const std::size_t n = parts.front().value().cols();
  std::size_t total = 0;
  std::vector<std::size_t> sizes;
  for (const Var& p : parts) {
    require_matrix(p.value(), "concat_rows");
    if (p.value().cols() != n) throw Error("concat_rows: column counts differ");
    sizes.push_back(p.value().size());
    total += p.value().rows();
  }
  std::vector<double> data;
  data.reserve(total * n);
  for (const Var& p : parts) data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  std::vector<std::size_t> ids;
  for (const Var& p : parts) ids.push_back(p.id);
  return parts.front().graph->record(Tensor(Shape{total, n}, std::move(data)), parts,
                                     [ids, sizes](Graph& g, std::size_t self) {
                                       const Tensor& gy = g.grad(self);
                                       std::size_t offset = 0;
                                       for (std::size_t k = 0; k < ids.size(); ++k) {
                                         if (g.requires_grad(ids[k])) {
                                           Tensor& gx = g.grad(ids[k]);
                                           for (std::size_t i = 0; i < sizes[k]; ++i) gx[i] += gy[offset + i];
                                         }
                                         offset += sizes[k];
                                       }
                                     });
}

Var reshape(Var a, Shape shape) {
  Tensor y = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id;
  const Var ins[] = {a};
  return a.graph->record(std::move(y), ins, [ia](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    Tensor& gx = g.grad(ia);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
  });
}

}  // namespace mpc
