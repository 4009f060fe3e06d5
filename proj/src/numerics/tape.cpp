#include "gca/tape.hpp"

#include <algorithm>
#include <cmath>

#include "gca/errors.hpp"

namespace gca {

Parameter::Parameter(std::string name_, Tensor value_, bool trainable_)
    : name(std::move(name_)), value(std::move(value_)), grad(value.shape()), trainable(trainable_) {}

void Parameter::zero_grad() {
  if (!grad.same_shape(value)) {
    grad = Tensor(value.shape());
  } else {
    grad.fill(0.0);
  }
}

void zero_grads(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
}

const Tensor& Var::value() const {
  if (!tape_) throw UsageError("value() on an unbound Var");
  return tape_->value(index_);
}

const Tensor& Var::grad() const {
  if (!tape_) throw UsageError("grad() on an unbound Var");
  return tape_->grad_view(index_);
}

void Tape::check_owned(const Var& v, const char* what) const {
  if (v.tape_ != this) throw UsageError(std::string(what) + " does not belong to this tape");
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
  Node n;
  n.external = &p.value;
  n.param = &p;
  n.requires_grad = p.trainable;
  nodes_.push_back(std::move(n));
  const std::size_t id = nodes_.size() - 1;
  param_nodes_.emplace(&p, id);
  return Var(this, id);
}

Var Tape::alias(const Tensor& value) {
  Node n;
  n.external = &value;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  if (!value.all_finite()) throw DomainError("operation produced a non-finite value");
  Node n;
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const Var& v : inputs) {
    check_owned(v, "operation input");
    n.inputs.push_back(v.index_);
    n.requires_grad = n.requires_grad || nodes_[v.index_].requires_grad;
  }
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(std::size_t i) const {
  const Node& n = nodes_[i];
  return n.external ? *n.external : n.value;
}

Tensor& Tape::grad(std::size_t i) {
  Node& n = nodes_[i];
  if (n.grad.empty()) n.grad = Tensor(value(i).shape());
  return n.grad;
}

const Tensor& Tape::grad_view(std::size_t i) const { return nodes_[i].grad; }

void Tape::backward(Var loss) {
  check_owned(loss, "loss");
  if (value(loss.index_).size() != 1) {
    throw UsageError("backward() needs a scalar loss, got shape " + value(loss.index_).shape_string());
  }
  for (Node& n : nodes_) n.grad = Tensor();
  grad(loss.index_)[0] = 1.0;
  for (std::size_t i = loss.index_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty() || !n.backward || !n.requires_grad) continue;
    n.backward(*this, i);
  }
  for (Node& n : nodes_) {
    if (!n.param) continue;
    Parameter& p = *n.param;
    if (!p.grad.same_shape(p.value)) p.grad = Tensor(p.value.shape());
    if (!p.trainable) {
      p.grad.fill(0.0);
      continue;
    }
    if (n.grad.empty()) continue;
    for (std::size_t k = 0; k < p.grad.size(); ++k) p.grad[k] += n.grad[k];
  }
}

// ---------------------------------------------------------------------------

namespace {

Tape& tape_of(std::initializer_list<Var> vars) {
  Tape* t = nullptr;
  for (const Var& v : vars) {
    if (!v.valid()) throw UsageError("unbound Var passed to an operation");
    if (t && v.tape() != t) throw UsageError("operation inputs live on different tapes");
    t = v.tape();
  }
  return *t;
}

void require_vector(const Tensor& t, const char* what) {
  if (!t.is_vector()) throw DimensionError(std::string(what) + " must be a vector, got " + t.shape_string());
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(what) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
  }
}

}  // namespace

double sigmoid(double x) noexcept {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor softmax(const Tensor& x) {
  if (x.empty()) throw DomainError("softmax of an empty vector");
  require_vector(x, "softmax input");
  Tensor y(x.shape());
  const double mx = *std::max_element(x.data().begin(), x.data().end());
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = std::exp(x[i] - mx);
    total += y[i];
  }
  for (std::size_t i = 0; i < x.size(); ++i) y[i] /= total;
  return y;
}

Var matvec(Var w, Var x) {
  Tape& t = tape_of({w, x});
  const Tensor& W = w.value();
  const Tensor& X = x.value();
  if (!W.is_matrix() || !X.is_vector() || W.cols() != X.size()) {
    throw DimensionError("matvec: cannot multiply " + W.shape_string() + " by " + X.shape_string());
  }
  const std::size_t m = W.rows(), n = W.cols();
  Tensor y({m});
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = W.data().data() + r * n;
    double acc = 0.0;
    for (std::size_t c = 0; c < n; ++c) acc += row[c] * X[c];
    y[r] = acc;
  }
  const std::size_t wi = w.index(), xi = x.index();
  return t.record(std::move(y), {w, x}, [wi, xi, m, n](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_view(self);
    const Tensor& Wv = tp.value(wi);
    const Tensor& Xv = tp.value(xi);
    if (tp.requires_grad(wi)) {
      Tensor& gw = tp.grad(wi);
      for (std::size_t r = 0; r < m; ++r) {
        const double gr = g[r];
        if (gr == 0.0) continue;
        double* row = gw.data().data() + r * n;
        for (std::size_t c = 0; c < n; ++c) row[c] += gr * Xv[c];
      }
    }
    if (!tp.requires_grad(xi)) return;
    Tensor& gx = tp.grad(xi);
    for (std::size_t r = 0; r < m; ++r) {
      const double gr = g[r];
      if (gr == 0.0) continue;
      const double* row = Wv.data().data() + r * n;
      for (std::size_t c = 0; c < n; ++c) gx[c] += row[c] * gr;
    }
  });
}

Var affine(Var w, Var x, Var b) {
  const Tensor& W = w.value();
  const Tensor& X = x.value();
  const Tensor& B = b.value();
  if (!W.is_matrix() || !X.is_vector() || W.cols() != X.size() || !B.is_vector() || B.size() != W.rows()) {
    throw DimensionError("affine: incompatible shapes W" + W.shape_string() + " x" + X.shape_string() + " b" +
                         B.shape_string());
  }
  return add(matvec(w, x), b);
}

Var add(Var a, Var b) {
  Tape& t = tape_of({a, b});
  require_same_shape(a.value(), b.value(), "add");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.value()[i];
  const std::size_t ai = a.index(), bi = b.index();
  return t.record(std::move(y), {a, b}, [ai, bi](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_view(self);
    Tensor& ga = tp.grad(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    Tensor& gb = tp.grad(bi);
    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of({a, b});
  require_same_shape(a.value(), b.value(), "sub");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b.value()[i];
  const std::size_t ai = a.index(), bi = b.index();
  return t.record(std::move(y), {a, b}, [ai, bi](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_view(self);
    Tensor& ga = tp.grad(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    Tensor& gb = tp.grad(bi);
    for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of({a, b});
  require_same_shape(a.value(), b.value(), "mul");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
  const std::size_t ai = a.index(), bi = b.index();
  return t.record(std::move(y), {a, b}, [ai, bi](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_view(self);
    const Tensor& av = tp.value(ai);
    const Tensor& bv = tp.value(bi);
    Tensor& ga = tp.grad(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    Tensor& gb = tp.grad(bi);
    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
  });
}

Var scale(Var a, double s) {
  Tape& t = tape_of({a});
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= s;
  const std::size_t ai = a.index();
  return t.record(std::move(y), {a}, [ai, s](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_view(self);
    Tensor& ga = tp.grad(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

Var add_n(std::span<const Var> parts) {
  if (parts.empty()) throw DomainError("add_n of an empty list");
  Tape& t = tape_of({parts.front()});
  Tensor y = parts.front().value();
  for (std::size_t k = 1; k < parts.size(); ++k) {
    if (parts[k].tape() != &t) throw UsageError("operation inputs live on different tapes");
    require_same_shape(y, parts[k].value(), "add_n");
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += parts[k].value()[i];
  }
  std::vector<std::size_t> ids;
  ids.reserve(parts.size());
  for (const Var& v : parts) ids.push_back(v.index());
  return t.record(std::move(y), parts, [ids](Tape& tp, std::size_t self) {
    for (std::size_t id : ids) {
      const Tensor& g = tp.grad_view(self);
      Tensor& gi = tp.grad(id);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

Var dot(Var a, Var b) {
  Tape& t = tape_of({a, b});
  require_same_shape(a.value(), b.value(), "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.value().size(); ++i) acc += a.value()[i] * b.value()[i];
  const std::size_t ai = a.index(), bi = b.index();
  return t.record(Tensor::scalar(acc), {a, b}, [ai, bi](Tape& tp, std::size_t self) {
    const double g = tp.grad_view(self)[0];
    const Tensor& av = tp.value(ai);
    const Tensor& bv = tp.value(bi);
    Tensor& ga = tp.grad(ai);
    for (std::size_t i = 0; i < av.size(); ++i) ga[i] += g * bv[i];
    Tensor& gb = tp.grad(bi);
    for (std::size_t i = 0; i < bv.size(); ++i) gb[i] += g * av[i];
  });
}

Var activation(Activation kind, Var x) {
  Tape& t = tape_of({x});
  const Tensor& X = x.value();
  if (X.empty()) throw DomainError(std::string(to_string(kind)) + " of an empty tensor");
  const std::size_t xi = x.index();
  switch (kind) {
    case Activation::relu: {
      Tensor y = X;
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = y[i] > 0.0 ? y[i] : 0.0;
      return t.record(std::move(y), {x}, [xi](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad_view(self);
        const Tensor& xv = tp.value(xi);
        Tensor& gx = tp.grad(xi);
        for (std::size_t i = 0; i < g.size(); ++i)
          if (xv[i] > 0.0) gx[i] += g[i];
      });
    }
    case Activation::sigmoid: {
      Tensor y = X;
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = sigmoid(y[i]);
      return t.record(std::move(y), {x}, [xi](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad_view(self);
        const Tensor& yv = tp.value(self);
        Tensor& gx = tp.grad(xi);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * yv[i] * (1.0 - yv[i]);
      });
    }
    case Activation::tanh: {
      Tensor y = X;
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::tanh(y[i]);
      return t.record(std::move(y), {x}, [xi](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad_view(self);
        const Tensor& yv = tp.value(self);
        Tensor& gx = tp.grad(xi);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - yv[i] * yv[i]);
      });
    }
    case Activation::softmax: {
      Tensor y = softmax(X);
      return t.record(std::move(y), {x}, [xi](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad_view(self);
        const Tensor& yv = tp.value(self);
        double gy = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) gy += g[i] * yv[i];
        Tensor& gx = tp.grad(xi);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += yv[i] * (g[i] - gy);
      });
    }
  }
  throw DomainError("unknown activation");
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw DomainError("concat of an empty part list");
  Tape& t = tape_of({parts.front()});
  std::size_t total = 0;
  std::vector<std::size_t> ids, offsets;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw UsageError("operation inputs live on different tapes");
    require_vector(p.value(), "concat part");
    ids.push_back(p.index());
    offsets.push_back(total);
    total += p.value().size();
  }
  std::vector<double> out;
  out.reserve(total);
  for (const Var& p : parts) out.insert(out.end(), p.value().data().begin(), p.value().data().end());
  return t.record(Tensor::vector(std::move(out)), parts, [ids, offsets](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_view(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!tp.requires_grad(ids[k])) continue;
      Tensor& gp = tp.grad(ids[k]);
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offsets[k] + i];
    }
  });
}

Var slice(Var x, std::size_t offset, std::size_t length) {
  Tape& t = tape_of({x});
  const Tensor& X = x.value();
  require_vector(X, "slice input");
  if (length == 0 || offset + length > X.size()) {
    throw DimensionError("slice [" + std::to_string(offset) + ", " + std::to_string(offset + length) +
                         ") out of range for " + X.shape_string());
  }
  std::vector<double> out(X.data().begin() + static_cast<std::ptrdiff_t>(offset),
                          X.data().begin() + static_cast<std::ptrdiff_t>(offset + length));
  const std::size_t xi = x.index();
  return t.record(Tensor::vector(std::move(out)), {x}, [xi, offset](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_view(self);
    Tensor& gx = tp.grad(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[offset + i] += g[i];
  });
}

Var column(Var matrix, std::size_t j) {
  Tape& t = tape_of({matrix});
  const Tensor& M = matrix.value();
  if (!M.is_matrix()) throw DimensionError("column() of non-matrix " + M.shape_string());
  if (j >= M.cols()) {
    throw DomainError("column index " + std::to_string(j) + " out of range for " + M.shape_string());
  }
  const std::size_t rows = M.rows();
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) out[r] = M.at(r, j);
  const std::size_t mi = matrix.index();
  return t.record(Tensor::vector(std::move(out)), {matrix}, [mi, j, rows](Tape& tp, std::size_t self) {
    if (!tp.requires_grad(mi)) return;
    const Tensor& g = tp.grad_view(self);
    Tensor& gm = tp.grad(mi);
    for (std::size_t r = 0; r < rows; ++r) gm.at(r, j) += g[r];
  });
}

Var loss_eval(Loss kind, Var prediction, const Tensor& target) {
  Tape& t = tape_of({prediction});
  const Tensor& P = prediction.value();
  require_same_shape(P, target, to_string(kind));
  const std::size_t pi = prediction.index();
  const double n = static_cast<double>(P.size());
  constexpr double eps = kProbabilityEpsilon;
  double value = 0.0;
  switch (kind) {
    case Loss::categorical_ce: {
      for (std::size_t i = 0; i < P.size(); ++i)
        if (target[i] != 0.0) value -= target[i] * std::log(std::max(P[i], eps));
      return t.record(Tensor::scalar(value), {prediction}, [pi, target](Tape& tp, std::size_t self) {
        const double g = tp.grad_view(self)[0];
        const Tensor& pv = tp.value(pi);
        Tensor& gp = tp.grad(pi);
        for (std::size_t i = 0; i < pv.size(); ++i)
          if (target[i] != 0.0 && pv[i] > eps) gp[i] -= g * target[i] / pv[i];
      });
    }
    case Loss::binary_ce: {
      for (std::size_t i = 0; i < P.size(); ++i) {
        value -= target[i] * std::log(std::max(P[i], eps)) + (1.0 - target[i]) * std::log(std::max(1.0 - P[i], eps));
      }
      value /= n;
      return t.record(Tensor::scalar(value), {prediction}, [pi, target, n](Tape& tp, std::size_t self) {
        const double g = tp.grad_view(self)[0] / n;
        const Tensor& pv = tp.value(pi);
        Tensor& gp = tp.grad(pi);
        for (std::size_t i = 0; i < pv.size(); ++i) {
          double d = 0.0;
          if (pv[i] > eps) d -= target[i] / pv[i];
          if (1.0 - pv[i] > eps) d += (1.0 - target[i]) / (1.0 - pv[i]);
          gp[i] += g * d;
        }
      });
    }
    case Loss::mse: {
      for (std::size_t i = 0; i < P.size(); ++i) value += (P[i] - target[i]) * (P[i] - target[i]);
      value /= n;
      return t.record(Tensor::scalar(value), {prediction}, [pi, target, n](Tape& tp, std::size_t self) {
        const double g = tp.grad_view(self)[0];
        const Tensor& pv = tp.value(pi);
        Tensor& gp = tp.grad(pi);
        for (std::size_t i = 0; i < pv.size(); ++i) gp[i] += g * 2.0 * (pv[i] - target[i]) / n;
      });
    }
  }
  throw DomainError("unknown loss");
}

const char* to_string(Activation kind) noexcept {
  switch (kind) {
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::softmax: return "softmax";
    case Activation::tanh: return "tanh";
  }
  return "?";
}

const char* to_string(Loss kind) noexcept {
  switch (kind) {
    case Loss::categorical_ce: return "categorical_ce";
    case Loss::binary_ce: return "binary_ce";
    case Loss::mse: return "mse";
  }
  return "?";
}

}  // namespace gca
