#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "gvq/core/error.hpp"
#include "gvq/core/tensor.hpp"

namespace gvq {

// Handle into a GradTape. Only meaningful together with the tape that
// produced it.
struct Var {
  int idx = -1;
  bool valid() const { return idx >= 0; }
};

// Reverse-mode tape over vector-valued nodes. A fresh tape is built per
// optimization step: leaves are created from the current parameter values,
// the whole batch graph is recorded forward, then backward() runs exactly
// once. Node granularity is whole vectors (a layer activation is one node),
// which keeps graphs for a 512-transition batch in the tens of thousands of
// nodes.
class GradTape {
 public:
  Var leaf(std::vector<double> value) {
    return push(std::move(value), {}, nullptr);
  }

  Var leaf(const Tensor& t) { return leaf(t.data); }

  Var scalar(double v) { return leaf(std::vector<double>{v}); }

  // Parameter leaf, memoized by name: every use of a parameter inside one
  // batch graph must share a node so gradients accumulate across
  // transitions. Registered leaves are what gradients() reports.
  Var param(const std::string& name, const Tensor& value) {
    auto it = params_.find(name);
    if (it != params_.end()) return it->second;
    Var v = leaf(value.data);
    params_.emplace(name, v);
    return v;
  }

  void backward(Var loss) {
    check(loss);
    if (consumed_) throw ContractError("GradTape: backward called twice");
    if (nodes_[loss.idx].val.size() != 1)
      throw ContractError("GradTape: backward target must be scalar");
    consumed_ = true;
    nodes_[loss.idx].grad[0] = 1.0;
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i)
      if (nodes_[i].back) nodes_[i].back(*this, i);
  }

  // Gradients of every registered parameter leaf, keyed like the ParamSet
  // they came from. Parameters never touched by the loss get zero tensors.
  std::map<std::string, std::vector<double>> gradients() const {
    if (!consumed_) throw ContractError("GradTape: gradients requested before backward");
    std::map<std::string, std::vector<double>> out;
    for (const auto& [name, var] : params_) out[name] = nodes_[var.idx].grad;
    return out;
  }

  const std::vector<double>& value(Var v) const {
    check(v);
    return nodes_[v.idx].val;
  }

  const std::vector<double>& grad(Var v) const {
    check(v);
    return nodes_[v.idx].grad;
  }

  std::size_t size() const { return nodes_.size(); }

  // --- ops ---------------------------------------------------------------

  Var add(Var a, Var b) {
    auto [x, y] = pair_same(a, b);
    std::vector<double> out(x->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*x)[i] + (*y)[i];
    return push(std::move(out), {a, b}, [](GradTape& t, int self) {
      auto& n = t.nodes_[self];
      t.axpy(n.parents[0], n.grad, 1.0);
      t.axpy(n.parents[1], n.grad, 1.0);
    });
  }

  Var sub(Var a, Var b) {
    auto [x, y] = pair_same(a, b);
    std::vector<double> out(x->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*x)[i] - (*y)[i];
    return push(std::move(out), {a, b}, [](GradTape& t, int self) {
      auto& n = t.nodes_[self];
      t.axpy(n.parents[0], n.grad, 1.0);
      t.axpy(n.parents[1], n.grad, -1.0);
    });
  }

  Var mul(Var a, Var b) {
    auto [x, y] = pair_same(a, b);
    std::vector<double> out(x->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*x)[i] * (*y)[i];
    return push(std::move(out), {a, b}, [](GradTape& t, int self) {
      auto& n = t.nodes_[self];
      auto& ga = t.nodes_[n.parents[0].idx].grad;
      auto& gb = t.nodes_[n.parents[1].idx].grad;
      const auto& va = t.nodes_[n.parents[0].idx].val;
      const auto& vb = t.nodes_[n.parents[1].idx].val;
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        ga[i] += n.grad[i] * vb[i];
        gb[i] += n.grad[i] * va[i];
      }
    });
  }

  Var scale(Var a, double c) {
    const auto& x = value(a);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * c;
    return push(std::move(out), {a}, [c](GradTape& t, int self) {
      auto& n = t.nodes_[self];
      t.axpy(n.parents[0], n.grad, c);
    });
  }

  Var add_scalar(Var a, double c) {
    const auto& x = value(a);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + c;
    return push(std::move(out), {a}, [](GradTape& t, int self) {
      auto& n = t.nodes_[self];
      t.axpy(n.parents[0], n.grad, 1.0);
    });
  }

  // y = s * x with scalar node s broadcast over x.
  Var scale_by(Var x, Var s) {
    check(x);
    check(s);
    if (nodes_[s.idx].val.size() != 1) throw ContractError("scale_by: s must be scalar");
    double sv = nodes_[s.idx].val[0];
    const auto& xv = nodes_[x.idx].val;
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = sv * xv[i];
    return push(std::move(out), {x, s}, [](GradTape& t, int self) {
      auto& n = t.nodes_[self];
      auto& gx = t.nodes_[n.parents[0].idx].grad;
      auto& gs = t.nodes_[n.parents[1].idx].grad;
      const auto& xv = t.nodes_[n.parents[0].idx].val;
      double sv = t.nodes_[n.parents[1].idx].val[0];
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        gx[i] += n.grad[i] * sv;
        gs[0] += n.grad[i] * xv[i];
      }
    });
  }

  // y = W x + b where W is row-major (rows = b.size(), cols = x.size()).
  Var affine(Var W, Var b, Var x) {
    check(W);
    check(b);
    check(x);
    const auto& wv = nodes_[W.idx].val;
    const auto& bv = nodes_[b.idx].val;
    const auto& xv = nodes_[x.idx].val;
    std::size_t rows = bv.size(), cols = xv.size();
    if (wv.size() != rows * cols) throw ContractError("affine: W size != rows*cols");
    std::vector<double> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      double acc = bv[r];
      const double* wrow = wv.data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) acc += wrow[c] * xv[c];
      out[r] = acc;
    }
    return push(std::move(out), {W, b, x}, [rows, cols](GradTape& t, int self) {
      auto& n = t.nodes_[self];
      auto& gW = t.nodes_[n.parents[0].idx].grad;
      auto& gb = t.nodes_[n.parents[1].idx].grad;
      auto& gx = t.nodes_[n.parents[2].idx].grad;
      const auto& wv = t.nodes_[n.parents[0].idx].val;
      const auto& xv = t.nodes_[n.parents[2].idx].val;
      for (std::size_t r = 0; r < rows; ++r) {
        double g = n.grad[r];
        if (g == 0.0) continue;
        gb[r] += g;
        double* gwrow = gW.data() + r * cols;
        const double* wrow = wv.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) {
          gwrow[c] += g * xv[c];
          gx[c] += g * wrow[c];
        }
      }
    });
  }

  Var concat(const std::vector<Var>& parts) {
    if (parts.empty()) throw ContractError("concat: empty input");
    std::vector<double> out;
    std::vector<std::size_t> sizes;
    for (Var p : parts) {
      check(p);
      const auto& v = nodes_[p.idx].val;
      sizes.push_back(v.size());
      out.insert(out.end(), v.begin(), v.end());
    }
    return push(std::move(out), parts, [sizes](GradTape& t, int self) {
      auto& n = t.nodes_[self];
      std::size_t off = 0;
      for (std::size_t k = 0; k < n.parents.size(); ++k) {
        auto& gp = t.nodes_[n.parents[k].idx].grad;
        for (std::size_t i = 0; i < sizes[k]; ++i) gp[i] += n.grad[off + i];
        off += sizes[k];
      }
    });
  }

  Var slice(Var a, int offset, int len) {
    check(a);
    const auto& x = nodes_[a.idx].val;
    if (offset < 0 || len < 0 || static_cast<std::size_t>(offset + len) > x.size())
      throw ContractError("slice: out of range");
    std::vector<double> out(x.begin() + offset, x.begin() + offset + len);
    return push(std::move(out), {a}, [offset](GradTape& t, int self) {
      auto& n = t.nodes_[self];
      auto& gp = t.nodes_[n.parents[0].idx].grad;
      for (std::size_t i = 0; i < n.grad.size(); ++i) gp[offset + i] += n.grad[i];
    });
  }

  Var sum(Var a) {
    const auto& x = value(a);
    double s = 0.0;
    for (double v : x) s += v;
    return push({s}, {a}, [](GradTape& t, int self) {
      auto& n = t.nodes_[self];
      auto& gp = t.nodes_[n.parents[0].idx].grad;
      for (double& g : gp) g += n.grad[0];
    });
  }

  Var mean(Var a) {
    const auto& x = value(a);
    if (x.empty()) throw ContractError("mean: empty vector");
    return scale(sum(a), 1.0 / static_cast<double>(x.size()));
  }

  Var dot(Var a, Var b) {
    auto [x, y] = pair_same(a, b);
    double s = 0.0;
    for (std::size_t i = 0; i < x->size(); ++i) s += (*x)[i] * (*y)[i];
    return push({s}, {a, b}, [](GradTape& t, int self) {
      auto& n = t.nodes_[self];
      auto& ga = t.nodes_[n.parents[0].idx].grad;
      auto& gb = t.nodes_[n.parents[1].idx].grad;
      const auto& va = t.nodes_[n.parents[0].idx].val;
      const auto& vb = t.nodes_[n.parents[1].idx].val;
      double g = n.grad[0];
      for (std::size_t i = 0; i < va.size(); ++i) {
        ga[i] += g * vb[i];
        gb[i] += g * va[i];
      }
    });
  }

  Var relu(Var a) {
    const auto& x = value(a);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
    return push(std::move(out), {a}, [](GradTape& t, int self) {
      auto& n = t.nodes_[self];
      auto& gp = t.nodes_[n.parents[0].idx].grad;
      const auto& vp = t.nodes_[n.parents[0].idx].val;
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        if (vp[i] > 0.0) gp[i] += n.grad[i];
    });
  }

  Var sigmoid(Var a) {
    const auto& x = value(a);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = sigmoid_val(x[i]);
    return push(std::move(out), {a}, [](GradTape& t, int self) {
      auto& n = t.nodes_[self];
      auto& gp = t.nodes_[n.parents[0].idx].grad;
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        gp[i] += n.grad[i] * n.val[i] * (1.0 - n.val[i]);
    });
  }

  Var tanh_op(Var a) {
    const auto& x = value(a);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::tanh(x[i]);
    return push(std::move(out), {a}, [](GradTape& t, int self) {
      auto& n = t.nodes_[self];
      auto& gp = t.nodes_[n.parents[0].idx].grad;
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        gp[i] += n.grad[i] * (1.0 - n.val[i] * n.val[i]);
    });
  }

  Var exp_op(Var a) {
    const auto& x = value(a);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::exp(x[i]);
    return push(std::move(out), {a}, [](GradTape& t, int self) {
      auto& n = t.nodes_[self];
      auto& gp = t.nodes_[n.parents[0].idx].grad;
      for (std::size_t i = 0; i < n.grad.size(); ++i) gp[i] += n.grad[i] * n.val[i];
    });
  }

  Var log_op(Var a) {
    const auto& x = value(a);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::log(x[i]);
    return push(std::move(out), {a}, [](GradTape& t, int self) {
      auto& n = t.nodes_[self];
      auto& gp = t.nodes_[n.parents[0].idx].grad;
      const auto& vp = t.nodes_[n.parents[0].idx].val;
      for (std::size_t i = 0; i < n.grad.size(); ++i) gp[i] += n.grad[i] / vp[i];
    });
  }

  Var square(Var a) { return mul(a, a); }

  // Gradient is gated to the interior: exactly-clipped coordinates pass
  // nothing, which is what PPO's clipped surrogate needs.
  Var clip(Var a, double lo, double hi) {
    const auto& x = value(a);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::min(hi, std::max(lo, x[i]));
    return push(std::move(out), {a}, [lo, hi](GradTape& t, int self) {
      auto& n = t.nodes_[self];
      auto& gp = t.nodes_[n.parents[0].idx].grad;
      const auto& vp = t.nodes_[n.parents[0].idx].val;
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        if (vp[i] > lo && vp[i] < hi) gp[i] += n.grad[i];
    });
  }

  // Elementwise min; ties route gradient to a.
  Var minimum(Var a, Var b) {
    auto [x, y] = pair_same(a, b);
    std::vector<double> out(x->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min((*x)[i], (*y)[i]);
    return push(std::move(out), {a, b}, [](GradTape& t, int self) {
      auto& n = t.nodes_[self];
      auto& ga = t.nodes_[n.parents[0].idx].grad;
      auto& gb = t.nodes_[n.parents[1].idx].grad;
      const auto& va = t.nodes_[n.parents[0].idx].val;
      const auto& vb = t.nodes_[n.parents[1].idx].val;
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        (va[i] <= vb[i] ? ga[i] : gb[i]) += n.grad[i];
    });
  }

  // max(x, 0) elementwise; gradient passes only where x > 0, so the
  // constraint hinge is flat below budget.
  Var hinge(Var a) { return relu(a); }

  Var pick(Var a, int index) {
    check(a);
    const auto& x = nodes_[a.idx].val;
    if (index < 0 || static_cast<std::size_t>(index) >= x.size())
      throw ContractError("pick: index out of range");
    return push({x[index]}, {a}, [index](GradTape& t, int self) {
      auto& n = t.nodes_[self];
      t.nodes_[n.parents[0].idx].grad[index] += n.grad[0];
    });
  }

  // Numerically stable log-softmax.
  Var log_softmax(Var a) {
    const auto& x = value(a);
    if (x.empty()) throw ContractError("log_softmax: empty logits");
    double mx = x[0];
    for (double v : x) mx = std::max(mx, v);
    double lse = 0.0;
    for (double v : x) lse += std::exp(v - mx);
    lse = mx + std::log(lse);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - lse;
    return push(std::move(out), {a}, [](GradTape& t, int self) {
      auto& n = t.nodes_[self];
      auto& gp = t.nodes_[n.parents[0].idx].grad;
      double gsum = 0.0;
      for (double g : n.grad) gsum += g;
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        gp[i] += n.grad[i] - std::exp(n.val[i]) * gsum;
    });
  }

  // Forward value passes through; gradient stops dead. Backbone of the
  // commitment/codebook loss split.
  Var stop_grad(Var a) {
    const auto& x = value(a);
    return push(std::vector<double>(x), {}, nullptr);
  }

  // Forward takes forward_src's value, backward routes the full gradient to
  // grad_src and none to forward_src. Used for hard gates and the quantizer,
  // where the emitted value is discrete but the gradient should behave as if
  // the continuous precursor had been used.
  Var straight_through(Var forward_src, Var grad_src) {
    check(forward_src);
    check(grad_src);
    const auto& f = nodes_[forward_src.idx].val;
    const auto& g = nodes_[grad_src.idx].val;
    if (f.size() != g.size()) throw ContractError("straight_through: size mismatch");
    return push(std::vector<double>(f), {grad_src}, [](GradTape& t, int self) {
      auto& n = t.nodes_[self];
      t.axpy(n.parents[0], n.grad, 1.0);
    });
  }

  // Relaxed binary sample sigma((logit + g1 - g0) / tau) with fixed noise.
  // Differentiable in the logit; the noise pair is recorded at rollout time
  // and replayed here.
  Var gumbel_binary(Var logit, double tau, double g0, double g1) {
    check(logit);
    if (nodes_[logit.idx].val.size() != 1) throw ContractError("gumbel_binary: logit must be scalar");
    if (tau <= 0.0) throw ContractError("gumbel_binary: tau must be positive");
    double s = sigmoid_val((nodes_[logit.idx].val[0] + g1 - g0) / tau);
    return push({s}, {logit}, [tau](GradTape& t, int self) {
      auto& n = t.nodes_[self];
      double s = n.val[0];
      t.nodes_[n.parents[0].idx].grad[0] += n.grad[0] * s * (1.0 - s) / tau;
    });
  }

  // z = mean + exp(logvar / 2) * eps with fixed noise eps.
  Var gaussian_reparam(Var mean, Var logvar, const std::vector<double>& eps) {
    auto [m, lv] = pair_same(mean, logvar);
    if (eps.size() != m->size()) throw ContractError("gaussian_reparam: eps size mismatch");
    std::vector<double> out(m->size());
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = (*m)[i] + std::exp(0.5 * (*lv)[i]) * eps[i];
    return push(std::move(out), {mean, logvar}, [eps](GradTape& t, int self) {
      auto& n = t.nodes_[self];
      auto& gm = t.nodes_[n.parents[0].idx].grad;
      auto& gl = t.nodes_[n.parents[1].idx].grad;
      const auto& lv = t.nodes_[n.parents[1].idx].val;
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        gm[i] += n.grad[i];
        gl[i] += n.grad[i] * 0.5 * std::exp(0.5 * lv[i]) * eps[i];
      }
    });
  }

  // KL(N(mean, diag exp(logvar)) || N(0, I)) = 1/2 sum(mu^2 + e^lv - 1 - lv).
  Var kl_std_normal(Var mean, Var logvar) {
    auto [m, lv] = pair_same(mean, logvar);
    double acc = 0.0;
    for (std::size_t i = 0; i < m->size(); ++i)
      acc += (*m)[i] * (*m)[i] + std::exp((*lv)[i]) - 1.0 - (*lv)[i];
    return push({0.5 * acc}, {mean, logvar}, [](GradTape& t, int self) {
      auto& n = t.nodes_[self];
      auto& gm = t.nodes_[n.parents[0].idx].grad;
      auto& gl = t.nodes_[n.parents[1].idx].grad;
      const auto& m = t.nodes_[n.parents[0].idx].val;
      const auto& lv = t.nodes_[n.parents[1].idx].val;
      double g = n.grad[0];
      for (std::size_t i = 0; i < m.size(); ++i) {
        gm[i] += g * m[i];
        gl[i] += g * 0.5 * (std::exp(lv[i]) - 1.0);
      }
    });
  }

  static double sigmoid_val(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }

 private:
  struct Node {
    std::vector<double> val;
    std::vector<double> grad;
    std::vector<Var> parents;
    std::function<void(GradTape&, int)> back;
  };

  Var push(std::vector<double> val, std::vector<Var> parents,
           std::function<void(GradTape&, int)> back) {
    Node n;
    n.grad.assign(val.size(), 0.0);
    n.val = std::move(val);
    n.parents = std::move(parents);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  void check(Var v) const {
    if (!v.valid() || static_cast<std::size_t>(v.idx) >= nodes_.size())
      throw ContractError("GradTape: invalid Var");
  }

  std::pair<const std::vector<double>*, const std::vector<double>*> pair_same(Var a, Var b) {
    check(a);
    check(b);
    const auto& x = nodes_[a.idx].val;
    const auto& y = nodes_[b.idx].val;
    if (x.size() != y.size()) throw ContractError("GradTape: operand size mismatch");
    return {&x, &y};
  }

  void axpy(Var target, const std::vector<double>& g, double c) {
    auto& tg = nodes_[target.idx].grad;
    for (std::size_t i = 0; i < g.size(); ++i) tg[i] += c * g[i];
  }

  std::vector<Node> nodes_;
  std::map<std::string, Var> params_;
  bool consumed_ = false;
};

// Runs backward on loss and returns parameter-name-keyed gradients.
inline std::map<std::string, Tensor> backprop_gradients(GradTape& tape, Var loss,
                                                        const ParamSet& params) {
  tape.backward(loss);
  auto raw = tape.gradients();
  std::map<std::string, Tensor> out;
  for (const auto& [name, g] : raw) {
    auto it = params.find(name);
    if (it == params.end()) throw ContractError("backprop_gradients: unknown param " + name);
    out.emplace(name, Tensor(g, it->second.shape));
  }
  return out;
}

}  // namespace gvq
