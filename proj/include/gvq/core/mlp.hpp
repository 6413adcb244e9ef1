#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "gvq/core/rng.hpp"
#include "gvq/core/tape.hpp"
#include "gvq/core/tensor.hpp"

namespace gvq {

enum class Activation { kIdentity, kRelu, kSigmoid, kTanh };

// Fully-connected net: widths includes input and output, acts has one entry
// per weight layer.
struct MlpSpec {
  std::vector<int> widths;
  std::vector<Activation> acts;

  void validate() const {
    if (widths.size() < 2) throw ContractError("MlpSpec: need at least input and output widths");
    if (acts.size() != widths.size() - 1)
      throw ContractError("MlpSpec: one activation per layer required");
    for (int w : widths)
      if (w <= 0) throw ContractError("MlpSpec: widths must be positive");
  }

  int input_dim() const { return widths.front(); }
  int output_dim() const { return widths.back(); }
  int layer_count() const { return static_cast<int>(widths.size()) - 1; }

  // Hidden MLP with uniform activation on hidden layers and a chosen output
  // activation.
  static MlpSpec hidden(int in, std::vector<int> hidden_widths, int out,
                        Activation hidden_act, Activation out_act) {
    MlpSpec s;
    s.widths.push_back(in);
    for (int h : hidden_widths) s.widths.push_back(h);
    s.widths.push_back(out);
    for (std::size_t i = 0; i + 1 < s.widths.size(); ++i)
      s.acts.push_back(i + 2 == s.widths.size() ? out_act : hidden_act);
    s.validate();
    return s;
  }
};

inline std::string mlp_w_name(const std::string& prefix, int layer) {
  return prefix + ".W" + std::to_string(layer);
}
inline std::string mlp_b_name(const std::string& prefix, int layer) {
  return prefix + ".b" + std::to_string(layer);
}

// Xavier-uniform weights, zero biases.
inline void mlp_init(ParamSet& params, const MlpSpec& spec, const std::string& prefix,
                     RngStream& rng) {
  spec.validate();
  for (int l = 0; l < spec.layer_count(); ++l) {
    int in = spec.widths[l], out = spec.widths[l + 1];
    double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    Tensor W = Tensor::zeros({out, in});
    for (double& w : W.data) w = rng.uniform(-limit, limit);
    params[mlp_w_name(prefix, l)] = std::move(W);
    params[mlp_b_name(prefix, l)] = Tensor::zeros({out});
  }
}

inline double apply_act_val(Activation a, double x) {
  switch (a) {
    case Activation::kIdentity: return x;
    case Activation::kRelu: return x > 0.0 ? x : 0.0;
    case Activation::kSigmoid: return GradTape::sigmoid_val(x);
    case Activation::kTanh: return std::tanh(x);
  }
  throw ContractError("apply_act_val: bad activation");
}

struct MlpValueOut {
  std::vector<double> out;
  std::vector<double> out_preact;   // final layer before its activation
  std::vector<double> last_hidden;  // activation feeding the final layer
};

// Value-only forward used during rollouts; no graph is recorded.
inline MlpValueOut mlp_forward(const ParamSet& params, const MlpSpec& spec,
                               const std::string& prefix, const std::vector<double>& input) {
  spec.validate();
  if (static_cast<int>(input.size()) != spec.input_dim())
    throw ContractError("mlp_forward: input dim mismatch for " + prefix);
  MlpValueOut r;
  std::vector<double> cur = input;
  for (int l = 0; l < spec.layer_count(); ++l) {
    auto wi = params.find(mlp_w_name(prefix, l));
    auto bi = params.find(mlp_b_name(prefix, l));
    if (wi == params.end() || bi == params.end())
      throw ContractError("mlp_forward: missing params for " + prefix);
    const Tensor& W = wi->second;
    const Tensor& b = bi->second;
    int rows = spec.widths[l + 1], cols = spec.widths[l];
    std::vector<double> pre(rows);
    for (int r2 = 0; r2 < rows; ++r2) {
      double acc = b.at(r2);
      const double* wrow = W.data.data() + static_cast<std::size_t>(r2) * cols;
      for (int c = 0; c < cols; ++c) acc += wrow[c] * cur[c];
      pre[r2] = acc;
    }
    if (l == spec.layer_count() - 1) {
      r.last_hidden = cur;
      r.out_preact = pre;
    }
    for (int r2 = 0; r2 < rows; ++r2) pre[r2] = apply_act_val(spec.acts[l], pre[r2]);
    cur = std::move(pre);
  }
  r.out = std::move(cur);
  return r;
}

struct MlpTapeOut {
  Var out;
  Var out_preact;
  Var last_hidden;
};

inline Var apply_act_tape(GradTape& t, Activation a, Var x) {
  switch (a) {
    case Activation::kIdentity: return x;
    case Activation::kRelu: return t.relu(x);
    case Activation::kSigmoid: return t.sigmoid(x);
    case Activation::kTanh: return t.tanh_op(x);
  }
  throw ContractError("apply_act_tape: bad activation");
}

// Graph-recording forward. Parameter leaves are memoized per tape, so calling
// this for every transition in a batch accumulates gradients correctly.
inline MlpTapeOut mlp_forward(GradTape& t, const ParamSet& params, const MlpSpec& spec,
                              const std::string& prefix, Var input) {
  spec.validate();
  MlpTapeOut r;
  Var cur = input;
  for (int l = 0; l < spec.layer_count(); ++l) {
    auto wi = params.find(mlp_w_name(prefix, l));
    auto bi = params.find(mlp_b_name(prefix, l));
    if (wi == params.end() || bi == params.end())
      throw ContractError("mlp_forward: missing params for " + prefix);
    Var W = t.param(mlp_w_name(prefix, l), wi->second);
    Var b = t.param(mlp_b_name(prefix, l), bi->second);
    Var pre = t.affine(W, b, cur);
    if (l == spec.layer_count() - 1) {
      r.last_hidden = cur;
      r.out_preact = pre;
    }
    cur = apply_act_tape(t, spec.acts[l], pre);
  }
  r.out = cur;
  return r;
}

}  // namespace gvq
