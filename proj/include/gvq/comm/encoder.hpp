#pragma once

#include <vector>

#include "gvq/core/mlp.hpp"
#include "gvq/core/rng.hpp"

namespace gvq {

// Observation encoder with mean and log-variance heads packed into one
// output vector of width 2d. The deterministic path is the mean head; the
// stochastic path reparameterizes for the bottleneck loss.
struct EncoderHead {
  MlpSpec spec;
  std::string prefix = "encoder";
  int latent_dim = 64;

  static EncoderHead make(int obs_dim, int hidden_dim, int encoder_hidden, int latent_dim) {
    EncoderHead e;
    e.spec = MlpSpec::hidden(obs_dim + hidden_dim, {encoder_hidden, encoder_hidden}, 2 * latent_dim,
                             Activation::kRelu, Activation::kIdentity);
    e.latent_dim = latent_dim;
    return e;
  }
};

struct EncodeResult {
  std::vector<double> z;
  std::vector<double> mean;
  std::vector<double> log_variance;
  std::vector<double> eps;  // recorded noise, empty when deterministic
};

inline std::vector<double> encoder_input(const std::vector<double>& obs_features,
                                         const std::vector<double>& hidden) {
  std::vector<double> in = obs_features;
  in.insert(in.end(), hidden.begin(), hidden.end());
  return in;
}

inline EncodeResult encode_observation(const ParamSet& params, const EncoderHead& head,
                                       const std::vector<double>& obs_features,
                                       const std::vector<double>& hidden, bool stochastic,
                                       RngStream* rng) {
  std::vector<double> in = encoder_input(obs_features, hidden);
  if (static_cast<int>(in.size()) != head.spec.input_dim())
    throw ConfigError("encode_observation: input dim mismatch");
  if (head.spec.output_dim() != 2 * head.latent_dim)
    throw ConfigError("encode_observation: encoder output must be 2x latent dim");
  auto fwd = mlp_forward(params, head.spec, head.prefix, in);
  EncodeResult r;
  int d = head.latent_dim;
  r.mean.assign(fwd.out.begin(), fwd.out.begin() + d);
  r.log_variance.assign(fwd.out.begin() + d, fwd.out.end());
  if (stochastic) {
    if (!rng) throw ContractError("encode_observation: stochastic mode needs an rng");
    r.eps.resize(d);
    r.z.resize(d);
    for (int i = 0; i < d; ++i) {
      r.eps[i] = rng->normal();
      r.z[i] = r.mean[i] + std::exp(0.5 * r.log_variance[i]) * r.eps[i];
    }
  } else {
    r.z = r.mean;
  }
  return r;
}

}  // namespace gvq
