#pragma once

#include <vector>

#include "gvq/comm/codebook.hpp"
#include "gvq/core/mlp.hpp"

namespace gvq {

struct MessageToken {
  int sender = -1;
  int token_index = 0;
  int send_step = 0;
};

// Receiver side: mean-pool the embeddings of delivered tokens, append the
// sender count, and run the pooled vector through a small MLP. Pooling makes
// the result order-invariant; the count keeps one-vs-many distinguishable.
struct DecoderHead {
  MlpSpec spec;
  std::string prefix = "decoder";
  int pool_dim = 64;  // dimension of pooled payload (= codebook d for tokens)

  static DecoderHead make(int pool_dim, int decoder_hidden, int embed_dim) {
    DecoderHead d;
    d.spec = MlpSpec::hidden(pool_dim + 1, {decoder_hidden, decoder_hidden}, embed_dim,
                             Activation::kRelu, Activation::kIdentity);
    d.pool_dim = pool_dim;
    return d;
  }
};

inline std::vector<double> decoder_input_from_pool(const std::vector<double>& pool, double count) {
  std::vector<double> in = pool;
  in.push_back(count);
  return in;
}

inline std::vector<double> decode_messages(const ParamSet& params, const DecoderHead& head,
                                           const std::vector<MessageToken>& tokens,
                                           const Codebook& cb) {
  if (head.pool_dim != cb.d) throw ConfigError("decode_messages: pool dim != codebook d");
  std::vector<double> pool(cb.d, 0.0);
  for (const auto& tok : tokens) {
    if (tok.token_index < 0 || tok.token_index >= cb.K)
      throw ContractError("decode_messages: token index out of range");
    const double* c = cb.row(tok.token_index);
    for (int i = 0; i < cb.d; ++i) pool[i] += c[i];
  }
  if (!tokens.empty())
    for (double& p : pool) p /= static_cast<double>(tokens.size());
  auto in = decoder_input_from_pool(pool, static_cast<double>(tokens.size()));
  return mlp_forward(params, head.spec, head.prefix, in).out;
}

// Generic continuous-payload variant used by baselines that ship raw vectors
// instead of tokens.
inline std::vector<double> decode_payloads(const ParamSet& params, const DecoderHead& head,
                                           const std::vector<std::vector<double>>& payloads) {
  std::vector<double> pool(head.pool_dim, 0.0);
  for (const auto& p : payloads) {
    if (static_cast<int>(p.size()) != head.pool_dim)
      throw ContractError("decode_payloads: payload dim mismatch");
    for (int i = 0; i < head.pool_dim; ++i) pool[i] += p[i];
  }
  if (!payloads.empty())
    for (double& v : pool) v /= static_cast<double>(payloads.size());
  auto in = decoder_input_from_pool(pool, static_cast<double>(payloads.size()));
  return mlp_forward(params, head.spec, head.prefix, in).out;
}

}  // namespace gvq
