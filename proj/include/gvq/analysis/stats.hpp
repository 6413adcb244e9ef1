#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gvq/core/error.hpp"
#include "gvq/core/rng.hpp"

namespace gvq {

// Aggregate outcome of one training/evaluation run, the unit of comparison
// across methods and seeds.
struct RunSummary {
  std::string method;
  std::uint64_t seed = 0;
  double success_rate = 0.0;
  double bits_per_episode = 0.0;
  int episodes = 0;
};

struct EpisodeOutcome {
  bool success = false;
  double send_events = 0.0;
};

// Bits-per-episode from send counts at a fixed per-message price. The token
// price for a K-entry codebook is log2(K); continuous and raw-observation
// payloads pass their own constant instead.
inline RunSummary episode_metrics(const std::vector<EpisodeOutcome>& outcomes,
                                  double bits_per_send) {
  if (outcomes.empty()) throw ContractError("episode_metrics: no episodes");
  if (!(bits_per_send >= 0.0)) throw ContractError("episode_metrics: negative bits per send");
  RunSummary s;
  s.episodes = static_cast<int>(outcomes.size());
  double wins = 0.0, bits = 0.0;
  for (const auto& o : outcomes) {
    if (o.send_events < 0.0) throw ContractError("episode_metrics: negative send count");
    wins += o.success ? 1.0 : 0.0;
    bits += o.send_events * bits_per_send;
  }
  s.success_rate = wins / s.episodes;
  s.bits_per_episode = bits / s.episodes;
  return s;
}

inline RunSummary episode_metrics(const std::vector<EpisodeOutcome>& outcomes, int K) {
  if (K < 2) throw ContractError("episode_metrics: K must be at least 2");
  return episode_metrics(outcomes, std::log2(static_cast<double>(K)));
}

// One method's position in the bandwidth/success plane.
struct ParetoPoint {
  double bandwidth = 0.0;
  double success = 0.0;
  std::string method;
};

namespace detail {

inline void check_pareto_point(const ParetoPoint& p) {
  if (!std::isfinite(p.bandwidth) || !std::isfinite(p.success))
    throw ContractError("pareto: non-finite point");
  if (p.bandwidth < 0.0 || p.success < 0.0) throw ContractError("pareto: negative point");
}

// q dominates p when it is at least as cheap and at least as successful,
// strictly better in one of the two.
inline bool dominates(const ParetoPoint& q, const ParetoPoint& p) {
  return q.bandwidth <= p.bandwidth && q.success >= p.success &&
         (q.bandwidth < p.bandwidth || q.success > p.success);
}

}  // namespace detail

// Non-dominated subset, sorted by bandwidth ascending (ties broken by
// success descending, then method name, for a deterministic order).
inline std::vector<ParetoPoint> pareto_frontier(const std::vector<ParetoPoint>& points) {
  for (const auto& p : points) detail::check_pareto_point(p);
  std::vector<ParetoPoint> out;
  for (const auto& p : points) {
    bool dominated = false;
    for (const auto& q : points)
      if (detail::dominates(q, p)) {
        dominated = true;
        break;
      }
    if (!dominated) out.push_back(p);
  }
  std::sort(out.begin(), out.end(), [](const ParetoPoint& a, const ParetoPoint& b) {
    if (a.bandwidth != b.bandwidth) return a.bandwidth < b.bandwidth;
    if (a.success != b.success) return a.success > b.success;
    return a.method < b.method;
  });
  return out;
}

// Normalized area under the best-success-at-budget step envelope over
// [0, bandwidth_max]. Success is zero below the cheapest point, so the
// result lives in [0,1] whenever success rates do.
inline double pareto_auc(const std::vector<ParetoPoint>& frontier, double bandwidth_max) {
  if (!(bandwidth_max > 0.0)) throw ContractError("pareto_auc: bandwidth_max must be positive");
  for (const auto& p : frontier) detail::check_pareto_point(p);
  for (std::size_t i = 1; i < frontier.size(); ++i)
    if (frontier[i].bandwidth < frontier[i - 1].bandwidth)
      throw ContractError("pareto_auc: frontier not sorted by bandwidth");
  if (!frontier.empty() && frontier.back().bandwidth > bandwidth_max)
    throw ContractError("pareto_auc: bandwidth_max below frontier");

  double area = 0.0;
  double best = 0.0;
  for (std::size_t i = 0; i < frontier.size(); ++i) {
    best = std::max(best, frontier[i].success);
    double hi = (i + 1 < frontier.size()) ? frontier[i + 1].bandwidth : bandwidth_max;
    area += best * (hi - frontier[i].bandwidth);
  }
  return area / bandwidth_max;
}

// Percentile bootstrap interval for the mean.
struct CIResult {
  double estimate = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double level = 0.95;
  int iterations = 1000;
};

namespace detail {

inline double sorted_quantile(const std::vector<double>& sorted, double q) {
  double pos = q * static_cast<double>(sorted.size() - 1);
  std::size_t lo = static_cast<std::size_t>(pos);
  std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  double frac = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace detail

inline CIResult bootstrap_ci(const std::vector<double>& samples, int iterations, double level,
                             RngStream& rng) {
  if (samples.empty()) throw ContractError("bootstrap_ci: no samples");
  if (iterations < 1) throw ContractError("bootstrap_ci: iterations must be positive");
  if (!(level > 0.0 && level < 1.0)) throw ContractError("bootstrap_ci: level must be in (0,1)");

  const std::size_t n = samples.size();
  CIResult r;
  r.level = level;
  r.iterations = iterations;
  double sum = 0.0;
  for (double x : samples) sum += x;
  r.estimate = sum / static_cast<double>(n);

  std::vector<double> means(iterations);
  for (int it = 0; it < iterations; ++it) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += samples[rng.next_u64() % n];
    means[it] = acc / static_cast<double>(n);
  }
  std::sort(means.begin(), means.end());
  double alpha = (1.0 - level) / 2.0;
  r.lower = detail::sorted_quantile(means, alpha);
  r.upper = detail::sorted_quantile(means, 1.0 - alpha);
  // The interval always contains the point estimate.
  r.lower = std::min(r.lower, r.estimate);
  r.upper = std::max(r.upper, r.estimate);
  return r;
}

// Two-sided Welch test with Welch-Satterthwaite degrees of freedom, plus
// Cohen's d on the pooled standard deviation.
struct WelchResult {
  double t = 0.0;
  double dof = 0.0;
  double p = 1.0;
  double cohens_d = 0.0;
};

namespace detail {

// Regularized incomplete beta via the Lentz continued fraction.
inline double betacf(double a, double b, double x) {
  const double eps = 1e-14, fpmin = 1e-300;
  double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < fpmin) d = fpmin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 300; ++m) {
    int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < fpmin) d = fpmin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < fpmin) d = fpmin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < eps) break;
  }
  return h;
}

inline double ibeta_reg(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  if (x < (a + 1.0) / (a + b + 2.0)) {
    double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                      a * std::log(x) + b * std::log(1.0 - x);
    return std::exp(ln_front) * betacf(a, b, x) / a;
  }
  return 1.0 - ibeta_reg(b, a, 1.0 - x);
}

inline double sample_mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double sample_var(const std::vector<double>& v, double mean) {
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return s / static_cast<double>(v.size() - 1);
}

}  // namespace detail

inline WelchResult welch_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2)
    throw ContractError("welch_t_test: each group needs at least two samples");
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  double ma = detail::sample_mean(a), mb = detail::sample_mean(b);
  double va = detail::sample_var(a, ma), vb = detail::sample_var(b, mb);

  WelchResult r;
  if (va == 0.0 && vb == 0.0) {
    if (ma != mb) throw ContractError("welch_t_test: zero variance with unequal means");
    r.t = 0.0;
    r.dof = na + nb - 2.0;
    r.p = 1.0;
    r.cohens_d = 0.0;
    return r;
  }

  double sea = va / na, seb = vb / nb;
  double se = std::sqrt(sea + seb);
  r.t = (ma - mb) / se;
  r.dof = (sea + seb) * (sea + seb) /
          (sea * sea / (na - 1.0) + seb * seb / (nb - 1.0));
  double x = r.dof / (r.dof + r.t * r.t);
  r.p = detail::ibeta_reg(r.dof / 2.0, 0.5, x);
  double pooled = std::sqrt(((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0));
  r.cohens_d = pooled > 0.0 ? (ma - mb) / pooled : 0.0;
  return r;
}

// Plug-in mutual information and the preservation ratio of the discrete
// message relative to the continuous latent.
struct MiRatio {
  double i_sm = 0.0;  // bits between observation cell and token
  double i_sz = 0.0;  // bits between observation cell and binned latent
  double rho = 0.0;
  bool defined = false;  // false when the latent carries ~no information
};

namespace detail {

// Joint plug-in MI in bits over two aligned discrete id sequences.
inline double discrete_mi_bits(const std::vector<int>& xs, const std::vector<int>& ys) {
  if (xs.size() != ys.size() || xs.empty()) throw ContractError("discrete_mi: misaligned ids");
  const double n = static_cast<double>(xs.size());
  std::map<int, double> px, py;
  std::map<std::pair<int, int>, double> pxy;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    px[xs[i]] += 1.0;
    py[ys[i]] += 1.0;
    pxy[{xs[i], ys[i]}] += 1.0;
  }
  double mi = 0.0;
  for (const auto& [k, c] : pxy) {
    double pj = c / n;
    mi += pj * std::log2(pj * n * n / (px[k.first] * py[k.second]));
  }
  return std::max(0.0, mi);
}

// Equal-mass bin edges: values at the interior rank cuts of the sorted
// sample. Ties collapse into one side, which keeps identical values in the
// same bin.
inline std::vector<double> equal_mass_edges(std::vector<double> values, int bins) {
  std::sort(values.begin(), values.end());
  std::vector<double> edges;
  const std::size_t n = values.size();
  for (int i = 1; i < bins; ++i)
    edges.push_back(values[std::min(n - 1, i * n / static_cast<std::size_t>(bins))]);
  return edges;
}

inline int bin_index(const std::vector<double>& edges, double v) {
  int b = 0;
  for (double e : edges)
    if (v >= e) ++b;
  return b;
}

}  // namespace detail

inline MiRatio info_preservation_ratio(const std::vector<std::vector<double>>& observations,
                                       const std::vector<std::vector<double>>& latents,
                                       const std::vector<int>& tokens, int bins) {
  if (observations.size() != latents.size() || latents.size() != tokens.size())
    throw ContractError("info_preservation_ratio: misaligned inputs");
  if (observations.size() < 500)
    throw ContractError("info_preservation_ratio: need at least 500 samples");
  if (bins < 2) throw ContractError("info_preservation_ratio: bins must be at least 2");
  for (const auto& z : latents)
    if (z.empty()) throw ContractError("info_preservation_ratio: empty latent");

  const std::size_t n = observations.size();

  // Observation cells: exact-match ids. The observations are discrete grids,
  // so equality is the natural cell structure.
  std::map<std::vector<double>, int> cell_of;
  std::vector<int> s_ids(n);
  for (std::size_t i = 0; i < n; ++i)
    s_ids[i] = cell_of.try_emplace(observations[i], static_cast<int>(cell_of.size()))
                   .first->second;

  // Latent cells: equal-mass bins on the first two coordinates.
  int coords = std::min<std::size_t>(2, latents[0].size());
  std::vector<std::vector<double>> edge_sets;
  for (int c = 0; c < coords; ++c) {
    std::vector<double> col(n);
    for (std::size_t i = 0; i < n; ++i) col[i] = latents[i][c];
    edge_sets.push_back(detail::equal_mass_edges(std::move(col), bins));
  }
  std::vector<int> z_ids(n);
  for (std::size_t i = 0; i < n; ++i) {
    int id = 0;
    for (int c = 0; c < coords; ++c)
      id = id * (bins + 1) + detail::bin_index(edge_sets[c], latents[i][c]);
    z_ids[i] = id;
  }

  MiRatio r;
  r.i_sm = detail::discrete_mi_bits(s_ids, tokens);
  r.i_sz = detail::discrete_mi_bits(s_ids, z_ids);
  r.defined = r.i_sz >= 1e-6;
  r.rho = r.defined ? r.i_sm / r.i_sz : 0.0;
  return r;
}

}  // namespace gvq
