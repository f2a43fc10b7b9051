#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "cfmkit/model.hpp"
#include "cfmkit/spectrum.hpp"

namespace cfmkit {

// Full transition table: one softmax row per fragment.
inline std::vector<TransitionRow> build_transition_table(
    const FragmentationGraph& g, const std::vector<SparseFeatureVector>& edge_phis,
    const ParamVector& w) {
  std::vector<TransitionRow> rows;
  rows.reserve(g.fragments.size());
  for (size_t fid = 0; fid < g.fragments.size(); ++fid)
    rows.push_back(transition_probs(g, edge_phis, static_cast<int>(fid), w));
  return rows;
}

// Posterior beliefs over the latent chain F_0..F_d.
struct ChainBelief {
  // marginals[t][fragment], t = 0..d
  std::vector<std::vector<double>> marginals;
  // edge_joint[t-1][edge index] = Pr(F_{t-1} = parent(e), F_t = child(e))
  std::vector<std::vector<double>> edge_joint;
  // self_joint[t-1][fragment] = Pr(F_{t-1} = f, F_t = f)
  std::vector<std::vector<double>> self_joint;
  bool no_support = false;
};

// Chain description: step t (1-based) uses transition rows step_rows[t-1];
// node_pot[t] (if non-empty) multiplies the potential of F_t.
struct ChainSpec {
  const FragmentationGraph* g = nullptr;
  std::vector<const std::vector<TransitionRow>*> step_rows;
  std::vector<std::vector<double>> node_pot;
};

// Exact forward-backward on the chain. Potentials are max-normalized per
// step, so only relative magnitudes matter; a total collapse to zero sets
// no_support.
inline ChainBelief run_chain(const ChainSpec& spec) {
  const FragmentationGraph& g = *spec.g;
  const int n = static_cast<int>(g.fragments.size());
  const int d = static_cast<int>(spec.step_rows.size());
  ChainBelief out;

  auto pot = [&](int t, int j) -> double {
    if (t >= static_cast<int>(spec.node_pot.size()) || spec.node_pot[t].empty()) return 1.0;
    return spec.node_pot[t][j];
  };
  auto normalize = [](std::vector<double>& v) -> double {
    double mx = 0.0;
    for (double x : v) mx = std::max(mx, x);
    if (mx > 0.0)
      for (double& x : v) x /= mx;
    return mx;
  };

  // forward: alpha[t][j] proportional to Pr(F_t = j, potentials 0..t)
  std::vector<std::vector<double>> alpha(d + 1, std::vector<double>(n, 0.0));
  alpha[0][g.root_id] = pot(0, g.root_id);
  if (normalize(alpha[0]) == 0.0) {
    out.no_support = true;
    return out;
  }
  for (int t = 1; t <= d; ++t) {
    const auto& rows = *spec.step_rows[t - 1];
    for (int i = 0; i < n; ++i) {
      double a = alpha[t - 1][i];
      if (a == 0.0) continue;
      alpha[t][i] += a * rows[i].self_prob;
      for (size_t c = 0; c < rows[i].child_ids.size(); ++c)
        alpha[t][rows[i].child_ids[c]] += a * rows[i].prob[c];
    }
    for (int j = 0; j < n; ++j) alpha[t][j] *= pot(t, j);
    if (normalize(alpha[t]) == 0.0) {
      out.no_support = true;
      return out;
    }
  }

  // backward: beta[t][j] proportional to Pr(potentials t+1..d | F_t = j)
  std::vector<std::vector<double>> beta(d + 1, std::vector<double>(n, 1.0));
  for (int t = d - 1; t >= 0; --t) {
    const auto& rows = *spec.step_rows[t];
    for (int i = 0; i < n; ++i) {
      double b = rows[i].self_prob * pot(t + 1, i) * beta[t + 1][i];
      for (size_t c = 0; c < rows[i].child_ids.size(); ++c) {
        int j = rows[i].child_ids[c];
        b += rows[i].prob[c] * pot(t + 1, j) * beta[t + 1][j];
      }
      beta[t][i] = b;
    }
    normalize(beta[t]);
  }

  // singleton marginals
  out.marginals.assign(d + 1, std::vector<double>(n, 0.0));
  for (int t = 0; t <= d; ++t) {
    double z = 0.0;
    for (int j = 0; j < n; ++j) {
      out.marginals[t][j] = alpha[t][j] * beta[t][j];
      z += out.marginals[t][j];
    }
    if (z == 0.0) {
      out.no_support = true;
      return out;
    }
    for (int j = 0; j < n; ++j) out.marginals[t][j] /= z;
  }

  // pairwise joints per step
  out.edge_joint.assign(d, std::vector<double>(g.edges.size(), 0.0));
  out.self_joint.assign(d, std::vector<double>(n, 0.0));
  for (int t = 1; t <= d; ++t) {
    const auto& rows = *spec.step_rows[t - 1];
    double z = 0.0;
    for (int i = 0; i < n; ++i) {
      double a = alpha[t - 1][i];
      if (a == 0.0) continue;
      double sj = a * rows[i].self_prob * pot(t, i) * beta[t][i];
      out.self_joint[t - 1][i] = sj;
      z += sj;
      for (size_t c = 0; c < rows[i].child_ids.size(); ++c) {
        int j = rows[i].child_ids[c];
        double ej = a * rows[i].prob[c] * pot(t, j) * beta[t][j];
        out.edge_joint[t - 1][rows[i].edge_indices[c]] = ej;
        z += ej;
      }
    }
    for (double& x : out.edge_joint[t - 1]) x /= z;
    for (double& x : out.self_joint[t - 1]) x /= z;
  }
  return out;
}

// Marginal distribution over fragments at F_d with no evidence.
inline std::vector<double> forward_marginal(const FragmentationGraph& g,
                                            const std::vector<TransitionRow>& rows, int d) {
  ChainSpec spec;
  spec.g = &g;
  spec.step_rows.assign(d, &rows);
  return run_chain(spec).marginals[d];
}

// Posterior over the chain given one peak mass observed at F_d. The
// observation weight of fragment j is the Gaussian density at the peak mass
// with the per-fragment sigma of the config.
inline ChainBelief pairwise_posteriors(const FragmentationGraph& g,
                                       const std::vector<TransitionRow>& rows, int d,
                                       double peak_mass, const ModelConfig& config) {
  ChainSpec spec;
  spec.g = &g;
  spec.step_rows.assign(d, &rows);
  spec.node_pot.assign(d + 1, {});
  spec.node_pot[d].resize(g.fragments.size());
  for (size_t j = 0; j < g.fragments.size(); ++j) {
    double mass = g.fragments[j].mass;
    spec.node_pot[d][j] = observe_density(peak_mass, mass, config.sigma(mass));
  }
  return run_chain(spec);
}

// --- IPFP for the combined-energy model ---

// Fragments grouped into mass bins under the peak-match tolerance: a greedy
// sweep over sorted masses opens a new bin whenever the next mass is farther
// than the tolerance from the bin's first mass.
struct MassBins {
  std::vector<int> frag_bin;        // fragment id -> bin id
  std::vector<double> bin_mass;     // first (lowest) mass of each bin
  int count = 0;
};

inline MassBins make_mass_bins(const FragmentationGraph& g, const ModelConfig& config) {
  MassBins bins;
  bins.frag_bin.assign(g.fragments.size(), -1);
  std::vector<int> order(g.fragments.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return g.fragments[a].mass < g.fragments[b].mass; });
  for (int fid : order) {
    double m = g.fragments[fid].mass;
    if (bins.count == 0 || m - bins.bin_mass[bins.count - 1] > config.mass_tolerance(m)) {
      bins.bin_mass.push_back(m);
      ++bins.count;
    }
    bins.frag_bin[fid] = bins.count - 1;
  }
  return bins;
}

// Per-bin target probabilities from one spectrum. Peaks farther than the
// tolerance from every bin, and peaks on bins the chain cannot reach, are
// dropped and the rest renormalized; the dropped fraction is reported.
struct BinnedTarget {
  std::vector<double> target;  // per bin, sums to 1 over supported bins
  double dropped = 0.0;        // fraction of raw intensity discarded
};

inline BinnedTarget bin_spectrum(const Spectrum& s, const MassBins& bins,
                                 const std::vector<double>& reachable_bin_prob,
                                 const ModelConfig& config) {
  BinnedTarget out;
  out.target.assign(bins.count, 0.0);
  double kept = 0.0, total = 0.0;
  for (const auto& p : s) {
    total += p.height;
    // nearest bin by representative mass
    int best = -1;
    double best_d = 0.0;
    for (int b = 0; b < bins.count; ++b) {
      double d = std::abs(p.mass - bins.bin_mass[b]);
      if (best < 0 || d < best_d) {
        best = b;
        best_d = d;
      }
    }
    if (best < 0 || best_d > config.mass_tolerance(p.mass)) continue;
    if (reachable_bin_prob[best] <= 0.0) continue;
    out.target[best] += p.height;
    kept += p.height;
  }
  if (kept > 0.0)
    for (double& t : out.target) t /= kept;
  out.dropped = total > 0.0 ? 1.0 - kept / total : 1.0;
  return out;
}

struct IpfpResult {
  ChainBelief belief;
  int iterations = 0;       // full constraint cycles executed
  double residual = 0.0;    // max absolute bin-marginal error at the end
  bool averaged = false;    // oscillation remedy was applied
  double dropped[3] = {0.0, 0.0, 0.0};
};

namespace detail {

inline std::vector<double> bin_marginal(const std::vector<double>& frag_marginal,
                                        const MassBins& bins) {
  std::vector<double> out(bins.count, 0.0);
  for (size_t j = 0; j < frag_marginal.size(); ++j) out[bins.frag_bin[j]] += frag_marginal[j];
  return out;
}

}  // namespace detail

// Fits the chain joint so the mass-bin marginals at the three constrained
// depths match the three spectra. Cycles through the constraints; if the
// residual stops improving while alternating, the targets are replaced by the
// average of the marginals achieved during the stalled cycle and the fit is
// re-run once.
inline IpfpResult ipfp_marginal_fit(const FragmentationGraph& g,
                                    const std::vector<TransitionRow>& rows_low,
                                    const std::vector<TransitionRow>& rows_med,
                                    const std::vector<TransitionRow>& rows_high,
                                    const Spectrum& s_low, const Spectrum& s_med,
                                    const Spectrum& s_high, const ModelConfig& config,
                                    int max_iters = 100, double tol = 1e-6) {
  const int d_l = config.depth_low, d_m = config.depth_med, d_h = config.depth_high;
  ChainSpec spec;
  spec.g = &g;
  for (int t = 1; t <= d_h; ++t)
    spec.step_rows.push_back(t <= d_l ? &rows_low : t <= d_m ? &rows_med : &rows_high);
  spec.node_pot.assign(d_h + 1, {});

  MassBins bins = make_mass_bins(g, config);
  const int steps[3] = {d_l, d_m, d_h};
  const Spectrum* spectra[3] = {&s_low, &s_med, &s_high};

  IpfpResult res;

  // reachability under the unconstrained chain, then binned targets
  ChainBelief prior = run_chain(spec);
  std::vector<std::vector<double>> target(3);
  for (int c = 0; c < 3; ++c) {
    auto reach = detail::bin_marginal(prior.marginals[steps[c]], bins);
    BinnedTarget bt = bin_spectrum(*spectra[c], bins, reach, config);
    target[c] = bt.target;
    res.dropped[c] = bt.dropped;
  }

  auto enforce = [&](int c) -> ChainBelief {
    ChainBelief cur = run_chain(spec);
    auto binned = detail::bin_marginal(cur.marginals[steps[c]], bins);
    auto& pot = spec.node_pot[steps[c]];
    if (pot.empty()) pot.assign(g.fragments.size(), 1.0);
    for (size_t j = 0; j < pot.size(); ++j) {
      int b = bins.frag_bin[j];
      double scale = binned[b] > 0.0 ? target[c][b] / binned[b] : 1.0;
      // floor keeps the joint fully supported even under zero targets, so
      // contradictory constraints stall instead of collapsing the chain
      pot[j] *= std::max(scale, 1e-12);
    }
    // keep potentials bounded
    double mx = 0.0;
    for (double p : pot) mx = std::max(mx, p);
    if (mx > 0.0)
      for (double& p : pot) p /= mx;
    return run_chain(spec);
  };

  auto residual_of = [&](const ChainBelief& cur) {
    double r = 0.0;
    for (int c = 0; c < 3; ++c) {
      auto binned = detail::bin_marginal(cur.marginals[steps[c]], bins);
      for (int b = 0; b < bins.count; ++b)
        r = std::max(r, std::abs(binned[b] - target[c][b]));
    }
    return r;
  };

  // returns true on convergence; false after two consecutive non-improving
  // cycles (oscillation/stall) or an exhausted budget
  auto run_fit = [&](int iters_budget) {
    double prev_residual = -1.0;
    int stalled_cycles = 0;
    for (int cycle = 0; cycle < iters_budget; ++cycle) {
      ChainBelief cur;
      for (int c = 0; c < 3; ++c) cur = enforce(c);
      ++res.iterations;
      double residual = residual_of(cur);
      res.residual = residual;
      res.belief = std::move(cur);
      if (residual < tol) return true;
      if (prev_residual >= 0.0 && residual >= prev_residual - 1e-12) {
        if (++stalled_cycles >= 2) return false;
      } else {
        stalled_cycles = 0;
      }
      prev_residual = residual;
    }
    return false;
  };

  if (run_fit(max_iters)) return res;

  // oscillation remedy: run one recording cycle and replace each target with
  // the average of the marginals achieved across the cycle's states
  res.averaged = true;
  std::vector<std::vector<double>> avg(3, std::vector<double>(bins.count, 0.0));
  for (int c = 0; c < 3; ++c) {
    ChainBelief cur = enforce(c);
    for (int cc = 0; cc < 3; ++cc) {
      auto binned = detail::bin_marginal(cur.marginals[steps[cc]], bins);
      for (int b = 0; b < bins.count; ++b) avg[cc][b] += binned[b] / 3.0;
    }
  }
  target = avg;
  if (run_fit(max_iters)) return res;
  throw NonConvergence("ipfp residual " + std::to_string(res.residual) + " after averaging");
}

}  // namespace cfmkit
