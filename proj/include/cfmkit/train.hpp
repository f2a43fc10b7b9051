#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <functional>

#include "cfmkit/inference.hpp"
#include "cfmkit/model.hpp"
#include "cfmkit/spectrum.hpp"

namespace cfmkit {

struct TrainingInstance {
  std::string id;
  Molecule root;  // protonated, +1
  FragmentationGraph graph;
  std::array<Spectrum, 3> spectra;  // low / med / high, heights summing to 100
};

// Instance plus its cached per-edge feature vectors.
struct PreparedInstance {
  const TrainingInstance* src = nullptr;
  std::vector<SparseFeatureVector> phis;
};

inline std::vector<PreparedInstance> prepare_instances(
    const std::vector<TrainingInstance>& instances, const FeatureLayout& layout,
    int n_threads = 1) {
  std::vector<PreparedInstance> out(instances.size());
  auto work = [&](size_t begin, size_t step) {
    for (size_t i = begin; i < instances.size(); i += step) {
      out[i].src = &instances[i];
      out[i].phis = featurize_graph(instances[i].graph, layout);
    }
  };
  if (n_threads <= 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(work, t, n_threads);
    for (auto& t : pool) t.join();
  }
  return out;
}

// Expected transition counts for one molecule: nu over edges and self-loops.
struct InstanceStats {
  std::vector<double> edge_count;
  std::vector<double> self_count;
};

struct EStepResult {
  std::vector<InstanceStats> per_instance;
  int skipped_peaks = 0;         // peaks with no explaining fragment
  double skipped_intensity = 0;  // their total height
};

// Accumulates h-weighted pairwise posteriors over every peak of the chosen
// energy's spectrum, summed across all chain steps.
inline EStepResult e_step_se(const std::vector<PreparedInstance>& prepared,
                             const ParamVector& w, int d, int energy,
                             const ModelConfig& config, int n_threads = 1) {
  EStepResult res;
  res.per_instance.resize(prepared.size());
  std::vector<int> skipped(prepared.size(), 0);
  std::vector<double> skipped_h(prepared.size(), 0.0);

  auto work = [&](size_t begin, size_t step) {
    for (size_t i = begin; i < prepared.size(); i += step) {
      const auto& p = prepared[i];
      const FragmentationGraph& g = p.src->graph;
      InstanceStats& st = res.per_instance[i];
      st.edge_count.assign(g.edges.size(), 0.0);
      st.self_count.assign(g.fragments.size(), 0.0);
      auto rows = build_transition_table(g, p.phis, w);
      for (const Peak& peak : p.src->spectra[energy]) {
        ChainBelief belief = pairwise_posteriors(g, rows, d, peak.mass, config);
        if (belief.no_support) {
          ++skipped[i];
          skipped_h[i] += peak.height;
          continue;
        }
        for (int t = 0; t < d; ++t) {
          for (size_t e = 0; e < g.edges.size(); ++e)
            st.edge_count[e] += peak.height * belief.edge_joint[t][e];
          for (size_t f = 0; f < g.fragments.size(); ++f)
            st.self_count[f] += peak.height * belief.self_joint[t][f];
        }
      }
    }
  };
  if (n_threads <= 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(work, t, n_threads);
    for (auto& t : pool) t.join();
  }
  for (size_t i = 0; i < prepared.size(); ++i) {
    res.skipped_peaks += skipped[i];
    res.skipped_intensity += skipped_h[i];
  }
  return res;
}

// Q = sum nu log rho minus the l2 penalty (bias unregularized).
inline double q_value(const EStepResult& stats, const std::vector<PreparedInstance>& prepared,
                      const ParamVector& w, double lambda) {
  double q = 0.0;
  for (size_t i = 0; i < prepared.size(); ++i) {
    const auto& p = prepared[i];
    const auto& st = stats.per_instance[i];
    const FragmentationGraph& g = p.src->graph;
    for (size_t fid = 0; fid < g.fragments.size(); ++fid) {
      if (st.self_count[fid] == 0.0 && g.children_of[fid].empty()) continue;
      TransitionRow row = transition_probs(g, p.phis, static_cast<int>(fid), w);
      bool need = st.self_count[fid] > 0.0;
      for (size_t c = 0; c < row.edge_indices.size() && !need; ++c)
        need = st.edge_count[row.edge_indices[c]] > 0.0;
      if (!need) continue;
      if (st.self_count[fid] > 0.0) q += st.self_count[fid] * std::log(row.self_prob);
      for (size_t c = 0; c < row.edge_indices.size(); ++c) {
        double nu = st.edge_count[row.edge_indices[c]];
        if (nu > 0.0) q += nu * std::log(row.prob[c]);
      }
    }
  }
  for (const auto& [idx, v] : w.w)
    if (idx != FeatureLayout::kBias) q -= lambda * v * v;
  return q;
}

// Gradient of Q: per row, (nu_ij - nu_i rho_ij) Phi_ij summed over children,
// minus 2 lambda w off the bias.
inline std::unordered_map<long long, double> q_gradient(
    const EStepResult& stats, const std::vector<PreparedInstance>& prepared,
    const ParamVector& w, double lambda) {
  std::unordered_map<long long, double> grad;
  for (size_t i = 0; i < prepared.size(); ++i) {
    const auto& p = prepared[i];
    const auto& st = stats.per_instance[i];
    const FragmentationGraph& g = p.src->graph;
    for (size_t fid = 0; fid < g.fragments.size(); ++fid) {
      if (g.children_of[fid].empty()) continue;
      TransitionRow row = transition_probs(g, p.phis, static_cast<int>(fid), w);
      double nu_total = st.self_count[fid];
      for (size_t c = 0; c < row.edge_indices.size(); ++c)
        nu_total += st.edge_count[row.edge_indices[c]];
      if (nu_total == 0.0) continue;
      for (size_t c = 0; c < row.edge_indices.size(); ++c) {
        double coeff = st.edge_count[row.edge_indices[c]] - nu_total * row.prob[c];
        if (coeff == 0.0) continue;
        for (long long idx : p.phis[row.edge_indices[c]].active_indices) grad[idx] += coeff;
      }
    }
  }
  for (const auto& [idx, v] : w.w)
    if (idx != FeatureLayout::kBias && v != 0.0) grad[idx] -= 2.0 * lambda * v;
  return grad;
}

struct GdConfig {
  int max_iters = 200;
  double grad_tol = 1e-5;
  double init_step = 1.0;
  double beta = 0.5;    // backtracking shrink factor
  double c1 = 1e-4;     // Armijo constant
  int max_backtracks = 40;
};

// Gradient ascent with Armijo backtracking; never returns a worse Q.
inline ParamVector m_step(const EStepResult& stats,
                          const std::vector<PreparedInstance>& prepared, ParamVector w,
                          double lambda, const GdConfig& gd = GdConfig{}) {
  double q = q_value(stats, prepared, w, lambda);
  double step = gd.init_step;
  for (int iter = 0; iter < gd.max_iters; ++iter) {
    auto grad = q_gradient(stats, prepared, w, lambda);
    double gnorm2 = 0.0;
    for (const auto& [idx, gv] : grad) gnorm2 += gv * gv;
    if (std::sqrt(gnorm2) < gd.grad_tol) break;
    bool accepted = false;
    for (int bt = 0; bt < gd.max_backtracks; ++bt) {
      ParamVector trial = w;
      for (const auto& [idx, gv] : grad) trial.w[idx] += step * gv;
      double q_trial = q_value(stats, prepared, trial, lambda);
      if (q_trial >= q + gd.c1 * step * gnorm2) {
        w = std::move(trial);
        q = q_trial;
        accepted = true;
        step *= 2.0;  // optimistic growth, re-shrunk by the next search
        break;
      }
      step *= gd.beta;
    }
    if (!accepted) break;
  }
  return w;
}

// Direct evaluation of the peak likelihood (Eq. 3 style): each peak's
// probability is the forward marginal at F_d pushed through the Gaussian
// observation, h-weighted in log space.
inline double data_log_likelihood(const std::vector<PreparedInstance>& prepared,
                                  const ParamVector& w, int d, int energy,
                                  const ModelConfig& config) {
  double ll = 0.0;
  for (const auto& p : prepared) {
    const FragmentationGraph& g = p.src->graph;
    auto rows = build_transition_table(g, p.phis, w);
    auto mu = forward_marginal(g, rows, d);
    for (const Peak& peak : p.src->spectra[energy]) {
      double lik = 0.0;
      for (size_t j = 0; j < g.fragments.size(); ++j) {
        double mass = g.fragments[j].mass;
        lik += mu[j] * observe_density(peak.mass, mass, config.sigma(mass));
      }
      if (lik > 0.0) ll += peak.height * std::log(lik);
    }
  }
  return ll;
}

struct EmIteration {
  int iter = 0;
  double q = 0.0;             // expected complete-data objective after the M-step
  double log_likelihood = 0;  // direct Eq. 3 evaluation
  double regularized_ll = 0;  // log_likelihood minus the l2 penalty
  double grad_norm = 0.0;
  int skipped_peaks = 0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EmIteration> iterations;
  std::string stop_reason;
};

struct EmConfig {
  ModelConfig model;
  FeatureLayout layout;
  int max_em_iters = 50;
  double em_tol = 1e-4;  // relative change of the regularized log-likelihood
  GdConfig gd;
  int n_threads = 1;
  double init_bias = -1.0;  // mild prior toward self-transitions
  // Resume point: initial weights instead of the bias prior (1 block for SE,
  // 3 for CE). Empty means a fresh start.
  std::vector<ParamVector> init_blocks;
  // Called after every M-step with the iteration index and a model snapshot.
  std::function<void(int, const Model&)> checkpoint;
};

namespace detail {

inline double l2_penalty(const ParamVector& w, double lambda) {
  double p = 0.0;
  for (const auto& [idx, v] : w.w)
    if (idx != FeatureLayout::kBias) p += lambda * v * v;
  return p;
}

inline double grad_norm_of(const std::unordered_map<long long, double>& g) {
  double n = 0.0;
  for (const auto& [idx, v] : g) n += v * v;
  return std::sqrt(n);
}

}  // namespace detail

// Single-energy EM: alternate exact E-steps with gradient-ascent M-steps
// until the regularized likelihood stalls.
inline std::pair<ParamVector, TrainReport> em_train_se(
    const std::vector<TrainingInstance>& instances, int energy, const EmConfig& config) {
  if (instances.empty()) throw NoTrainingData("no instances for SE training");
  auto prepared = prepare_instances(instances, config.layout, config.n_threads);
  const int d = config.model.depth;
  const double lambda = config.model.lambda;

  ParamVector w;
  w.w[FeatureLayout::kBias] = config.init_bias;
  if (!config.init_blocks.empty()) w.w = config.init_blocks[0].w;
  TrainReport report;
  double prev_obj = 0.0;
  for (int iter = 0; iter < config.max_em_iters; ++iter) {
    auto t0 = std::chrono::steady_clock::now();
    EStepResult stats = e_step_se(prepared, w, d, energy, config.model, config.n_threads);
    w = m_step(stats, prepared, w, lambda, config.gd);

    EmIteration it;
    it.iter = iter;
    it.q = q_value(stats, prepared, w, lambda);
    it.log_likelihood = data_log_likelihood(prepared, w, d, energy, config.model);
    it.regularized_ll = it.log_likelihood - detail::l2_penalty(w, lambda);
    it.grad_norm = detail::grad_norm_of(q_gradient(stats, prepared, w, lambda));
    it.skipped_peaks = stats.skipped_peaks;
    it.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.iterations.push_back(it);
    if (config.checkpoint) {
      Model snapshot = make_model(config.model, config.layout);
      snapshot.blocks[0].w = w.w;
      config.checkpoint(iter, snapshot);
    }

    if (iter > 0) {
      double denom = std::max(1.0, std::abs(prev_obj));
      if (std::abs(it.regularized_ll - prev_obj) / denom < config.em_tol) {
        report.stop_reason = "converged";
        break;
      }
    }
    prev_obj = it.regularized_ll;
  }
  if (report.stop_reason.empty()) report.stop_reason = "max iterations";
  return {std::move(w), std::move(report)};
}

// Combined-energy E-step: one IPFP fit per molecule over the full-depth
// chain; nu terms are split by step range into the three energy blocks.
inline std::array<EStepResult, 3> e_step_ce(const std::vector<PreparedInstance>& prepared,
                                            const std::array<ParamVector, 3>& blocks,
                                            const ModelConfig& config, int n_threads = 1,
                                            int* nonconverged = nullptr) {
  std::array<EStepResult, 3> res;
  for (auto& r : res) r.per_instance.resize(prepared.size());
  std::vector<int> failed(prepared.size(), 0);

  const int d_l = config.depth_low, d_m = config.depth_med, d_h = config.depth_high;
  auto work = [&](size_t begin, size_t step) {
    for (size_t i = begin; i < prepared.size(); i += step) {
      const auto& p = prepared[i];
      const FragmentationGraph& g = p.src->graph;
      for (int b = 0; b < 3; ++b) {
        res[b].per_instance[i].edge_count.assign(g.edges.size(), 0.0);
        res[b].per_instance[i].self_count.assign(g.fragments.size(), 0.0);
      }
      auto rows_l = build_transition_table(g, p.phis, blocks[0]);
      auto rows_m = build_transition_table(g, p.phis, blocks[1]);
      auto rows_h = build_transition_table(g, p.phis, blocks[2]);
      IpfpResult fit;
      try {
        fit = ipfp_marginal_fit(g, rows_l, rows_m, rows_h, p.src->spectra[0],
                                p.src->spectra[1], p.src->spectra[2], config);
      } catch (const NonConvergence&) {
        failed[i] = 1;
        continue;
      }
      // total spectrum intensity weights the molecule, matching the SE scale
      double weight = 0.0;
      for (const auto& s : p.src->spectra) weight += total_intensity(s);
      weight /= 3.0;
      for (int t = 1; t <= d_h; ++t) {
        int b = t <= d_l ? 0 : t <= d_m ? 1 : 2;
        auto& st = res[b].per_instance[i];
        for (size_t e = 0; e < g.edges.size(); ++e)
          st.edge_count[e] += weight * fit.belief.edge_joint[t - 1][e];
        for (size_t f = 0; f < g.fragments.size(); ++f)
          st.self_count[f] += weight * fit.belief.self_joint[t - 1][f];
      }
    }
  };
  if (n_threads <= 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(work, t, n_threads);
    for (auto& t : pool) t.join();
  }
  if (nonconverged) {
    *nonconverged = 0;
    for (int f : failed) *nonconverged += f;
  }
  return res;
}

// Per-energy data likelihood under the pieced CE chain.
inline double data_log_likelihood_ce(const std::vector<PreparedInstance>& prepared,
                                     const std::array<ParamVector, 3>& blocks, int energy,
                                     const ModelConfig& config) {
  const int d_l = config.depth_low, d_m = config.depth_med, d_h = config.depth_high;
  const int depth = energy == 0 ? d_l : energy == 1 ? d_m : d_h;
  double ll = 0.0;
  for (const auto& p : prepared) {
    const FragmentationGraph& g = p.src->graph;
    auto rows_l = build_transition_table(g, p.phis, blocks[0]);
    auto rows_m = build_transition_table(g, p.phis, blocks[1]);
    auto rows_h = build_transition_table(g, p.phis, blocks[2]);
    ChainSpec spec;
    spec.g = &g;
    for (int t = 1; t <= depth; ++t)
      spec.step_rows.push_back(t <= d_l ? &rows_l : t <= d_m ? &rows_m : &rows_h);
    auto mu = run_chain(spec).marginals[depth];
    for (const Peak& peak : p.src->spectra[energy]) {
      double lik = 0.0;
      for (size_t j = 0; j < g.fragments.size(); ++j) {
        double mass = g.fragments[j].mass;
        lik += mu[j] * observe_density(peak.mass, mass, config.sigma(mass));
      }
      if (lik > 0.0) ll += peak.height * std::log(lik);
    }
  }
  return ll;
}

// Combined-energy EM with three parallel M-steps.
inline std::pair<Model, TrainReport> em_train_ce(const std::vector<TrainingInstance>& instances,
                                                 const EmConfig& config) {
  if (instances.empty()) throw NoTrainingData("no instances for CE training");
  ModelConfig mc = config.model;
  mc.ce = true;
  if (!(mc.depth_low < mc.depth_med && mc.depth_med < mc.depth_high))
    throw NoTrainingData("CE depths must increase: d_L < d_M < d_H");
  auto prepared = prepare_instances(instances, config.layout, config.n_threads);
  const double lambda = mc.lambda;

  Model model = make_model(mc, config.layout);
  std::array<ParamVector, 3> blocks;
  for (int b = 0; b < 3; ++b) {
    blocks[b].tag = model.blocks[b].tag;
    blocks[b].w[FeatureLayout::kBias] = config.init_bias;
    if (config.init_blocks.size() == 3) blocks[b].w = config.init_blocks[b].w;
  }

  TrainReport report;
  double prev_obj = 0.0;
  for (int iter = 0; iter < config.max_em_iters; ++iter) {
    auto t0 = std::chrono::steady_clock::now();
    int nonconverged = 0;
    auto stats = e_step_ce(prepared, blocks, mc, config.n_threads, &nonconverged);
    for (int b = 0; b < 3; ++b)
      blocks[b] = m_step(stats[b], prepared, blocks[b], lambda, config.gd);

    EmIteration it;
    it.iter = iter;
    for (int b = 0; b < 3; ++b) {
      it.q += q_value(stats[b], prepared, blocks[b], lambda);
      it.log_likelihood += data_log_likelihood_ce(prepared, blocks, b, mc);
      it.regularized_ll -= detail::l2_penalty(blocks[b], lambda);
      it.grad_norm += detail::grad_norm_of(q_gradient(stats[b], prepared, blocks[b], lambda));
    }
    it.regularized_ll += it.log_likelihood;
    it.skipped_peaks = nonconverged;
    it.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.iterations.push_back(it);
    if (config.checkpoint) {
      Model snapshot = model;
      for (int b = 0; b < 3; ++b) snapshot.blocks[b].w = blocks[b].w;
      config.checkpoint(iter, snapshot);
    }

    if (iter > 0) {
      double denom = std::max(1.0, std::abs(prev_obj));
      if (std::abs(it.regularized_ll - prev_obj) / denom < config.em_tol) {
        report.stop_reason = "converged";
        break;
      }
    }
    prev_obj = it.regularized_ll;
  }
  if (report.stop_reason.empty()) report.stop_reason = "max iterations";
  for (int b = 0; b < 3; ++b) model.blocks[b] = blocks[b];
  return {std::move(model), std::move(report)};
}

}  // namespace cfmkit
