#include <cmath>
#include <random>

#include "doctest.h"

#include "cfmkit/smiles.hpp"
#include "cfmkit/train.hpp"

#include "tinygraph.hpp"

using namespace cfmkit;

namespace {

// wraps a hand-built graph as a one-instance training set
struct TinySet {
  std::vector<TrainingInstance> instances;
  std::vector<PreparedInstance> prepared;
  TinySet(TinyGraph tg, std::array<Spectrum, 3> spectra) {
    TrainingInstance inst;
    inst.id = "tiny";
    inst.graph = std::move(tg.g);
    inst.spectra = std::move(spectra);
    instances.push_back(std::move(inst));
    PreparedInstance p;
    p.src = &instances[0];
    p.phis = std::move(tg.phis);
    prepared.push_back(std::move(p));
  }
};

TrainingInstance real_instance(const std::string& smi, int depth,
                               const std::array<Spectrum, 3>& spectra) {
  TrainingInstance inst;
  inst.id = smi;
  inst.root = protonate_canonical(parse_smiles(smi));
  inst.graph = build_graph(inst.root, depth);
  inst.spectra = spectra;
  return inst;
}

double total_stats(const InstanceStats& st) {
  double t = 0.0;
  for (double x : st.edge_count) t += x;
  for (double x : st.self_count) t += x;
  return t;
}

}  // namespace

TEST_CASE("e_step_se: leaf-only molecule puts h*d on self-transitions") {
  TinySet set(tiny_star(0, {120.0}), {Spectrum{{120.0, 100.0}}, {}, {}});
  ParamVector w;
  auto stats = e_step_se(set.prepared, w, 2, 0, ModelConfig{});
  CHECK(stats.per_instance[0].self_count[0] == doctest::Approx(200.0));
  CHECK(total_stats(stats.per_instance[0]) == doctest::Approx(200.0));
  CHECK(stats.skipped_peaks == 0);
}

TEST_CASE("e_step_se: peak at the child mass crosses the edge exactly once") {
  TinySet set(tiny_star(1, {100.0, 50.0}), {Spectrum{{50.0, 80.0}}, {}, {}});
  ParamVector w;
  auto stats = e_step_se(set.prepared, w, 2, 0, ModelConfig{});
  const auto& st = stats.per_instance[0];
  CHECK(st.edge_count[0] == doctest::Approx(80.0).epsilon(1e-9));
  // two steps total, so self-loops absorb the remaining h
  CHECK(total_stats(st) == doctest::Approx(160.0).epsilon(1e-9));
}

TEST_CASE("e_step_se: unexplainable peaks contribute nothing") {
  TinySet base(tiny_star(1, {100.0, 50.0}), {Spectrum{{50.0, 80.0}}, {}, {}});
  TinySet extra(tiny_star(1, {100.0, 50.0}),
                {Spectrum{{50.0, 80.0}, {300.0, 1e-6}}, {}, {}});
  ParamVector w;
  auto s0 = e_step_se(base.prepared, w, 2, 0, ModelConfig{});
  auto s1 = e_step_se(extra.prepared, w, 2, 0, ModelConfig{});
  CHECK(s1.skipped_peaks == 1);
  CHECK(s1.per_instance[0].edge_count[0] == s0.per_instance[0].edge_count[0]);
  CHECK(s1.per_instance[0].self_count[0] == s0.per_instance[0].self_count[0]);
}

TEST_CASE("e_step_se: sufficient statistics are linear in peak height") {
  Spectrum once = {{50.0, 30.0}, {100.0, 70.0}};
  Spectrum twice = once;
  for (auto& p : twice) p.height *= 2.0;
  TinySet a(tiny_star(2, {100.0, 50.0, 70.0}), {once, {}, {}});
  TinySet b(tiny_star(2, {100.0, 50.0, 70.0}), {twice, {}, {}});
  ParamVector w;
  auto sa = e_step_se(a.prepared, w, 2, 0, ModelConfig{});
  auto sb = e_step_se(b.prepared, w, 2, 0, ModelConfig{});
  for (size_t e = 0; e < sa.per_instance[0].edge_count.size(); ++e)
    CHECK(sb.per_instance[0].edge_count[e] ==
          doctest::Approx(2.0 * sa.per_instance[0].edge_count[e]).epsilon(1e-12));
  for (size_t f = 0; f < sa.per_instance[0].self_count.size(); ++f)
    CHECK(sb.per_instance[0].self_count[f] ==
          doctest::Approx(2.0 * sa.per_instance[0].self_count[f]).epsilon(1e-12));
}

TEST_CASE("q_value/q_gradient: zero stats reduce to the regularizer") {
  TinySet set(tiny_star(2), {Spectrum{}, {}, {}});
  EStepResult zero;
  zero.per_instance.resize(1);
  zero.per_instance[0].edge_count.assign(2, 0.0);
  zero.per_instance[0].self_count.assign(3, 0.0);
  ParamVector w;
  w.w[0] = 3.0;    // bias, unregularized
  w.w[100] = 0.5;
  w.w[101] = -2.0;
  const double lambda = 0.25;
  CHECK(q_value(zero, set.prepared, w, lambda) ==
        doctest::Approx(-lambda * (0.25 + 4.0)));
  auto grad = q_gradient(zero, set.prepared, w, lambda);
  CHECK(grad.count(0) == 0);
  CHECK(grad.at(100) == doctest::Approx(-2.0 * lambda * 0.5));
  CHECK(grad.at(101) == doctest::Approx(-2.0 * lambda * -2.0));
}

TEST_CASE("q_gradient matches central finite differences") {
  std::mt19937 rng(99);
  std::uniform_real_distribution<double> unif(0.1, 5.0);
  std::normal_distribution<double> noise(0.0, 0.7);
  int checked_configs = 0;

  auto check_fd = [&](const EStepResult& stats, const std::vector<PreparedInstance>& prepared,
                      ParamVector w, double lambda, const std::vector<long long>& probe) {
    auto grad = q_gradient(stats, prepared, w, lambda);
    const double eps = 1e-5;
    for (long long idx : probe) {
      ParamVector hi = w, lo = w;
      hi.w[idx] += eps;
      lo.w[idx] -= eps;
      double fd = (q_value(stats, prepared, hi, lambda) -
                   q_value(stats, prepared, lo, lambda)) /
                  (2 * eps);
      double an = grad.count(idx) ? grad.at(idx) : 0.0;
      double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
      CHECK_MESSAGE(std::abs(fd - an) / denom < 1e-4, "index ", idx, " fd=", fd, " an=", an);
    }
    ++checked_configs;
  };

  // hand-built stars with random stats and weights
  for (int trial = 0; trial < 10; ++trial) {
    TinySet set(tiny_star(3, {100.0, 60.0, 50.0, 40.0}), {Spectrum{}, {}, {}});
    EStepResult stats;
    stats.per_instance.resize(1);
    stats.per_instance[0].edge_count = {unif(rng), unif(rng), unif(rng)};
    stats.per_instance[0].self_count = {unif(rng), unif(rng), unif(rng), unif(rng)};
    ParamVector w;
    for (long long idx : {0LL, 100LL, 101LL, 102LL}) w.w[idx] = noise(rng);
    check_fd(stats, set.prepared, w, 0.1 * trial, {0, 100, 101, 102, 555});
  }

  // real graphs, including the quadratic layout
  for (bool quadratic : {false, true}) {
    for (const auto& smi : {"CCO", "CC(=O)O", "NCC(=O)O", "C1CCC1", "CCS", "CCN"}) {
      std::vector<TrainingInstance> insts = {
          real_instance(smi, 2, {Spectrum{{10.0, 1.0}}, {}, {}})};
      FeatureLayout layout;
      layout.quadratic = quadratic;
      auto prepared = prepare_instances(insts, layout);
      const auto& g = insts[0].graph;
      EStepResult stats;
      stats.per_instance.resize(1);
      for (size_t e = 0; e < g.edges.size(); ++e)
        stats.per_instance[0].edge_count.push_back(unif(rng));
      for (size_t f = 0; f < g.fragments.size(); ++f)
        stats.per_instance[0].self_count.push_back(unif(rng));
      ParamVector w;
      std::vector<long long> probe = {0};
      for (const auto& phi : prepared[0].phis)
        for (long long idx : phi.active_indices)
          if (idx != 0 && w.w.size() < 25) {
            w.w[idx] = noise(rng);
            probe.push_back(idx);
          }
      check_fd(stats, prepared, w, 0.05, probe);
    }
  }
  CHECK(checked_configs >= 20);
}

TEST_CASE("m_step: an uncontested edge count drives its probability above 0.99") {
  TinySet set(tiny_star(1, {100.0, 50.0}), {Spectrum{}, {}, {}});
  EStepResult stats;
  stats.per_instance.resize(1);
  stats.per_instance[0].edge_count = {100.0};
  stats.per_instance[0].self_count = {0.0, 0.0};
  ParamVector w;
  w.w[0] = -1.0;
  ParamVector out = m_step(stats, set.prepared, w, 1e-6);
  auto row = transition_probs(set.prepared[0].src->graph, set.prepared[0].phis, 0, out);
  CHECK(row.prob[0] > 0.99);
}

TEST_CASE("m_step: an optimal start is returned unchanged") {
  TinySet set(tiny_star(1, {100.0, 50.0}), {Spectrum{}, {}, {}});
  EStepResult stats;
  stats.per_instance.resize(1);
  stats.per_instance[0].edge_count = {50.0};
  stats.per_instance[0].self_count = {50.0, 0.0};
  ParamVector w;  // theta = 0 gives rho = 0.5/0.5: exactly the counts
  ParamVector out = m_step(stats, set.prepared, w, 0.0);
  CHECK(out.w == w.w);
}

TEST_CASE("m_step: a huge regularizer crushes all non-bias weights") {
  std::vector<TrainingInstance> insts = {
      real_instance("CCO", 2, {Spectrum{{31.0, 60.0}, {47.0, 40.0}}, {}, {}})};
  FeatureLayout layout;
  auto prepared = prepare_instances(insts, layout);
  ParamVector w;
  w.w[0] = -1.0;
  auto stats = e_step_se(prepared, w, 2, 0, ModelConfig{});
  ParamVector out = m_step(stats, prepared, w, 1e9);
  for (const auto& [idx, v] : out.w)
    if (idx != 0) CHECK(std::abs(v) < 1e-3);
}

TEST_CASE("m_step: Q is unimodal along the ascent segment") {
  std::vector<TrainingInstance> insts = {
      real_instance("CC(=O)O", 2, {Spectrum{{43.0, 50.0}, {61.0, 50.0}}, {}, {}})};
  FeatureLayout layout;
  auto prepared = prepare_instances(insts, layout);
  ParamVector w0;
  w0.w[0] = -1.0;
  auto stats = e_step_se(prepared, w0, 2, 0, ModelConfig{});
  ParamVector w1 = m_step(stats, prepared, w0, 0.01);
  // sample Q on the segment; concavity means no interior dip
  std::vector<double> qs;
  for (int k = 0; k <= 20; ++k) {
    double a = k / 20.0;
    ParamVector mix = w0;
    for (const auto& [idx, v] : w1.w) {
      double v0 = w0.at(idx);
      mix.w[idx] = v0 + a * (v - v0);
    }
    qs.push_back(q_value(stats, prepared, mix, 0.01));
  }
  for (size_t k = 1; k + 1 < qs.size(); ++k)
    CHECK(qs[k] >= std::min(qs[k - 1], qs[k + 1]) - 1e-9);
}

TEST_CASE("em_train_se: deterministic and monotone in the regularized likelihood") {
  std::vector<TrainingInstance> insts;
  insts.push_back(real_instance("CCO", 2, {Spectrum{{31.018, 60.0}, {47.049, 40.0}}, {}, {}}));
  insts.push_back(real_instance("CCN", 2, {Spectrum{{30.034, 50.0}, {46.065, 50.0}}, {}, {}}));
  EmConfig config;
  config.max_em_iters = 6;
  auto [w1, r1] = em_train_se(insts, 0, config);
  auto [w2, r2] = em_train_se(insts, 0, config);
  REQUIRE(r1.iterations.size() == r2.iterations.size());
  for (size_t i = 0; i < r1.iterations.size(); ++i) {
    CHECK(r1.iterations[i].q == r2.iterations[i].q);
    CHECK(r1.iterations[i].regularized_ll == r2.iterations[i].regularized_ll);
  }
  for (size_t i = 1; i < r1.iterations.size(); ++i) {
    double prev = r1.iterations[i - 1].regularized_ll;
    double tol = 1e-6 * std::max(1.0, std::abs(prev));
    CHECK(r1.iterations[i].regularized_ll >= prev - tol);
  }
}

TEST_CASE("em_train_se: precursor-only spectrum favors self-transitions") {
  Molecule root = protonate_canonical(parse_smiles("CCO"));
  double precursor = monoisotopic_mass(root);
  std::vector<TrainingInstance> insts = {
      real_instance("CCO", 2, {Spectrum{{precursor, 100.0}}, {}, {}})};
  EmConfig config;
  config.max_em_iters = 8;
  auto [w, report] = em_train_se(insts, 0, config);
  FeatureLayout layout;
  auto prepared = prepare_instances(insts, layout);
  auto rows = build_transition_table(insts[0].graph, prepared[0].phis, w);
  auto mu = forward_marginal(insts[0].graph, rows, 2);
  // nearly all of the depth-2 marginal stays on the precursor
  CHECK(mu[insts[0].graph.root_id] > 0.9);
}

TEST_CASE("em_train_se: rejects an empty training set") {
  CHECK_THROWS_AS(em_train_se({}, 0, EmConfig{}), NoTrainingData);
}

TEST_CASE("e_step_ce: leaf-only molecule feeds self-counts to every block") {
  std::array<Spectrum, 3> spectra = {Spectrum{{120.0, 100.0}}, Spectrum{{120.0, 100.0}},
                                     Spectrum{{120.0, 100.0}}};
  TinySet set(tiny_star(0, {120.0}), spectra);
  std::array<ParamVector, 3> blocks;
  ModelConfig config;
  config.ce = true;
  auto stats = e_step_ce(set.prepared, blocks, config);
  // depths 2/4/6: two steps belong to each block, weighted by intensity 100
  for (int b = 0; b < 3; ++b) {
    CHECK(stats[b].per_instance[0].self_count[0] == doctest::Approx(200.0));
    CHECK(stats[b].per_instance[0].edge_count.empty());
  }
}

TEST_CASE("energy-block isolation: gradients for one block ignore the others") {
  TinySet set(tiny_star(2, {100.0, 60.0, 40.0}), {Spectrum{}, {}, {}});
  EStepResult stats;
  stats.per_instance.resize(1);
  stats.per_instance[0].edge_count = {5.0, 7.0};
  stats.per_instance[0].self_count = {3.0, 0.0, 0.0};
  ParamVector w_low;
  w_low.w[0] = -0.5;
  w_low.w[100] = 0.3;
  auto g1 = q_gradient(stats, set.prepared, w_low, 0.01);
  // a wildly different high-energy block cannot enter this computation
  ParamVector w_high;
  w_high.w[0] = 1e6;
  auto g2 = q_gradient(stats, set.prepared, w_low, 0.01);
  CHECK(g1.size() == g2.size());
  for (const auto& [idx, v] : g1) CHECK(g2.at(idx) == v);
}

TEST_CASE("em_train_ce: trains three blocks on real molecules") {
  std::vector<TrainingInstance> insts;
  for (const auto& smi : {"CCO", "CCN"}) {
    Molecule root = protonate_canonical(parse_smiles(smi));
    FragmentationGraph g = build_graph(root, 6);
    // synthetic spectra: precursor plus the two lightest fragments
    std::vector<double> masses;
    for (const auto& f : g.fragments) masses.push_back(f.mass);
    std::sort(masses.begin(), masses.end());
    Spectrum low = {{g.fragments[g.root_id].mass, 70.0}, {masses[0], 30.0}};
    Spectrum med = {{g.fragments[g.root_id].mass, 40.0}, {masses[0], 60.0}};
    Spectrum high = {{masses[0], 80.0}, {masses[1], 20.0}};
    TrainingInstance inst;
    inst.id = smi;
    inst.root = root;
    inst.graph = std::move(g);
    inst.spectra = {normalize_spectrum(low), normalize_spectrum(med), normalize_spectrum(high)};
    insts.push_back(std::move(inst));
  }
  EmConfig config;
  config.model.ce = true;
  config.max_em_iters = 3;
  auto [model, report] = em_train_ce(insts, config);
  REQUIRE(model.blocks.size() == 3);
  CHECK(model.blocks[0].tag == EnergyTag::Low);
  CHECK(model.blocks[2].tag == EnergyTag::High);
  CHECK(!report.iterations.empty());
  // blocks actually moved away from initialization
  for (const auto& b : model.blocks) CHECK(b.w.size() > 1);
}

TEST_CASE("em_train_ce: rejects non-increasing depths") {
  std::vector<TrainingInstance> insts = {
      real_instance("CCO", 2, {Spectrum{{31.0, 100.0}}, Spectrum{{31.0, 100.0}},
                               Spectrum{{31.0, 100.0}}})};
  EmConfig config;
  config.model.depth_low = 4;
  config.model.depth_med = 4;
  config.model.depth_high = 6;
  CHECK_THROWS_AS(em_train_ce(insts, config), NoTrainingData);
}
