#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "cfmkit/errors.hpp"
#include "cfmkit/features.hpp"
#include "cfmkit/fraggraph.hpp"

namespace cfmkit {

enum class EnergyTag { Single, Low, Med, High };

inline const char* energy_tag_name(EnergyTag t) {
  switch (t) {
    case EnergyTag::Single: return "single";
    case EnergyTag::Low: return "low";
    case EnergyTag::Med: return "med";
    default: return "high";
  }
}

// Sparse weight vector; absent index means weight 0.
struct ParamVector {
  std::unordered_map<long long, double> w;
  std::string layout_version = FeatureLayout::version();
  EnergyTag tag = EnergyTag::Single;

  double at(long long idx) const {
    auto it = w.find(idx);
    return it == w.end() ? 0.0 : it->second;
  }
};

struct ModelConfig {
  bool ce = false;       // three-block CE model vs single-energy
  int depth = 2;         // SE chain depth
  int depth_low = 2;     // CE per-energy depths
  int depth_med = 4;
  int depth_high = 6;
  double lambda = 0.01;  // l2 strength, bias excluded
  double tol_ppm = 10.0; // peak-match tolerance, relative part
  double tol_abs = 0.01; // peak-match tolerance, absolute floor in Da

  double mass_tolerance(double mass) const {
    return std::max(tol_ppm * 1e-6 * mass, tol_abs);
  }
  // observation sigma: one third of the match tolerance at this mass
  double sigma(double mass) const { return mass_tolerance(mass) / 3.0; }
};

struct Model {
  ModelConfig config;
  FeatureLayout layout;
  std::vector<ParamVector> blocks;  // 1 for SE, 3 (low/med/high) for CE

  const ParamVector& block_for(EnergyTag t) const {
    for (const auto& b : blocks)
      if (b.tag == t) return b;
    throw MissingEnergyBlock(std::string("no block tagged ") + energy_tag_name(t));
  }
};

inline Model make_model(const ModelConfig& config, const FeatureLayout& layout) {
  Model m;
  m.config = config;
  m.layout = layout;
  if (config.ce) {
    for (EnergyTag t : {EnergyTag::Low, EnergyTag::Med, EnergyTag::High}) {
      ParamVector p;
      p.tag = t;
      m.blocks.push_back(std::move(p));
    }
  } else {
    m.blocks.emplace_back();
  }
  return m;
}

// theta = w . phi; phi is binary so this is a sparse sum over active indices.
inline double break_tendency(const ParamVector& w, const SparseFeatureVector& phi) {
  if (w.layout_version != FeatureLayout::version())
    throw LayoutMismatch("weights use layout " + w.layout_version);
  double theta = 0.0;
  for (long long idx : phi.active_indices) theta += w.at(idx);
  return theta;
}

// One row of the transition table: softmax over the children of a fragment
// with a fixed 0 tendency for the self-transition.
struct TransitionRow {
  std::vector<int> edge_indices;  // indices into graph.edges
  std::vector<int> child_ids;
  std::vector<double> theta;
  std::vector<double> prob;
  double self_prob = 1.0;
};

inline TransitionRow transition_probs(const FragmentationGraph& g,
                                      const std::vector<SparseFeatureVector>& edge_phis,
                                      int parent_id, const ParamVector& w) {
  TransitionRow row;
  for (int ei : g.children_of[parent_id]) {
    row.edge_indices.push_back(ei);
    row.child_ids.push_back(g.edges[ei].child);
    row.theta.push_back(break_tendency(w, edge_phis[ei]));
  }
  // softmax over {0 (self), theta_j}, max-subtracted for overflow safety
  double mx = 0.0;
  for (double t : row.theta) mx = std::max(mx, t);
  double z = std::exp(0.0 - mx);
  for (double t : row.theta) z += std::exp(t - mx);
  row.self_prob = std::exp(0.0 - mx) / z;
  for (double t : row.theta) row.prob.push_back(std::exp(t - mx) / z);
  return row;
}

// Gaussian observation density centered on the fragment mass.
inline double observe_density(double m, double fragment_mass, double sigma) {
  double d = (m - fragment_mass) / sigma;
  return std::exp(-0.5 * d * d) / (sigma * std::sqrt(2.0 * 3.14159265358979323846));
}

// Per-edge feature vectors for a whole graph; Gasteiger charges are computed
// once per parent fragment.
inline std::vector<SparseFeatureVector> featurize_graph(const FragmentationGraph& g,
                                                        const FeatureLayout& layout) {
  std::vector<SparseFeatureVector> phis(g.edges.size());
  for (size_t fid = 0; fid < g.fragments.size(); ++fid) {
    if (g.children_of[fid].empty()) continue;
    auto charges = gasteiger_charges(g.fragments[fid].structure);
    for (int ei : g.children_of[fid]) {
      const GraphEdge& e = g.edges[ei];
      phis[ei] = compute_features(g.fragments[e.parent], g.fragments[e.child], e.neutral_loss,
                                  e.meta, charges, layout);
    }
  }
  return phis;
}

namespace detail {

// FNV-1a over the payload lines, recorded in the file footer.
inline unsigned long long fnv1a(const std::string& s) {
  unsigned long long h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace detail

// Line-oriented text model file:
//   cfmkit-model 1
//   layout <version> quadratic <0|1>
//   config ce <0|1> depth <d> depths <dl> <dm> <dh> lambda <l> tol_ppm <p> tol_abs <a>
//   block <tag> <n>
//   <index> <value>          (n lines, 17 significant digits)
//   checksum <fnv1a of everything above>
inline void save_model(const Model& m, const std::string& path) {
  std::ostringstream body;
  body << "cfmkit-model 1\n";
  body << "layout " << FeatureLayout::version() << " quadratic " << (m.layout.quadratic ? 1 : 0)
       << "\n";
  char num[64];
  auto fmt = [&](double v) {
    std::snprintf(num, sizeof(num), "%.17g", v);
    return std::string(num);
  };
  body << "config ce " << (m.config.ce ? 1 : 0) << " depth " << m.config.depth << " depths "
       << m.config.depth_low << " " << m.config.depth_med << " " << m.config.depth_high
       << " lambda " << fmt(m.config.lambda) << " tol_ppm " << fmt(m.config.tol_ppm)
       << " tol_abs " << fmt(m.config.tol_abs) << "\n";
  for (const auto& b : m.blocks) {
    // sorted indices for a deterministic file
    std::vector<long long> idx;
    idx.reserve(b.w.size());
    for (const auto& [i, v] : b.w)
      if (v != 0.0) idx.push_back(i);
    std::sort(idx.begin(), idx.end());
    body << "block " << energy_tag_name(b.tag) << " " << idx.size() << "\n";
    for (long long i : idx) body << i << " " << fmt(b.w.at(i)) << "\n";
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << body.str();
  out << "checksum " << detail::fnv1a(body.str()) << "\n";
  if (!out) throw IoError("write failed for " + path);
}

inline Model load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  std::ostringstream body_stream;
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  if (lines.empty()) throw CorruptFile(path + " is empty");

  // verify the checksum footer before interpreting anything else
  {
    const std::string& last = lines.back();
    std::istringstream ls(last);
    std::string key;
    unsigned long long recorded = 0;
    if (!(ls >> key >> recorded) || key != "checksum")
      throw CorruptFile(path + " has no checksum footer");
    std::string payload;
    for (size_t i = 0; i + 1 < lines.size(); ++i) payload += lines[i] + "\n";
    if (detail::fnv1a(payload) != recorded) throw CorruptFile(path + " checksum mismatch");
    lines.pop_back();
  }

  size_t at = 0;
  auto next = [&]() -> std::string {
    if (at >= lines.size()) throw CorruptFile(path + " truncated");
    return lines[at++];
  };

  {
    std::istringstream hs(next());
    std::string magic;
    int ver = 0;
    if (!(hs >> magic >> ver) || magic != "cfmkit-model") throw CorruptFile(path + " bad magic");
    if (ver != 1) throw VersionMismatch("model file version " + std::to_string(ver));
  }
  Model m;
  {
    std::istringstream ls(next());
    std::string key, layout_ver, qkey;
    int quad = 0;
    if (!(ls >> key >> layout_ver >> qkey >> quad) || key != "layout" || qkey != "quadratic")
      throw CorruptFile(path + " bad layout line");
    if (layout_ver != FeatureLayout::version())
      throw VersionMismatch("layout " + layout_ver + ", expected " + FeatureLayout::version());
    m.layout.quadratic = quad != 0;
  }
  {
    std::istringstream cs(next());
    std::string k1, k2, k3, k4, k5, k6;
    int ce = 0;
    if (!(cs >> k1 >> k2 >> ce >> k3 >> m.config.depth >> k4 >> m.config.depth_low >>
          m.config.depth_med >> m.config.depth_high >> k5 >> m.config.lambda >> k6 >>
          m.config.tol_ppm))
      throw CorruptFile(path + " bad config line");
    std::string k7;
    if (!(cs >> k7 >> m.config.tol_abs) || k1 != "config") throw CorruptFile(path + " bad config");
    m.config.ce = ce != 0;
  }
  while (at < lines.size()) {
    std::istringstream bs(next());
    std::string key, tag;
    size_t n = 0;
    if (!(bs >> key >> tag >> n) || key != "block") throw CorruptFile(path + " bad block header");
    ParamVector p;
    if (tag == "single")
      p.tag = EnergyTag::Single;
    else if (tag == "low")
      p.tag = EnergyTag::Low;
    else if (tag == "med")
      p.tag = EnergyTag::Med;
    else if (tag == "high")
      p.tag = EnergyTag::High;
    else
      throw CorruptFile(path + " unknown energy tag " + tag);
    for (size_t i = 0; i < n; ++i) {
      std::istringstream ws(next());
      long long idx = 0;
      double v = 0.0;
      if (!(ws >> idx >> v)) throw CorruptFile(path + " bad weight line");
      p.w[idx] = v;
    }
    m.blocks.push_back(std::move(p));
  }
  if (m.blocks.empty()) throw CorruptFile(path + " has no weight blocks");
  if (m.config.ce && m.blocks.size() != 3)
    throw MissingEnergyBlock(path + " expects low/med/high blocks");
  return m;
}

}  // namespace cfmkit
