#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cfmkit/inference.hpp"
#include "cfmkit/model.hpp"
#include "cfmkit/spectrum.hpp"

namespace cfmkit {

struct MetricReport {
  double weighted_recall = 0.0;
  double weighted_precision = 0.0;
  double recall = 0.0;
  double precision = 0.0;
  double jaccard = 0.0;
};

// Merges peaks closer than the tolerance (intensity-weighted mean mass,
// summed intensity), chaining transitively by ascending mass.
inline Spectrum dedup_peaks(Spectrum peaks, const ModelConfig& config) {
  std::sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) {
    return a.mass < b.mass;
  });
  Spectrum out;
  for (const Peak& p : peaks) {
    if (!out.empty() && p.mass - out.back().mass <= config.mass_tolerance(p.mass)) {
      Peak& last = out.back();
      double h = last.height + p.height;
      last.mass = (last.mass * last.height + p.mass * p.height) / h;
      last.height = h;
    } else {
      out.push_back(p);
    }
  }
  return out;
}

// Intensity cutoff of the predicted spectrum: keep the smallest
// intensity-descending prefix reaching 80% of the total, then clamp the kept
// count to [5, 30] without inventing peaks. Result renormalized to 100 and
// sorted by mass.
inline Spectrum apply_peak_cutoff(Spectrum peaks) {
  std::sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) {
    if (a.height != b.height) return a.height > b.height;
    return a.mass < b.mass;  // deterministic tie-break
  });
  double total = total_intensity(peaks);
  size_t keep = 0;
  double covered = 0.0;
  while (keep < peaks.size() && covered < 0.8 * total) covered += peaks[keep++].height;
  keep = std::max<size_t>(keep, 5);
  keep = std::min<size_t>(keep, 30);
  keep = std::min(keep, peaks.size());
  peaks.resize(keep);
  peaks = normalize_spectrum(peaks);
  std::sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) {
    return a.mass < b.mass;
  });
  return peaks;
}

// Depth of the chain used for one energy of the model.
inline int chain_depth(const Model& model, int energy) {
  if (!model.config.ce) return model.config.depth;
  return energy == 0 ? model.config.depth_low
                     : energy == 1 ? model.config.depth_med : model.config.depth_high;
}

// Predicted spectrum: fragment-mass Gaussian means weighted by the forward
// marginal at the energy's depth, deduplicated and cut off.
inline Spectrum predict_spectrum(const Molecule& mol, const Model& model, int energy,
                                 int max_fragments = 50000) {
  Molecule root = mol.total_charge() == 1 ? mol : protonate_canonical(mol);
  const int depth = chain_depth(model, energy);
  FragmentationGraph g = build_graph(root, depth, max_fragments);
  auto phis = featurize_graph(g, model.layout);

  ChainSpec spec;
  spec.g = &g;
  std::vector<std::vector<TransitionRow>> tables;
  if (model.config.ce) {
    for (const auto& b : model.blocks) tables.push_back(build_transition_table(g, phis, b));
    for (int t = 1; t <= depth; ++t) {
      int b = t <= model.config.depth_low ? 0 : t <= model.config.depth_med ? 1 : 2;
      spec.step_rows.push_back(&tables[b]);
    }
  } else {
    tables.push_back(build_transition_table(g, phis, model.blocks[0]));
    spec.step_rows.assign(depth, &tables[0]);
  }
  auto mu = run_chain(spec).marginals[depth];

  Spectrum raw;
  for (size_t j = 0; j < g.fragments.size(); ++j)
    if (mu[j] > 0.0) raw.push_back({g.fragments[j].mass, mu[j] * 100.0});
  return apply_peak_cutoff(dedup_peaks(std::move(raw), model.config));
}

// One-to-one greedy nearest-mass matching; the ppm part of the tolerance is
// evaluated at the measured peak's mass.
struct PeakMatch {
  int predicted = -1;  // index into the predicted spectrum
  int measured = -1;   // index into the measured spectrum
};

inline std::vector<PeakMatch> match_peaks(const Spectrum& predicted, const Spectrum& measured,
                                          const ModelConfig& config) {
  struct Pair {
    double delta;
    int p, m;
  };
  std::vector<Pair> pairs;
  for (int p = 0; p < static_cast<int>(predicted.size()); ++p)
    for (int m = 0; m < static_cast<int>(measured.size()); ++m) {
      double delta = std::abs(predicted[p].mass - measured[m].mass);
      if (delta <= config.mass_tolerance(measured[m].mass)) pairs.push_back({delta, p, m});
    }
  std::sort(pairs.begin(), pairs.end(), [&](const Pair& a, const Pair& b) {
    if (a.delta != b.delta) return a.delta < b.delta;
    double ma = measured[a.m].mass, mb = measured[b.m].mass;
    if (ma != mb) return ma < mb;  // ties toward the lower-mass candidate
    return predicted[a.p].mass < predicted[b.p].mass;
  });
  std::vector<char> p_used(predicted.size(), 0), m_used(measured.size(), 0);
  std::vector<PeakMatch> out;
  for (const Pair& pr : pairs) {
    if (p_used[pr.p] || m_used[pr.m]) continue;
    p_used[pr.p] = m_used[pr.m] = 1;
    out.push_back({pr.p, pr.m});
  }
  return out;
}

// The five evaluation metrics over the peak matching.
inline MetricReport compute_metrics(const Spectrum& predicted, const Spectrum& measured,
                                    const ModelConfig& config) {
  if (predicted.empty()) throw EmptySpectrum("predicted spectrum is empty");
  if (measured.empty()) throw EmptySpectrum("measured spectrum is empty");
  auto matches = match_peaks(predicted, measured, config);
  double matched_measured = 0.0, matched_predicted = 0.0;
  for (const auto& m : matches) {
    matched_predicted += predicted[m.predicted].height;
    matched_measured += measured[m.measured].height;
  }
  MetricReport r;
  r.weighted_recall = 100.0 * matched_measured / total_intensity(measured);
  r.weighted_precision = 100.0 * matched_predicted / total_intensity(predicted);
  r.recall = 100.0 * matches.size() / measured.size();
  r.precision = 100.0 * matches.size() / predicted.size();
  r.jaccard = static_cast<double>(matches.size()) /
              (predicted.size() + measured.size() - matches.size());
  return r;
}

// Merge of the three energy spectra: peaks within tolerance collapse to
// (mean mass, max intensity), transitively by ascending mass; renormalized.
inline Spectrum merge_energy_spectra(const Spectrum& s_low, const Spectrum& s_med,
                                     const Spectrum& s_high, const ModelConfig& config) {
  Spectrum all = s_low;
  all.insert(all.end(), s_med.begin(), s_med.end());
  all.insert(all.end(), s_high.begin(), s_high.end());
  std::sort(all.begin(), all.end(), [](const Peak& a, const Peak& b) {
    return a.mass < b.mass;
  });
  Spectrum out;
  std::vector<std::vector<Peak>> clusters;
  for (const Peak& p : all) {
    if (!clusters.empty() &&
        p.mass - clusters.back().back().mass <= config.mass_tolerance(p.mass))
      clusters.back().push_back(p);
    else
      clusters.push_back({p});
  }
  for (const auto& c : clusters) {
    Peak merged;
    for (const Peak& p : c) {
      merged.mass += p.mass / c.size();
      merged.height = std::max(merged.height, p.height);
    }
    out.push_back(merged);
  }
  return normalize_spectrum(out);
}

// Text spectra file: three blocks headed "energy0".."energy2", each holding
// "mass intensity" lines; '#' comments and blank lines are skipped.
inline void write_spectra_file(const std::array<Spectrum, 3>& spectra, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  char buf[64];
  for (int e = 0; e < 3; ++e) {
    out << "energy" << e << "\n";
    for (const Peak& p : spectra[e]) {
      std::snprintf(buf, sizeof(buf), "%.6f %.6f\n", p.mass, p.height);
      out << buf;
    }
  }
  if (!out) throw IoError("write failed for " + path);
}

inline std::array<Spectrum, 3> read_spectra_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  std::array<Spectrum, 3> spectra;
  std::array<bool, 3> seen = {false, false, false};
  int current = -1;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ls(line);
    std::string first;
    if (!(ls >> first)) continue;  // blank
    if (first.rfind("energy", 0) == 0) {
      if (first.size() != 7 || first[6] < '0' || first[6] > '2')
        throw MalformedLine(path + ":" + std::to_string(line_no) + ": bad block header");
      current = first[6] - '0';
      seen[current] = true;
      continue;
    }
    double mass = 0.0, height = 0.0;
    std::istringstream ps(line);
    std::string rest;
    if (current < 0 || !(ps >> mass >> height) || (ps >> rest))
      throw MalformedLine(path + ":" + std::to_string(line_no) + ": expected 'mass intensity'");
    spectra[current].push_back({mass, height});
  }
  for (int e = 0; e < 3; ++e)
    if (!seen[e]) throw MissingEnergyBlock(path + " lacks block energy" + std::to_string(e));
  return spectra;
}

}  // namespace cfmkit
