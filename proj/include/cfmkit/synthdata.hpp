#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cfmkit/predict.hpp"
#include "cfmkit/smiles.hpp"
#include "cfmkit/train.hpp"

namespace cfmkit {

// Hand-picked small-molecule set for synthetic experiments: alcohols,
// amines, acids, small peptidic chains, sulfur/phosphorus compounds, and
// rings (one aromatic) so every feature group is exercised, ring breaks
// included.
inline const std::vector<std::pair<std::string, std::string>>& toy_molecules() {
  static const std::vector<std::pair<std::string, std::string>> set = {
      {"methanol", "CO"},
      {"ethanol", "CCO"},
      {"propanol", "CCCO"},
      {"isopropanol", "CC(O)C"},
      {"butanol", "CCCCO"},
      {"ethylene-glycol", "OCCO"},
      {"glycerol", "OCC(O)CO"},
      {"dimethyl-ether", "COC"},
      {"methylamine", "CN"},
      {"ethylamine", "CCN"},
      {"dimethylamine", "CNC"},
      {"ethylenediamine", "NCCN"},
      {"acetaldehyde", "CC=O"},
      {"acetone", "CC(=O)C"},
      {"butanone", "CC(=O)CC"},
      {"acetic-acid", "CC(=O)O"},
      {"propionic-acid", "CCC(=O)O"},
      {"lactic-acid", "CC(O)C(=O)O"},
      {"methyl-acetate", "CC(=O)OC"},
      {"acetamide", "CC(=O)N"},
      {"glycine", "NCC(=O)O"},
      {"alanine", "CC(N)C(=O)O"},
      {"serine", "OCC(N)C(=O)O"},
      {"glycylglycine", "NCC(=O)NCC(=O)O"},
      {"acetonitrile", "CC#N"},
      {"ethanethiol", "CCS"},
      {"dimethyl-sulfide", "CSC"},
      {"thioglycolic-acid", "SCC(=O)O"},
      {"phosphorous-acid", "OP(O)O"},
      {"cyclopropane", "C1CC1"},
      {"cyclopentane", "C1CCCC1"},
      {"cyclohexanol", "OC1CCCCC1"},
      {"tetrahydrofuran", "C1CCOC1"},
      {"pyrrolidine", "C1CCNC1"},
      {"benzene", "c1ccccc1"},
  };
  return set;
}

// A synthetic-dataset recipe: a generator model with known parameters, the
// molecules to cover, and optional Gaussian mass jitter.
struct SynthSpec {
  Model model;
  std::vector<std::pair<std::string, std::string>> molecules;  // (id, smiles)
  double noise_sigma = 0.0;  // Da; 0 means noise-free
  bool apply_cutoff = true;  // false keeps every nonzero-marginal peak
  int max_fragments = 50000;
};

namespace detail {

// Forward-marginal spectrum without the prediction cutoff: deduplicated and
// normalized to 100 only.
inline Spectrum raw_marginal_spectrum(const Molecule& mol, const Model& model, int energy,
                                      int max_fragments) {
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
  return normalize_spectrum(dedup_peaks(std::move(raw), model.config));
}

}  // namespace detail

// Samples one dataset from the recipe. Noise-free with the cutoff on, the
// spectra are exactly what predict_spectrum would emit; jitter perturbs peak
// masses with a per-molecule RNG stream derived from the seed.
inline std::vector<TrainingInstance> generate_dataset(const SynthSpec& spec, std::uint64_t seed) {
  std::vector<TrainingInstance> out;
  int train_depth = spec.model.config.ce ? spec.model.config.depth_high : spec.model.config.depth;
  for (size_t mi = 0; mi < spec.molecules.size(); ++mi) {
    const auto& [id, smiles] = spec.molecules[mi];
    TrainingInstance inst;
    inst.id = id;
    Molecule neutral = parse_smiles(smiles);
    inst.root = neutral.total_charge() == 1 ? neutral : protonate_canonical(neutral);
    inst.graph = build_graph(inst.root, train_depth, spec.max_fragments);
    std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ULL * (mi + 1)));
    for (int e = 0; e < 3; ++e) {
      Spectrum s = spec.apply_cutoff
                       ? predict_spectrum(neutral, spec.model, e, spec.max_fragments)
                       : detail::raw_marginal_spectrum(neutral, spec.model, e, spec.max_fragments);
      if (spec.noise_sigma > 0.0) {
        std::normal_distribution<double> jitter(0.0, spec.noise_sigma);
        for (Peak& p : s) p.mass += jitter(rng);
        std::sort(s.begin(), s.end(),
                  [](const Peak& a, const Peak& b) { return a.mass < b.mass; });
      }
      inst.spectra[e] = std::move(s);
    }
    out.push_back(std::move(inst));
  }
  return out;
}

// Writes "<id>.spectra" files plus a "molecules.tsv" index into dir.
inline void write_dataset(const std::vector<TrainingInstance>& instances,
                          const std::vector<std::pair<std::string, std::string>>& molecules,
                          const std::string& dir) {
  std::ofstream tsv(dir + "/molecules.tsv");
  if (!tsv) throw IoError("cannot write " + dir + "/molecules.tsv");
  for (const auto& [id, smiles] : molecules) tsv << id << "\t" << smiles << "\n";
  for (const TrainingInstance& inst : instances)
    write_spectra_file(inst.spectra, dir + "/" + inst.id + ".spectra");
}

}  // namespace cfmkit
