// cfmkit — command-line front end for the fragmentation-modeling library.
//
// Commands: fraggraph, train, predict, evaluate, identify, features.
// Shared model options live on the top-level app and may come from a flat
// key=value config file (--config); explicit flags override file values.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"

#include "cfmkit/identify.hpp"
#include "cfmkit/predict.hpp"
#include "cfmkit/smiles.hpp"
#include "cfmkit/synthdata.hpp"
#include "cfmkit/train.hpp"

namespace {

using namespace cfmkit;

// Exit codes: 2 input parse error, 3 graph too large, 4 no training data,
// 1 everything else.
int exit_code_for(const Error& e) {
  std::string what = e.what();
  auto has = [&](const char* prefix) { return what.rfind(prefix, 0) == 0; };
  if (has("UnsupportedToken") || has("UnclosedRingBond") || has("UnbalancedParenthesis") ||
      has("ValenceViolation") || has("MultipleCharges") || has("MalformedLine"))
    return 2;
  if (has("GraphTooLarge")) return 3;
  if (has("NoTrainingData")) return 4;
  return 1;
}

// One (ce) or three (se: low, med, high) models behind a common interface.
struct ModelSet {
  std::vector<Model> models;

  static ModelSet load(const std::vector<std::string>& paths) {
    if (paths.size() != 1 && paths.size() != 3)
      throw IoError("expected 1 (ce) or 3 (se: low,med,high) --model paths, got " +
                    std::to_string(paths.size()));
    ModelSet set;
    for (const auto& p : paths) set.models.push_back(load_model(p));
    if (set.models.size() == 1 && !set.models[0].config.ce)
      throw VersionMismatch("single --model must be a ce model; pass 3 models for se");
    return set;
  }
  const Model& for_energy(int e) const {
    return models.size() == 1 ? models[0] : models[e];
  }
};

std::vector<std::pair<std::string, std::string>> read_molecule_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ls(line);
    std::string id, smiles, extra;
    if (!(ls >> id)) continue;
    if (!(ls >> smiles) || (ls >> extra))
      throw MalformedLine(path + ":" + std::to_string(line_no) + ": expected 'id<TAB>smiles'");
    out.emplace_back(id, smiles);
  }
  return out;
}

std::ostream& open_out(std::ofstream& file, const std::string& path) {
  if (path.empty() || path == "-") return std::cout;
  file.open(path);
  if (!file) throw IoError("cannot write " + path);
  return file;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Competitive fragmentation modeling for ESI-MS/MS spectra"};
  app.require_subcommand(1);

  ModelConfig mc;
  int threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  std::uint64_t seed = 0;
  int max_fragments = 50000;
  bool quadratic = false;

  // Flat key=value config file, applied before flag parsing so explicit
  // flags override file values. Keys match the long flag names sans dashes.
  std::string config_path;
  for (int i = 1; i < argc; ++i) {
    std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) config_path = argv[i + 1];
    else if (a.rfind("--config=", 0) == 0) config_path = a.substr(9);
  }
  if (!config_path.empty()) {
    std::ifstream cfg(config_path);
    if (!cfg) {
      std::cerr << "error: Io: cannot read config " << config_path << "\n";
      return 1;
    }
    std::string line;
    while (std::getline(cfg, line)) {
      size_t hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      size_t eq = line.find('=');
      if (eq == std::string::npos) continue;
      auto trim = [](std::string s) {
        size_t b = s.find_first_not_of(" \t");
        size_t e = s.find_last_not_of(" \t");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      std::string key = trim(line.substr(0, eq)), val = trim(line.substr(eq + 1));
      try {
        if (key == "threads") threads = std::stoi(val);
        else if (key == "seed") seed = std::stoull(val);
        else if (key == "depth") mc.depth = std::stoi(val);
        else if (key == "depth-low") mc.depth_low = std::stoi(val);
        else if (key == "depth-med") mc.depth_med = std::stoi(val);
        else if (key == "depth-high") mc.depth_high = std::stoi(val);
        else if (key == "lambda") mc.lambda = std::stod(val);
        else if (key == "tol-ppm") mc.tol_ppm = std::stod(val);
        else if (key == "tol-abs") mc.tol_abs = std::stod(val);
        else if (key == "quadratic") quadratic = (val == "1" || val == "true");
        else if (key == "max-fragments") max_fragments = std::stoi(val);
        else {
          std::cerr << "error: MalformedLine: unknown config key '" << key << "'\n";
          return 2;
        }
      } catch (const std::exception&) {
        std::cerr << "error: MalformedLine: bad value for config key '" << key << "'\n";
        return 2;
      }
    }
  }
  std::string config_path_opt;
  app.add_option("--config", config_path_opt,
                 "Flat key=value config file; flags override file values");
  app.add_option("--threads", threads, "Worker count")
      ->envname("CFMKIT_THREADS")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_option("--seed", seed, "RNG seed")->capture_default_str();
  app.add_option("--depth", mc.depth, "Chain depth (se mode)")->capture_default_str();
  app.add_option("--depth-low", mc.depth_low, "Low-energy depth (ce mode)")->capture_default_str();
  app.add_option("--depth-med", mc.depth_med, "Medium-energy depth (ce mode)")->capture_default_str();
  app.add_option("--depth-high", mc.depth_high, "High-energy depth (ce mode)")->capture_default_str();
  app.add_option("--lambda", mc.lambda, "L2 regularization strength")->capture_default_str();
  app.add_option("--tol-ppm", mc.tol_ppm, "Mass tolerance, ppm part")->capture_default_str();
  app.add_option("--tol-abs", mc.tol_abs, "Mass tolerance floor, Da")->capture_default_str();
  app.add_flag("--quadratic", quadratic, "Enable quadratic feature pairs");
  app.add_option("--max-fragments", max_fragments, "Fragmentation-graph size cap")
      ->capture_default_str();

  // fraggraph
  auto* cmd_fg = app.add_subcommand("fraggraph", "Enumerate and dump a fragmentation graph");
  cmd_fg->fallthrough();
  std::string fg_smiles, fg_out;
  cmd_fg->add_option("smiles", fg_smiles, "Input molecule")->required();
  cmd_fg->add_option("--out", fg_out, "Output path (default stdout)");

  // train
  auto* cmd_tr = app.add_subcommand("train", "Fit model parameters with EM");
  cmd_tr->fallthrough();
  std::string tr_molecules, tr_spectra_dir, tr_out_dir = ".", tr_mode = "se", tr_resume;
  int tr_max_iters = 50;
  double tr_tol = 1e-4;
  cmd_tr->add_option("--molecules", tr_molecules, "TSV of id<TAB>smiles")->required();
  cmd_tr->add_option("--spectra-dir", tr_spectra_dir, "Directory of <id>.spectra files")
      ->required();
  cmd_tr->add_option("--out-dir", tr_out_dir, "Output directory")->capture_default_str();
  cmd_tr->add_option("--mode", tr_mode, "se or ce")
      ->check(CLI::IsMember({"se", "ce"}))
      ->capture_default_str();
  cmd_tr->add_option("--max-iters", tr_max_iters, "EM iteration cap")->capture_default_str();
  cmd_tr->add_option("--em-tol", tr_tol, "Relative EM convergence tolerance")
      ->capture_default_str();
  cmd_tr->add_option("--resume", tr_resume,
                     "Checkpoint model file (se: of the energy being trained) to resume from");
  int tr_energy = -1;
  cmd_tr->add_option("--energy", tr_energy, "se mode: train only this energy (0,1,2)")
      ->check(CLI::Range(0, 2));

  // predict
  auto* cmd_pr = app.add_subcommand("predict", "Predict the three energy spectra");
  cmd_pr->fallthrough();
  std::string pr_smiles, pr_molecules, pr_out, pr_out_dir;
  std::vector<std::string> pr_models;
  cmd_pr->add_option("--model", pr_models, "Model file (1 ce or 3 se paths)")->required()->allow_extra_args(false);
  cmd_pr->add_option("smiles", pr_smiles, "Single input molecule");
  cmd_pr->add_option("--molecules", pr_molecules, "TSV of id<TAB>smiles (batch mode)");
  cmd_pr->add_option("--out", pr_out, "Spectra output path for single-molecule mode");
  cmd_pr->add_option("--out-dir", pr_out_dir, "Output directory for batch mode");

  // evaluate
  auto* cmd_ev = app.add_subcommand("evaluate", "Score predictions against measured spectra");
  cmd_ev->fallthrough();
  std::string ev_molecules, ev_spectra_dir, ev_out;
  std::vector<std::string> ev_models;
  cmd_ev->add_option("--model", ev_models, "Model file (1 ce or 3 se paths)")->required()->allow_extra_args(false);
  cmd_ev->add_option("--molecules", ev_molecules, "TSV of id<TAB>smiles")->required();
  cmd_ev->add_option("--spectra-dir", ev_spectra_dir, "Directory of measured <id>.spectra")
      ->required();
  cmd_ev->add_option("--out", ev_out, "Metrics TSV output (default stdout)");

  // identify
  auto* cmd_id = app.add_subcommand("identify", "Rank candidates against a target spectrum set");
  cmd_id->fallthrough();
  std::string id_candidates, id_target, id_out;
  std::vector<std::string> id_models;
  double id_precursor = 0.0;
  cmd_id->add_option("--model", id_models, "Model file (1 ce or 3 se paths)")->required()->allow_extra_args(false);
  cmd_id->add_option("--candidates", id_candidates, "Candidate TSV of id<TAB>smiles")->required();
  cmd_id->add_option("--target", id_target, "Measured spectra file (3 energy blocks)")->required();
  cmd_id->add_option("--out", id_out, "Ranking TSV output (default stdout)");
  cmd_id->add_option("--precursor-mass", id_precursor,
                     "Optional mass-window pre-filter around this precursor m/z");

  // synth (debug): sample a dataset from a generator model
  auto* cmd_sy = app.add_subcommand("synth", "Generate a synthetic dataset from the toy set");
  cmd_sy->fallthrough();
  std::string sy_out_dir, sy_model;
  double sy_noise = 0.0, sy_wsigma = 0.3;
  int sy_count = 0;
  cmd_sy->add_option("--out-dir", sy_out_dir, "Output directory")->required();
  cmd_sy->add_option("--model", sy_model, "Generator model file; random weights when omitted");
  cmd_sy->add_option("--noise", sy_noise, "Gaussian mass jitter sigma in Da")
      ->capture_default_str();
  cmd_sy->add_option("--weight-sigma", sy_wsigma, "Stddev of sampled generator weights")
      ->capture_default_str();
  cmd_sy->add_option("--count", sy_count, "Number of toy molecules (0 = all)")
      ->capture_default_str();
  bool sy_ce = false;
  cmd_sy->add_flag("--ce", sy_ce, "Sample a combined-energy generator");

  // features (debug)
  auto* cmd_ft = app.add_subcommand("features", "Dump active features per fragmentation edge");
  cmd_ft->fallthrough();
  std::string ft_smiles, ft_out;
  cmd_ft->add_option("smiles", ft_smiles, "Input molecule")->required();
  cmd_ft->add_option("--out", ft_out, "Output path (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    FeatureLayout layout;
    layout.quadratic = quadratic;

    if (*cmd_fg) {
      Molecule m = parse_smiles(fg_smiles);
      Molecule root = m.total_charge() == 1 ? m : protonate_canonical(m);
      FragmentationGraph g = build_graph(root, mc.depth, max_fragments);
      std::ofstream file;
      open_out(file, fg_out) << dump_graph(g);
    }

    if (*cmd_tr) {
      auto molecules = read_molecule_tsv(tr_molecules);
      std::vector<TrainingInstance> instances;
      int graph_depth = tr_mode == "ce" ? mc.depth_high : mc.depth;
      for (const auto& [id, smiles] : molecules) {
        TrainingInstance inst;
        inst.id = id;
        Molecule m = parse_smiles(smiles);
        inst.root = m.total_charge() == 1 ? m : protonate_canonical(m);
        inst.graph = build_graph(inst.root, graph_depth, max_fragments);
        inst.spectra = read_spectra_file(tr_spectra_dir + "/" + id + ".spectra");
        instances.push_back(std::move(inst));
      }
      if (instances.empty()) throw NoTrainingData("molecule list " + tr_molecules + " is empty");
      std::filesystem::create_directories(tr_out_dir);
      std::ofstream log(tr_out_dir + "/train.log");
      auto log_report = [&](const std::string& tag, const TrainReport& report) {
        for (const auto& it : report.iterations) {
          char buf[160];
          std::snprintf(buf, sizeof(buf),
                        "%s iter=%d q=%.6f ll=%.6f reg_ll=%.6f grad=%.3e skipped=%d t=%.2fs\n",
                        tag.c_str(), it.iter, it.q, it.log_likelihood, it.regularized_ll,
                        it.grad_norm, it.skipped_peaks, it.seconds);
          log << buf;
        }
        log << tag << " stop: " << report.stop_reason << "\n";
      };
      EmConfig em;
      em.model = mc;
      em.layout = layout;
      em.max_em_iters = tr_max_iters;
      em.em_tol = tr_tol;
      em.n_threads = threads;
      if (tr_mode == "se") {
        for (int e = 0; e < 3; ++e) {
          if (tr_energy >= 0 && e != tr_energy) continue;
          EmConfig em_e = em;
          if (!tr_resume.empty()) {
            Model prev = load_model(tr_resume);
            em_e.init_blocks = {prev.blocks[0]};
          }
          std::string tag = "energy" + std::to_string(e);
          em_e.checkpoint = [&](int iter, const Model& snapshot) {
            save_model(snapshot, tr_out_dir + "/checkpoint_" + tag + "_" +
                                     std::to_string(iter) + ".cfm");
          };
          auto [w, report] = em_train_se(instances, e, em_e);
          Model model = make_model(mc, layout);
          model.blocks[0].w = w.w;
          save_model(model, tr_out_dir + "/model_" + tag + ".cfm");
          log_report(tag, report);
        }
      } else {
        em.model.ce = true;
        if (!tr_resume.empty()) {
          Model prev = load_model(tr_resume);
          em.init_blocks.assign(prev.blocks.begin(), prev.blocks.end());
        }
        em.checkpoint = [&](int iter, const Model& snapshot) {
          save_model(snapshot, tr_out_dir + "/checkpoint_ce_" + std::to_string(iter) + ".cfm");
        };
        auto [model, report] = em_train_ce(instances, em);
        save_model(model, tr_out_dir + "/model_ce.cfm");
        log_report("ce", report);
      }
    }

    if (*cmd_pr) {
      ModelSet set = ModelSet::load(pr_models);
      auto predict_three = [&](const Molecule& m) {
        std::array<Spectrum, 3> s;
        for (int e = 0; e < 3; ++e)
          s[e] = predict_spectrum(m, set.for_energy(e), e, max_fragments);
        return s;
      };
      if (!pr_smiles.empty()) {
        auto s = predict_three(parse_smiles(pr_smiles));
        if (pr_out.empty() || pr_out == "-") {
          for (int e = 0; e < 3; ++e) {
            std::cout << "energy" << e << "\n";
            for (const Peak& p : s[e]) {
              char buf[64];
              std::snprintf(buf, sizeof(buf), "%.6f %.6f\n", p.mass, p.height);
              std::cout << buf;
            }
          }
        } else {
          write_spectra_file(s, pr_out);
        }
      } else if (!pr_molecules.empty()) {
        if (pr_out_dir.empty()) throw IoError("batch predict needs --out-dir");
        std::filesystem::create_directories(pr_out_dir);
        for (const auto& [id, smiles] : read_molecule_tsv(pr_molecules))
          write_spectra_file(predict_three(parse_smiles(smiles)),
                             pr_out_dir + "/" + id + ".spectra");
      } else {
        throw IoError("predict needs a SMILES argument or --molecules");
      }
    }

    if (*cmd_ev) {
      ModelSet set = ModelSet::load(ev_models);
      std::ofstream file;
      std::ostream& out = open_out(file, ev_out);
      out << "id\tweighted_recall\tweighted_precision\trecall\tprecision\tjaccard\n";
      for (const auto& [id, smiles] : read_molecule_tsv(ev_molecules)) {
        std::string spath = ev_spectra_dir + "/" + id + ".spectra";
        if (!std::filesystem::exists(spath))
          throw IoError("no measured spectra for molecule id '" + id + "' (" + spath + ")");
        auto measured = read_spectra_file(spath);
        Molecule m = parse_smiles(smiles);
        MetricReport avg;
        for (int e = 0; e < 3; ++e) {
          Spectrum predicted = predict_spectrum(m, set.for_energy(e), e, max_fragments);
          MetricReport r = compute_metrics(predicted, measured[e], mc);
          avg.weighted_recall += r.weighted_recall / 3.0;
          avg.weighted_precision += r.weighted_precision / 3.0;
          avg.recall += r.recall / 3.0;
          avg.precision += r.precision / 3.0;
          avg.jaccard += r.jaccard / 3.0;
        }
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%s\t%.4f\t%.4f\t%.4f\t%.4f\t%.6f\n", id.c_str(),
                      avg.weighted_recall, avg.weighted_precision, avg.recall, avg.precision,
                      avg.jaccard);
        out << buf;
      }
    }

    if (*cmd_id) {
      ModelSet set = ModelSet::load(id_models);
      auto candidates = load_candidates(id_candidates);
      if (id_precursor > 0.0) mass_window_prefilter(candidates, id_precursor);
      auto target = read_spectra_file(id_target);
      std::array<const Model*, 3> per_energy = {&set.for_energy(0), &set.for_energy(1),
                                                &set.for_energy(2)};
      auto results = rank_candidates(target, candidates, per_energy, seed, threads);
      std::ofstream file;
      write_ranking_tsv(results, open_out(file, id_out));
      for (const auto& c : candidates)
        if (!c.accepted())
          std::cerr << "filtered\t" << c.id << "\t" << c.filter_reason << "\n";
    }

    if (*cmd_sy) {
      SynthSpec spec;
      spec.molecules = toy_molecules();
      if (sy_count > 0 && sy_count < static_cast<int>(spec.molecules.size()))
        spec.molecules.resize(sy_count);
      spec.noise_sigma = sy_noise;
      spec.max_fragments = max_fragments;
      if (!sy_model.empty()) {
        spec.model = load_model(sy_model);
      } else {
        // random sparse generator: weights drawn on the features the toy
        // graphs actually activate
        ModelConfig gen_mc = mc;
        gen_mc.ce = sy_ce;
        spec.model = make_model(gen_mc, layout);
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> wdist(0.0, sy_wsigma);
        int gen_depth = sy_ce ? gen_mc.depth_high : gen_mc.depth;
        for (const auto& [id, smiles] : spec.molecules) {
          Molecule m = parse_smiles(smiles);
          Molecule root = m.total_charge() == 1 ? m : protonate_canonical(m);
          FragmentationGraph g = build_graph(root, gen_depth, max_fragments);
          for (const auto& phi : featurize_graph(g, layout))
            for (long long idx : phi.active_indices)
              if (idx != FeatureLayout::kBias)
                for (auto& block : spec.model.blocks)
                  if (!block.w.count(idx)) block.w[idx] = wdist(rng);
        }
        for (auto& block : spec.model.blocks) block.w[FeatureLayout::kBias] = -0.5;
      }
      auto data = generate_dataset(spec, seed);
      std::filesystem::create_directories(sy_out_dir);
      write_dataset(data, spec.molecules, sy_out_dir);
      save_model(spec.model, sy_out_dir + "/generator.cfm");
    }

    if (*cmd_ft) {
      Molecule m = parse_smiles(ft_smiles);
      Molecule root = m.total_charge() == 1 ? m : protonate_canonical(m);
      FragmentationGraph g = build_graph(root, 1, max_fragments);
      auto phis = featurize_graph(g, layout);
      std::ofstream file;
      std::ostream& out = open_out(file, ft_out);
      for (size_t e = 0; e < g.edges.size(); ++e) {
        out << "edge " << e << " parent=" << g.edges[e].parent << " child=" << g.edges[e].child
            << "\n";
        for (long long idx : phis[e].active_indices)
          out << "  " << idx << "\t" << feature_name(layout, idx) << "\n";
      }
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return 0;
}
