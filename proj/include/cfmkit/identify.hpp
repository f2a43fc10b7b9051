#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_set>
#include <vector>

#include "cfmkit/canonical.hpp"
#include "cfmkit/predict.hpp"
#include "cfmkit/smiles.hpp"

namespace cfmkit {

// A candidate structure for identification. A candidate is either accepted or
// carries the reason it was filtered out.
struct Candidate {
  std::string id;
  std::string smiles;
  std::optional<Molecule> parsed;  // set for accepted candidates
  std::string filter_reason;       // empty when accepted

  bool accepted() const { return filter_reason.empty(); }
};

// Reads a candidate list ("id<TAB>smiles" per line; '#' comments and blank
// lines skipped). Charged, multi-fragment, unparseable and duplicate
// structures are retained but marked filtered with a reason.
inline std::vector<Candidate> load_candidates(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  std::vector<Candidate> out;
  std::unordered_set<std::string> seen_keys;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ls(line);
    Candidate c;
    std::string extra;
    if (!(ls >> c.id)) continue;  // blank line
    if (!(ls >> c.smiles) || (ls >> extra))
      throw MalformedLine(path + ":" + std::to_string(line_no) + ": expected 'id<TAB>smiles'");
    try {
      Molecule m = parse_smiles(c.smiles);
      if (m.total_charge() != 0) {
        c.filter_reason = "charged";
      } else {
        std::string key = canonical_key(m);
        if (!seen_keys.insert(key).second) {
          c.filter_reason = "duplicate";
        } else {
          c.parsed = std::move(m);
        }
      }
    } catch (const UnsupportedToken& e) {
      c.filter_reason = c.smiles.find('.') != std::string::npos ? "multi-fragment"
                                                                : "unsupported-token";
    } catch (const Error&) {
      c.filter_reason = "unparseable";
    }
    out.push_back(std::move(c));
  }
  return out;
}

// Optional pre-filter: marks accepted candidates whose protonated mass falls
// outside the window around the target precursor mass.
inline void mass_window_prefilter(std::vector<Candidate>& candidates, double precursor_mass,
                                  double ppm = 5.0, double abs_da = 0.5) {
  double window = std::max(ppm * 1e-6 * precursor_mass, abs_da);
  for (Candidate& c : candidates) {
    if (!c.accepted()) continue;
    double mass = monoisotopic_mass(protonate_canonical(*c.parsed));
    if (std::abs(mass - precursor_mass) > window) {
      c.filter_reason = "mass-window";
      c.parsed.reset();
    }
  }
}

struct RankedResult {
  std::string id;
  double score = 0.0;  // Jaccard summed over the three energies
  int rank = 0;        // 1-based
  int tie_group = 0;   // candidates with equal scores share a group id
  std::uint64_t seed = 0;
  bool prediction_failed = false;
};

// Scores every accepted candidate against the three target spectra (Jaccard
// per energy, summed), sorts descending, and permutes ties uniformly at
// random with the given seed. Deterministic for fixed inputs and seed.
// `models` holds the model used per energy (all three may point at the same
// combined-energy model).
inline std::vector<RankedResult> rank_candidates(const std::array<Spectrum, 3>& target,
                                                 const std::vector<Candidate>& candidates,
                                                 const std::array<const Model*, 3>& models,
                                                 std::uint64_t seed, int n_threads = 1) {
  for (int e = 0; e < 3; ++e)
    if (target[e].empty())
      throw EmptySpectrum("target spectrum for energy " + std::to_string(e) + " is empty");

  std::vector<const Candidate*> accepted;
  for (const Candidate& c : candidates)
    if (c.accepted()) accepted.push_back(&c);

  std::vector<RankedResult> results(accepted.size());
  auto score_one = [&](size_t i) {
    RankedResult& r = results[i];
    r.id = accepted[i]->id;
    r.seed = seed;
    try {
      for (int e = 0; e < 3; ++e) {
        Spectrum predicted = predict_spectrum(*accepted[i]->parsed, *models[e], e);
        r.score += compute_metrics(predicted, target[e], models[e]->config).jaccard;
      }
    } catch (const Error&) {
      r.score = 0.0;
      r.prediction_failed = true;
    }
  };
  if (n_threads <= 1 || accepted.size() < 2) {
    for (size_t i = 0; i < accepted.size(); ++i) score_one(i);
  } else {
    std::vector<std::thread> workers;
    std::atomic<size_t> next{0};
    for (int t = 0; t < n_threads; ++t)
      workers.emplace_back([&] {
        for (size_t i = next.fetch_add(1); i < accepted.size(); i = next.fetch_add(1))
          score_one(i);
      });
    for (auto& w : workers) w.join();
  }

  std::stable_sort(results.begin(), results.end(), [](const RankedResult& a, const RankedResult& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;  // canonical order within a tie group before shuffling
  });
  std::mt19937_64 rng(seed);
  size_t i = 0;
  int group = 0;
  while (i < results.size()) {
    size_t j = i + 1;
    while (j < results.size() && results[j].score == results[i].score) ++j;
    std::shuffle(results.begin() + i, results.begin() + j, rng);
    for (size_t k = i; k < j; ++k) {
      results[k].rank = static_cast<int>(k) + 1;
      results[k].tie_group = group;
    }
    ++group;
    i = j;
  }
  return results;
}

// Convenience overload: one model for all three energies.
inline std::vector<RankedResult> rank_candidates(const std::array<Spectrum, 3>& target,
                                                 const std::vector<Candidate>& candidates,
                                                 const Model& model, std::uint64_t seed,
                                                 int n_threads = 1) {
  return rank_candidates(target, candidates, {&model, &model, &model}, seed, n_threads);
}

// One identification test case: a full ranking plus the id known to be right.
struct IdentificationCase {
  std::string correct_id;
  std::vector<RankedResult> ranking;
};

struct IdentificationReport {
  std::vector<int> correct_ranks;  // one per case, in input order
  double frac_top1 = 0.0;
  double frac_top5 = 0.0;
  double frac_top10 = 0.0;
};

// Rank of the correct candidate per case and the cumulative rank curves at
// k = 1, 5, 10.
inline IdentificationReport identification_report(const std::vector<IdentificationCase>& cases) {
  IdentificationReport report;
  for (const IdentificationCase& c : cases) {
    int rank = -1;
    for (const RankedResult& r : c.ranking)
      if (r.id == c.correct_id) {
        rank = r.rank;
        break;
      }
    if (rank < 0)
      throw UnknownCorrectId("candidate '" + c.correct_id + "' absent from its ranking");
    report.correct_ranks.push_back(rank);
  }
  if (!report.correct_ranks.empty()) {
    auto frac_leq = [&](int k) {
      int hits = 0;
      for (int r : report.correct_ranks)
        if (r <= k) ++hits;
      return static_cast<double>(hits) / report.correct_ranks.size();
    };
    report.frac_top1 = frac_leq(1);
    report.frac_top5 = frac_leq(5);
    report.frac_top10 = frac_leq(10);
  }
  return report;
}

// Ranking as TSV: "rank<TAB>id<TAB>score<TAB>tie_group" per line.
inline void write_ranking_tsv(const std::vector<RankedResult>& results, std::ostream& out) {
  char buf[64];
  for (const RankedResult& r : results) {
    std::snprintf(buf, sizeof(buf), "%.6f", r.score);
    out << r.rank << '\t' << r.id << '\t' << buf << '\t' << r.tie_group << '\n';
  }
}

}  // namespace cfmkit
