#include <cmath>
#include <fstream>
#include <map>

#include "doctest.h"

#include "cfmkit/identify.hpp"

using namespace cfmkit;

namespace {

void write_file(const std::string& path, const std::string& text) {
  std::ofstream(path) << text;
}

Model small_model() {
  Model model = make_model(ModelConfig{}, FeatureLayout{});
  model.blocks[0].w[FeatureLayout::kBias] = -0.5;
  return model;
}

}  // namespace

TEST_CASE("load_candidates: filtering with reasons") {
  std::string path = "/tmp/cfmkit_candidates.tsv";
  write_file(path,
             "m1\tCCO\n"
             "m2\tOCC\n"       // same structure as m1
             "m3\t[NH4+]\n"    // charged
             "m4\tC.C\n"       // multi-fragment
             "m5\tnot(smiles\n"
             "# comment line\n"
             "\n"
             "m6\tCC(=O)O\n");
  auto cands = load_candidates(path);
  REQUIRE(cands.size() == 6);
  std::map<std::string, std::string> reason;
  for (const auto& c : cands) reason[c.id] = c.filter_reason;
  CHECK(reason["m1"] == "");
  CHECK(reason["m2"] == "duplicate");
  CHECK(reason["m3"] == "charged");
  CHECK(reason["m4"] == "multi-fragment");
  CHECK(reason["m5"] != "");
  CHECK(reason["m6"] == "");
  for (const auto& c : cands) CHECK(c.accepted() == c.parsed.has_value());
}

TEST_CASE("load_candidates: errors") {
  CHECK_THROWS_AS(load_candidates("/tmp/cfmkit_no_such_candidates"), IoError);
  std::string path = "/tmp/cfmkit_candidates_bad.tsv";
  write_file(path, "m1\tCCO\textra_field\n");
  CHECK_THROWS_AS(load_candidates(path), MalformedLine);
}

TEST_CASE("load_candidates: filter idempotence") {
  std::string path = "/tmp/cfmkit_candidates_idem.tsv";
  write_file(path, "m1\tCCO\nm2\tOCC\nm3\t[NH4+]\nm4\tNCC(=O)O\n");
  auto first = load_candidates(path);
  std::string path2 = "/tmp/cfmkit_candidates_idem2.tsv";
  {
    std::ofstream out(path2);
    for (const auto& c : first)
      if (c.accepted()) out << c.id << "\t" << c.smiles << "\n";
  }
  auto second = load_candidates(path2);
  size_t accepted_first = 0;
  for (const auto& c : first) accepted_first += c.accepted();
  REQUIRE(second.size() == accepted_first);
  for (const auto& c : second) CHECK(c.accepted());
}

TEST_CASE("mass_window_prefilter keeps only candidates near the precursor") {
  std::string path = "/tmp/cfmkit_candidates_mw.tsv";
  write_file(path, "m1\tCCO\nm2\tNCC(=O)O\n");
  auto cands = load_candidates(path);
  double ethanol_mh = monoisotopic_mass(protonate_canonical(parse_smiles("CCO")));
  mass_window_prefilter(cands, ethanol_mh);
  CHECK(cands[0].accepted());
  CHECK(cands[1].filter_reason == "mass-window");
}

TEST_CASE("rank_candidates: a candidate's own prediction ranks it first") {
  Model model = small_model();
  std::string path = "/tmp/cfmkit_candidates_self.tsv";
  write_file(path, "ethanol\tCCO\nglycine\tNCC(=O)O\nacetic\tCC(=O)O\npropanol\tCCCO\n");
  auto cands = load_candidates(path);
  std::array<Spectrum, 3> target;
  for (int e = 0; e < 3; ++e) target[e] = predict_spectrum(parse_smiles("NCC(=O)O"), model, e);
  auto ranking = rank_candidates(target, cands, model, 7);
  REQUIRE(ranking.size() == 4);
  CHECK(ranking[0].id == "glycine");
  CHECK(ranking[0].rank == 1);
  CHECK(ranking[0].score == doctest::Approx(3.0));
  // ranks are a permutation of 1..n
  std::vector<int> ranks;
  for (const auto& r : ranking) ranks.push_back(r.rank);
  std::sort(ranks.begin(), ranks.end());
  CHECK(ranks == std::vector<int>({1, 2, 3, 4}));
}

TEST_CASE("rank_candidates: deterministic for a fixed seed, parallel included") {
  Model model = small_model();
  std::string path = "/tmp/cfmkit_candidates_det.tsv";
  write_file(path, "a\tCCO\nb\tCCCO\nc\tCC(=O)O\nd\tNCC(=O)O\n");
  auto cands = load_candidates(path);
  std::array<Spectrum, 3> target;
  for (int e = 0; e < 3; ++e) target[e] = predict_spectrum(parse_smiles("CCO"), model, e);
  auto r1 = rank_candidates(target, cands, model, 42);
  auto r2 = rank_candidates(target, cands, model, 42);
  auto r3 = rank_candidates(target, cands, model, 42, 4);
  REQUIRE(r1.size() == r2.size());
  REQUIRE(r1.size() == r3.size());
  for (size_t i = 0; i < r1.size(); ++i) {
    CHECK(r1[i].id == r2[i].id);
    CHECK(r1[i].score == r2[i].score);
    CHECK(r1[i].id == r3[i].id);
    CHECK(r1[i].score == r3[i].score);
  }
}

TEST_CASE("rank_candidates: empty target is rejected") {
  Model model = small_model();
  std::string path = "/tmp/cfmkit_candidates_empty.tsv";
  write_file(path, "a\tCCO\n");
  auto cands = load_candidates(path);
  std::array<Spectrum, 3> target = {Spectrum{{100, 100}}, Spectrum{}, Spectrum{{100, 100}}};
  CHECK_THROWS_AS(rank_candidates(target, cands, model, 1), EmptySpectrum);
}

TEST_CASE("rank_candidates: tie-breaks are uniform over seeds") {
  // Two ids mapping to structurally identical molecules written differently,
  // kept as distinct candidates by bypassing the duplicate filter.
  Model model = small_model();
  std::vector<Candidate> cands(2);
  cands[0].id = "x";
  cands[0].smiles = "CCO";
  cands[0].parsed = parse_smiles("CCO");
  cands[1].id = "y";
  cands[1].smiles = "OCC";
  cands[1].parsed = parse_smiles("OCC");
  std::array<Spectrum, 3> target;
  for (int e = 0; e < 3; ++e) target[e] = predict_spectrum(parse_smiles("CCO"), model, e);
  int x_first = 0;
  const int trials = 1000;
  for (int seed = 0; seed < trials; ++seed) {
    auto r = rank_candidates(target, cands, model, seed);
    REQUIRE(r.size() == 2);
    CHECK(r[0].tie_group == r[1].tie_group);
    if (r[0].id == "x") ++x_first;
  }
  // binomial(1000, 0.5): |x_first - 500| < 4 sigma = 63 (p >> 0.01)
  CHECK(std::abs(x_first - trials / 2) < 63);
}

TEST_CASE("identification_report: cumulative curves") {
  auto make_case = [](const std::string& correct, std::vector<std::pair<std::string, int>> rs) {
    IdentificationCase c;
    c.correct_id = correct;
    for (auto& [id, rank] : rs) {
      RankedResult r;
      r.id = id;
      r.rank = rank;
      c.ranking.push_back(r);
    }
    return c;
  };
  std::vector<IdentificationCase> cases = {
      make_case("a", {{"a", 1}, {"b", 2}}),
      make_case("c", {{"d", 1}, {"e", 2}, {"c", 3}}),
      make_case("f", {{"g", 1}, {"f", 12}}),
  };
  auto report = identification_report(cases);
  CHECK(report.correct_ranks == std::vector<int>({1, 3, 12}));
  CHECK(report.frac_top1 == doctest::Approx(1.0 / 3.0));
  CHECK(report.frac_top5 == doctest::Approx(2.0 / 3.0));
  CHECK(report.frac_top10 == doctest::Approx(2.0 / 3.0));

  std::vector<IdentificationCase> all_first = {make_case("a", {{"a", 1}}),
                                              make_case("b", {{"b", 1}, {"c", 2}})};
  CHECK(identification_report(all_first).frac_top1 == doctest::Approx(1.0));

  std::vector<IdentificationCase> bad = {make_case("zz", {{"a", 1}})};
  CHECK_THROWS_AS(identification_report(bad), UnknownCorrectId);
}

TEST_CASE("write_ranking_tsv format") {
  std::vector<RankedResult> results(2);
  results[0] = {"a", 2.5, 1, 0, 9, false};
  results[1] = {"b", 1.0, 2, 1, 9, false};
  std::ostringstream out;
  write_ranking_tsv(results, out);
  CHECK(out.str() == "1\ta\t2.500000\t0\n2\tb\t1.000000\t1\n");
}
