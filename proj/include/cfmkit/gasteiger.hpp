#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cfmkit/molecule.hpp"

namespace cfmkit {

// Partial equalization of orbital electronegativities (PEOE).
// Quadratic electronegativity chi(q) = a + b q + c q^2 with the conventional
// per-(element, hybridization) coefficients; 6 iterations with damping 0.5^k.

struct GasteigerCharges {
  std::vector<double> atom_charge;      // heavy atoms, molecule index order
  std::vector<double> hydrogen_charge;  // charge of each H attached to atom i
  std::vector<std::string> warnings;    // missing-parameter fallbacks
};

namespace detail {

struct PeoeParams {
  double a, b, c;
  double chi_plus() const { return a + b + c; }
};

enum class Hyb { Sp3, Sp2, Sp };

inline Hyb hybridization(const Molecule& m, int ai) {
  int n_double = 0, n_triple = 0;
  for (const auto& b : m.bonds) {
    if (b.a != ai && b.b != ai) continue;
    if (b.order == 2) ++n_double;
    if (b.order == 3) ++n_triple;
  }
  if (n_triple > 0 || n_double >= 2) return Hyb::Sp;
  if (n_double == 1 || m.atoms[ai].aromatic) return Hyb::Sp2;
  return Hyb::Sp3;
}

inline bool peoe_params(Elem e, Hyb h, PeoeParams& out) {
  switch (e) {
    case Elem::C:
      out = h == Hyb::Sp3 ? PeoeParams{7.98, 9.18, 1.88}
            : h == Hyb::Sp2 ? PeoeParams{8.79, 9.32, 1.51}
                            : PeoeParams{10.39, 9.45, 0.73};
      return true;
    case Elem::N:
      out = h == Hyb::Sp3 ? PeoeParams{11.54, 10.82, 1.36}
            : h == Hyb::Sp2 ? PeoeParams{12.87, 11.15, 0.85}
                            : PeoeParams{15.68, 11.70, -0.27};
      return true;
    case Elem::O:
      out = h == Hyb::Sp3 ? PeoeParams{14.18, 12.92, 1.39} : PeoeParams{17.07, 13.79, 0.47};
      return true;
    case Elem::P:
      out = PeoeParams{8.90, 8.24, 0.96};
      return true;
    case Elem::S:
      out = PeoeParams{10.14, 9.13, 1.38};
      return true;
    case Elem::Other:
      return false;
  }
  return false;
}

inline constexpr PeoeParams kHydrogenParams{7.17, 6.24, -0.56};
// Cation electronegativity for hydrogen, the special-cased value of the
// original method.
inline constexpr double kHydrogenChiPlus = 20.02;

}  // namespace detail

inline GasteigerCharges gasteiger_charges(const Molecule& m, int iterations = 6) {
  using detail::PeoeParams;
  const int n = static_cast<int>(m.atoms.size());
  GasteigerCharges result;

  // Expanded particle list: heavy atoms then one particle per implicit H.
  struct Particle {
    PeoeParams params{};
    double q = 0.0;
    double chi_plus = 0.0;
    bool ok = true;
  };
  std::vector<Particle> parts;
  std::vector<std::pair<int, int>> links;  // particle index pairs
  std::vector<int> heavy_particle(n);
  for (int i = 0; i < n; ++i) {
    Particle p;
    p.ok = detail::peoe_params(m.atoms[i].element.kind, detail::hybridization(m, i), p.params);
    if (!p.ok)
      result.warnings.push_back("MissingPEOEParameters: element '" +
                                m.atoms[i].element.symbol() + "' treated as charge 0");
    p.q = m.atoms[i].formal_charge;
    p.chi_plus = p.params.chi_plus();
    heavy_particle[i] = static_cast<int>(parts.size());
    parts.push_back(p);
  }
  std::vector<int> first_h_particle(n, -1);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < m.atoms[i].h_count; ++k) {
      Particle p;
      p.params = detail::kHydrogenParams;
      p.chi_plus = detail::kHydrogenChiPlus;
      if (first_h_particle[i] < 0) first_h_particle[i] = static_cast<int>(parts.size());
      links.push_back({heavy_particle[i], static_cast<int>(parts.size())});
      parts.push_back(p);
    }
  }
  for (const auto& b : m.bonds) links.push_back({heavy_particle[b.a], heavy_particle[b.b]});

  auto chi = [](const Particle& p) { return p.params.a + p.params.b * p.q + p.params.c * p.q * p.q; };

  double damp = 1.0;
  for (int it = 1; it <= iterations; ++it) {
    damp *= 0.5;  // 0.5^k at iteration k
    std::vector<double> delta(parts.size(), 0.0);
    for (auto [u, v] : links) {
      if (!parts[u].ok || !parts[v].ok) continue;
      double cu = chi(parts[u]), cv = chi(parts[v]);
      // charge flows toward the more electronegative side, scaled by the
      // donor's cation electronegativity
      double dq;
      if (cv > cu)
        dq = (cv - cu) / parts[u].chi_plus * damp;
      else
        dq = -(cu - cv) / parts[v].chi_plus * damp;
      delta[u] += dq;
      delta[v] -= dq;
    }
    for (size_t p = 0; p < parts.size(); ++p) parts[p].q += delta[p];
  }

  result.atom_charge.resize(n);
  result.hydrogen_charge.assign(n, 0.0);
  for (int i = 0; i < n; ++i) {
    result.atom_charge[i] = parts[heavy_particle[i]].ok ? parts[heavy_particle[i]].q : 0.0;
    if (first_h_particle[i] >= 0) result.hydrogen_charge[i] = parts[first_h_particle[i]].q;
  }
  return result;
}

}  // namespace cfmkit
