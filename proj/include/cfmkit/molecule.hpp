#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cfmkit/errors.hpp"

namespace cfmkit {

enum class Elem : uint8_t { C = 0, N = 1, O = 2, P = 3, S = 4, Other = 5 };

struct Element {
  Elem kind = Elem::C;
  std::string label;  // original symbol, set only for Other

  bool operator==(const Element& rhs) const {
    return kind == rhs.kind && (kind != Elem::Other || label == rhs.label);
  }

  std::string symbol() const {
    switch (kind) {
      case Elem::C: return "C";
      case Elem::N: return "N";
      case Elem::O: return "O";
      case Elem::P: return "P";
      case Elem::S: return "S";
      case Elem::Other: return label;
    }
    return "?";
  }
};

struct Atom {
  Element element;
  int h_count = 0;
  int formal_charge = 0;  // 0 or +1
  bool aromatic = false;
};

struct Bond {
  int a = -1;
  int b = -1;
  int order = 1;  // 1, 2 or 3
  bool in_ring = false;

  int other(int atom) const { return atom == a ? b : a; }
};

// Allowed heavy-atom valences. For a +1 charge the allowed set is
// {v-1, v+1} for each neutral valence v, which keeps the electron count even.
inline std::vector<int> allowed_valences(const Element& e, int formal_charge) {
  std::vector<int> neutral;
  switch (e.kind) {
    case Elem::C: neutral = {4}; break;
    case Elem::N: neutral = {3}; break;
    case Elem::O: neutral = {2}; break;
    case Elem::P: neutral = {3, 5}; break;
    case Elem::S: neutral = {2, 4, 6}; break;
    case Elem::Other: neutral = {}; break;
  }
  if (formal_charge == 0) return neutral;
  std::vector<int> charged;
  for (int v : neutral) {
    if (v - 1 >= 0) charged.push_back(v - 1);
    charged.push_back(v + 1);
  }
  std::sort(charged.begin(), charged.end());
  charged.erase(std::unique(charged.begin(), charged.end()), charged.end());
  return charged;
}

inline int default_valence(const Element& e) {
  switch (e.kind) {
    case Elem::C: return 4;
    case Elem::N: return 3;
    case Elem::O: return 2;
    case Elem::P: return 3;
    case Elem::S: return 2;
    case Elem::Other: return 0;
  }
  return 0;
}

struct Molecule {
  std::vector<Atom> atoms;
  std::vector<Bond> bonds;

  int total_charge() const {
    int q = 0;
    for (const auto& a : atoms) q += a.formal_charge;
    return q;
  }

  int total_hydrogens() const {
    int h = 0;
    for (const auto& a : atoms) h += a.h_count;
    return h;
  }

  int bond_order_sum(int atom) const {
    int s = 0;
    for (const auto& b : bonds)
      if (b.a == atom || b.b == atom) s += b.order;
    return s;
  }

  int degree(int atom) const {
    int s = 0;
    for (const auto& b : bonds)
      if (b.a == atom || b.b == atom) ++s;
    return s;
  }

  std::vector<std::vector<int>> adjacency() const {
    std::vector<std::vector<int>> adj(atoms.size());
    for (size_t i = 0; i < bonds.size(); ++i) {
      adj[bonds[i].a].push_back(static_cast<int>(i));
      adj[bonds[i].b].push_back(static_cast<int>(i));
    }
    return adj;
  }

  bool connected() const {
    if (atoms.empty()) return false;
    std::vector<char> seen(atoms.size(), 0);
    std::vector<int> stack = {0};
    seen[0] = 1;
    size_t n = 1;
    auto adj = adjacency();
    while (!stack.empty()) {
      int u = stack.back();
      stack.pop_back();
      for (int bi : adj[u]) {
        int v = bonds[bi].other(u);
        if (!seen[v]) {
          seen[v] = 1;
          ++n;
          stack.push_back(v);
        }
      }
    }
    return n == atoms.size();
  }

  // Checks every atom sits at an allowed valence; throws ValenceViolation.
  void check_valences() const {
    for (size_t i = 0; i < atoms.size(); ++i) {
      const Atom& a = atoms[i];
      if (a.element.kind == Elem::Other) continue;  // no table for exotic atoms
      int total = bond_order_sum(static_cast<int>(i)) + a.h_count;
      auto ok = allowed_valences(a.element, a.formal_charge);
      if (std::find(ok.begin(), ok.end(), total) == ok.end())
        throw ValenceViolation("atom " + std::to_string(i) + " (" + a.element.symbol() +
                               ") has valence " + std::to_string(total));
    }
  }
};

namespace constants {
// Monoisotopic masses (most abundant isotope), Da.
inline constexpr double kMassH = 1.007825;
inline constexpr double kMassC = 12.000000;
inline constexpr double kMassN = 14.003074;
inline constexpr double kMassO = 15.994915;
inline constexpr double kMassP = 30.973762;
inline constexpr double kMassS = 31.972071;
inline constexpr double kMassElectron = 0.000549;
inline constexpr double kMassProton = kMassH - kMassElectron;  // 1.007276
}  // namespace constants

inline double element_mass(const Element& e) {
  switch (e.kind) {
    case Elem::C: return constants::kMassC;
    case Elem::N: return constants::kMassN;
    case Elem::O: return constants::kMassO;
    case Elem::P: return constants::kMassP;
    case Elem::S: return constants::kMassS;
    case Elem::Other:
      throw UnknownElementMass("no monoisotopic mass for element '" + e.label + "'");
  }
  throw UnknownElementMass("bad element kind");
}

// Sum of atomic monoisotopic masses minus one electron per unit positive charge.
inline double monoisotopic_mass(const Molecule& m) {
  double mass = 0.0;
  for (const auto& a : m.atoms) {
    mass += element_mass(a.element);
    mass += a.h_count * constants::kMassH;
    mass -= a.formal_charge * constants::kMassElectron;
  }
  return mass;
}

}  // namespace cfmkit
