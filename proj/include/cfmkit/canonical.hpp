#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "cfmkit/molecule.hpp"
#include "cfmkit/smiles.hpp"

namespace cfmkit {

namespace detail {

// Initial atom invariant: element, hydrogen count, charge, degree and the
// sorted multiset of incident bond orders. Aromatic flags are excluded so
// kekulized fragments compare equal to their flagged parents.
inline std::string atom_invariant(const Molecule& m, int ai) {
  const Atom& a = m.atoms[ai];
  std::string s = a.element.symbol() + "/" + std::to_string(a.h_count) + "/" +
                  std::to_string(a.formal_charge) + "/";
  std::vector<int> orders;
  for (const auto& b : m.bonds)
    if (b.a == ai || b.b == ai) orders.push_back(b.order);
  std::sort(orders.begin(), orders.end());
  for (int o : orders) s += std::to_string(o);
  return s;
}

// One round of neighbourhood refinement; returns true when ranks changed.
inline bool refine_once(const Molecule& m, const std::vector<std::vector<int>>& adj,
                        std::vector<int>& ranks) {
  const int n = static_cast<int>(m.atoms.size());
  std::vector<std::pair<std::vector<int>, int>> keys(n);
  for (int i = 0; i < n; ++i) {
    std::vector<int> key = {ranks[i]};
    std::vector<std::pair<int, int>> nbr;  // (bond order, neighbour rank)
    for (int bi : adj[i]) nbr.push_back({m.bonds[bi].order, ranks[m.bonds[bi].other(i)]});
    std::sort(nbr.begin(), nbr.end());
    for (auto [o, r] : nbr) {
      key.push_back(o);
      key.push_back(r);
    }
    keys[i] = {std::move(key), i};
  }
  auto sorted = keys;
  std::sort(sorted.begin(), sorted.end());
  std::vector<int> new_ranks(n);
  int rank = 0;
  for (int i = 0; i < n; ++i) {
    if (i > 0 && sorted[i].first != sorted[i - 1].first) ++rank;
    new_ranks[sorted[i].second] = rank;
  }
  bool changed = new_ranks != ranks;
  ranks = new_ranks;
  return changed;
}

inline void refine(const Molecule& m, const std::vector<std::vector<int>>& adj,
                   std::vector<int>& ranks) {
  while (refine_once(m, adj, ranks)) {
  }
}

// Individualization-refinement: resolves remaining ties by trying each tied
// atom in the first non-discrete class and keeping the lexicographically
// smallest serialization. Exponential only on highly symmetric graphs, which
// stay tiny in this domain.
inline std::string canonical_string(const Molecule& m, const std::vector<std::vector<int>>& adj,
                                    std::vector<int> ranks) {
  const int n = static_cast<int>(m.atoms.size());
  refine(m, adj, ranks);

  // find first class with more than one member
  std::map<int, std::vector<int>> classes;
  for (int i = 0; i < n; ++i) classes[ranks[i]].push_back(i);
  for (auto& [r, members] : classes) {
    if (members.size() > 1) {
      std::string best;
      for (int pick : members) {
        auto forked = ranks;
        for (int i = 0; i < n; ++i)
          forked[i] *= 2;
        forked[pick] -= 1;  // individualize
        std::string s = canonical_string(m, adj, std::move(forked));
        if (best.empty() || s < best) best = s;
      }
      return best;
    }
  }

  // discrete ranking: serialize with the rank-0 atom as DFS root
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[ranks[i]] = i;
  return write_smiles(m, &order);
}

}  // namespace detail

// Deterministic canonical serialization; equal strings iff the molecular
// graphs (atoms, hydrogen counts, charge placement, bond orders) are
// isomorphic. Used as the fragment identity key.
inline std::string canonical_key(const Molecule& m) {
  auto adj = m.adjacency();
  const int n = static_cast<int>(m.atoms.size());
  std::vector<std::string> inv(n);
  for (int i = 0; i < n; ++i) inv[i] = detail::atom_invariant(m, i);
  std::vector<std::string> sorted_inv = inv;
  std::sort(sorted_inv.begin(), sorted_inv.end());
  sorted_inv.erase(std::unique(sorted_inv.begin(), sorted_inv.end()), sorted_inv.end());
  std::vector<int> ranks(n);
  for (int i = 0; i < n; ++i)
    ranks[i] = static_cast<int>(std::lower_bound(sorted_inv.begin(), sorted_inv.end(), inv[i]) -
                                sorted_inv.begin());
  return detail::canonical_string(m, adj, std::move(ranks));
}

}  // namespace cfmkit
