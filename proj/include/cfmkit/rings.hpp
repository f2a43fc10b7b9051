#pragma once

#include <algorithm>
#include <deque>
#include <functional>
#include <vector>

#include "cfmkit/molecule.hpp"

namespace cfmkit {

struct RingInfo {
  // Each ring is a cycle of atom indices in traversal order.
  std::vector<std::vector<int>> rings;
  // Per-atom ring-system label, -1 for atoms outside any ring. Two rings
  // sharing an atom or bond belong to the same system.
  std::vector<int> ring_system_id;
  // Per-ring flag: all member atoms were parsed as aromatic.
  std::vector<bool> aromatic_flags;

  bool atom_in_ring(int atom) const {
    for (const auto& r : rings)
      if (std::find(r.begin(), r.end(), atom) != r.end()) return true;
    return false;
  }

  // Number of distinct rings the given ring system spans.
  int system_ring_count(int system_id, const Molecule& m) const {
    int n = 0;
    for (const auto& r : rings)
      if (!r.empty() && ring_system_id[r.front()] == system_id) ++n;
    (void)m;
    return n;
  }
};

namespace detail {

// Shortest cycle through the given bond, found by BFS between its endpoints
// with the bond itself removed. Returns atom cycle, empty when acyclic.
inline std::vector<int> shortest_cycle_through(const Molecule& m, int bond_idx) {
  const Bond& target = m.bonds[bond_idx];
  auto adj = m.adjacency();
  std::vector<int> prev(m.atoms.size(), -1), prev_bond(m.atoms.size(), -1);
  std::vector<char> seen(m.atoms.size(), 0);
  std::deque<int> queue = {target.a};
  seen[target.a] = 1;
  while (!queue.empty()) {
    int u = queue.front();
    queue.pop_front();
    if (u == target.b) break;
    for (int bi : adj[u]) {
      if (bi == bond_idx) continue;
      int v = m.bonds[bi].other(u);
      if (!seen[v]) {
        seen[v] = 1;
        prev[v] = u;
        prev_bond[v] = bi;
        queue.push_back(v);
      }
    }
  }
  if (!seen[target.b] || target.a == target.b) return {};
  std::vector<int> path;
  for (int u = target.b; u != -1; u = prev[u]) path.push_back(u);
  return path;  // cycle: a ... b closed by the target bond
}

inline std::vector<char> cycle_bond_mask(const Molecule& m, const std::vector<int>& cycle) {
  std::vector<char> mask(m.bonds.size(), 0);
  for (size_t i = 0; i < cycle.size(); ++i) {
    int u = cycle[i], v = cycle[(i + 1) % cycle.size()];
    for (size_t bi = 0; bi < m.bonds.size(); ++bi) {
      const Bond& b = m.bonds[bi];
      if ((b.a == u && b.b == v) || (b.a == v && b.b == u)) mask[bi] = 1;
    }
  }
  return mask;
}

}  // namespace detail

// Smallest-set-of-smallest-rings cycle basis via greedy GF(2) independence
// over per-bond shortest cycles.
inline RingInfo find_rings(const Molecule& m) {
  RingInfo info;
  info.ring_system_id.assign(m.atoms.size(), -1);
  const int n_atoms = static_cast<int>(m.atoms.size());
  const int n_bonds = static_cast<int>(m.bonds.size());

  // cyclomatic number per connected component sums to |E| - |V| + n_components
  int components = 0;
  {
    std::vector<char> seen(n_atoms, 0);
    auto adj = m.adjacency();
    for (int s = 0; s < n_atoms; ++s) {
      if (seen[s]) continue;
      ++components;
      std::vector<int> stack = {s};
      seen[s] = 1;
      while (!stack.empty()) {
        int u = stack.back();
        stack.pop_back();
        for (int bi : adj[u]) {
          int v = m.bonds[bi].other(u);
          if (!seen[v]) {
            seen[v] = 1;
            stack.push_back(v);
          }
        }
      }
    }
  }
  const int n_rings = n_bonds - n_atoms + components;
  if (n_rings <= 0) return info;

  // Candidate cycles: shortest cycle through every bond, sorted by size.
  std::vector<std::vector<int>> candidates;
  for (int bi = 0; bi < n_bonds; ++bi) {
    auto c = detail::shortest_cycle_through(m, bi);
    if (!c.empty()) candidates.push_back(std::move(c));
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const auto& x, const auto& y) { return x.size() < y.size(); });

  // Greedy GF(2) basis selection on bond incidence vectors.
  std::vector<std::vector<char>> basis;
  for (const auto& c : candidates) {
    if (static_cast<int>(info.rings.size()) == n_rings) break;
    auto vec = detail::cycle_bond_mask(m, c);
    auto reduced = vec;
    for (const auto& b : basis) {
      // reduce by pivot = first set bit of b
      int pivot = -1;
      for (int i = 0; i < n_bonds; ++i)
        if (b[i]) { pivot = i; break; }
      if (pivot >= 0 && reduced[pivot])
        for (int i = 0; i < n_bonds; ++i) reduced[i] ^= b[i];
    }
    bool nonzero = std::any_of(reduced.begin(), reduced.end(), [](char x) { return x != 0; });
    if (nonzero) {
      basis.push_back(reduced);
      info.rings.push_back(c);
    }
  }

  // Aromaticity: a ring is aromatic when all member atoms carry the flag.
  for (const auto& r : info.rings) {
    bool arom = true;
    for (int a : r) arom = arom && m.atoms[a].aromatic;
    info.aromatic_flags.push_back(arom);
  }

  // Ring systems: union-find over rings sharing atoms.
  std::vector<int> ring_group(info.rings.size());
  for (size_t i = 0; i < ring_group.size(); ++i) ring_group[i] = static_cast<int>(i);
  std::function<int(int)> find = [&](int x) {
    while (ring_group[x] != x) x = ring_group[x] = ring_group[ring_group[x]];
    return x;
  };
  for (size_t i = 0; i < info.rings.size(); ++i)
    for (size_t j = i + 1; j < info.rings.size(); ++j) {
      bool share = false;
      for (int a : info.rings[i])
        if (std::find(info.rings[j].begin(), info.rings[j].end(), a) != info.rings[j].end())
          share = true;
      if (share) ring_group[find(static_cast<int>(j))] = find(static_cast<int>(i));
    }
  // Relabel groups densely in first-appearance order.
  std::vector<int> label(info.rings.size(), -1);
  int next = 0;
  for (size_t i = 0; i < info.rings.size(); ++i) {
    int root = find(static_cast<int>(i));
    if (label[root] < 0) label[root] = next++;
    for (int a : info.rings[i]) info.ring_system_id[a] = label[root];
  }
  return info;
}

// Marks bond.in_ring from the SSSR of the molecule.
inline void mark_ring_bonds(Molecule& m) {
  for (auto& b : m.bonds) b.in_ring = false;
  RingInfo info = find_rings(m);
  for (const auto& r : info.rings) {
    for (size_t i = 0; i < r.size(); ++i) {
      int u = r[i], v = r[(i + 1) % r.size()];
      for (auto& b : m.bonds)
        if ((b.a == u && b.b == v) || (b.a == v && b.b == u)) b.in_ring = true;
    }
  }
}

}  // namespace cfmkit
