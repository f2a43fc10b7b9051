#pragma once

#include <algorithm>
#include <cstdio>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cfmkit/canonical.hpp"
#include "cfmkit/molecule.hpp"
#include "cfmkit/rings.hpp"

namespace cfmkit {

struct Fragment {
  Molecule structure;
  double mass = 0.0;
  std::string canonical_key;
  int id = -1;
};

struct BreakMeta {
  std::vector<int> broken_bonds;  // parent bond indices; 1 (chain) or 2 (ring)
  bool is_ring_break = false;
  int ring_size = 0;
  bool ring_aromatic = false;
  bool ring_in_multi_system = false;
  int bond_distance = 0;  // shorter arc between the two broken ring bonds
  int hydrogen_movement = 0;  // NL -> ion positive
  std::vector<int> ion_root_atoms;  // parent atom indices adjacent to the break
  std::vector<int> nl_root_atoms;
};

struct GraphEdge {
  int parent = -1;
  int child = -1;
  Molecule neutral_loss;
  BreakMeta meta;
};

struct FragmentationGraph {
  std::vector<Fragment> fragments;
  std::vector<GraphEdge> edges;
  int root_id = 0;
  int max_depth = 0;
  // count of (parent, child) pairs produced by more than one physical break
  int duplicate_edge_collisions = 0;

  std::vector<std::vector<int>> children_of;  // fragment id -> edge indices
};

struct ChildBreak {
  Fragment child;
  Molecule neutral_loss;
  BreakMeta meta;
};

namespace detail {

// A side of a break: atoms of the parent plus the induced sigma skeleton.
struct SideGraph {
  std::vector<int> atoms;               // parent atom indices
  std::vector<std::pair<int, int>> bonds;  // local index pairs
  std::vector<Element> elements;
  std::vector<bool> aromatic;
};

inline SideGraph make_side(const Molecule& parent, const std::vector<int>& atoms,
                           const std::set<int>& removed_bonds) {
  SideGraph side;
  side.atoms = atoms;
  std::map<int, int> local;
  for (size_t i = 0; i < atoms.size(); ++i) {
    local[atoms[i]] = static_cast<int>(i);
    side.elements.push_back(parent.atoms[atoms[i]].element);
    side.aromatic.push_back(parent.atoms[atoms[i]].aromatic);
  }
  for (size_t bi = 0; bi < parent.bonds.size(); ++bi) {
    if (removed_bonds.count(static_cast<int>(bi))) continue;
    const Bond& b = parent.bonds[bi];
    auto ia = local.find(b.a), ib = local.find(b.b);
    if (ia != local.end() && ib != local.end())
      side.bonds.push_back({ia->second, ib->second});
  }
  return side;
}

// Exact maximum pi allocation over the side bonds: branch and bound with an
// optimistic upper bound. Bond pi capacity is 2 (max order 3); per-atom
// capacity is the valence slack. Returns the maximum total and one achieving
// assignment.
inline std::pair<int, std::vector<int>> max_pi_assignment(const SideGraph& g,
                                                          const std::vector<int>& atom_cap) {
  const int nb = static_cast<int>(g.bonds.size());
  std::vector<int> pi(nb, 0), best_pi(nb, 0), slack = atom_cap;
  int best = 0;
  bool have_best = false;
  std::function<void(int, int)> dfs = [&](int bi, int acc) {
    if (bi == nb) {
      if (acc > best || !have_best) {
        best = acc;
        best_pi = pi;
        have_best = true;
      }
      return;
    }
    // optimistic bound: every remaining bond takes its local maximum
    int ub = acc;
    for (int bj = bi; bj < nb; ++bj) {
      auto [u, v] = g.bonds[bj];
      ub += std::min({2, slack[u], slack[v]});
    }
    if (have_best && ub <= best) return;
    auto [u, v] = g.bonds[bi];
    int hi = std::min({2, slack[u], slack[v]});
    for (int take = hi; take >= 0; --take) {
      pi[bi] = take;
      slack[u] -= take;
      slack[v] -= take;
      dfs(bi + 1, acc + take);
      slack[u] += take;
      slack[v] += take;
      pi[bi] = 0;
    }
  };
  dfs(0, 0);
  return {best, best_pi};
}

// Deterministic assignment with exactly P pi units: strip units off the
// maximum assignment from the highest bond index down. Any total below the
// maximum stays feasible because removing one unit preserves validity.
inline std::vector<int> pi_assignment_of_size(const std::vector<int>& max_assign, int target) {
  std::vector<int> pi = max_assign;
  int total = 0;
  for (int x : pi) total += x;
  for (int bi = static_cast<int>(pi.size()) - 1; bi >= 0 && total > target; --bi) {
    int drop = std::min(pi[bi], total - target);
    pi[bi] -= drop;
    total -= drop;
  }
  return pi;
}

// Feasibility state for one side at one charge placement and valence choice.
struct SideSolution {
  std::vector<int> bond_order;  // per side bond
  std::vector<int> h_count;     // per side atom
  int charge_atom = -1;         // local index, -1 for neutral side
};

// Enumerates feasible total hydrogen counts for the side. For each total the
// first-found solution is kept as the deterministic representative.
inline std::map<int, SideSolution> feasible_hydrogens(const SideGraph& g, bool carries_charge) {
  const int na = static_cast<int>(g.atoms.size());
  const int nb = static_cast<int>(g.bonds.size());
  std::map<int, SideSolution> result;

  std::vector<int> deg(na, 0);
  for (auto [u, v] : g.bonds) {
    ++deg[u];
    ++deg[v];
  }

  std::vector<int> charge_sites;
  if (carries_charge) {
    for (int i = 0; i < na; ++i) charge_sites.push_back(i);
  } else {
    charge_sites.push_back(-1);
  }

  for (int qa : charge_sites) {
    // valence options per atom
    std::vector<std::vector<int>> vopts(na);
    bool impossible = false;
    for (int i = 0; i < na; ++i) {
      vopts[i] = allowed_valences(g.elements[i], i == qa ? 1 : 0);
      // drop valences below the sigma degree
      std::vector<int> kept;
      for (int v : vopts[i])
        if (v >= deg[i]) kept.push_back(v);
      vopts[i] = kept;
      if (vopts[i].empty()) impossible = true;
    }
    if (impossible) continue;

    // iterate over valence combinations (few atoms have multiple options)
    std::vector<size_t> pick(na, 0);
    while (true) {
      long long vsum = 0;
      std::vector<int> cap(na);
      for (int i = 0; i < na; ++i) {
        int v = vopts[i][pick[i]];
        vsum += v;
        cap[i] = v - deg[i];
      }
      // feasible pi totals form the interval [0, maxP]
      auto [maxP, max_assign] = max_pi_assignment(g, cap);
      for (int P = 0; P <= maxP; ++P) {
        int h = static_cast<int>(vsum) - 2 * nb - 2 * P;
        if (h < 0) continue;
        if (result.count(h)) continue;
        std::vector<int> pi = pi_assignment_of_size(max_assign, P);
        SideSolution sol;
        sol.charge_atom = qa;
        sol.bond_order.resize(nb);
        for (int bi = 0; bi < nb; ++bi) sol.bond_order[bi] = 1 + pi[bi];
        sol.h_count.resize(na);
        for (int i = 0; i < na; ++i) {
          int bsum = deg[i];
          for (int bi = 0; bi < nb; ++bi) {
            auto [u, v] = g.bonds[bi];
            if (u == i || v == i) bsum += pi[bi];
          }
          sol.h_count[i] = vopts[i][pick[i]] - bsum;
        }
        result.emplace(h, std::move(sol));
      }
      // next valence combination
      int pos = 0;
      while (pos < na) {
        if (++pick[pos] < vopts[pos].size()) break;
        pick[pos] = 0;
        ++pos;
      }
      if (pos == na) break;
    }
  }
  return result;
}

inline Molecule build_side_molecule(const SideGraph& g, const SideSolution& sol) {
  Molecule m;
  for (size_t i = 0; i < g.atoms.size(); ++i) {
    Atom a;
    a.element = g.elements[i];
    a.h_count = sol.h_count[i];
    a.formal_charge = static_cast<int>(i) == sol.charge_atom ? 1 : 0;
    a.aromatic = false;  // kekulized / pi-rearranged structures drop the flag
    m.atoms.push_back(a);
  }
  for (size_t bi = 0; bi < g.bonds.size(); ++bi) {
    Bond b;
    b.a = g.bonds[bi].first;
    b.b = g.bonds[bi].second;
    b.order = sol.bond_order[bi];
    m.bonds.push_back(b);
  }
  mark_ring_bonds(m);
  return m;
}

// Connected components after removing the given bonds; empty when not exactly two.
inline std::vector<std::vector<int>> split_components(const Molecule& m,
                                                      const std::set<int>& removed) {
  std::vector<int> comp(m.atoms.size(), -1);
  int n_comp = 0;
  for (size_t s = 0; s < m.atoms.size(); ++s) {
    if (comp[s] >= 0) continue;
    std::vector<int> stack = {static_cast<int>(s)};
    comp[s] = n_comp;
    while (!stack.empty()) {
      int u = stack.back();
      stack.pop_back();
      for (size_t bi = 0; bi < m.bonds.size(); ++bi) {
        if (removed.count(static_cast<int>(bi))) continue;
        const Bond& b = m.bonds[bi];
        if (b.a != u && b.b != u) continue;
        int v = b.other(u);
        if (comp[v] < 0) {
          comp[v] = n_comp;
          stack.push_back(v);
        }
      }
    }
    ++n_comp;
  }
  if (n_comp != 2) return {};
  std::vector<std::vector<int>> out(2);
  for (size_t i = 0; i < m.atoms.size(); ++i) out[comp[i]].push_back(static_cast<int>(i));
  return out;
}

}  // namespace detail

// Public wrapper used by tests: feasible hydrogen totals for one connected
// side of a break.
inline std::set<int> feasible_hydrogen_counts(const Molecule& parent,
                                              const std::vector<int>& side_atoms,
                                              const std::set<int>& removed_bonds,
                                              bool carries_charge) {
  auto side = detail::make_side(parent, side_atoms, removed_bonds);
  auto sols = detail::feasible_hydrogens(side, carries_charge);
  std::set<int> out;
  for (const auto& [h, sol] : sols) out.insert(h);
  return out;
}

// Enumerates all child fragments of a parent over all legal breaks:
// every non-ring bond, and every pair of bonds within each SSSR ring.
inline std::vector<ChildBreak> enumerate_child_breaks(const Fragment& parent) {
  const Molecule& m = parent.structure;
  std::vector<ChildBreak> out;
  RingInfo rings = find_rings(m);

  const int total_h = m.total_hydrogens();

  auto process_break = [&](const std::set<int>& removed, bool is_ring, int ring_idx,
                           int bond_distance) {
    auto comps = detail::split_components(m, removed);
    if (comps.empty()) return;
    for (int charged_side = 0; charged_side < 2; ++charged_side) {
      const auto& ion_atoms = comps[charged_side];
      const auto& nl_atoms = comps[1 - charged_side];
      auto ion_side = detail::make_side(m, ion_atoms, removed);
      auto nl_side = detail::make_side(m, nl_atoms, removed);
      auto ion_sols = detail::feasible_hydrogens(ion_side, true);
      if (ion_sols.empty()) continue;
      auto nl_sols = detail::feasible_hydrogens(nl_side, false);
      if (nl_sols.empty()) continue;

      int ion_h_before = 0;
      for (int a : ion_atoms) ion_h_before += m.atoms[a].h_count;

      for (const auto& [h_ion, ion_sol] : ion_sols) {
        int h_nl = total_h - h_ion;
        auto nl_it = nl_sols.find(h_nl);
        if (nl_it == nl_sols.end()) continue;

        ChildBreak cb;
        cb.child.structure = detail::build_side_molecule(ion_side, ion_sol);
        cb.child.mass = monoisotopic_mass(cb.child.structure);
        cb.child.canonical_key = canonical_key(cb.child.structure);
        cb.neutral_loss = detail::build_side_molecule(nl_side, nl_it->second);
        cb.meta.broken_bonds.assign(removed.begin(), removed.end());
        cb.meta.is_ring_break = is_ring;
        if (is_ring) {
          cb.meta.ring_size = static_cast<int>(rings.rings[ring_idx].size());
          cb.meta.ring_aromatic = rings.aromatic_flags[ring_idx];
          int sys = rings.ring_system_id[rings.rings[ring_idx][0]];
          cb.meta.ring_in_multi_system = rings.system_ring_count(sys, m) > 1;
          cb.meta.bond_distance = bond_distance;
        }
        cb.meta.hydrogen_movement = h_ion - ion_h_before;
        for (int bi : removed) {
          const Bond& b = m.bonds[bi];
          for (int end : {b.a, b.b}) {
            bool on_ion =
                std::find(ion_atoms.begin(), ion_atoms.end(), end) != ion_atoms.end();
            auto& roots = on_ion ? cb.meta.ion_root_atoms : cb.meta.nl_root_atoms;
            if (std::find(roots.begin(), roots.end(), end) == roots.end())
              roots.push_back(end);
          }
        }
        out.push_back(std::move(cb));
      }
    }
  };

  // non-ring single-bond breaks
  for (size_t bi = 0; bi < m.bonds.size(); ++bi) {
    if (m.bonds[bi].in_ring) continue;
    process_break({static_cast<int>(bi)}, false, -1, 0);
  }

  // ring breaks: all pairs of bonds within each SSSR ring
  for (size_t ri = 0; ri < rings.rings.size(); ++ri) {
    const auto& ring = rings.rings[ri];
    const int sz = static_cast<int>(ring.size());
    // bond index along the ring
    std::vector<int> ring_bonds;
    for (int i = 0; i < sz; ++i) {
      int u = ring[i], v = ring[(i + 1) % sz];
      for (size_t bi = 0; bi < m.bonds.size(); ++bi) {
        const Bond& b = m.bonds[bi];
        if ((b.a == u && b.b == v) || (b.a == v && b.b == u))
          ring_bonds.push_back(static_cast<int>(bi));
      }
    }
    for (int i = 0; i < sz; ++i)
      for (int j = i + 1; j < sz; ++j) {
        int arc = std::min(j - i, sz - (j - i));
        process_break({ring_bonds[i], ring_bonds[j]}, true, static_cast<int>(ri), arc);
      }
  }
  return out;
}

// Breadth-first recursive expansion with global deduplication by canonical key.
inline FragmentationGraph build_graph(const Molecule& root, int depth,
                                      int max_fragments = 50000) {
  if (root.total_charge() != 1)
    throw NoProtonationSite("build_graph requires a +1 charged root");
  FragmentationGraph g;
  g.max_depth = depth;

  Fragment r;
  r.structure = root;
  r.mass = monoisotopic_mass(root);
  r.canonical_key = canonical_key(root);
  r.id = 0;
  g.fragments.push_back(r);
  g.root_id = 0;

  std::map<std::string, int> index = {{r.canonical_key, 0}};
  std::set<std::pair<int, int>> edge_seen;
  std::deque<std::pair<int, int>> queue = {{0, 0}};  // (fragment id, depth)

  while (!queue.empty()) {
    auto [fid, d] = queue.front();
    queue.pop_front();
    if (d >= depth) continue;
    auto breaks = enumerate_child_breaks(g.fragments[fid]);
    for (auto& cb : breaks) {
      int child_id;
      auto it = index.find(cb.child.canonical_key);
      if (it == index.end()) {
        if (static_cast<int>(g.fragments.size()) >= max_fragments)
          throw GraphTooLarge("fragment cap " + std::to_string(max_fragments) + " exceeded");
        child_id = static_cast<int>(g.fragments.size());
        cb.child.id = child_id;
        index.emplace(cb.child.canonical_key, child_id);
        g.fragments.push_back(cb.child);
        queue.push_back({child_id, d + 1});
      } else {
        child_id = it->second;
      }
      if (child_id == fid) continue;  // identity break, not a transition
      if (!edge_seen.insert({fid, child_id}).second) {
        ++g.duplicate_edge_collisions;  // keep the first-enumerated BreakMeta
        continue;
      }
      GraphEdge e;
      e.parent = fid;
      e.child = child_id;
      e.neutral_loss = std::move(cb.neutral_loss);
      e.meta = std::move(cb.meta);
      g.edges.push_back(std::move(e));
    }
  }

  g.children_of.assign(g.fragments.size(), {});
  for (size_t ei = 0; ei < g.edges.size(); ++ei)
    g.children_of[g.edges[ei].parent].push_back(static_cast<int>(ei));
  return g;
}

// All viable protonation sites of a neutral molecule, one Molecule per site.
inline std::vector<Molecule> protonate(const Molecule& neutral) {
  if (neutral.total_charge() != 0)
    throw NoProtonationSite("protonate expects a neutral molecule");
  std::vector<Molecule> out;
  for (size_t i = 0; i < neutral.atoms.size(); ++i) {
    Molecule m = neutral;
    m.atoms[i].formal_charge = 1;
    m.atoms[i].h_count += 1;
    int valence = m.bond_order_sum(static_cast<int>(i)) + m.atoms[i].h_count;
    auto ok = allowed_valences(m.atoms[i].element, 1);
    if (std::find(ok.begin(), ok.end(), valence) != ok.end()) out.push_back(std::move(m));
  }
  if (out.empty()) throw NoProtonationSite("no atom accepts a proton under the valence rules");
  return out;
}

// Deterministic site choice: lexicographically smallest canonical key.
inline Molecule protonate_canonical(const Molecule& neutral) {
  auto sites = protonate(neutral);
  const Molecule* best = &sites[0];
  std::string best_key = canonical_key(sites[0]);
  for (size_t i = 1; i < sites.size(); ++i) {
    std::string k = canonical_key(sites[i]);
    if (k < best_key) {
      best_key = k;
      best = &sites[i];
    }
  }
  return *best;
}

// Deterministic text dump: one fragment per line, then one edge per line.
inline std::string dump_graph(const FragmentationGraph& g) {
  std::string out;
  char buf[64];
  for (const auto& f : g.fragments) {
    std::snprintf(buf, sizeof(buf), "%d %.5f ", f.id, f.mass);
    out += buf;
    out += f.canonical_key;
    out += "\n";
  }
  for (const auto& e : g.edges) {
    std::snprintf(buf, sizeof(buf), "%d %d ", e.parent, e.child);
    out += buf;
    out += canonical_key(e.neutral_loss);
    out += "\n";
  }
  return out;
}

}  // namespace cfmkit
