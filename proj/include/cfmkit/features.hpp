#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "cfmkit/fraggraph.hpp"
#include "cfmkit/gasteiger.hpp"
#include "cfmkit/molecule.hpp"

namespace cfmkit {

// Frozen index layout of the binary break-feature vector. Changing any group
// size or ordering requires bumping the version string.
struct FeatureLayout {
  bool quadratic = false;

  static constexpr int kBias = 0;
  static constexpr int kBreakAtomPairOffset = 1;
  static constexpr int kBreakAtomPairSize = 72;  // 6 x 6 elements x {chain, ring}
  static constexpr int kRootPathsOffset = 73;
  static constexpr int kRootPathsSize = 2020;  // 2 sides x (36*4 + 1 + 216*4 + 1)
  static constexpr int kSidePathBlock = 1010;
  static constexpr int kGasteigerOffset = 2093;
  static constexpr int kGasteigerSize = 288;  // 12 x 12 bins x {chain, ring}
  static constexpr int kHydrogenOffset = 2381;
  static constexpr int kHydrogenSize = 10;  // {-4..+4, other}
  static constexpr int kRingOffset = 2391;
  static constexpr int kRingSize = 12;  // arom yes/no + multi + size 5 + dist 4
  static constexpr int kBaseDim = 2403;
  static constexpr int kQuadItems = kBaseDim - 1;  // non-bias base features

  static std::string version() { return "cfmkit-feature-layout-1"; }

  long long total_dim() const {
    long long base = kBaseDim;
    if (quadratic) base += static_cast<long long>(kQuadItems) * (kQuadItems - 1) / 2;
    return base;
  }

  // Unordered-pair index over non-bias base indices i < j (both in 1..2402).
  static long long quad_index(int i, int j) {
    long long a = i - 1, b = j - 1;  // 0-based over kQuadItems items
    return kBaseDim + a * kQuadItems - a * (a + 1) / 2 + (b - a - 1);
  }
};

struct SparseFeatureVector {
  std::vector<long long> active_indices;  // sorted, unique; always contains 0
};

inline long long feature_dim(const FeatureLayout& layout) { return layout.total_dim(); }

namespace detail {

inline int elem_feature_index(const Element& e) {
  switch (e.kind) {
    case Elem::C: return 0;
    case Elem::N: return 1;
    case Elem::O: return 2;
    case Elem::P: return 3;
    case Elem::S: return 4;
    default: return 5;
  }
}

// Twelve bins over the charge axis: two overflow bins beyond +-0.5 and ten
// bins between the fixed edges +-{0.05, 0.1, 0.2, 0.3, 0.5} around zero.
inline int gasteiger_bin(double q) {
  static const double edges[11] = {-0.5, -0.3, -0.2, -0.1, -0.05, 0.0,
                                   0.05, 0.1,  0.2,  0.3,  0.5};
  int bin = 0;
  for (double e : edges)
    if (q >= e) ++bin;
  return bin;  // 0..11
}

// Representative root atom of one side: lexicographically smallest element
// symbol, ties broken by the lower parent atom index.
inline int representative_root(const Molecule& parent, const std::vector<int>& roots) {
  int best = roots[0];
  for (int r : roots) {
    const std::string a = parent.atoms[r].element.symbol();
    const std::string b = parent.atoms[best].element.symbol();
    if (a < b || (a == b && r < best)) best = r;
  }
  return best;
}

// All simple paths of exactly `len` atoms starting at `root`, never crossing a
// broken bond. Emits (element sequence index, first bond in ring, any pi bond).
struct PathContext {
  int seq = 0;       // base-6 element sequence, root first
  bool ring = false; // first bond of the path is a ring bond
  bool pi = false;   // any bond along the path has order >= 2
};

inline void collect_paths(const Molecule& parent, const std::set<int>& broken, int root,
                          int len, std::vector<PathContext>& out) {
  auto adj = parent.adjacency();
  std::vector<char> visited(parent.atoms.size(), 0);
  std::vector<int> atom_path = {root};
  std::function<void(int, int, bool, bool)> dfs = [&](int u, int depth, bool first_ring,
                                                      bool any_pi) {
    if (depth == len) {
      PathContext pc;
      for (int a : atom_path) pc.seq = pc.seq * 6 + elem_feature_index(parent.atoms[a].element);
      pc.ring = first_ring;
      pc.pi = any_pi;
      out.push_back(pc);
      return;
    }
    for (int bi : adj[u]) {
      if (broken.count(bi)) continue;
      const Bond& b = parent.bonds[bi];
      int v = b.other(u);
      if (visited[v]) continue;
      visited[v] = 1;
      atom_path.push_back(v);
      dfs(v, depth + 1, depth == 1 ? b.in_ring : first_ring, any_pi || b.order >= 2);
      atom_path.pop_back();
      visited[v] = 0;
    }
  };
  visited[root] = 1;
  dfs(root, 1, false, false);
}

}  // namespace detail

// Feature extraction for a single break. `parent` is the unbroken fragment the
// break applies to; `charges` are its Gasteiger charges.
inline SparseFeatureVector compute_features(const Fragment& parent, const Fragment& child,
                                            const Molecule& neutral_loss, const BreakMeta& meta,
                                            const GasteigerCharges& charges,
                                            const FeatureLayout& layout) {
  (void)child;
  (void)neutral_loss;
  const Molecule& m = parent.structure;
  std::set<int> broken(meta.broken_bonds.begin(), meta.broken_bonds.end());
  std::set<long long> on = {FeatureLayout::kBias};
  const int ring_ctx = meta.is_ring_break ? 1 : 0;

  // break_atom_pair: ordered (ion element, NL element) x ring context
  const int ion_rep = detail::representative_root(m, meta.ion_root_atoms);
  const int nl_rep = detail::representative_root(m, meta.nl_root_atoms);
  {
    int ie = detail::elem_feature_index(m.atoms[ion_rep].element);
    int ne = detail::elem_feature_index(m.atoms[nl_rep].element);
    on.insert(FeatureLayout::kBreakAtomPairOffset + (ie * 6 + ne) * 2 + ring_ctx);
  }

  // root_paths: per side, all length-2 and length-3 element paths from every
  // root atom, plus the per-length no-path indicators
  for (int side = 0; side < 2; ++side) {
    const auto& roots = side == 0 ? meta.ion_root_atoms : meta.nl_root_atoms;
    const long long base = FeatureLayout::kRootPathsOffset +
                           static_cast<long long>(side) * FeatureLayout::kSidePathBlock;
    for (int len : {2, 3}) {
      const long long group = len == 2 ? base : base + 36 * 4 + 1;
      const long long no_path = len == 2 ? base + 36 * 4 : base + 36 * 4 + 1 + 216 * 4;
      for (int root : roots) {
        std::vector<detail::PathContext> paths;
        detail::collect_paths(m, broken, root, len, paths);
        if (paths.empty()) {
          on.insert(no_path);
          continue;
        }
        for (const auto& p : paths) {
          int ctx = (p.ring ? 2 : 0) + (p.pi ? 1 : 0);
          on.insert(group + static_cast<long long>(p.seq) * 4 + ctx);
        }
      }
    }
  }

  // gasteiger_pair: quantized charges of the representative roots in the
  // unbroken parent
  {
    int ib = detail::gasteiger_bin(charges.atom_charge[ion_rep]);
    int nb = detail::gasteiger_bin(charges.atom_charge[nl_rep]);
    on.insert(FeatureLayout::kGasteigerOffset + (ib * 12 + nb) * 2 + ring_ctx);
  }

  // hydrogen_movement: {-4..+4} plus an overflow slot
  {
    int hm = meta.hydrogen_movement;
    int slot = (hm >= -4 && hm <= 4) ? hm + 4 : 9;
    on.insert(FeatureLayout::kHydrogenOffset + slot);
  }

  // ring_features, only for ring breaks
  if (meta.is_ring_break) {
    const long long r = FeatureLayout::kRingOffset;
    on.insert(r + (meta.ring_aromatic ? 0 : 1));
    if (meta.ring_in_multi_system) on.insert(r + 2);
    int size_slot;
    switch (meta.ring_size) {
      case 3: size_slot = 0; break;
      case 4: size_slot = 1; break;
      case 5: size_slot = 2; break;
      case 6: size_slot = 3; break;
      default: size_slot = 4; break;
    }
    on.insert(r + 3 + size_slot);
    int dist_slot = meta.bond_distance >= 4 ? 3 : meta.bond_distance - 1;
    on.insert(r + 8 + dist_slot);
  }

  SparseFeatureVector phi;
  phi.active_indices.assign(on.begin(), on.end());

  if (layout.quadratic) {
    std::vector<int> base_on;
    for (long long i : phi.active_indices)
      if (i != FeatureLayout::kBias) base_on.push_back(static_cast<int>(i));
    for (size_t i = 0; i < base_on.size(); ++i)
      for (size_t j = i + 1; j < base_on.size(); ++j)
        phi.active_indices.push_back(FeatureLayout::quad_index(base_on[i], base_on[j]));
    std::sort(phi.active_indices.begin(), phi.active_indices.end());
  }
  return phi;
}

// Human-readable name for any base feature index, "group:description".
inline std::string feature_name(const FeatureLayout& layout, long long idx) {
  static const char* elems[6] = {"C", "N", "O", "P", "S", "other"};
  auto elem_seq = [&](long long code, int len) {
    std::string s;
    std::vector<int> digits(len);
    for (int i = len - 1; i >= 0; --i) {
      digits[i] = static_cast<int>(code % 6);
      code /= 6;
    }
    for (int i = 0; i < len; ++i) {
      if (i) s += "-";
      s += elems[digits[i]];
    }
    return s;
  };
  auto ctx_name = [](long long ctx) {
    std::string s = (ctx & 2) ? "ring" : "chain";
    s += (ctx & 1) ? "+pi" : "";
    return s;
  };
  if (idx == FeatureLayout::kBias) return "bias";
  if (idx < FeatureLayout::kRootPathsOffset) {
    long long v = idx - FeatureLayout::kBreakAtomPairOffset;
    return std::string("break_atom_pair:") + elems[v / 12] + "-" + elems[(v / 2) % 6] +
           ((v & 1) ? ":ring" : ":chain");
  }
  if (idx < FeatureLayout::kGasteigerOffset) {
    long long v = idx - FeatureLayout::kRootPathsOffset;
    std::string side = v < FeatureLayout::kSidePathBlock ? "ion" : "nl";
    v %= FeatureLayout::kSidePathBlock;
    if (v == 36 * 4) return "root_paths:" + side + ":no-path-2";
    if (v == 36 * 4 + 1 + 216 * 4) return "root_paths:" + side + ":no-path-3";
    if (v < 36 * 4)
      return "root_paths:" + side + ":" + elem_seq(v / 4, 2) + ":" + ctx_name(v % 4);
    v -= 36 * 4 + 1;
    return "root_paths:" + side + ":" + elem_seq(v / 4, 3) + ":" + ctx_name(v % 4);
  }
  if (idx < FeatureLayout::kHydrogenOffset) {
    long long v = idx - FeatureLayout::kGasteigerOffset;
    return "gasteiger_pair:ion" + std::to_string(v / 24) + ":nl" + std::to_string((v / 2) % 12) +
           ((v & 1) ? ":ring" : ":chain");
  }
  if (idx < FeatureLayout::kRingOffset) {
    long long v = idx - FeatureLayout::kHydrogenOffset;
    return v == 9 ? "hydrogen_movement:other" : "hydrogen_movement:" + std::to_string(v - 4);
  }
  if (idx < FeatureLayout::kBaseDim) {
    static const char* names[12] = {"aromatic",  "non-aromatic", "multi-ring-system",
                                    "size-3",    "size-4",       "size-5",
                                    "size-6",    "size-other",   "distance-1",
                                    "distance-2", "distance-3",  "distance-4+"};
    return std::string("ring_features:") + names[idx - FeatureLayout::kRingOffset];
  }
  if (layout.quadratic && idx < layout.total_dim()) return "quadratic_pair";
  return "out-of-range";
}

}  // namespace cfmkit
