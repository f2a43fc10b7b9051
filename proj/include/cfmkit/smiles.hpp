#pragma once

#include <cctype>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cfmkit/molecule.hpp"
#include "cfmkit/rings.hpp"

namespace cfmkit {

// SMILES dialect: organic-subset atoms C N O P S, bracket atoms with explicit
// hydrogen count and +1 charge, bond symbols - = #, aromatic lowercase
// c n o s, single-digit ring closures and parenthesized branches.
// Stereochemistry, isotopes and multi-fragment "." input are rejected.

namespace detail {

struct PendingRing {
  int atom = -1;
  int order = 0;  // 0 = unspecified
  bool aromatic_bond = false;
};

inline Element element_from_symbol(const std::string& sym) {
  if (sym == "C") return {Elem::C, {}};
  if (sym == "N") return {Elem::N, {}};
  if (sym == "O") return {Elem::O, {}};
  if (sym == "P") return {Elem::P, {}};
  if (sym == "S") return {Elem::S, {}};
  return {Elem::Other, sym};
}

// Assigns alternating bond orders to aromatic rings: every aromatic atom
// that needs one pi bond gets matched to exactly one aromatic neighbour.
inline void kekulize(Molecule& m, const std::vector<std::vector<int>>& arom_bonds) {
  std::vector<int> need(m.atoms.size(), 0);
  std::vector<int> arom_atoms;
  for (size_t i = 0; i < m.atoms.size(); ++i) {
    if (!m.atoms[i].aromatic) continue;
    arom_atoms.push_back(static_cast<int>(i));
    // Pi requirement: default valence minus sigma bonds minus explicit Hs.
    int sigma = m.degree(static_cast<int>(i));
    int want = default_valence(m.atoms[i].element) + (m.atoms[i].formal_charge != 0 ? 1 : 0) -
               sigma - m.atoms[i].h_count;
    // Aromatic N with an explicit H (pyrrole-type) or O/S contribute a lone
    // pair instead of a pi bond; others need exactly one double bond.
    need[i] = want > 0 ? 1 : 0;
  }

  // Backtracking matching over atoms that need a pi bond.
  std::vector<int> pi_partner(m.atoms.size(), -1);
  std::function<bool(size_t)> match = [&](size_t idx) -> bool {
    if (idx == arom_atoms.size()) return true;
    int u = arom_atoms[idx];
    if (need[u] == 0 || pi_partner[u] >= 0) return match(idx + 1);
    for (int bi : arom_bonds[u]) {
      int v = m.bonds[bi].other(u);
      if (need[v] == 1 && pi_partner[v] < 0) {
        pi_partner[u] = v;
        pi_partner[v] = u;
        if (match(idx + 1)) return true;
        pi_partner[u] = pi_partner[v] = -1;
      }
    }
    return false;
  };
  if (!match(0))
    throw ValenceViolation("cannot kekulize aromatic system");
  for (auto& b : m.bonds) {
    if (pi_partner[b.a] == b.b && m.atoms[b.a].aromatic && m.atoms[b.b].aromatic &&
        b.order == 1) {
      // only promote genuine aromatic-aromatic bonds
      bool is_arom_bond = false;
      for (int bi : arom_bonds[b.a])
        if (&m.bonds[bi] == &b) is_arom_bond = true;
      if (is_arom_bond) b.order = 2;
    }
  }
}

}  // namespace detail

inline Molecule parse_smiles(const std::string& text) {
  Molecule m;
  std::vector<int> stack;                      // open-branch atom stack
  int prev = -1;                               // previous atom index
  int pending_order = 0;                       // explicit bond symbol, 0 = none
  std::map<int, detail::PendingRing> ring_open;
  std::vector<bool> explicit_h(0);             // bracket atoms: H fixed
  std::vector<std::vector<int>> arom_bond_of_atom;  // filled after parse

  // (bond index list of aromatic-aromatic bonds per atom, built at the end)
  std::vector<int> aromatic_bond_indices;

  auto add_atom = [&](Element el, bool aromatic, int h, bool h_explicit, int charge) {
    Atom a;
    a.element = el;
    a.aromatic = aromatic;
    a.h_count = h;
    a.formal_charge = charge;
    m.atoms.push_back(a);
    explicit_h.push_back(h_explicit);
    int idx = static_cast<int>(m.atoms.size()) - 1;
    if (prev >= 0) {
      Bond b;
      b.a = prev;
      b.b = idx;
      bool arom_bond = pending_order == 0 && m.atoms[prev].aromatic && aromatic;
      b.order = pending_order == 0 ? 1 : pending_order;
      m.bonds.push_back(b);
      if (arom_bond) aromatic_bond_indices.push_back(static_cast<int>(m.bonds.size()) - 1);
    }
    pending_order = 0;
    prev = idx;
  };

  size_t i = 0;
  while (i < text.size()) {
    char c = text[i];
    if (c == 'C' || c == 'N' || c == 'O' || c == 'P' || c == 'S') {
      // reject two-letter elements (Cl, Br style) explicitly
      if (c == 'C' && i + 1 < text.size() && text[i + 1] == 'l')
        throw UnsupportedToken("element 'Cl' at position " + std::to_string(i));
      add_atom(detail::element_from_symbol(std::string(1, c)), false, -1, false, 0);
      ++i;
    } else if (c == 'c' || c == 'n' || c == 'o' || c == 's') {
      add_atom(detail::element_from_symbol(std::string(1, std::toupper(c))), true, -1, false, 0);
      ++i;
    } else if (c == '[') {
      size_t close = text.find(']', i);
      if (close == std::string::npos)
        throw UnsupportedToken("unterminated bracket atom at position " + std::to_string(i));
      std::string body = text.substr(i + 1, close - i - 1);
      size_t p = 0;
      if (p < body.size() && std::isdigit(static_cast<unsigned char>(body[p])))
        throw UnsupportedToken("isotope specification in '" + body + "'");
      bool aromatic = false;
      std::string sym;
      if (p < body.size() && std::isupper(static_cast<unsigned char>(body[p]))) {
        sym = body.substr(p, 1);
        ++p;
        // allow a following lowercase for Other two-letter symbols (not Cl/Br halogens
        // of standard SMILES; anything unknown lands in Other)
        if (p < body.size() && std::islower(static_cast<unsigned char>(body[p])) &&
            body[p] != 'h') {
          sym += body[p];
          ++p;
        }
      } else if (p < body.size() && std::islower(static_cast<unsigned char>(body[p]))) {
        char lc = body[p];
        if (lc != 'c' && lc != 'n' && lc != 'o' && lc != 's')
          throw UnsupportedToken("aromatic symbol '" + std::string(1, lc) + "'");
        sym = std::string(1, std::toupper(lc));
        aromatic = true;
        ++p;
      } else {
        throw UnsupportedToken("bracket atom '" + body + "'");
      }
      int h = 0;
      if (p < body.size() && body[p] == 'H') {
        ++p;
        h = 1;
        if (p < body.size() && std::isdigit(static_cast<unsigned char>(body[p]))) {
          h = body[p] - '0';
          ++p;
        }
      }
      int charge = 0;
      if (p < body.size() && body[p] == '+') {
        ++p;
        charge = 1;
        if (p < body.size() && (body[p] == '+' || std::isdigit(static_cast<unsigned char>(body[p]))))
          throw UnsupportedToken("multiply-charged atom '" + body + "'");
      } else if (p < body.size() && body[p] == '-') {
        throw UnsupportedToken("negative charge in '" + body + "'");
      }
      if (p != body.size())
        throw UnsupportedToken("bracket atom '" + body + "'");
      Element el = detail::element_from_symbol(sym);
      if (sym.size() == 1 && sym != "C" && sym != "N" && sym != "O" && sym != "P" && sym != "S")
        el = Element{Elem::Other, sym};
      add_atom(el, aromatic, h, true, charge);
      i = close + 1;
    } else if (c == '-' || c == '=' || c == '#') {
      pending_order = (c == '-') ? 1 : (c == '=') ? 2 : 3;
      ++i;
    } else if (c == '(') {
      if (prev < 0) throw UnbalancedParenthesis("branch before any atom");
      stack.push_back(prev);
      ++i;
    } else if (c == ')') {
      if (stack.empty()) throw UnbalancedParenthesis("unmatched ')' at position " + std::to_string(i));
      prev = stack.back();
      stack.pop_back();
      ++i;
    } else if (std::isdigit(static_cast<unsigned char>(c))) {
      if (prev < 0) throw UnsupportedToken("ring closure before any atom");
      int label = c - '0';
      auto it = ring_open.find(label);
      if (it == ring_open.end()) {
        detail::PendingRing pr;
        pr.atom = prev;
        pr.order = pending_order;
        ring_open[label] = pr;
      } else {
        int order = pending_order != 0 ? pending_order : it->second.order;
        Bond b;
        b.a = it->second.atom;
        b.b = prev;
        if (b.a == b.b) throw UnclosedRingBond("ring bond to self");
        bool arom_bond = order == 0 && m.atoms[b.a].aromatic && m.atoms[b.b].aromatic;
        b.order = order == 0 ? 1 : order;
        m.bonds.push_back(b);
        if (arom_bond) aromatic_bond_indices.push_back(static_cast<int>(m.bonds.size()) - 1);
        ring_open.erase(it);
      }
      pending_order = 0;
      ++i;
    } else if (c == '.') {
      throw UnsupportedToken("multi-fragment '.' notation");
    } else if (c == '/' || c == '\\' || c == '@' || c == '%' || c == '*') {
      throw UnsupportedToken(std::string("'") + c + "' at position " + std::to_string(i));
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
    } else {
      throw UnsupportedToken(std::string("'") + c + "' at position " + std::to_string(i));
    }
  }
  if (!stack.empty()) throw UnbalancedParenthesis("unclosed '('");
  if (!ring_open.empty())
    throw UnclosedRingBond("ring bond " + std::to_string(ring_open.begin()->first) +
                           " never closed");
  if (m.atoms.empty()) throw UnsupportedToken("empty SMILES");

  // no parallel bonds
  for (size_t x = 0; x < m.bonds.size(); ++x)
    for (size_t y = x + 1; y < m.bonds.size(); ++y) {
      const Bond &p = m.bonds[x], &q = m.bonds[y];
      if ((p.a == q.a && p.b == q.b) || (p.a == q.b && p.b == q.a))
        throw UnsupportedToken("parallel bond between atoms " + std::to_string(p.a) + " and " +
                               std::to_string(p.b));
    }

  int charges = 0;
  for (const auto& a : m.atoms) charges += a.formal_charge != 0 ? 1 : 0;
  if (charges > 1) throw MultipleCharges("molecule has " + std::to_string(charges) + " charged atoms");

  // Kekulize aromatic systems before hydrogen fill.
  std::vector<std::vector<int>> arom_bonds(m.atoms.size());
  for (int bi : aromatic_bond_indices) {
    arom_bonds[m.bonds[bi].a].push_back(bi);
    arom_bonds[m.bonds[bi].b].push_back(bi);
  }
  bool any_aromatic = false;
  for (const auto& a : m.atoms) any_aromatic = any_aromatic || a.aromatic;
  if (any_aromatic) {
    // Unbracketed aromatic atoms get a provisional h_count of 0 during
    // matching; pi requirement uses the post-fill target instead.
    for (size_t ai = 0; ai < m.atoms.size(); ++ai)
      if (m.atoms[ai].h_count < 0) m.atoms[ai].h_count = 0;
    // For unbracketed aromatic carbons the fill target leaves room for one
    // pi bond; detail::kekulize works off degree + h_count, so temporarily
    // treat missing hydrogens as (default - degree - 1) for need computation.
    std::vector<int> saved_h(m.atoms.size());
    for (size_t ai = 0; ai < m.atoms.size(); ++ai) {
      saved_h[ai] = m.atoms[ai].h_count;
      if (!explicit_h[ai] && m.atoms[ai].aromatic) {
        int room = default_valence(m.atoms[ai].element) - m.degree(static_cast<int>(ai)) - 1;
        m.atoms[ai].h_count = room > 0 ? room : 0;
        // carbons keep one slot for pi; heteroatoms (n,o,s) default to the
        // lone-pair contribution, i.e. no pi needed unless valence demands it
        if (m.atoms[ai].element.kind != Elem::C) m.atoms[ai].h_count = 0;
      }
    }
    detail::kekulize(m, arom_bonds);
    for (size_t ai = 0; ai < m.atoms.size(); ++ai)
      if (explicit_h[ai]) m.atoms[ai].h_count = saved_h[ai];
      else m.atoms[ai].h_count = -1;  // re-fill below from final bond orders
  }

  // Implicit hydrogen fill for unbracketed atoms.
  for (size_t ai = 0; ai < m.atoms.size(); ++ai) {
    if (m.atoms[ai].h_count >= 0 && explicit_h[ai]) continue;
    int bsum = m.bond_order_sum(static_cast<int>(ai));
    int h = default_valence(m.atoms[ai].element) - bsum;
    if (m.atoms[ai].element.kind == Elem::S || m.atoms[ai].element.kind == Elem::P) {
      // hypervalent S/P written without brackets: pick the smallest allowed
      // valence that covers the bond sum
      for (int v : allowed_valences(m.atoms[ai].element, 0))
        if (v >= bsum) { h = v - bsum; break; }
    }
    if (h < 0)
      throw ValenceViolation("atom " + std::to_string(ai) + " exceeds its default valence");
    m.atoms[ai].h_count = h;
  }

  m.check_valences();
  if (!m.connected())
    throw UnsupportedToken("disconnected molecule");
  mark_ring_bonds(m);
  return m;
}

// Writes a parseable dialect string via DFS over the given atom order.
// All atoms are written in bracket form with explicit hydrogens so the
// output re-parses to the identical graph.
inline std::string write_smiles(const Molecule& m, const std::vector<int>* order_hint = nullptr) {
  std::vector<int> order(m.atoms.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  if (order_hint) order = *order_hint;
  std::vector<int> rank(m.atoms.size());
  for (size_t i = 0; i < order.size(); ++i) rank[order[i]] = static_cast<int>(i);

  auto adj = m.adjacency();
  auto sorted_nbrs = [&](int ai) {
    std::vector<int> nbrs = adj[ai];
    std::sort(nbrs.begin(), nbrs.end(), [&](int x, int y) {
      return rank[m.bonds[x].other(ai)] < rank[m.bonds[y].other(ai)];
    });
    return nbrs;
  };
  auto bond_token = [&](int order_) -> std::string {
    return order_ == 2 ? "=" : order_ == 3 ? "#" : "";
  };
  auto atom_token = [&](int ai) {
    const Atom& a = m.atoms[ai];
    std::string t = "[" + a.element.symbol();
    if (a.h_count == 1) t += "H";
    else if (a.h_count > 1) t += "H" + std::to_string(a.h_count);
    if (a.formal_charge == 1) t += "+";
    t += "]";
    return t;
  };

  // Dry pass: discover DFS back edges and attach ring labels to the atom
  // visited first, so digits can be printed when that atom is emitted.
  std::vector<std::vector<std::pair<int, int>>> ring_marks(m.atoms.size());  // (label, order)
  {
    std::vector<char> ad(m.atoms.size(), 0), bd(m.bonds.size(), 0);
    int label_counter = 1;
    std::function<void(int)> dry = [&](int ai) {
      ad[ai] = 1;
      for (int bi : sorted_nbrs(ai)) {
        int v = m.bonds[bi].other(ai);
        if (!bd[bi] && ad[v]) {
          bd[bi] = 1;
          ring_marks[v].push_back({label_counter++, m.bonds[bi].order});
        }
      }
      for (int bi : sorted_nbrs(ai)) {
        int v = m.bonds[bi].other(ai);
        if (!bd[bi] && !ad[v]) {
          bd[bi] = 1;
          dry(v);
        }
      }
    };
    dry(order[0]);
  }

  // Real pass: identical traversal; the k-th back edge closes label k.
  std::string out;
  std::vector<char> atom_done(m.atoms.size(), 0), bond_done(m.bonds.size(), 0);
  int next_ring_label = 1;
  std::function<void(int, int)> emit = [&](int ai, int via_bond) {
    atom_done[ai] = 1;
    if (via_bond >= 0) out += bond_token(m.bonds[via_bond].order);
    out += atom_token(ai);
    for (auto [label, border] : ring_marks[ai]) {
      out += bond_token(border);
      out += std::to_string(label);
    }
    for (int bi : sorted_nbrs(ai)) {
      int v = m.bonds[bi].other(ai);
      if (!bond_done[bi] && atom_done[v]) {
        bond_done[bi] = 1;
        out += bond_token(m.bonds[bi].order);
        out += std::to_string(next_ring_label++);
      }
    }
    std::vector<int> tree_children;
    for (int bi : sorted_nbrs(ai)) {
      int v = m.bonds[bi].other(ai);
      if (!bond_done[bi] && !atom_done[v]) tree_children.push_back(bi);
    }
    for (size_t k = 0; k < tree_children.size(); ++k) {
      int bi = tree_children[k];
      int v = m.bonds[bi].other(ai);
      if (atom_done[v]) continue;
      bond_done[bi] = 1;
      bool last = true;
      for (size_t k2 = k + 1; k2 < tree_children.size(); ++k2)
        if (!atom_done[m.bonds[tree_children[k2]].other(ai)]) last = false;
      if (!last) out += "(";
      emit(v, bi);
      if (!last) out += ")";
    }
  };
  emit(order[0], -1);
  return out;
}

}  // namespace cfmkit
