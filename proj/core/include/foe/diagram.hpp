#pragma once

// The alternating two-sided tower of uniform relations, the finitary orbit
// equivalence read off from it, its JSON artifact and the verifier that
// replays every claim from the artifact alone.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "foe/config.hpp"
#include "foe/equivalence.hpp"

namespace foe {

enum class DiagramMode { Lambda, III1 };

struct DiagramOptions {
  DiagramMode mode = DiagramMode::Lambda;
  int depth = 4;
  /// eps[n-1] belongs to level n; missing entries default to 2^-(n+1).
  std::vector<Rational> eps;
  /// Ratio base in Lambda mode; every prescribed fiber ratio is a power of it.
  Rational lambda{1, 2};
  /// Relative packing tolerance of every copying step.
  Rational packing_tol{1, 4096};
  /// Towers of the leader levels; tall towers multiply the composites.
  RefineOptions refine{2, 1 << 13, true};
  int transport_depth = 12;
  std::int64_t attempt_cap = 1 << 12;
  /// Bound on the product of the tower heights; later levels get shorter towers.
  int max_composites = 256;
  /// Labels kept per level, heaviest first; the rest joins the defect. 0 keeps all.
  int max_labels = 64;
  /// Power vectors per label when copying; each splits the label on both sides.
  int max_vectors = 4;
  /// Recorded in the artifact; the construction itself is deterministic.
  std::uint64_t seed = 0;
  /// Equal systems let the follower reuse the leader's fibers, so psi is the
  /// identity; off, equal inputs go through the generic packing path.
  bool identity_shortcut = false;
};

/// Level n of one side: h_n[i] : B_n -> B_{n-1} and the atoms of p_n.
struct SideLevel {
  std::vector<GroupoidMap> maps;
  std::vector<ClopenSet> labels;
};

struct OESide {
  SystemConfig config;
  std::vector<SideLevel> levels;
};

/// Data shared by both sides at level n.
struct DiagramLevel {
  int n = 0;
  int r = 1;
  int cell_depth = 0;  ///< K_n: atoms lie in single cylinders of this depth
  Rational eps;
  char leader = 'a';
  bool closing = false;  ///< the last level, r = 1, only refines labels
  /// The leader's tower captured one step of T outside 2 eps plus its defect.
  bool tower_bound_met = true;
  std::vector<std::vector<int>> g;        ///< [i][d] in D_{n-1}
  std::vector<std::vector<Rational>> nu;  ///< [i][d]
};

/// Atom (index, label) on both sides, with the composite power carrying the
/// final base cells of the label onto the atom.
struct MatchedPair {
  std::vector<int> index;
  int label = 0;
  std::int64_t power_a = 0, power_b = 0;
  Word word_a, word_b;  ///< enclosing cylinders
  Rational mass_a, mass_b, ratio;
};

/// One step of T on side `side` moves atom (index, label) onto atom
/// (target, label); on the other side the same move is T'^other_power.
struct CocycleEntry {
  char side = 'a';
  std::vector<int> index, target;
  int label = 0;
  Word cell;
  std::int64_t other_power = 0;
};

struct Budgets {
  Rational matching{0};  ///< sum over pairs of |mu(C) - mu'(psi C)|
  Rational ratio{0};     ///< max over pairs of |ratio - 1|
  Rational defect_a{0}, defect_b{0};  ///< mass outside every matched atom
  Rational edge_a{0}, edge_b{0};      ///< mass entering the defect in one step
  Rational packing_a{0}, packing_b{0};
  /// Per level, max over labels of |log| of realized over prescribed fiber-0 mass,
  /// as the multiplicative excess max(q, 1/q) - 1.
  std::vector<Rational> slack;
};

struct FinitaryOE {
  DiagramMode mode = DiagramMode::Lambda;
  int depth = 0;
  Rational lambda{0};
  Rational packing_tol{0};
  std::uint64_t seed = 0;
  std::vector<DiagramLevel> levels;
  OESide a, b;
  std::vector<MatchedPair> pairs;
  std::vector<CocycleEntry> n_table, m_table;
  ClopenSet coverage_a, coverage_b;
  Rational coverage_mass_a{0}, coverage_mass_b{0};
  Budgets budgets;
};

FinitaryOE build_diagram(const OdometerSystem& a, const OdometerSystem& b,
                         const DiagramOptions& opts);

/// Flat composite index of (i_1, ..., i_n), i_n least significant.
std::int64_t flat_index(const std::vector<int>& radices, const std::vector<int>& index);
std::vector<int> unflatten_index(const std::vector<int>& radices, std::int64_t flat);

std::string write_artifact(const FinitaryOE& oe);
/// Throws ParseError.
FinitaryOE read_artifact(std::string_view text);

struct CheckResult {
  std::string name;
  bool ok = true;
  std::string detail;
};

struct VerificationReport {
  std::vector<CheckResult> checks;
  Rational coverage_a{0}, coverage_b{0};
  Rational matching_deviation{0};
  Rational worst_ratio{0};
  /// III1 mode: per checked level, max over cylinders of |log A_{n+1}/A_n|
  /// as the multiplicative excess, with the side it was measured on.
  struct Drift {
    char side = 'a';
    int n = 0;
    Rational excess{0};
    Rational bound{0};
  };
  std::vector<Drift> drift;

  bool ok() const;
  /// Deterministic plain-text rendering.
  std::string text() const;
};

VerificationReport verify_oe(const FinitaryOE& oe);

}  // namespace foe
