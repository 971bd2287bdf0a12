#pragma once

// Krieger-type classification from the periodic tail, essential-value
// witnesses, clopen gaps, special measures and the ergodicity check for
// the ratio-one subrelation.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "foe/lattice.hpp"
#include "foe/odometer.hpp"

namespace foe {

struct RatioLattice {
  std::vector<mpz_class> primes;
  std::vector<Rational> ratios;              ///< distinct one-step tail ratios
  std::vector<std::vector<long>> vectors;    ///< exponent vector of each ratio
  GroupShape shape = GroupShape::Trivial;
  std::optional<Rational> generator;         ///< lambda < 1 when cyclic
};

/// Ratios w(0)/w(max) and w(c+1)/w(c) of the repeating block levels.
RatioLattice ratio_lattice(const OdometerSystem& sys);

/// T^power maps `a` onto `b` with cocycle ratio exactly `ratio` on all of a.
struct Witness {
  ClopenSet a;
  ClopenSet b;
  std::int64_t power = 0;
  Rational ratio;
  /// The same pattern one block period deeper, showing recurrence.
  ClopenSet a_deeper;
  std::int64_t power_deeper = 0;
};

/// Tail-pattern witness: a = [0^s u], b = [0^s v] with u, v words over
/// tail levels. Searches lengths up to max_len, lexicographically.
std::optional<Witness> find_witness(const OdometerSystem& sys, const Rational& ratio,
                                    int max_len = 0);
/// Replays a witness through groupoid pieces; true iff every ratio matches.
bool replay_witness(const OdometerSystem& sys, const Witness& w);

enum class TypeKind { MeasurePreserving, TypeIIILambda, TypeIII1Candidate, Unknown };

struct TypeLabel {
  TypeKind kind = TypeKind::Unknown;
  Rational lambda{0};  ///< only for TypeIIILambda
  std::vector<Witness> witnesses;

  bool same_type(const TypeLabel& o) const { return kind == o.kind && lambda == o.lambda; }
};

TypeLabel classify(const OdometerSystem& sys);
std::string type_name(const TypeLabel& t);

struct GapResult {
  ClopenSet set;
  /// Values over set x set were enumerated on words of this depth.
  int audit_depth = 0;
  /// True when the exact tail group proves the gap at every depth.
  bool all_depths = false;
};

/// A clopen set whose cocycle values (pairs in one orbit) avoid the
/// multiplicative interval [lo, hi]. Throws PreconditionFailed if 1 lies
/// in it and GapNotWitnessed if no candidate works up to audit_depth.
GapResult find_clopen_gap(const OdometerSystem& sys, const Rational& lo, const Rational& hi,
                          int audit_depth = 8);

/// Distinct ratios mu(v)/mu(u) over words u, v of the given depth extending w.
std::vector<Rational> values_on_cylinder(const OdometerSystem& sys, const Word& w, int depth,
                                         std::size_t cap = 1 << 16);

struct SpecialCheck {
  bool ok = true;
  std::vector<std::pair<Word, Rational>> violations;  ///< word, one-step ratio
};

/// Every one-step cocycle value on words up to `depth` is a power of lambda.
SpecialCheck check_special(const OdometerSystem& sys, const Rational& lambda, int depth);

struct SpecialStage {
  Rational eta;
  std::map<Word, Rational> factor;  ///< density multiplier on depth-d cylinders
  Rational factor_bound;            ///< factors lie in [1/bound, bound]
  Rational value_bound;             ///< values within this factor of lambda^Z
  bool bounds_hold = false;
};

struct SpecialMeasureTranscript {
  Rational lambda;
  std::vector<Rational> etas;
  std::vector<SpecialStage> stages;
  int snapped = 0;  ///< one-step values replaced by exact powers
  Measure final_measure;
  Rational residual_bound;
};

/// Builds an equivalent measure whose cocycle takes values in lambda^Z.
/// Throws StageFailed when a stage cannot meet its bound.
SpecialMeasureTranscript special_measure(const OdometerSystem& sys, const std::vector<Rational>& etas,
                                         int stages);

/// True if v lies within the factor `bound` (>= 1) of some power of lambda.
bool near_power(const Rational& v, const Rational& lambda, const Rational& bound);

struct ErgodicityReport {
  int depth = 0;
  int nodes = 0;
  int edges = 0;
  bool connected = false;
  std::vector<std::vector<Word>> components;
};

/// Communication graph on depth-d cylinders under ratio-one moves.
ErgodicityReport mp_subrelation_ergodic(const OdometerSystem& sys, int depth,
                                        const WalkOptions& opts = {});

struct Example16Report {
  Rational lambda, alpha;
  std::vector<int> even_levels;
  SystemConfig system;          ///< T, levels normalized
  SystemConfig induced;         ///< T_A on A = C1 x C2' x C3 x ...
  TypeLabel induced_type;
  std::optional<Witness> lambda_witness;
  std::optional<Witness> alpha_witness;
  RatioLattice value_group;     ///< exact one-step tail values of T
  bool alpha_power_of_lambda = false;
  bool obstruction = false;     ///< T and T_A not almost continuously OE
  std::vector<std::string> notes;
};

/// Levels n = 1..depth form the prefix (even level n has n*n + 2 letters);
/// the last odd and even levels repeat as the tail block.
Example16Report example_1_6(const Rational& lambda, const Rational& alpha, int depth);

}  // namespace foe
