#pragma once

// Equimeasure and skew maps between clopen sets, uniform subrelations
// with their splitting maps, and the copying step that transplants a
// labeled tower structure from one system into another.

#include <optional>
#include <vector>

#include "foe/odometer.hpp"
#include "foe/typing.hpp"

namespace foe {

struct ExhaustOptions {
  /// Leftover measure (on the source side) accepted as defect.
  Rational tolerance{0};
  /// Deepest refinement tried; 0 means the space's depth_max.
  int max_depth = 0;
  std::int64_t max_cells = 1 << 16;
  /// Throw ExhaustionStalled when the leftover exceeds the tolerance.
  bool strict = true;
};

/// Measure-preserving map a -> b (equal measures) matching same-depth
/// cells of equal mass, refining the unmatched rest.
GroupoidMap equimeasure_map_mp(const OdometerSystem& sys, const ClopenSet& a, const ClopenSet& b,
                               const ExhaustOptions& opts = {});

struct SkewInfo {
  bool through_witness = false;  ///< built as delta^-1 T^l gamma
  int parts = 0;                 ///< number of equal parts N on that route
};

/// Map a -> b with cocycle ratio exactly lambda^k on every piece;
/// requires mu(b) = lambda^k mu(a).
GroupoidMap skew_map_lambda(const OdometerSystem& sys, const ClopenSet& a, const ClopenSet& b,
                            long k, const Rational& lambda, const ExhaustOptions& opts = {},
                            SkewInfo* info = nullptr);

/// Map a -> b whose piece ratios lie within exp(+-eps) of mu(b)/mu(a).
GroupoidMap skew_map_eps(const OdometerSystem& sys, const ClopenSet& a, const ClopenSet& b,
                         const Rational& eps, const ExhaustOptions& opts = {});

/// r-uniform relation: fibers h[i](fundamental), h[0] the identity.
struct UniformRelation {
  int r = 1;
  ClopenSet fundamental;
  std::vector<GroupoidMap> splitting;
  ClopenSet defect;  ///< part of the ambient set outside every fiber

  ClopenSet fiber(const Space& space, int i) const;
  ClopenSet ambient(const Space& space) const;
  /// p : ambient -> fundamental, h(i, b) -> b.
  GroupoidMap projection(const Space& space) const;
  /// The element of the finite symmetry group moving fiber i to perm[i].
  GroupoidMap symmetry(const Space& space, const std::vector<int>& perm) const;
};

UniformRelation trivial_relation(const ClopenSet& a);
/// Throws PreconditionFailed when fibers overlap or h[0] is not the identity.
void validate_relation(const Space& space, const UniformRelation& s);

/// Extends inner (a relation on s.fundamental) through s; fiber index i*q + j
/// is s.splitting[i] after inner.splitting[j].
UniformRelation natural_extension(const Space& space, const UniformRelation& s,
                                  const UniformRelation& inner);

/// Labeled clopen partition: atom d is atoms[d].
struct LabeledPartition {
  std::vector<ClopenSet> atoms;
};

struct CopyOptions {
  /// Relative deviation allowed between realized and prescribed fiber masses.
  Rational tolerance{1, 4096};
  /// Levels a fiber-0 cell may be split when it finds no partner cell.
  int transport_depth = 12;
  /// Fiber-0 cells visited per sweep before a label is left short.
  std::int64_t attempt_cap = 1 << 16;
  /// Power vectors per input label. Each vector carries one output label, so
  /// every fiber map is a single power on every output label.
  int max_vectors = 64;
  /// Powers up to this size are tried before any partner farther away.
  std::int64_t local_span = 256;
  /// Candidate fibers and maps tried before any packing (see diagram).
  std::optional<std::vector<std::vector<ClopenSet>>> mirror_fibers;
  std::optional<std::vector<GroupoidMap>> mirror_maps;
};

struct CopyResult {
  UniformRelation relation;            ///< on the input set b
  /// Partition of the fundamental set; output label o carries input label origin[o].
  LabeledPartition labels;
  std::vector<int> origin;
  std::vector<std::vector<ClopenSet>> fibers;  ///< [i][o]
  Rational packing_deviation{0};       ///< sum |mu(fiber) - nu|
  Rational worst_relative{0};          ///< max |mu(fiber)/nu - 1|
  ClopenSet defect;
  bool mirrored = false;
};

/// Copies (nu on I_r x D~, v~ : I_r x D~ -> D) onto b with labels u so the
/// square commutes. nu[i][d~], vtilde[i][d~] index by fiber then label.
/// Fiber 0 is packed; fiber i is the image of fiber 0 under a map sending
/// each cell to a free cell of atom v~(i,d~) with the prescribed ratio.
/// lambda mode: the ratios are exact powers of lambda.
CopyResult copy_structure_lambda(const OdometerSystem& sys, const ClopenSet& b,
                                 const LabeledPartition& u,
                                 const std::vector<std::vector<int>>& vtilde,
                                 const std::vector<std::vector<Rational>>& nu,
                                 const Rational& lambda, const CopyOptions& opts = {});

/// III_1 mode: fiber ratios within exp(+-eps) of the prescribed ones.
CopyResult copy_structure_eps(const OdometerSystem& sys, const ClopenSet& b,
                              const LabeledPartition& u,
                              const std::vector<std::vector<int>>& vtilde,
                              const std::vector<std::vector<Rational>>& nu, const Rational& eps,
                              const CopyOptions& opts = {});

struct RefineResult {
  UniformRelation relation;  ///< on s.fundamental
  int cell_depth = 0;
  Rational delta;            ///< tolerated fraction of the fundamental set
  ClopenSet coverage;        ///< O = {x : Tx in the extended class of x}
  Rational coverage_mass;
  Rational defect_mass;
  bool bound_met = true;  ///< coverage_mass > 1 - 2 eps - defect_mass
};

struct RefineOptions {
  int max_height = 64;
  std::int64_t max_cells = 1 << 15;
  /// Return the best tower found instead of throwing when no height meets the bound.
  bool best_effort = false;
};

/// Uniform relation on s.fundamental whose extension through s captures
/// one T-step on a set of measure > 1 - 2 eps - defect. The tower is cut
/// from the cylinder castle of the induced map. Throws TowerSearchFailed.
RefineResult refine_uniform(const OdometerSystem& sys, const UniformRelation& s,
                            const Rational& eps, const RefineOptions& opts = {});

/// Points of the ambient set whose T-image lies in the same class of s.
ClopenSet one_step_coverage(const OdometerSystem& sys, const UniformRelation& s);

/// Smallest positive rational dividing every cell mass at the given depth.
Rational cell_mass_gcd(const OdometerSystem& sys, int depth);

}  // namespace foe
