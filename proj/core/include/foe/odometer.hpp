#pragma once

// Odometer dynamics: the add-one-with-carry map, its exact Radon-Nikodym
// cocycle, elements of the topological full groupoid, first-return maps
// and Rokhlin towers.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "foe/config.hpp"
#include "foe/cylinder.hpp"

namespace foe {

/// A space together with a full-support measure.
class OdometerSystem {
 public:
  OdometerSystem(LevelSpec levels, Measure measure);
  explicit OdometerSystem(const SystemConfig& config);

  const Space& space() const { return space_; }
  const Measure& measure() const { return measure_; }
  const LevelSpec& levels() const { return space_.spec(); }
  SystemConfig config() const { return {space_.spec(), measure_}; }

  Rational mass(const Word& w) const { return cell_mass(space_, measure_, w); }
  Rational mass(const ClopenSet& a) const { return measure_of(space_, measure_, a); }
  /// Depth from which every cylinder has constant density and lies past the prefix.
  int working_depth() const;
  /// Radon-Nikodym ratio of one step of T on [w]; w must be at least
  /// density-deep and not all-maximal.
  Rational step_ratio(const Word& w) const;

 private:
  Space space_;
  Measure measure_;
};

/// T on a cylinder: nullopt when w is all-maximal (the overflow point).
std::optional<Word> successor(const Space& space, const Word& w);

struct CocycleValue {
  Word word;       ///< the refined cylinder the value holds on
  Rational ratio;  ///< d(mu o T^n)/d(mu) on [word]
};

/// Exact cocycle of T^n on the cylinder [w], refining w just enough for
/// T^n to act as a cylinder translation with constant density on both ends.
/// Throws DepthExceeded when the carry would need more than depth_max letters.
CocycleValue rn_derivative(const OdometerSystem& sys, const Word& w, std::int64_t n);

struct Piece {
  Word cylinder;
  std::int64_t power = 0;

  auto operator<=>(const Piece&) const = default;
};

/// x -> T^{power}(x) on each piece. Pieces are disjoint with union
/// domain minus defect; images are disjoint with union range minus range_defect.
struct GroupoidMap {
  std::vector<Piece> pieces;
  ClopenSet domain;
  ClopenSet range;
  ClopenSet defect;
  ClopenSet range_defect;

  bool operator==(const GroupoidMap&) const = default;
};

Word piece_image(const Space& space, const Piece& p);
/// Image of a point prefix; nullopt outside the pieces.
std::optional<Word> apply(const Space& space, const GroupoidMap& g, const Word& x);
ClopenSet image(const Space& space, const GroupoidMap& g, const ClopenSet& a);
ClopenSet covered(const Space& space, const GroupoidMap& g);
ClopenSet covered_image(const Space& space, const GroupoidMap& g);

GroupoidMap identity_map(const Space& space, const ClopenSet& a);
/// g after f. Points whose f-image misses g's pieces join the defect.
GroupoidMap compose(const Space& space, const GroupoidMap& f, const GroupoidMap& g);
GroupoidMap invert(const Space& space, const GroupoidMap& g);
GroupoidMap restrict_to(const Space& space, const GroupoidMap& g, const ClopenSet& a);
/// Builds a map from pieces alone, with empty defects.
GroupoidMap from_pieces(const Space& space, std::vector<Piece> pieces);
/// Sorts pieces and merges sibling families sharing one power.
GroupoidMap normalize_map(const Space& space, GroupoidMap g);
/// The set where both maps are defined and act by the same power.
ClopenSet agree_set(const Space& space, const GroupoidMap& f, const GroupoidMap& g);
/// True when g is the identity on domain minus defect.
bool is_identity(const Space& space, const GroupoidMap& g);
/// Throws PreconditionFailed when the structural invariants fail.
void validate_map(const Space& space, const GroupoidMap& g);

/// Radon-Nikodym ratio of a piece, when constant on it.
std::optional<Rational> piece_ratio(const OdometerSystem& sys, const Piece& p);

std::string serialize_map(const GroupoidMap& g);
GroupoidMap parse_map(const Space& space, std::string_view text);

struct WalkOptions {
  std::int64_t step_bound = 10000;
  /// Return times beyond step_bound, or carries past depth_max, go to the defect.
  bool throw_on_defect = false;
};

/// First-return map of T to a. Pieces carry the return time as power.
GroupoidMap induced_map(const OdometerSystem& sys, const ClopenSet& a,
                        const WalkOptions& opts = {});

/// Sum over pieces p of sum_{k < power} mu(T^k p) and the union of those sets;
/// for a return map with empty defect the sum equals the measure of the union.
struct KacAudit {
  Rational swept_mass;
  ClopenSet swept;
};
KacAudit kac_audit(const OdometerSystem& sys, const GroupoidMap& induced);

struct Tower {
  ClopenSet base;
  int height = 0;
  std::vector<ClopenSet> levels;
  ClopenSet residual;
};

/// Exact castle for T: base [0^k], height prod of the first k sizes >= n+1.
Tower rokhlin_tower(const OdometerSystem& sys, int n);
/// Tower of height n+1 for a map g of its domain onto itself, residual
/// (relative to g.domain) of measure < eps. Throws TowerSearchFailed.
Tower rokhlin_tower(const OdometerSystem& sys, const GroupoidMap& g, int n,
                    const Rational& eps, const WalkOptions& opts = {});

/// All distinct one-step ratios of T on cylinders of the given depth.
std::vector<Rational> one_step_ratios(const OdometerSystem& sys, int depth);

/// R = T^{n(x)}, n(x) the least positive power with cocycle ratio exactly 1.
/// Throws NotSpecialMeasure when the one-step ratios are not in a cyclic group.
GroupoidMap mp_return_map(const OdometerSystem& sys, const WalkOptions& opts = {});

}  // namespace foe
