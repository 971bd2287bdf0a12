#pragma once

// Symbolic model of a product of finite alphabets: words, cylinder sets,
// the clopen algebra in canonical form, and product measures with a
// locally constant density.

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "foe/rational.hpp"

namespace foe {

/// Alphabet sizes of an eventually periodic infinite product:
/// levels 0..prefix.size()-1 use `prefix`, then `block` repeats forever.
struct LevelSpec {
  std::vector<int> prefix;
  std::vector<int> block;
  int depth_max = 32;

  int size_at(int level) const {
    const int p = static_cast<int>(prefix.size());
    return level < p ? prefix[level] : block[(level - p) % block.size()];
  }
  int prefix_length() const { return static_cast<int>(prefix.size()); }
  int block_length() const { return static_cast<int>(block.size()); }

  /// Throws PreconditionFailed when the invariants do not hold.
  void validate() const;

  bool operator==(const LevelSpec&) const = default;
};

/// Coordinates of a cylinder: letter j lies in {0, ..., size_at(j) - 1}.
using Word = std::vector<int>;

bool is_prefix(const Word& p, const Word& w);
/// Letters joined by ','; the empty word prints as '.'.
std::string word_to_string(const Word& w);
Word parse_word(const std::string& text, int line = 0);

/// A clopen set as its canonical antichain of words, sorted lexicographically.
/// Only `Space` produces canonical instances.
struct ClopenSet {
  std::vector<Word> words;

  bool empty() const { return words.empty(); }
  bool operator==(const ClopenSet&) const = default;
};

enum class Relation { Inside, Disjoint, Partial };

/// The Cantor product space described by a LevelSpec and its clopen algebra.
class Space {
 public:
  explicit Space(LevelSpec spec);

  const LevelSpec& spec() const { return spec_; }
  int size_at(int level) const { return spec_.size_at(level); }
  int depth_max() const { return spec_.depth_max; }

  bool valid(const Word& w) const;
  /// Throws DepthExceeded / PreconditionFailed for out-of-range words.
  void check(const Word& w) const;

  ClopenSet canonicalize(std::vector<Word> words) const;
  ClopenSet full() const { return ClopenSet{{Word{}}}; }
  ClopenSet empty() const { return ClopenSet{}; }
  ClopenSet cylinder(const Word& w) const { return canonicalize({w}); }

  ClopenSet unite(const ClopenSet& a, const ClopenSet& b) const;
  ClopenSet intersect(const ClopenSet& a, const ClopenSet& b) const;
  ClopenSet subtract(const ClopenSet& a, const ClopenSet& b) const;
  ClopenSet complement(const ClopenSet& a) const;
  /// The same set as a list of words all of length >= d (not merged).
  std::vector<Word> refine_to_depth(const ClopenSet& a, int d) const;
  /// Same as refine_to_depth but for an arbitrary antichain.
  std::vector<Word> refine_words(const std::vector<Word>& words, int d) const;

  bool is_subset(const ClopenSet& a, const ClopenSet& b) const;
  bool disjoint(const ClopenSet& a, const ClopenSet& b) const;
  /// How the cylinder [w] sits relative to `a`.
  Relation relate(const ClopenSet& a, const Word& w) const;
  std::vector<Word> children(const Word& w) const;
  std::vector<Word> all_words(int depth) const;
  /// Number of words of the given depth (saturating at INT64_MAX).
  std::int64_t count_words(int depth) const;
  int max_length(const ClopenSet& a) const;

  /// Mixed-radix value of the first |w| letters (level 0 least significant).
  std::int64_t value(const Word& w) const;
  /// The word of length `depth` with the given mixed-radix value.
  Word word_of_value(std::int64_t v, int depth) const;
  /// Adds n (any sign) to the first `len` letters of w with carry; the
  /// remaining letters are kept. Returns nullopt when the carry escapes
  /// position len (the translation is not cylinder-to-cylinder).
  std::optional<Word> translate(const Word& w, std::int64_t n, std::size_t len) const;
  std::optional<Word> translate(const Word& w, std::int64_t n) const {
    return translate(w, n, w.size());
  }

  /// Atom diameter bound: depth k such that every cylinder of depth >= k
  /// has diameter < eps in the metric d(x,y) = 2^-(first differing level).
  static int depth_for_diameter(const Rational& eps);

 private:
  void complement_rec(Word& prefix, std::vector<Word>::const_iterator lo,
                      std::vector<Word>::const_iterator hi,
                      std::vector<Word>& out) const;

  LevelSpec spec_;
};

/// Product measure with rational per-level weights times a locally
/// constant density, scaled by `normalization` to total mass 1.
struct Measure {
  std::vector<std::vector<Rational>> prefix_weights;
  std::vector<std::vector<Rational>> block_weights;
  /// Keys form an antichain; cylinders not covered by a key have density 1.
  std::map<Word, Rational> density;
  Rational normalization{1};

  const Rational& weight(int level, int letter) const {
    const int p = static_cast<int>(prefix_weights.size());
    return level < p ? prefix_weights[level][letter]
                     : block_weights[(level - p) % block_weights.size()][letter];
  }
  int density_depth() const;
  /// Density on [w] if it is constant there.
  std::optional<Rational> density_on(const Word& w) const;

  bool operator==(const Measure&) const = default;
};

/// Uniform weights on every level.
Measure uniform_measure(const LevelSpec& spec);
/// Same weight vector on every level of a single-letter-size block.
Measure bernoulli_measure(const LevelSpec& spec, const std::vector<Rational>& weights);

/// Recomputes `normalization` so that the total mass is exactly 1.
void normalize(const Space& space, Measure& m);
/// Throws PreconditionFailed if the measure is not a full-support
/// probability measure compatible with the space.
void validate_measure(const Space& space, const Measure& m);

Rational cell_mass(const Space& space, const Measure& m, const Word& w);
Rational measure_of(const Space& space, const Measure& m, const ClopenSet& a);

struct PackingOptions {
  /// Largest number of same-depth cells a search may enumerate.
  std::int64_t max_cells = 1 << 15;
  /// Backtracking node budget per depth.
  std::int64_t node_budget = 200000;
};

/// Splits `a` into disjoint clopen sets with exactly the target measures.
/// Throws TargetSumMismatch or ExactPackingUnavailable.
std::vector<ClopenSet> partition_exact(const Space& space, const Measure& m,
                                       const ClopenSet& a,
                                       const std::vector<Rational>& targets,
                                       const PackingOptions& opts = {});

struct ApproxPartition {
  std::vector<ClopenSet> parts;
  ClopenSet defect;
};

/// Exact packing where the targets may sum to less than measure(a); the
/// leftover is returned as the defect. Throws ExactPackingUnavailable.
ApproxPartition partition_exact_remainder(const Space& space, const Measure& m,
                                          const ClopenSet& a,
                                          const std::vector<Rational>& targets,
                                          const PackingOptions& opts = {});

/// Each part within `tol` of its target (never above it); the defect is
/// the rest of `a`. Throws ToleranceUnreachable.
ApproxPartition partition_approx(const Space& space, const Measure& m,
                                 const ClopenSet& a,
                                 const std::vector<Rational>& targets,
                                 const Rational& tol,
                                 const PackingOptions& opts = {});

}  // namespace foe
