#pragma once

// Multiplicative subgroups of the positive rationals, handled through
// exponent vectors over a common prime basis.

#include <optional>
#include <vector>

#include "foe/rational.hpp"

namespace foe {

struct ExponentBasis {
  std::vector<mpz_class> primes;                ///< sorted ascending
  std::vector<std::vector<long>> vectors;       ///< one per input value
};

/// Factors every value (trial division; values must be positive) over the
/// union of their prime supports.
ExponentBasis factor_all(const std::vector<Rational>& values);

/// Rank of the integer lattice spanned by the exponent vectors.
int lattice_rank(const std::vector<std::vector<long>>& vectors);

/// If the values generate a cyclic group other than {1}, returns the
/// generator lambda < 1. Returns nullopt for the trivial and non-cyclic cases.
std::optional<Rational> cyclic_generator(const std::vector<Rational>& values);

/// Multiplicative group generated by the values.
enum class GroupShape { Trivial, Cyclic, NonCyclic };
GroupShape group_shape(const std::vector<Rational>& values);

}  // namespace foe
