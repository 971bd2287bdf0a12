#pragma once

#include <gmpxx.h>

#include <cstdint>
#include <string>
#include <string_view>

namespace foe {

/// Exact rational with arbitrary-precision numerator and denominator.
/// Values are kept canonical (gcd 1, positive denominator) by every
/// function in this header.
using Rational = mpq_class;

/// Parses "p/q" or "p". Throws ParseError on malformed input or q == 0.
Rational parse_rational(std::string_view text, int line = 0);

/// "p/q", or "p" when the denominator is 1.
std::string to_string(const Rational& r);

/// Decimal approximation, for human-readable output only.
double approx(const Rational& r);

/// base^exp for a signed integer exponent; base must be non-zero when exp < 0.
Rational rpow(const Rational& base, long exp);

/// A rational lower bound for exp(x), x >= 0 (truncated Taylor series).
/// Checking `q <= exp_lower(x)` certifies `log q <= x`.
Rational exp_lower(const Rational& x);

/// A rational upper bound for exp(x), 0 <= x < 64, as (1 - x/64)^-64.
/// Checking `q <= exp_upper(x)` is implied by `log q <= x`.
Rational exp_upper(const Rational& x);

/// If `value` equals base^k for some integer k, stores k and returns true.
/// `base` must be positive and different from 1.
bool is_power_of(const Rational& value, const Rational& base, long* k);

/// Nearest integer power of `base` (0 < base < 1) to `value` in log scale;
/// ties resolve towards the larger power of base.
long nearest_power(const Rational& value, const Rational& base);

inline Rational rabs(const Rational& r) { return r < 0 ? Rational(-r) : r; }

}  // namespace foe
