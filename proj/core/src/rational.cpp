#include "foe/rational.hpp"

#include <cctype>
#include <cstdlib>

#include "foe/errors.hpp"

namespace foe {

namespace {

bool valid_integer(std::string_view s) {
  if (s.empty()) return false;
  std::size_t i = (s[0] == '-' || s[0] == '+') ? 1 : 0;
  if (i == s.size()) return false;
  for (; i < s.size(); ++i)
    if (!std::isdigit(static_cast<unsigned char>(s[i]))) return false;
  return true;
}

std::string strip_plus(std::string_view s) {
  return std::string(!s.empty() && s[0] == '+' ? s.substr(1) : s);
}

}  // namespace

Rational parse_rational(std::string_view text, int line) {
  auto slash = text.find('/');
  std::string_view num = text.substr(0, slash);
  std::string_view den =
      slash == std::string_view::npos ? std::string_view("1") : text.substr(slash + 1);
  if (!valid_integer(num) || !valid_integer(den) || den[0] == '-' || den[0] == '+')
    throw ParseError("malformed rational '" + std::string(text) + "'", line);
  mpz_class n(strip_plus(num));
  mpz_class d{std::string(den)};
  if (d == 0) throw ParseError("zero denominator in '" + std::string(text) + "'", line);
  Rational r(n, d);
  r.canonicalize();
  return r;
}

std::string to_string(const Rational& value) {
  Rational r = value;
  r.canonicalize();
  if (r.get_den() == 1) return r.get_num().get_str();
  return r.get_num().get_str() + "/" + r.get_den().get_str();
}

double approx(const Rational& r) { return r.get_d(); }

Rational rpow(const Rational& base, long exp) {
  Rational result(1);
  Rational b = exp < 0 ? Rational(1 / base) : base;
  unsigned long e = exp < 0 ? static_cast<unsigned long>(-exp) : static_cast<unsigned long>(exp);
  mpz_class n, d;
  mpz_pow_ui(n.get_mpz_t(), b.get_num_mpz_t(), e);
  mpz_pow_ui(d.get_mpz_t(), b.get_den_mpz_t(), e);
  result = Rational(n, d);
  result.canonicalize();
  return result;
}

Rational exp_lower(const Rational& x) {
  Rational sum(1), term(1);
  for (int k = 1; k <= 8; ++k) {
    term *= x;
    term /= k;
    sum += term;
  }
  return sum;
}

Rational exp_upper(const Rational& x) {
  if (x < 0 || x >= 64) throw PreconditionFailed("exp_upper: argument outside [0, 64)");
  Rational base = 1 / (1 - x / 64);
  base.canonicalize();
  return rpow(base, 64);
}

bool is_power_of(const Rational& value, const Rational& base, long* k) {
  if (value <= 0 || base <= 0 || base == 1) return false;
  long limit = static_cast<long>(mpz_sizeinbase(value.get_num_mpz_t(), 2) +
                                 mpz_sizeinbase(value.get_den_mpz_t(), 2)) + 2;
  Rational v = value;
  const bool above = v > 1;
  const bool divide = above == (base > 1);
  long steps = 0;
  // Move v towards 1 one factor of base at a time; crossing 1 means no power.
  while (v != 1) {
    if (std::labs(steps) > limit) return false;
    v = divide ? Rational(v / base) : Rational(v * base);
    steps += divide ? 1 : -1;
    if (v != 1 && (v > 1) != above) return false;
  }
  if (k) *k = steps;
  return true;
}

long nearest_power(const Rational& value, const Rational& base) {
  long k = 0;
  Rational pk(1);  // base^k
  while (value > pk) {
    --k;
    pk /= base;
  }
  while (value <= pk * base) {
    ++k;
    pk *= base;
  }
  // base^{k+1} < value <= base^k
  Rational lower = pk * base;
  return (pk * lower <= value * value) ? k : k + 1;
}

}  // namespace foe
