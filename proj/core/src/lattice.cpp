#include "foe/lattice.hpp"

#include <algorithm>
#include <map>
#include <numeric>

#include "foe/errors.hpp"

namespace foe {

namespace {

void factor_into(mpz_class n, long sign, std::map<mpz_class, long>& out) {
  for (mpz_class p = 2; p * p <= n; ++p) {
    while (n % p == 0) {
      out[p] += sign;
      n /= p;
    }
    if (p > 1000000) throw PreconditionFailed("prime factor too large to factor by trial division");
  }
  if (n > 1) out[n] += sign;
}

}  // namespace

ExponentBasis factor_all(const std::vector<Rational>& values) {
  std::vector<std::map<mpz_class, long>> factored;
  std::map<mpz_class, int> all;
  for (const auto& v : values) {
    if (v <= 0) throw PreconditionFailed("cannot factor a non-positive rational");
    std::map<mpz_class, long> f;
    factor_into(v.get_num(), 1, f);
    factor_into(v.get_den(), -1, f);
    for (auto it = f.begin(); it != f.end();)
      it = it->second == 0 ? f.erase(it) : std::next(it);
    for (const auto& [p, e] : f) all[p] = 0;
    factored.push_back(std::move(f));
  }
  ExponentBasis basis;
  for (auto& [p, idx] : all) {
    idx = static_cast<int>(basis.primes.size());
    basis.primes.push_back(p);
  }
  for (const auto& f : factored) {
    std::vector<long> vec(basis.primes.size(), 0);
    for (const auto& [p, e] : f) vec[all[p]] = e;
    basis.vectors.push_back(std::move(vec));
  }
  return basis;
}

int lattice_rank(const std::vector<std::vector<long>>& vectors) {
  // Fraction-free elimination over the rationals.
  std::vector<std::vector<Rational>> rows;
  for (const auto& v : vectors) rows.emplace_back(v.begin(), v.end());
  if (rows.empty()) return 0;
  const std::size_t cols = rows[0].size();
  int rank = 0;
  for (std::size_t c = 0; c < cols && rank < static_cast<int>(rows.size()); ++c) {
    auto pivot = std::find_if(rows.begin() + rank, rows.end(),
                              [&](const auto& r) { return r[c] != 0; });
    if (pivot == rows.end()) continue;
    std::iter_swap(rows.begin() + rank, pivot);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (r == static_cast<std::size_t>(rank) || rows[r][c] == 0) continue;
      Rational f = rows[r][c] / rows[rank][c];
      for (std::size_t k = 0; k < cols; ++k) rows[r][k] -= f * rows[rank][k];
    }
    ++rank;
  }
  return rank;
}

std::optional<Rational> cyclic_generator(const std::vector<Rational>& values) {
  auto basis = factor_all(values);
  if (lattice_rank(basis.vectors) != 1) return std::nullopt;
  // All vectors are multiples of one primitive vector; find it.
  const std::vector<long>* ref = nullptr;
  for (const auto& v : basis.vectors)
    if (std::any_of(v.begin(), v.end(), [](long e) { return e != 0; })) ref = &v;
  long g = 0;
  for (long e : *ref) g = std::gcd(g, e);
  std::vector<long> dir(ref->size());
  for (std::size_t i = 0; i < dir.size(); ++i) dir[i] = (*ref)[i] / g;
  // Coefficients of every vector along dir; their gcd scales the generator.
  std::size_t lead = 0;
  while (dir[lead] == 0) ++lead;
  long coeff_gcd = 0;
  for (const auto& v : basis.vectors) coeff_gcd = std::gcd(coeff_gcd, v[lead] / dir[lead]);
  Rational gen(1);
  for (std::size_t i = 0; i < dir.size(); ++i) {
    Rational p(basis.primes[i]);
    gen *= rpow(p, dir[i] * coeff_gcd);
  }
  if (gen > 1) gen = 1 / gen;
  gen.canonicalize();
  return gen;
}

GroupShape group_shape(const std::vector<Rational>& values) {
  auto basis = factor_all(values);
  int r = lattice_rank(basis.vectors);
  return r == 0 ? GroupShape::Trivial : r == 1 ? GroupShape::Cyclic : GroupShape::NonCyclic;
}

}  // namespace foe
