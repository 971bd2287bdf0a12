#include "doctest.h"
#include "foe/lattice.hpp"

using namespace foe;

TEST_CASE("factoring gives exact exponent vectors") {
  auto b = factor_all({Rational(12, 5), Rational(1, 2)});
  REQUIRE(b.primes.size() == 3);
  CHECK(b.primes[0] == 2);
  CHECK(b.primes[2] == 5);
  CHECK(b.vectors[0] == std::vector<long>{2, 1, -1});
  CHECK(b.vectors[1] == std::vector<long>{-1, 0, 0});
}

TEST_CASE("group shapes") {
  CHECK(group_shape({Rational(1), Rational(1)}) == GroupShape::Trivial);
  CHECK(group_shape({Rational(1, 2), Rational(2)}) == GroupShape::Cyclic);
  CHECK(group_shape({Rational(1, 2), Rational(1, 3)}) == GroupShape::NonCyclic);
  CHECK(group_shape({Rational(4, 9), Rational(3, 2)}) == GroupShape::Cyclic);
}

TEST_CASE("cyclic generator is primitive and below one") {
  CHECK(*cyclic_generator({Rational(1, 2), Rational(2)}) == Rational(1, 2));
  CHECK(*cyclic_generator({Rational(4), Rational(8)}) == Rational(1, 2));
  CHECK(*cyclic_generator({Rational(16), Rational(64)}) == Rational(1, 4));
  CHECK(*cyclic_generator({Rational(4, 9), Rational(27, 8)}) == Rational(2, 3));
  CHECK_FALSE(cyclic_generator({Rational(1)}).has_value());
  CHECK_FALSE(cyclic_generator({Rational(1, 2), Rational(1, 3)}).has_value());
}
