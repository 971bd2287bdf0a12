#include <random>

#include "doctest.h"
#include "foe/errors.hpp"
#include "foe/typing.hpp"
#include "oracles.hpp"

using namespace foe;

namespace {

OdometerSystem bernoulli(std::vector<Rational> w, int depth_max = 32) {
  LevelSpec spec{{}, {static_cast<int>(w.size())}, depth_max};
  return OdometerSystem(spec, bernoulli_measure(spec, w));
}

OdometerSystem two_thirds() { return bernoulli({Rational(2, 3), Rational(1, 3)}); }
OdometerSystem uniform_binary() { return bernoulli({Rational(1, 2), Rational(1, 2)}); }
OdometerSystem ternary() { return bernoulli({Rational(4, 7), Rational(2, 7), Rational(1, 7)}); }

OdometerSystem alternating() {
  LevelSpec spec{{}, {2, 2}, 32};
  Measure m;
  m.block_weights = {{Rational(2, 3), Rational(1, 3)}, {Rational(3, 4), Rational(1, 4)}};
  return OdometerSystem(spec, m);
}

OdometerSystem perturbed_ternary() {
  SystemConfig c{LevelSpec{{}, {3}, 32}, {}};
  c.measure = bernoulli_measure(c.levels, {Rational(4, 7), Rational(2, 7), Rational(1, 7)});
  c.measure.density[{0}] = Rational(3, 2);
  normalize(Space(c.levels), c.measure);
  return OdometerSystem(c);
}

bool oracle_power(Rational v, const Rational& lambda) {
  for (int k = 0; k < 200 && v != 1; ++k) v = v > 1 ? Rational(v * lambda) : Rational(v / lambda);
  return v == 1;
}

// Every non-wrapping one-step move between depth-d words has a ratio in lambda^Z.
bool special_by_enumeration(const OdometerSystem& sys, const Rational& lambda, int d) {
  auto sizes = oracle::sizes_of(sys.levels(), d);
  auto weights = oracle::level_weights(sys.measure(), d);
  const auto& m = sys.measure();
  for (const auto& x : oracle::enumerate(sizes)) {
    Word y = oracle::add_one_mod(sizes, x);
    if (y < x) continue;
    Rational r = oracle::density_mass(weights, m.density, m.normalization, y) /
                 oracle::density_mass(weights, m.density, m.normalization, x);
    if (!oracle_power(r, lambda)) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("ratio lattice examples") {
  auto b = ratio_lattice(two_thirds());
  CHECK(b.ratios == std::vector<Rational>{Rational(1, 2), Rational(2)});
  CHECK(b.shape == GroupShape::Cyclic);
  CHECK(*b.generator == Rational(1, 2));
  CHECK(ratio_lattice(uniform_binary()).shape == GroupShape::Trivial);
  auto alt = ratio_lattice(alternating());
  CHECK(alt.shape == GroupShape::NonCyclic);
  CHECK(alt.primes == std::vector<mpz_class>{2, 3});
}

TEST_CASE("lattice shape does not depend on the working depth") {
  auto base = ratio_lattice(two_thirds());
  auto p = perturbed_ternary();
  CHECK(ratio_lattice(p).shape == ratio_lattice(ternary()).shape);
  CHECK(*ratio_lattice(p).generator == *ratio_lattice(ternary()).generator);
  LevelSpec spec{{3, 5}, {2}, 32};
  Measure m;
  m.prefix_weights = {{Rational(1, 3), Rational(1, 3), Rational(1, 3)},
                      {Rational(1, 10), Rational(2, 10), Rational(3, 10), Rational(2, 10), Rational(2, 10)}};
  m.block_weights = {{Rational(2, 3), Rational(1, 3)}};
  CHECK(ratio_lattice(OdometerSystem(spec, m)).ratios == base.ratios);
}

TEST_CASE("classification") {
  auto b = classify(two_thirds());
  CHECK(b.kind == TypeKind::TypeIIILambda);
  CHECK(b.lambda == Rational(1, 2));
  REQUIRE(b.witnesses.size() == 1);
  CHECK(b.witnesses[0].power == 1);
  CHECK(b.witnesses[0].a == two_thirds().space().cylinder({0}));
  CHECK(type_name(b) == "III_lambda lambda=1/2");

  CHECK(classify(uniform_binary()).kind == TypeKind::MeasurePreserving);

  auto alt = classify(alternating());
  CHECK(alt.kind == TypeKind::TypeIII1Candidate);
  REQUIRE(alt.witnesses.size() == 2);
  CHECK(alt.witnesses[0].ratio == Rational(1, 2));
  CHECK(alt.witnesses[1].ratio == Rational(1, 3));

  auto t = classify(ternary());
  CHECK(t.kind == TypeKind::TypeIIILambda);
  CHECK(t.lambda == Rational(1, 2));
}

TEST_CASE("witnesses replay against enumeration") {
  for (const auto& sys : {two_thirds(), ternary(), alternating(), perturbed_ternary()}) {
    for (const auto& w : classify(sys).witnesses) {
      CHECK(replay_witness(sys, w));
      const int d = sys.space().max_length(w.a) + 2;
      auto sizes = oracle::sizes_of(sys.levels(), d);
      auto weights = oracle::level_weights(sys.measure(), d);
      const auto& m = sys.measure();
      for (const auto& x : oracle::points(sys.levels(), w.a.words, d)) {
        Word y = x;
        for (std::int64_t k = 0; k < w.power; ++k) y = oracle::add_one_mod(sizes, y);
        CHECK(oracle::points(sys.levels(), w.b.words, d).count(y) == 1);
        CHECK(oracle::density_mass(weights, m.density, m.normalization, y) /
                  oracle::density_mass(weights, m.density, m.normalization, x) ==
              w.ratio);
      }
    }
  }
}

TEST_CASE("classify is invariant under density perturbations") {
  std::mt19937 rng(3);
  for (const auto& base : {two_thirds(), ternary(), alternating(), uniform_binary()}) {
    auto ref = classify(base);
    for (int trial = 0; trial < 5; ++trial) {
      SystemConfig c = base.config();
      for (const auto& w : base.space().all_words(2)) {
        Rational v(std::uniform_int_distribution<int>(1, 9)(rng),
                   std::uniform_int_distribution<int>(1, 9)(rng));
        v.canonicalize();
        c.measure.density[w] = v;
      }
      normalize(Space(c.levels), c.measure);
      CHECK(classify(OdometerSystem(c)).same_type(ref));
    }
  }
}

TEST_CASE("clopen gap") {
  auto sys = two_thirds();
  auto g = find_clopen_gap(sys, Rational(6, 5), Rational(9, 5));
  CHECK(g.set == sys.space().full());
  CHECK(g.all_depths);
  for (const auto& v : values_on_cylinder(sys, {}, 8))
    CHECK((v < Rational(6, 5) || v > Rational(9, 5)));
  CHECK_THROWS_AS(find_clopen_gap(sys, Rational(1, 2), Rational(3, 2)), PreconditionFailed);
  // Every cylinder sees the value 2 one level down.
  CHECK_THROWS_AS(find_clopen_gap(sys, Rational(3, 2), Rational(5, 2), 6), GapNotWitnessed);
}

TEST_CASE("clopen gap on the Example 1.6 system") {
  auto rep = example_1_6(Rational(1, 2), Rational(1, 3), 4);
  OdometerSystem t(rep.system);
  // 3/2 * 4/3 = 2 and 3/4 * ... leave small holes between nearby values.
  Rational lo(1001, 1000), hi(1002, 1000);
  auto g = find_clopen_gap(t, lo, hi, 6);
  for (const auto& v : values_on_cylinder(t, g.set.words.front(), 6)) CHECK((v < lo || v > hi));
}

TEST_CASE("check_special") {
  CHECK(check_special(ternary(), Rational(1, 2), 6).ok);
  CHECK(check_special(two_thirds(), Rational(1, 2), 6).ok);
  auto bad = check_special(bernoulli({Rational(3, 4), Rational(1, 4)}), Rational(1, 2), 4);
  CHECK_FALSE(bad.ok);
  CHECK(bad.violations.front().second == Rational(1, 3));
  CHECK_FALSE(check_special(perturbed_ternary(), Rational(1, 2), 4).ok);
}

TEST_CASE("special measure of an already special system is the identity") {
  auto tr = special_measure(ternary(), {Rational(1, 2), Rational(1, 4)}, 2);
  CHECK(tr.lambda == Rational(1, 2));
  for (const auto& st : tr.stages)
    for (const auto& [w, f] : st.factor) CHECK(f == 1);
  CHECK(tr.final_measure == ternary().measure());
  CHECK(tr.residual_bound == 0);
}

TEST_CASE("special measure recovers a perturbed ternary system") {
  auto sys = perturbed_ternary();
  auto tr = special_measure(sys, {Rational(1, 2), Rational(1, 4), Rational(1, 8), Rational(1, 16)}, 4);
  OdometerSystem out(sys.levels(), tr.final_measure);
  CHECK(check_special(out, Rational(1, 2), 8).ok);
  CHECK(special_by_enumeration(out, Rational(1, 2), 6));
  CHECK(out.mass(ClopenSet{{Word{}}}) == 1);
  for (std::size_t i = 0; i < tr.stages.size(); ++i) {
    CHECK(tr.stages[i].bounds_hold);
    CHECK(tr.stages[i].value_bound == 1 + 3 * tr.etas[i]);
    for (const auto& [w, f] : tr.stages[i].factor) {
      CHECK(f <= tr.stages[i].factor_bound);
      CHECK(1 / f <= tr.stages[i].factor_bound);
    }
  }
  // The final density is locally constant, hence equivalent to the start.
  for (const auto& [w, v] : tr.final_measure.density) CHECK(v > 0);
}

TEST_CASE("special measure input validation") {
  CHECK_THROWS_AS(special_measure(alternating(), {Rational(1, 2)}, 1), StageFailed);
  CHECK_THROWS_AS(special_measure(ternary(), {Rational(1, 4), Rational(1, 2)}, 2), PreconditionFailed);
  CHECK_THROWS_AS(special_measure(ternary(), {Rational(1, 2)}, 2), PreconditionFailed);
}

TEST_CASE("ratio-one subrelation ergodicity") {
  auto b = mp_subrelation_ergodic(two_thirds(), 4);
  CHECK(b.nodes == 16);
  CHECK(b.connected);
  CHECK(mp_subrelation_ergodic(ternary(), 3).connected);

  LevelSpec spec{{2}, {2}, 24};
  Measure m;
  m.prefix_weights = {{Rational(2, 3), Rational(1, 3)}};
  m.block_weights = {{Rational(4, 5), Rational(1, 5)}};
  auto split = mp_subrelation_ergodic(OdometerSystem(spec, m), 3);
  CHECK_FALSE(split.connected);
  REQUIRE(split.components.size() == 2);
  for (const auto& comp : split.components)
    for (const auto& w : comp) CHECK(w[0] == comp.front()[0]);
}

TEST_CASE("Example 1.6") {
  auto rep = example_1_6(Rational(1, 2), Rational(1, 3), 6);
  CHECK(rep.even_levels == std::vector<int>{6, 18, 38});
  CHECK(rep.induced_type.kind == TypeKind::TypeIIILambda);
  CHECK(rep.induced_type.lambda == Rational(1, 2));
  REQUIRE(rep.lambda_witness);
  REQUIRE(rep.alpha_witness);
  OdometerSystem t(rep.system);
  CHECK(replay_witness(t, *rep.lambda_witness));
  CHECK(replay_witness(t, *rep.alpha_witness));
  CHECK(rep.alpha_witness->ratio == Rational(1, 3));
  CHECK(rep.value_group.shape == GroupShape::NonCyclic);
  CHECK(rep.obstruction);
  // Every level of the system is a probability vector after normalization.
  for (const auto& w : rep.system.measure.prefix_weights) {
    Rational s(0);
    for (const auto& x : w) s += x;
    CHECK(s == 1);
  }

  auto same = example_1_6(Rational(1, 2), Rational(1, 2), 4);
  CHECK(same.alpha_power_of_lambda);
  CHECK_FALSE(same.obstruction);
  auto square = example_1_6(Rational(1, 2), Rational(1, 4), 4);
  CHECK(square.alpha_power_of_lambda);
  CHECK_FALSE(square.obstruction);
  // 1 + 1/4 = 5/4 brings in the prime 5.
  CHECK(square.value_group.shape == GroupShape::NonCyclic);
}
