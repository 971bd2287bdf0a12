#include <random>

#include "doctest.h"
#include "foe/cylinder.hpp"
#include "foe/errors.hpp"
#include "oracles.hpp"

using namespace foe;

namespace {

LevelSpec binary(int depth_max = 32) { return LevelSpec{{}, {2}, depth_max}; }

Measure two_thirds(const LevelSpec& spec) {
  return bernoulli_measure(spec, {Rational(2, 3), Rational(1, 3)});
}

std::vector<Word> random_words(std::mt19937& rng, const LevelSpec& spec, int count, int max_len) {
  std::vector<Word> out;
  std::uniform_int_distribution<int> len(0, max_len);
  for (int i = 0; i < count; ++i) {
    Word w;
    int l = len(rng);
    for (int j = 0; j < l; ++j)
      w.push_back(std::uniform_int_distribution<int>(0, spec.size_at(j) - 1)(rng));
    out.push_back(w);
  }
  return out;
}

std::vector<std::vector<Rational>> weights_to(const Measure& m, int depth) {
  std::vector<std::vector<Rational>> w;
  for (int j = 0; j < depth; ++j) {
    std::vector<Rational> level;
    for (std::size_t c = 0; c < m.block_weights[0].size(); ++c)
      level.push_back(m.weight(j, static_cast<int>(c)));
    w.push_back(level);
  }
  return w;
}

}  // namespace

TEST_CASE("canonicalize merges siblings and absorbs prefixes") {
  Space s(binary());
  CHECK(s.canonicalize({{0, 0}, {0, 1}}).words == std::vector<Word>{{0}});
  CHECK(s.canonicalize({{0}, {0, 1}}).words == std::vector<Word>{{0}});
  CHECK(s.canonicalize({}).words.empty());
  CHECK(s.canonicalize({{0}, {1}}) == s.full());
  CHECK(s.canonicalize({{0, 0}, {0, 1, 0}, {0, 1, 1}, {1}}) == s.full());
  CHECK_THROWS_AS(s.canonicalize({Word(33, 0)}), DepthExceeded);
}

TEST_CASE("boolean operations") {
  Space s(binary());
  CHECK(s.complement(s.cylinder({0})).words == std::vector<Word>{{1}});
  CHECK(s.intersect(s.cylinder({0}), s.cylinder({0, 1})).words == std::vector<Word>{{0, 1}});
  CHECK(s.refine_to_depth(s.cylinder({0}), 2) == std::vector<Word>{{0, 0}, {0, 1}});
  CHECK(s.complement(s.full()).empty());
  CHECK(s.complement(s.empty()) == s.full());
  CHECK_THROWS_AS(s.refine_to_depth(s.full(), 40), DepthExceeded);
}

TEST_CASE("canonical form is unique (exhaustive check at depth <= 8)") {
  std::mt19937 rng(7);
  for (const LevelSpec& spec : {binary(8), LevelSpec{{3}, {2, 3}, 8}}) {
    Space s(spec);
    for (int trial = 0; trial < 150; ++trial) {
      auto w1 = random_words(rng, spec, 6, 5);
      auto w2 = random_words(rng, spec, 6, 5);
      // Also make w2 a rewriting of w1 half of the time.
      if (trial % 2 == 0) w2 = s.refine_words(w1, 5);
      auto c1 = s.canonicalize(w1), c2 = s.canonicalize(w2);
      bool same_points = oracle::points(spec, w1, 8) == oracle::points(spec, w2, 8);
      CHECK((c1 == c2) == same_points);
      CHECK(oracle::points(spec, c1.words, 8) == oracle::points(spec, w1, 8));
      CHECK(s.canonicalize(c1.words) == c1);
    }
  }
}

TEST_CASE("set operations agree with point enumeration") {
  std::mt19937 rng(11);
  LevelSpec spec{{}, {3, 2}, 8};
  Space s(spec);
  for (int trial = 0; trial < 100; ++trial) {
    auto a = s.canonicalize(random_words(rng, spec, 5, 4));
    auto b = s.canonicalize(random_words(rng, spec, 5, 4));
    auto pa = oracle::points(spec, a.words, 6), pb = oracle::points(spec, b.words, 6);
    std::set<Word> u, i, d;
    for (const auto& x : oracle::enumerate(oracle::sizes_of(spec, 6))) {
      bool ia = pa.count(x), ib = pb.count(x);
      if (ia || ib) u.insert(x);
      if (ia && ib) i.insert(x);
      if (ia && !ib) d.insert(x);
    }
    CHECK(oracle::points(spec, s.unite(a, b).words, 6) == u);
    CHECK(oracle::points(spec, s.intersect(a, b).words, 6) == i);
    CHECK(oracle::points(spec, s.subtract(a, b).words, 6) == d);
    CHECK(s.is_subset(s.intersect(a, b), a));
    CHECK(s.disjoint(s.subtract(a, b), b));
  }
}

TEST_CASE("measure_of: product formula") {
  Space s(binary());
  Measure m = two_thirds(s.spec());
  CHECK(cell_mass(s, m, {0, 1}) == Rational(2, 9));
  CHECK(measure_of(s, m, s.full()) == 1);
  auto a = s.canonicalize({{0}, {1, 0}});
  auto expected = oracle::mass_by_enumeration(s.spec(), weights_to(m, 2), a.words, 2);
  CHECK(expected == Rational(8, 9));
  CHECK(measure_of(s, m, a) == expected);
}

TEST_CASE("measure additivity on random clopen pairs") {
  std::mt19937 rng(3);
  LevelSpec spec{{}, {2, 3}, 12};
  Space s(spec);
  Measure m;
  m.block_weights = {{Rational(2, 3), Rational(1, 3)},
                     {Rational(4, 7), Rational(2, 7), Rational(1, 7)}};
  m.density[{0, 1}] = Rational(3, 2);
  normalize(s, m);
  validate_measure(s, m);
  for (int trial = 0; trial < 100; ++trial) {
    auto a = s.canonicalize(random_words(rng, spec, 5, 4));
    auto b = s.canonicalize(random_words(rng, spec, 5, 4));
    CHECK(measure_of(s, m, s.unite(a, b)) + measure_of(s, m, s.intersect(a, b)) ==
          measure_of(s, m, a) + measure_of(s, m, b));
  }
}

TEST_CASE("density lookup and normalization") {
  Space s(LevelSpec{{}, {3}, 16});
  Measure m = bernoulli_measure(s.spec(), {Rational(4, 7), Rational(2, 7), Rational(1, 7)});
  m.density[{0}] = Rational(3, 2);
  normalize(s, m);
  // total before normalization: 3/2 * 4/7 + 3/7 = 9/7
  CHECK(m.normalization == Rational(7, 9));
  CHECK(cell_mass(s, m, {0}) == Rational(2, 3));
  CHECK(measure_of(s, m, s.full()) == 1);
  CHECK_FALSE(m.density_on({}).has_value());
}

TEST_CASE("partition_exact") {
  Space s(binary());
  Measure uni = uniform_measure(s.spec());
  auto parts = partition_exact(s, uni, s.full(), {Rational(1, 2), Rational(1, 4), Rational(1, 4)});
  REQUIRE(parts.size() == 3);
  CHECK(parts[0].words == std::vector<Word>{{0}});
  CHECK(parts[1].words == std::vector<Word>{{1, 0}});
  CHECK(parts[2].words == std::vector<Word>{{1, 1}});

  Measure m = two_thirds(s.spec());
  std::vector<Rational> targets{Rational(1, 3), Rational(2, 9), Rational(4, 9)};
  auto p2 = partition_exact(s, m, s.full(), targets);
  REQUIRE(p2.size() == 3);
  ClopenSet all = s.empty();
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(measure_of(s, m, p2[i]) == targets[i]);
    CHECK(s.max_length(p2[i]) <= 3);
    CHECK(s.disjoint(all, p2[i]));
    all = s.unite(all, p2[i]);
  }
  CHECK(all == s.full());

  CHECK_THROWS_AS(partition_exact(s, uni, s.full(), {Rational(1, 3), Rational(2, 3)}),
                  ExactPackingUnavailable);
  CHECK_THROWS_AS(partition_exact(s, uni, s.full(), {Rational(1, 3)}), TargetSumMismatch);
}

TEST_CASE("partition_exact brute-force subset-sum oracle at depth 3") {
  // Every target of (1/3, 2/9, 4/9) must be a subset sum of depth-3 cell masses.
  Space s(binary());
  Measure m = two_thirds(s.spec());
  auto cells = oracle::enumerate({2, 2, 2});
  auto w = weights_to(m, 3);
  for (Rational t : {Rational(1, 3), Rational(2, 9), Rational(4, 9)}) {
    bool found = false;
    for (unsigned mask = 0; mask < (1u << cells.size()) && !found; ++mask) {
      Rational sum(0);
      for (std::size_t i = 0; i < cells.size(); ++i)
        if (mask & (1u << i)) sum += oracle::product_mass(w, cells[i]);
      found = sum == t;
    }
    CHECK(found);
  }
}

TEST_CASE("partition_approx") {
  Space s(binary());
  Measure uni = uniform_measure(s.spec());
  std::vector<Rational> targets{Rational(1, 3), Rational(2, 3)};
  auto out = partition_approx(s, uni, s.full(), targets, Rational(1, 64));
  REQUIRE(out.parts.size() == 2);
  Rational dev_sum(0), covered(0);
  for (std::size_t i = 0; i < 2; ++i) {
    Rational mi = measure_of(s, uni, out.parts[i]);
    CHECK(rabs(mi - targets[i]) <= Rational(1, 64));
    dev_sum += rabs(mi - targets[i]);
    covered += mi;
  }
  Rational defect = measure_of(s, uni, out.defect);
  CHECK(defect <= Rational(1, 32));
  CHECK(defect == 1 - covered);  // audit identity
  CHECK(defect <= dev_sum + (1 - Rational(1)));

  auto exact = partition_approx(s, uni, s.full(),
                                {Rational(1, 2), Rational(1, 4), Rational(1, 4)}, Rational(1, 8));
  CHECK(exact.defect.empty());
  CHECK(exact.parts == partition_exact(s, uni, s.full(),
                                       {Rational(1, 2), Rational(1, 4), Rational(1, 4)}));

  auto half = partition_approx(s, uni, s.full(), {Rational(1, 2)}, Rational(0));
  CHECK(half.parts[0].words == std::vector<Word>{{0}});
  CHECK(half.defect.words == std::vector<Word>{{1}});
}
