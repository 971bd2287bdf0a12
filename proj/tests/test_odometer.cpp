#include <random>

#include "doctest.h"
#include "foe/errors.hpp"
#include "foe/odometer.hpp"
#include "oracles.hpp"

using namespace foe;

namespace {

OdometerSystem binary_sys(const std::vector<Rational>& w, int depth_max = 32) {
  LevelSpec spec{{}, {2}, depth_max};
  return OdometerSystem(spec, bernoulli_measure(spec, w));
}

OdometerSystem two_thirds(int depth_max = 32) {
  return binary_sys({Rational(2, 3), Rational(1, 3)}, depth_max);
}

OdometerSystem uniform_binary(int depth_max = 32) {
  return binary_sys({Rational(1, 2), Rational(1, 2)}, depth_max);
}

OdometerSystem ternary(int depth_max = 32) {
  LevelSpec spec{{}, {3}, depth_max};
  return OdometerSystem(spec, bernoulli_measure(spec, {Rational(4, 7), Rational(2, 7), Rational(1, 7)}));
}

Word random_word(std::mt19937& rng, const Space& space, int len) {
  Word w;
  for (int j = 0; j < len; ++j) w.push_back(std::uniform_int_distribution<int>(0, space.size_at(j) - 1)(rng));
  return w;
}

}  // namespace

TEST_CASE("successor adds one with carry") {
  Space s(LevelSpec{{}, {2}, 8});
  CHECK(*successor(s, {1, 1, 0}) == Word{0, 0, 1});
  CHECK(*successor(s, {0, 1, 1}) == Word{1, 1, 1});
  CHECK_FALSE(successor(s, {1, 1}).has_value());
  Space mixed(LevelSpec{{3}, {2}, 8});
  CHECK(*successor(mixed, {2, 0}) == Word{0, 1});
}

TEST_CASE("rn_derivative examples") {
  auto sys = two_thirds();
  auto v = rn_derivative(sys, {0}, 1);
  CHECK(v.word == Word{0});
  CHECK(v.ratio == Rational(1, 2));
  CHECK(rn_derivative(sys, {1, 1, 0}, 1).ratio == 2);
  CHECK(rn_derivative(sys, {1, 0, 1}, 0).ratio == 1);
  // [1] needs refinement: the carry moves into level 1.
  auto r = rn_derivative(sys, {1}, 1);
  CHECK(r.word == Word{1, 0});
  CHECK(r.ratio == 2 * Rational(1, 2));
  auto back = rn_derivative(sys, {0}, -1);
  CHECK(back.word == Word{0, 1});
  CHECK_THROWS_AS(rn_derivative(two_thirds(4), {1, 1, 1, 1}, 1), DepthExceeded);
}

TEST_CASE("rn_derivative matches the product formula by enumeration") {
  auto sys = ternary();
  const int depth = 4;
  auto sizes = oracle::sizes_of(sys.levels(), depth);
  auto weights = oracle::level_weights(sys.measure(), depth);
  for (const auto& x : oracle::enumerate(sizes)) {
    Word y = oracle::add_one_mod(sizes, x);
    if (y < x) continue;  // wrapped
    CHECK(rn_derivative(sys, x, 1).ratio ==
          oracle::product_mass(weights, y) / oracle::product_mass(weights, x));
  }
}

TEST_CASE("cocycle identity on random words") {
  std::mt19937 rng(7);
  auto sys = two_thirds();
  const Space& space = sys.space();
  for (int trial = 0; trial < 300; ++trial) {
    Word x = random_word(rng, space, 16);
    std::int64_t n = std::uniform_int_distribution<int>(-200, 200)(rng);
    std::int64_t m = std::uniform_int_distribution<int>(-200, 200)(rng);
    auto whole = rn_derivative(sys, x, m + n);
    auto first = rn_derivative(sys, whole.word, n);
    Word mid = *space.translate(first.word, n);
    auto second = rn_derivative(sys, mid, m);
    CHECK(whole.ratio == first.ratio * second.ratio);
  }
}

TEST_CASE("cocycle with a density") {
  auto cfg = SystemConfig{LevelSpec{{}, {3}, 16}, bernoulli_measure(LevelSpec{{}, {3}, 16},
                                                                      {Rational(4, 7), Rational(2, 7), Rational(1, 7)})};
  cfg.measure.density[{0}] = Rational(3, 2);
  normalize(Space(cfg.levels), cfg.measure);
  OdometerSystem sys(cfg);
  // [0] -> [1]: (2/7)/(4/7) * 1/(3/2).
  CHECK(rn_derivative(sys, {0}, 1).ratio == Rational(1, 3));
  CHECK(sys.step_ratio({0}) == Rational(1, 3));
  CHECK(rn_derivative(sys, {2, 0}, 1).ratio == Rational(4) * Rational(3, 2) * Rational(1, 2));
}

TEST_CASE("groupoid map basics") {
  auto sys = uniform_binary();
  const Space& s = sys.space();
  auto g = from_pieces(s, {{{0}, 1}});
  CHECK(image(s, g, s.cylinder({0})) == s.cylinder({1}));
  auto inv = invert(s, g);
  REQUIRE(inv.pieces.size() == 1);
  CHECK(inv.pieces[0].cylinder == Word{1});
  CHECK(inv.pieces[0].power == -1);
  CHECK(compose(s, g, identity_map(s, g.range)) == g);
  CHECK(is_identity(s, compose(s, g, inv)));
  CHECK(is_identity(s, compose(s, inv, g)));
  CHECK(*apply(s, g, {0, 1, 1}) == Word{1, 1, 1});
  CHECK_FALSE(apply(s, g, {1}).has_value());
}

TEST_CASE("compose refines and tracks defects") {
  auto sys = uniform_binary(8);
  const Space& s = sys.space();
  auto f = from_pieces(s, {{{0}, 1}, {{1, 0}, 1}});
  auto g = from_pieces(s, {{{1, 1}, -3}, {{0, 1}, 1}});
  auto gf = compose(s, f, g);
  validate_map(s, gf);
  // f sends [0,1] to [1,1] and [1,0] to [0,1]; [0,0] lands in [1,0] where g is undefined.
  CHECK(gf.defect == s.cylinder({0, 0}));
  for (const auto& x : oracle::enumerate(oracle::sizes_of(s.spec(), 6))) {
    auto fx = apply(s, f, x);
    auto gfx = apply(s, gf, x);
    if (fx && apply(s, g, *fx)) {
      REQUIRE(gfx);
      CHECK(*gfx == *apply(s, g, *fx));
    } else {
      CHECK_FALSE(gfx.has_value());
    }
  }
}

TEST_CASE("groupoid laws on random maps") {
  std::mt19937 rng(11);
  auto sys = ternary(10);
  const Space& s = sys.space();
  auto random_map = [&] {
    // Powers on a random depth-3 partition that stay cylinder-to-cylinder.
    std::vector<Piece> pieces;
    std::set<Word> used;
    for (const auto& w : s.all_words(3)) {
      for (int tries = 0; tries < 20; ++tries) {
        std::int64_t p = std::uniform_int_distribution<int>(-5, 5)(rng);
        auto img = s.translate(w, p);
        if (img && !used.count(*img)) {
          used.insert(*img);
          pieces.push_back({w, p});
          break;
        }
      }
    }
    return from_pieces(s, pieces);
  };
  for (int t = 0; t < 20; ++t) {
    auto f = random_map(), g = random_map(), h = random_map();
    validate_map(s, f);
    auto left = compose(s, compose(s, f, g), h);
    auto right = compose(s, f, compose(s, g, h));
    CHECK(normalize_map(s, left).pieces == normalize_map(s, right).pieces);
    CHECK(left.defect == right.defect);
    CHECK(invert(s, invert(s, f)) == f);
    CHECK(is_identity(s, compose(s, f, invert(s, f))));
  }
}

TEST_CASE("normalize merges sibling families") {
  Space s(LevelSpec{{}, {2}, 8});
  auto g = normalize_map(s, from_pieces(s, {{{0, 0}, 1}, {{0, 1}, 1}, {{1}, -1}}));
  REQUIRE(g.pieces.size() == 2);
  CHECK(g.pieces[0] == Piece{{0}, 1});
  auto h = normalize_map(s, from_pieces(s, {{{1, 0}, 1}, {{1, 1}, -1}}));
  CHECK(h.pieces.size() == 2);
}

TEST_CASE("map serialization round trip") {
  auto sys = two_thirds(12);
  auto g = induced_map(sys, sys.space().canonicalize({{0}, {1, 1, 0}}));
  auto text = serialize_map(g);
  auto back = parse_map(sys.space(), text);
  CHECK(back == g);
  CHECK(serialize_map(back) == text);
  CHECK_THROWS_AS(parse_map(sys.space(), "groupoid-map v1\npiece 0 x\nend\n"), ParseError);
  CHECK_THROWS_AS(parse_map(sys.space(), "groupoid-map v1\ndomain 0\nrange 0\npiece 0 1\nend\n"),
                  ParseError);
}

TEST_CASE("induced map on the full space is T") {
  auto sys = uniform_binary(10);
  auto g = induced_map(sys, sys.space().full());
  for (const auto& p : g.pieces) CHECK(p.power == 1);
  CHECK(g.defect == sys.space().cylinder(Word(10, 1)));
}

TEST_CASE("induced map on [0] against orbit enumeration") {
  auto sys = uniform_binary(12);
  const Space& s = sys.space();
  auto a = s.cylinder({0});
  auto g = induced_map(sys, a);
  validate_map(s, g);
  const int depth = 3;
  auto sizes = oracle::sizes_of(s.spec(), depth);
  auto pts = oracle::points(s.spec(), a.words, depth);
  for (const auto& x : pts) {
    Word y = x;
    int t = 0;
    do {
      y = oracle::add_one_mod(sizes, y);
      ++t;
    } while (!pts.count(y));
    // Pieces deeper than the enumeration depth are checked on each extension.
    bool found = false;
    for (const auto& p : g.pieces) {
      if (oracle::prefix_of(p.cylinder, x) || oracle::prefix_of(x, p.cylinder)) {
        if (p.cylinder.size() <= static_cast<std::size_t>(depth)) {
          CHECK(p.power == t);
          found = true;
        }
      }
    }
    if (!found) CHECK(x == Word{0, 1, 1});  // the carry chain that escapes depth 3
  }
  auto kac = kac_audit(sys, g);
  CHECK(kac.swept_mass == sys.mass(kac.swept));
  CHECK(kac.swept_mass + sys.mass(g.defect) * 0 <= 1);
}

TEST_CASE("Kac identity for a half-measure set") {
  auto sys = uniform_binary(16);
  const Space& s = sys.space();
  auto a = s.canonicalize({{0, 0}, {1, 1}});
  auto g = induced_map(sys, a);
  // Only the orbit through the all-maximal point escapes.
  CHECK(g.defect == s.cylinder(Word(16, 1)));
  Rational kac(0);
  for (const auto& p : g.pieces) kac += p.power * sys.mass(p.cylinder);
  auto audit = kac_audit(sys, g);
  CHECK(kac == audit.swept_mass);
  CHECK(1 - kac == sys.mass(s.complement(audit.swept)));
  CHECK(1 - kac <= Rational(1, 1 << 14));
}

TEST_CASE("induced map with a tiny step bound reports the defect") {
  auto sys = uniform_binary(16);
  auto a = sys.space().cylinder({0, 0, 0, 0});
  WalkOptions opts;
  opts.step_bound = 3;
  auto g = induced_map(sys, a, opts);
  CHECK(g.pieces.empty());
  CHECK(g.defect == a);
  opts.throw_on_defect = true;
  CHECK_THROWS_AS(induced_map(sys, a, opts), ReturnTimeExceeded);
}

namespace {

void audit_tower(const OdometerSystem& sys, const Tower& t, const ClopenSet& ambient) {
  const Space& s = sys.space();
  REQUIRE(static_cast<int>(t.levels.size()) == t.height);
  std::vector<Word> all;
  Rational sum(0);
  for (const auto& lv : t.levels) {
    all.insert(all.end(), lv.words.begin(), lv.words.end());
    sum += sys.mass(lv);
  }
  for (std::size_t i = 0; i < t.levels.size(); ++i)
    for (std::size_t j = i + 1; j < t.levels.size(); ++j)
      CHECK(s.disjoint(t.levels[i], t.levels[j]));
  CHECK(sum + sys.mass(t.residual) == sys.mass(ambient));
  CHECK(s.unite(s.canonicalize(all), t.residual) == ambient);
}

}  // namespace

TEST_CASE("exact castle for the odometer") {
  auto sys = two_thirds();
  auto t = rokhlin_tower(sys, 5);
  CHECK(t.base == sys.space().cylinder({0, 0, 0}));
  CHECK(t.height == 8);
  CHECK(t.residual.empty());
  audit_tower(sys, t, sys.space().full());
  for (int i = 0; i + 1 < t.height; ++i) {
    // Level i+1 is T of level i.
    Word w = t.levels[i].words.front();
    CHECK(t.levels[i + 1] == sys.space().cylinder(*successor(sys.space(), w)));
  }
  auto t1 = rokhlin_tower(sys, 1);
  CHECK(t1.base == sys.space().cylinder({0}));
  CHECK(t1.height == 2);
  CHECK(t1.residual.empty());
}

TEST_CASE("tower for an induced map") {
  auto sys = uniform_binary(16);
  const Space& s = sys.space();
  auto a = s.cylinder({0});
  auto g = induced_map(sys, a);
  auto t = rokhlin_tower(sys, g, 2, Rational(1, 8));
  CHECK(t.height == 3);
  CHECK(sys.mass(t.residual) <= Rational(1, 8));
  audit_tower(sys, t, a);
  // Level i+1 is g of level i, checked on depth-8 points.
  for (const auto& x : s.refine_to_depth(t.levels[0], 8)) {
    Word y = x;
    for (int i = 1; i < t.height; ++i) {
      y = *apply(s, g, y);
      CHECK(s.relate(t.levels[i], y) == Relation::Inside);
    }
  }
}

TEST_CASE("one-step ratios") {
  auto r = one_step_ratios(two_thirds(), 3);
  CHECK(r == std::vector<Rational>{Rational(1, 2), Rational(1), Rational(2)});
  auto u = one_step_ratios(uniform_binary(), 3);
  CHECK(u == std::vector<Rational>{Rational(1)});
}

TEST_CASE("mp return map for a uniform measure is T") {
  auto sys = uniform_binary(10);
  auto r = mp_return_map(sys);
  auto t = induced_map(sys, sys.space().full());
  CHECK(r == t);
}

TEST_CASE("mp return map preserves the measure") {
  auto sys = ternary(8);
  const Space& s = sys.space();
  WalkOptions opts;
  opts.step_bound = 2000;
  auto r = mp_return_map(sys, opts);
  validate_map(s, r);
  CHECK(sys.mass(r.defect) < Rational(1, 10));
  for (const auto& p : r.pieces) {
    CHECK(*piece_ratio(sys, p) == 1);
    CHECK(p.power > 0);
    // Minimality: no smaller positive power has ratio one on this piece.
    for (std::int64_t k = 1; k < p.power; ++k)
      CHECK(sys.mass(*s.translate(p.cylinder, k)) != sys.mass(p.cylinder));
  }
}

TEST_CASE("mp return map on binary (2/3,1/3) is minimal") {
  auto sys = two_thirds(10);
  const Space& s = sys.space();
  auto r = mp_return_map(sys);
  CHECK(sys.mass(r.defect) < Rational(1, 4));
  for (const auto& p : r.pieces) {
    CHECK(sys.mass(piece_image(s, p)) == sys.mass(p.cylinder));
    for (std::int64_t k = 1; k < p.power; ++k)
      CHECK(sys.mass(*s.translate(p.cylinder, k)) != sys.mass(p.cylinder));
  }
}

TEST_CASE("mp return map rejects a non-special measure") {
  LevelSpec spec{{}, {2, 2}, 16};
  Measure m;
  m.block_weights = {{Rational(2, 3), Rational(1, 3)}, {Rational(3, 4), Rational(1, 4)}};
  OdometerSystem sys(spec, m);
  CHECK_THROWS_AS(mp_return_map(sys), NotSpecialMeasure);
}
