#include "foe/typing.hpp"

#include <algorithm>
#include <set>

#include "foe/errors.hpp"

namespace foe {

RatioLattice ratio_lattice(const OdometerSystem& sys) {
  const auto& blocks = sys.measure().block_weights;
  std::set<Rational> ratios;
  for (const auto& w : blocks) {
    ratios.insert(Rational(w.front() / w.back()));
    for (std::size_t c = 0; c + 1 < w.size(); ++c) ratios.insert(Rational(w[c + 1] / w[c]));
  }
  RatioLattice lat;
  lat.ratios.assign(ratios.begin(), ratios.end());
  auto basis = factor_all(lat.ratios);
  lat.primes = basis.primes;
  lat.vectors = basis.vectors;
  lat.shape = group_shape(lat.ratios);
  if (lat.shape == GroupShape::Cyclic) lat.generator = cyclic_generator(lat.ratios);
  return lat;
}

// ---------------------------------------------------------------- witnesses

namespace {

// Product of the first s alphabet sizes, or nullopt on overflow.
std::optional<std::int64_t> radix_below(const Space& space, int s) {
  __int128 r = 1;
  for (int j = 0; j < s; ++j) {
    r *= space.size_at(j);
    if (r > (__int128{1} << 62)) return std::nullopt;
  }
  return static_cast<std::int64_t>(r);
}

// All words over levels s..s+len-1.
std::vector<Word> words_at(const Space& space, int s, int len) {
  std::vector<Word> out{Word{}};
  for (int j = 0; j < len; ++j) {
    std::vector<Word> next;
    for (const auto& w : out)
      for (int c = 0; c < space.size_at(s + j); ++c) {
        Word x = w;
        x.push_back(c);
        next.push_back(std::move(x));
      }
    out = std::move(next);
  }
  return out;
}

std::int64_t value_at(const Space& space, int s, const Word& u) {
  std::int64_t v = 0, r = 1;
  for (std::size_t j = 0; j < u.size(); ++j) {
    v += u[j] * r;
    r *= space.size_at(s + static_cast<int>(j));
  }
  return v;
}

Rational pattern_ratio(const OdometerSystem& sys, int s, const Word& u, const Word& v) {
  Rational r(1);
  for (std::size_t j = 0; j < u.size(); ++j) {
    const int lvl = s + static_cast<int>(j);
    r *= sys.measure().weight(lvl, v[j]) / sys.measure().weight(lvl, u[j]);
  }
  return r;
}

Word zeros_then(int s, const Word& u) {
  Word w(s, 0);
  w.insert(w.end(), u.begin(), u.end());
  return w;
}

}  // namespace

std::optional<Witness> find_witness(const OdometerSystem& sys, const Rational& ratio, int max_len) {
  const Space& space = sys.space();
  const int s = sys.working_depth();
  const int period = space.spec().block_length();
  if (max_len <= 0) {
    max_len = 2 * period;
    auto count = [&](int len) {
      std::int64_t c = 1;
      for (int j = 0; j < len; ++j) c *= space.size_at(s + j);
      return c;
    };
    while (max_len > 1 && count(max_len) > 2048) --max_len;
  }
  for (int len = 1; len <= max_len; ++len) {
    if (s + period + len > space.depth_max()) break;
    auto radix = radix_below(space, s);
    auto radix_deep = radix_below(space, s + period);
    if (!radix || !radix_deep) break;
    auto words = words_at(space, s, len);
    for (const auto& u : words) {
      for (const auto& v : words) {
        if (u == v || pattern_ratio(sys, s, u, v) != ratio) continue;
        const std::int64_t diff = value_at(space, s, v) - value_at(space, s, u);
        Witness w;
        w.a = space.cylinder(zeros_then(s, u));
        w.b = space.cylinder(zeros_then(s, v));
        w.power = diff * *radix;
        w.ratio = ratio;
        w.a_deeper = space.cylinder(zeros_then(s + period, u));
        w.power_deeper = diff * *radix_deep;
        return w;
      }
    }
  }
  return std::nullopt;
}

bool replay_witness(const OdometerSystem& sys, const Witness& w) {
  const Space& space = sys.space();
  if (w.a.words.size() != 1 || w.a_deeper.words.size() != 1) return false;
  Piece p{w.a.words.front(), w.power};
  Piece deep{w.a_deeper.words.front(), w.power_deeper};
  if (!space.translate(p.cylinder, p.power) || !space.translate(deep.cylinder, deep.power)) return false;
  auto g = from_pieces(space, {p});
  if (image(space, g, w.a) != w.b) return false;
  auto r = piece_ratio(sys, p);
  auto rd = piece_ratio(sys, deep);
  return r && rd && *r == w.ratio && *rd == w.ratio;
}

TypeLabel classify(const OdometerSystem& sys) {
  auto lat = ratio_lattice(sys);
  TypeLabel t;
  switch (lat.shape) {
    case GroupShape::Trivial:
      t.kind = TypeKind::MeasurePreserving;
      return t;
    case GroupShape::Cyclic: {
      auto w = find_witness(sys, *lat.generator);
      if (w && replay_witness(sys, *w)) {
        t.kind = TypeKind::TypeIIILambda;
        t.lambda = *lat.generator;
        t.witnesses.push_back(std::move(*w));
      }
      return t;
    }
    case GroupShape::NonCyclic: {
      std::vector<Rational> below;
      for (const auto& r : lat.ratios)
        if (r < 1) below.push_back(r);
      std::sort(below.rbegin(), below.rend());
      std::vector<Rational> found;
      for (const auto& r : below) {
        auto trial = found;
        trial.push_back(r);
        if (lattice_rank(factor_all(trial).vectors) != static_cast<int>(trial.size())) continue;
        auto w = find_witness(sys, r);
        if (!w || !replay_witness(sys, *w)) continue;
        found.push_back(r);
        t.witnesses.push_back(std::move(*w));
        if (found.size() == 2) break;
      }
      if (found.size() == 2) {
        t.kind = TypeKind::TypeIII1Candidate;
      } else {
        t.witnesses.clear();
      }
      return t;
    }
  }
  return t;
}

std::string type_name(const TypeLabel& t) {
  switch (t.kind) {
    case TypeKind::MeasurePreserving:
      return "measure-preserving";
    case TypeKind::TypeIIILambda:
      return "III_lambda lambda=" + to_string(t.lambda);
    case TypeKind::TypeIII1Candidate:
      return "III_1 candidate";
    case TypeKind::Unknown:
      break;
  }
  return "unknown";
}

// --------------------------------------------------------------------- gaps

std::vector<Rational> values_on_cylinder(const OdometerSystem& sys, const Word& w, int depth,
                                         std::size_t cap) {
  const Space& space = sys.space();
  std::set<Rational> values{Rational(1)};
  if (static_cast<int>(w.size()) < sys.measure().density_depth()) {
    auto words = space.refine_words({w}, depth);
    if (words.size() * words.size() > cap) throw PreconditionFailed("value enumeration too large");
    for (const auto& u : words)
      for (const auto& v : words) values.insert(Rational(sys.mass(v) / sys.mass(u)));
    return {values.begin(), values.end()};
  }
  for (int lvl = static_cast<int>(w.size()); lvl < depth; ++lvl) {
    std::set<Rational> level;
    for (int a = 0; a < space.size_at(lvl); ++a)
      for (int b = 0; b < space.size_at(lvl); ++b)
        level.insert(Rational(sys.measure().weight(lvl, b) / sys.measure().weight(lvl, a)));
    std::set<Rational> next;
    for (const auto& x : values)
      for (const auto& y : level) next.insert(Rational(x * y));
    if (next.size() > cap) throw PreconditionFailed("value enumeration too large");
    values = std::move(next);
  }
  return {values.begin(), values.end()};
}

GapResult find_clopen_gap(const OdometerSystem& sys, const Rational& lo, const Rational& hi,
                          int audit_depth) {
  if (lo <= 0 || hi < lo) throw PreconditionFailed("find_clopen_gap: need 0 < lo <= hi");
  if (lo <= 1 && 1 <= hi) throw PreconditionFailed("find_clopen_gap: interval contains 1");
  const Space& space = sys.space();
  const int d = sys.working_depth();
  auto lat = ratio_lattice(sys);
  bool group_avoids = lat.shape == GroupShape::Trivial;
  if (lat.shape == GroupShape::Cyclic) {
    // lam^j decreases in j; find the largest power not above hi.
    const Rational& lam = *lat.generator;
    long j = nearest_power(hi, lam);
    while (rpow(lam, j) > hi) ++j;
    while (rpow(lam, j - 1) <= hi) --j;
    group_avoids = rpow(lam, j) < lo;
  }
  if (group_avoids && d <= space.depth_max()) {
    Word w(d, 0);
    return {space.cylinder(w), audit_depth, true};
  }
  for (int depth = d; depth < audit_depth; ++depth) {
    std::int64_t tried = 0;
    for (const auto& w : space.all_words(depth)) {
      if (++tried > 4096) break;
      std::vector<Rational> vals;
      try {
        vals = values_on_cylinder(sys, w, audit_depth);
      } catch (const PreconditionFailed&) {
        continue;
      }
      bool clear = std::none_of(vals.begin(), vals.end(),
                                [&](const Rational& v) { return lo <= v && v <= hi; });
      if (clear) return {space.cylinder(w), audit_depth, false};
    }
  }
  throw GapNotWitnessed("no cylinder of depth < " + std::to_string(audit_depth) +
                        " avoids [" + to_string(lo) + ", " + to_string(hi) + "]");
}

// ---------------------------------------------------------- special measures

bool near_power(const Rational& v, const Rational& lambda, const Rational& bound) {
  long k = nearest_power(v, lambda);
  Rational q = v / rpow(lambda, k);
  return q <= bound && 1 / q <= bound;
}

SpecialCheck check_special(const OdometerSystem& sys, const Rational& lambda, int depth) {
  const Space& space = sys.space();
  const int dd = sys.measure().density_depth();
  SpecialCheck out;
  Word maxes;
  for (int j = 0; j < depth; ++j) {
    const int size = space.size_at(j);
    for (int c = 0; c + 1 < size; ++c) {
      Word w = maxes;
      w.push_back(c);
      for (const auto& u : space.refine_words({w}, dd)) {
        Rational r = sys.step_ratio(u);
        if (!is_power_of(r, lambda, nullptr)) out.violations.emplace_back(u, r);
      }
    }
    maxes.push_back(size - 1);
  }
  out.ok = out.violations.empty();
  return out;
}

namespace {

// Density multipliers f on depth-d cylinders making mu(w) f(w) / mu(0^d)
// an exact power of lambda, with f as close to 1 as possible.
std::map<Word, Rational> exact_correction(const OdometerSystem& sys, const Rational& lambda, int d) {
  const Space& space = sys.space();
  const Rational base = sys.mass(Word(d, 0));
  std::map<Word, Rational> f;
  for (const auto& w : space.all_words(d)) {
    Rational g = base / sys.mass(w);
    long m = nearest_power(1 / g, lambda);
    Rational fw = g * rpow(lambda, m);
    fw.canonicalize();
    f[w] = fw;
  }
  return f;
}

Measure apply_factor(const OdometerSystem& sys, const std::map<Word, Rational>& f) {
  Measure m = sys.measure();
  if (std::all_of(f.begin(), f.end(), [](const auto& kv) { return kv.second == 1; })) return m;
  std::map<Word, Rational> density;
  for (const auto& [w, fw] : f) {
    Rational v = *m.density_on(w) * fw;
    if (v != 1) density[w] = v;
  }
  m.density = std::move(density);
  normalize(sys.space(), m);
  return m;
}

bool values_within(const OdometerSystem& sys, const Rational& lambda, int depth, const Rational& bound) {
  for (const auto& v : one_step_ratios(sys, depth))
    if (!near_power(v, lambda, bound)) return false;
  return true;
}

}  // namespace

SpecialMeasureTranscript special_measure(const OdometerSystem& sys, const std::vector<Rational>& etas,
                                         int stages) {
  auto lat = ratio_lattice(sys);
  if (lat.shape != GroupShape::Cyclic) throw StageFailed("special_measure: tail ratio group is not cyclic");
  if (stages < 1 || static_cast<int>(etas.size()) < stages)
    throw PreconditionFailed("special_measure: need one eta per stage");
  for (std::size_t i = 0; i < etas.size(); ++i) {
    if (etas[i] <= 0) throw PreconditionFailed("special_measure: etas must be positive");
    if (i > 0 && etas[i] > etas[i - 1]) throw PreconditionFailed("special_measure: etas must decrease");
  }
  SpecialMeasureTranscript tr;
  tr.lambda = *lat.generator;
  tr.etas.assign(etas.begin(), etas.begin() + stages);
  const Rational& lam = tr.lambda;
  OdometerSystem cur = sys;
  const int d = sys.working_depth();
  const int audit = d + sys.space().spec().block_length();
  for (int i = 0; i < stages; ++i) {
    SpecialStage st;
    st.eta = etas[i];
    st.factor = exact_correction(cur, lam, d);
    // The first correction may move by up to a factor 1/lambda; later ones
    // only by the previous stage's bound.
    st.factor_bound = i == 0 ? Rational(1 / lam) : Rational(1 + 3 * etas[i - 1]);
    st.value_bound = 1 + 3 * etas[i];
    bool factors_ok = std::all_of(st.factor.begin(), st.factor.end(), [&](const auto& kv) {
      return kv.second <= st.factor_bound && 1 / kv.second <= st.factor_bound;
    });
    cur = OdometerSystem(cur.levels(), apply_factor(cur, st.factor));
    st.bounds_hold = factors_ok && values_within(cur, lam, audit, st.value_bound);
    if (!st.bounds_hold)
      throw StageFailed("special_measure: stage " + std::to_string(i + 1) + " misses its bound");
    tr.stages.push_back(std::move(st));
  }
  // Snap: any value not yet an exact power gets one more exact correction.
  auto check = check_special(cur, lam, audit);
  tr.snapped = static_cast<int>(check.violations.size());
  if (!check.ok) {
    cur = OdometerSystem(cur.levels(), apply_factor(cur, exact_correction(cur, lam, d)));
    if (!check_special(cur, lam, audit).ok) throw StageFailed("special_measure: snap failed");
  }
  tr.final_measure = cur.measure();
  tr.residual_bound = 0;
  return tr;
}

// -------------------------------------------------------------- ergodicity

ErgodicityReport mp_subrelation_ergodic(const OdometerSystem& sys, int depth, const WalkOptions& opts) {
  const Space& space = sys.space();
  auto r = mp_return_map(sys, opts);
  auto nodes = space.all_words(depth);
  std::map<Word, int> index;
  for (std::size_t i = 0; i < nodes.size(); ++i) index[nodes[i]] = static_cast<int>(i);
  std::vector<std::set<int>> fwd(nodes.size()), bwd(nodes.size());
  auto add_edge = [&](const Word& u, const Word& v) {
    int a = index.at(Word(u.begin(), u.begin() + depth));
    int b = index.at(Word(v.begin(), v.begin() + depth));
    fwd[a].insert(b);
    bwd[b].insert(a);
  };
  for (const auto& p : r.pieces) {
    if (static_cast<int>(p.cylinder.size()) >= depth) {
      add_edge(p.cylinder, piece_image(space, p));
    } else {
      for (const auto& u : space.refine_words({p.cylinder}, depth))
        add_edge(u, *space.translate(u, p.power, p.cylinder.size()));
    }
  }
  ErgodicityReport rep;
  rep.depth = depth;
  rep.nodes = static_cast<int>(nodes.size());
  for (const auto& e : fwd) rep.edges += static_cast<int>(e.size());
  auto reach = [&](int start, const std::vector<std::set<int>>& adj) {
    std::vector<char> seen(nodes.size(), 0);
    std::vector<int> stack{start};
    seen[start] = 1;
    while (!stack.empty()) {
      int x = stack.back();
      stack.pop_back();
      for (int y : adj[x])
        if (!seen[y]) {
          seen[y] = 1;
          stack.push_back(y);
        }
    }
    return seen;
  };
  std::vector<int> comp(nodes.size(), -1);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (comp[i] >= 0) continue;
    auto f = reach(static_cast<int>(i), fwd);
    auto b = reach(static_cast<int>(i), bwd);
    std::vector<Word> members;
    for (std::size_t j = 0; j < nodes.size(); ++j)
      if (f[j] && b[j]) {
        comp[j] = static_cast<int>(rep.components.size());
        members.push_back(nodes[j]);
      }
    rep.components.push_back(std::move(members));
  }
  rep.connected = rep.components.size() == 1;
  return rep;
}

// ------------------------------------------------------------- Example 1.6

namespace {

std::vector<Rational> odd_level(const Rational& lambda) {
  return {Rational(1 / (1 + lambda)), Rational(lambda / (1 + lambda))};
}

// Even level n as printed (total 1 + 1/n^2), then normalized.
std::vector<Rational> even_level(const Rational& alpha, int n) {
  const int n2 = n * n;
  std::vector<Rational> w;
  w.push_back(Rational(1) / (n2 * (1 + alpha)));
  w.push_back(alpha / (n2 * (1 + alpha)));
  for (int i = 2; i <= n2 + 1; ++i) w.push_back(Rational(1, n2));
  Rational total(0);
  for (const auto& x : w) total += x;
  for (auto& x : w) {
    x /= total;
    x.canonicalize();
  }
  return w;
}

std::vector<Rational> uniform(int size) { return std::vector<Rational>(size, Rational(1, size)); }

}  // namespace

Example16Report example_1_6(const Rational& lambda, const Rational& alpha, int depth) {
  if (!(0 < lambda && lambda < 1 && 0 < alpha && alpha < 1))
    throw PreconditionFailed("example_1_6: need 0 < lambda, alpha < 1");
  if (depth < 2) throw PreconditionFailed("example_1_6: depth must be >= 2");
  Example16Report rep;
  rep.lambda = lambda;
  rep.alpha = alpha;
  const int last_even = depth % 2 == 0 ? depth : depth - 1;
  LevelSpec t_spec, a_spec;
  Measure t_m, a_m;
  for (int n = 1; n <= depth; ++n) {
    if (n % 2 == 1) {
      t_spec.prefix.push_back(2);
      a_spec.prefix.push_back(2);
      t_m.prefix_weights.push_back(odd_level(lambda));
      a_m.prefix_weights.push_back(odd_level(lambda));
    } else {
      rep.even_levels.push_back(n * n + 2);
      t_spec.prefix.push_back(n * n + 2);
      a_spec.prefix.push_back(n * n);
      t_m.prefix_weights.push_back(even_level(alpha, n));
      a_m.prefix_weights.push_back(uniform(n * n));
    }
  }
  t_spec.block = {2, last_even * last_even + 2};
  a_spec.block = {2, last_even * last_even};
  t_m.block_weights = {odd_level(lambda), even_level(alpha, last_even)};
  a_m.block_weights = {odd_level(lambda), uniform(last_even * last_even)};
  t_spec.depth_max = a_spec.depth_max = std::max(32, depth + 8);
  rep.system = {t_spec, t_m};
  rep.induced = {a_spec, a_m};

  OdometerSystem t(rep.system), a(rep.induced);
  rep.induced_type = classify(a);
  rep.lambda_witness = find_witness(t, lambda);
  rep.alpha_witness = find_witness(t, alpha);
  rep.value_group = ratio_lattice(t);
  rep.alpha_power_of_lambda = is_power_of(alpha, lambda, nullptr);
  rep.obstruction = !rep.alpha_power_of_lambda;

  rep.notes.push_back("even-level weights as printed sum to 1 + 1/n^2; each level was normalized");
  std::vector<Rational> gens{lambda, alpha};
  auto with_values = gens;
  with_values.insert(with_values.end(), rep.value_group.ratios.begin(), rep.value_group.ratios.end());
  const int base_rank = lattice_rank(factor_all(gens).vectors);
  const int full_rank = lattice_rank(factor_all(with_values).vectors);
  if (full_rank > base_rank)
    rep.notes.push_back("one-step values include (1+alpha)/alpha and 1/(1+alpha), which leave the "
                        "group generated by lambda and alpha (rank " +
                        std::to_string(base_rank) + " -> " + std::to_string(full_rank) + ")");
  else
    rep.notes.push_back("one-step values include (1+alpha)/alpha and 1/(1+alpha); for these "
                        "parameters they stay in the group generated by lambda and alpha");
  return rep;
}

}  // namespace foe
