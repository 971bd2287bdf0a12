#include "foe/equivalence.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <queue>
#include <set>
#include <tuple>

#include "foe/errors.hpp"

namespace foe {

namespace {

enum class Hit { Inside, Split, Outside };

struct Located {
  Hit hit = Hit::Outside;
  std::size_t index = 0;
};

// Pieces must be sorted. Split means x is strictly coarser than some piece.
Located locate(const std::vector<Piece>& pieces, const Word& x) {
  auto it = std::upper_bound(pieces.begin(), pieces.end(), x,
                             [](const Word& v, const Piece& p) { return v < p.cylinder; });
  if (it != pieces.begin()) {
    auto prev = std::prev(it);
    if (is_prefix(prev->cylinder, x))
      return {Hit::Inside, static_cast<std::size_t>(prev - pieces.begin())};
  }
  if (it != pieces.end() && is_prefix(x, it->cylinder)) return {Hit::Split, 0};
  return {Hit::Outside, 0};
}

void ensure_sorted(GroupoidMap& g) {
  if (!std::is_sorted(g.pieces.begin(), g.pieces.end()))
    std::sort(g.pieces.begin(), g.pieces.end());
}

// Map with the given pieces between declared domain and range; whatever
// the pieces miss becomes defect.
GroupoidMap assemble(const Space& space, std::vector<Piece> pieces, const ClopenSet& domain,
                     const ClopenSet& range) {
  GroupoidMap g = from_pieces(space, std::move(pieces));
  g.defect = space.subtract(domain, g.domain);
  g.range_defect = space.subtract(range, g.range);
  g.domain = domain;
  g.range = range;
  return g;
}

struct Rule {
  bool exact = true;
  Rational ratio{1};
  Rational lo, hi;
};

// Matches same-depth cells of a and b whose masses obey the rule, refining
// the unmatched rest one level at a time.
GroupoidMap exhaust(const OdometerSystem& sys, const ClopenSet& a, const ClopenSet& b,
                    const Rule& rule, const ExhaustOptions& opts) {
  const Space& space = sys.space();
  if (a.empty() || b.empty()) {
    GroupoidMap g;
    g.domain = a;
    g.range = b;
    g.defect = a;
    g.range_defect = b;
    if (opts.strict && sys.mass(a) > opts.tolerance)
      throw ExhaustionStalled("exhaustion: one side is empty");
    return g;
  }
  const int max_depth = opts.max_depth > 0 ? std::min(opts.max_depth, space.depth_max())
                                           : space.depth_max();
  int d = std::max({space.max_length(a), space.max_length(b), sys.working_depth()});
  std::vector<Word> la = space.refine_words(a.words, d);
  std::vector<Word> lb = space.refine_words(b.words, d);
  std::vector<Piece> pieces;

  while (true) {
    std::map<Rational, std::vector<Word>> by_mass;
    for (auto& w : lb) by_mass[sys.mass(w)].push_back(std::move(w));
    for (auto& [m, ws] : by_mass) std::reverse(ws.begin(), ws.end());  // pop_back = smallest word

    std::vector<std::pair<Rational, Word>> order;
    order.reserve(la.size());
    for (auto& w : la) order.emplace_back(sys.mass(w), std::move(w));
    std::stable_sort(order.begin(), order.end(),
                     [](const auto& x, const auto& y) { return x.first > y.first; });

    std::vector<Word> rest_a;
    Rational left_mass(0);
    for (auto& [m, w] : order) {
      std::map<Rational, std::vector<Word>>::iterator it;
      if (rule.exact) {
        it = by_mass.find(Rational(m * rule.ratio));
      } else {
        it = by_mass.lower_bound(Rational(m * rule.lo));
        if (it != by_mass.end() && it->first > m * rule.hi) it = by_mass.end();
      }
      if (it == by_mass.end()) {
        left_mass += m;
        rest_a.push_back(std::move(w));
        continue;
      }
      Word target = std::move(it->second.back());
      it->second.pop_back();
      if (it->second.empty()) by_mass.erase(it);
      pieces.push_back({w, space.value(target) - space.value(w)});
    }
    std::vector<Word> rest_b;
    for (auto& [m, ws] : by_mass)
      for (auto& w : ws) rest_b.push_back(std::move(w));

    la = std::move(rest_a);
    lb = std::move(rest_b);
    if (la.empty() || lb.empty() || left_mass <= opts.tolerance) break;
    std::int64_t next = 0;
    const int sz = space.size_at(d);
    next = static_cast<std::int64_t>(la.size() + lb.size()) * sz;
    if (d + 1 > max_depth || next > opts.max_cells) break;
    la = space.refine_words(la, d + 1);
    lb = space.refine_words(lb, d + 1);
    ++d;
  }
  GroupoidMap g = assemble(space, std::move(pieces), a, b);
  if (opts.strict && sys.mass(g.defect) > opts.tolerance)
    throw ExhaustionStalled("exhaustion left mass " + to_string(sys.mass(g.defect)) +
                            " unmatched at depth " + std::to_string(d));
  return g;
}

Rational rgcd(const Rational& x, const Rational& y) {
  mpz_class n, l;
  mpz_gcd(n.get_mpz_t(), x.get_num_mpz_t(), y.get_num_mpz_t());
  mpz_lcm(l.get_mpz_t(), x.get_den_mpz_t(), y.get_den_mpz_t());
  Rational r(n, l);
  r.canonicalize();
  return r;
}

}  // namespace

Rational cell_mass_gcd(const OdometerSystem& sys, int depth) {
  const Measure& m = sys.measure();
  Rational g = m.normalization;
  for (int j = 0; j < depth; ++j) {
    Rational lvl = m.weight(j, 0);
    for (int c = 1; c < sys.space().size_at(j); ++c) lvl = rgcd(lvl, m.weight(j, c));
    g *= lvl;
  }
  Rational dens(1);
  for (const auto& [w, v] : m.density) dens = rgcd(dens, v);
  g *= dens;
  g.canonicalize();
  return g;
}

GroupoidMap equimeasure_map_mp(const OdometerSystem& sys, const ClopenSet& a, const ClopenSet& b,
                               const ExhaustOptions& opts) {
  if (sys.mass(a) != sys.mass(b))
    throw PreconditionFailed("equimeasure map needs sets of equal measure");
  if (a == b) return identity_map(sys.space(), a);
  return exhaust(sys, a, b, Rule{}, opts);
}

GroupoidMap skew_map_lambda(const OdometerSystem& sys, const ClopenSet& a, const ClopenSet& b,
                            long k, const Rational& lambda, const ExhaustOptions& opts,
                            SkewInfo* info) {
  const Space& space = sys.space();
  const Rational ratio = rpow(lambda, k);
  if (sys.mass(b) != ratio * sys.mass(a))
    throw PreconditionFailed("skew map: mu(b) must equal lambda^k mu(a)");
  if (info) *info = {};
  if (k == 0) return equimeasure_map_mp(sys, a, b, opts);
  if (a.empty()) return assemble(space, {}, a, b);

  // Route through a witness A0 -> T^l A0 with ratio lambda^k: split a and b
  // into N equal parts and connect each through A0 by equimeasure maps.
  ExhaustOptions inner = opts;
  inner.strict = false;
  if (auto wit = find_witness(sys, ratio)) {
    const Rational ma = sys.mass(a);
    const Rational mw = sys.mass(wit->a);
    const std::size_t len = wit->a.words.front().size();
    for (int n = 1; n <= 8; ++n) {
      const Rational m0 = ma / n;
      if (m0 > mw) continue;
      try {
        ClopenSet a0 = m0 == mw ? wit->a
                                : partition_exact(space, sys.measure(), wit->a, {m0, mw - m0})[0];
        std::vector<Piece> shift;
        std::vector<Word> shifted;
        for (const auto& w : a0.words) {
          shift.push_back({w, wit->power});
          shifted.push_back(*space.translate(w, wit->power, len));
        }
        const GroupoidMap t = from_pieces(space, shift);
        const ClopenSet ta0 = space.canonicalize(std::move(shifted));
        const auto aparts =
            partition_exact(space, sys.measure(), a, std::vector<Rational>(n, m0));
        const auto bparts =
            partition_exact(space, sys.measure(), b, std::vector<Rational>(n, ratio * m0));
        std::vector<Piece> pieces;
        for (int i = 0; i < n; ++i) {
          GroupoidMap gamma = equimeasure_map_mp(sys, aparts[i], a0, inner);
          GroupoidMap delta = equimeasure_map_mp(sys, bparts[i], ta0, inner);
          GroupoidMap s = compose(space, compose(space, gamma, t), invert(space, delta));
          pieces.insert(pieces.end(), s.pieces.begin(), s.pieces.end());
        }
        GroupoidMap g = assemble(space, std::move(pieces), a, b);
        if (sys.mass(g.defect) <= opts.tolerance) {
          if (info) *info = {true, n};
          return g;
        }
      } catch (const ExactPackingUnavailable&) {
      } catch (const TargetSumMismatch&) {
      } catch (const DepthExceeded&) {
      }
    }
  }
  Rule rule;
  rule.ratio = ratio;
  return exhaust(sys, a, b, rule, opts);
}

GroupoidMap skew_map_eps(const OdometerSystem& sys, const ClopenSet& a, const ClopenSet& b,
                         const Rational& eps, const ExhaustOptions& opts) {
  if (eps <= 0) throw PreconditionFailed("skew map: eps must be positive");
  if (a.empty() || b.empty()) return exhaust(sys, a, b, Rule{}, opts);
  if (a == b) return identity_map(sys.space(), a);
  const Rational w = sys.mass(b) / sys.mass(a);
  const Rational f = exp_lower(eps);  // strictly below exp(eps)
  Rule rule;
  rule.exact = false;
  rule.lo = w / f;
  rule.hi = w * f;
  return exhaust(sys, a, b, rule, opts);
}

// ------------------------------------------------------------ uniform relations

ClopenSet UniformRelation::fiber(const Space& space, int i) const {
  return covered_image(space, splitting.at(i));
}

ClopenSet UniformRelation::ambient(const Space& space) const {
  std::vector<Word> all;
  for (int i = 0; i < r; ++i) {
    ClopenSet f = fiber(space, i);
    all.insert(all.end(), f.words.begin(), f.words.end());
  }
  return space.canonicalize(std::move(all));
}

GroupoidMap UniformRelation::projection(const Space& space) const {
  std::vector<Piece> pieces;
  for (const auto& h : splitting) {
    GroupoidMap inv = invert(space, h);
    pieces.insert(pieces.end(), inv.pieces.begin(), inv.pieces.end());
  }
  GroupoidMap g = from_pieces(space, std::move(pieces));
  return g;
}

GroupoidMap UniformRelation::symmetry(const Space& space, const std::vector<int>& perm) const {
  if (static_cast<int>(perm.size()) != r)
    throw PreconditionFailed("symmetry: permutation size differs from r");
  std::vector<Piece> pieces;
  for (int i = 0; i < r; ++i) {
    GroupoidMap s = compose(space, invert(space, splitting[i]), splitting[perm[i]]);
    pieces.insert(pieces.end(), s.pieces.begin(), s.pieces.end());
  }
  return from_pieces(space, std::move(pieces));
}

UniformRelation trivial_relation(const ClopenSet& a) {
  UniformRelation s;
  s.r = 1;
  s.fundamental = a;
  GroupoidMap id;
  for (const auto& w : a.words) id.pieces.push_back({w, 0});
  id.domain = a;
  id.range = a;
  s.splitting.push_back(std::move(id));
  return s;
}

void validate_relation(const Space& space, const UniformRelation& s) {
  if (s.r < 1 || static_cast<int>(s.splitting.size()) != s.r)
    throw PreconditionFailed("uniform relation: splitting count differs from r");
  if (!is_identity(space, s.splitting[0]))
    throw PreconditionFailed("uniform relation: h(0, .) is not the identity");
  std::vector<ClopenSet> fibers;
  for (int i = 0; i < s.r; ++i) {
    validate_map(space, s.splitting[i]);
    if (!space.is_subset(covered(space, s.splitting[i]), s.fundamental))
      throw PreconditionFailed("uniform relation: splitting map leaves the fundamental set");
    fibers.push_back(s.fiber(space, i));
  }
  for (int i = 0; i < s.r; ++i)
    for (int j = i + 1; j < s.r; ++j)
      if (!space.disjoint(fibers[i], fibers[j]))
        throw PreconditionFailed("uniform relation: fibers " + std::to_string(i) + " and " +
                                 std::to_string(j) + " overlap");
}

UniformRelation natural_extension(const Space& space, const UniformRelation& s,
                                  const UniformRelation& inner) {
  UniformRelation out;
  out.r = s.r * inner.r;
  out.fundamental = inner.fundamental;
  for (int i = 0; i < s.r; ++i)
    for (int j = 0; j < inner.r; ++j) {
      GroupoidMap h = compose(space, inner.splitting[j], s.splitting[i]);
      ensure_sorted(h);
      out.splitting.push_back(std::move(h));
    }
  out.defect = space.unite(s.defect, space.subtract(s.ambient(space), out.ambient(space)));
  return out;
}

// ------------------------------------------------------------ one-step coverage

ClopenSet one_step_coverage(const OdometerSystem& sys, const UniformRelation& s) {
  const Space& space = sys.space();
  std::vector<GroupoidMap> maps = s.splitting;
  for (auto& h : maps) ensure_sorted(h);
  std::vector<Word> out;
  std::vector<Word> work(s.fundamental.words.rbegin(), s.fundamental.words.rend());
  std::vector<std::optional<std::int64_t>> powers(maps.size());
  while (!work.empty()) {
    Word w = std::move(work.back());
    work.pop_back();
    bool split = false;
    for (std::size_t m = 0; m < maps.size() && !split; ++m) {
      Located loc = locate(maps[m].pieces, w);
      if (loc.hit == Hit::Split) split = true;
      powers[m] = loc.hit == Hit::Inside ? std::optional(maps[m].pieces[loc.index].power)
                                         : std::nullopt;
    }
    if (split) {
      auto kids = space.children(w);
      work.insert(work.end(), kids.rbegin(), kids.rend());
      continue;
    }
    std::vector<std::int64_t> present;
    for (const auto& p : powers)
      if (p) present.push_back(*p);
    std::sort(present.begin(), present.end());
    for (std::int64_t p : present)
      if (std::binary_search(present.begin(), present.end(), p + 1))
        out.push_back(*space.translate(w, p));
  }
  return space.canonicalize(std::move(out));
}

// ------------------------------------------------------------ refine_uniform

RefineResult refine_uniform(const OdometerSystem& sys, const UniformRelation& s,
                            const Rational& eps, const RefineOptions& opts) {
  const Space& space = sys.space();
  const ClopenSet& base = s.fundamental;
  if (base.empty()) throw TowerSearchFailed("refine_uniform: empty fundamental set");
  const Rational mb = sys.mass(base);

  Rational max_ratio(1);
  for (const auto& h : s.splitting)
    for (const auto& p : h.pieces) {
      auto img = space.translate(p.cylinder, p.power);
      if (!img) continue;
      Rational q = sys.mass(*img) / sys.mass(p.cylinder);
      if (q > max_ratio) max_ratio = q;
    }
  RefineResult res;
  res.delta = eps / (Rational(s.r) * max_ratio);
  res.delta.canonicalize();

  // Words finer than the castle depth cannot enter a block; they join the
  // defect. The depth is the finest one whose castle stays within max_cells.
  auto count_at = [&](int depth) {
    std::int64_t total = 0;
    for (const auto& w : base.words) {
      if (static_cast<int>(w.size()) > depth) continue;
      std::int64_t c = 1;
      for (int j = static_cast<int>(w.size()); j < depth && c <= opts.max_cells; ++j)
        c *= space.size_at(j);
      total += c;
      if (total > opts.max_cells) break;
    }
    return total;
  };
  int k = sys.working_depth();
  while (k < space.max_length(base) && count_at(k + 1) <= opts.max_cells) ++k;
  std::vector<Word> fine;
  for (const auto& w : base.words)
    if (static_cast<int>(w.size()) > k) fine.push_back(w);
  auto cells_at = [&](int depth) {
    std::vector<Word> coarse;
    for (const auto& w : base.words)
      if (static_cast<int>(w.size()) <= depth) coarse.push_back(w);
    std::vector<Word> cells = space.refine_words(coarse, depth);
    std::vector<std::pair<std::int64_t, Word>> keyed;
    for (auto& w : cells) keyed.emplace_back(space.value(w), std::move(w));
    std::sort(keyed.begin(), keyed.end());
    cells.clear();
    for (auto& [v, w] : keyed) cells.push_back(std::move(w));
    return cells;
  };
  std::vector<Word> cells = cells_at(k);

  std::vector<int> heights;
  for (int n = 2; n <= opts.max_height; n += std::max(1, n / 4)) heights.push_back(n);

  std::optional<RefineResult> best;
  int worse = 0;
  for (int n : heights) {
    // Past two heights in a row that do worse, taller towers do not recover.
    if (opts.best_effort && worse >= 2) break;
    // Leftover cells at the end of the value order must stay below delta mu(B)/2.
    while (true) {
      const std::size_t used = cells.size() / n * n;
      Rational left(0);
      for (std::size_t c = used; c < cells.size(); ++c) left += sys.mass(cells[c]);
      for (const auto& w : fine)
        if (static_cast<int>(w.size()) > k) left += sys.mass(w);
      if (used > 0 && left < res.delta * mb / 2) break;
      const std::int64_t next = static_cast<std::int64_t>(cells.size()) * space.size_at(k);
      if (k + 1 > space.depth_max() || next > opts.max_cells) break;
      cells = cells_at(++k);
    }
    const std::size_t blocks = cells.size() / n;
    if (blocks == 0) continue;

    UniformRelation t;
    t.r = n;
    std::vector<Word> starts;
    for (std::size_t j = 0; j < blocks; ++j) starts.push_back(cells[j * n]);
    t.fundamental = space.canonicalize(starts);
    for (int i = 0; i < n; ++i) {
      std::vector<Piece> pieces;
      for (std::size_t j = 0; j < blocks; ++j)
        pieces.push_back({cells[j * n], space.value(cells[j * n + i]) - space.value(cells[j * n])});
      t.splitting.push_back(from_pieces(space, std::move(pieces)));
    }
    std::vector<Word> leftover(cells.begin() + static_cast<std::ptrdiff_t>(blocks * n), cells.end());
    for (const auto& w : fine)
      if (static_cast<int>(w.size()) > k) leftover.push_back(w);
    t.defect = space.canonicalize(std::move(leftover));

    UniformRelation ext = natural_extension(space, s, t);
    ClopenSet cov = one_step_coverage(sys, ext);
    const Rational cov_mass = sys.mass(cov);
    const Rational defect_mass = Rational(1) - sys.mass(ext.ambient(space));
    const bool met = cov_mass > Rational(1) - 2 * eps - defect_mass;
    const bool better = !best || cov_mass + defect_mass > best->coverage_mass + best->defect_mass;
    worse = better ? 0 : worse + 1;
    if (met || better) {
      RefineResult cand = res;
      cand.relation = std::move(t);
      cand.cell_depth = k;
      cand.coverage = std::move(cov);
      cand.coverage_mass = cov_mass;
      cand.defect_mass = defect_mass;
      cand.bound_met = met;
      if (met) return cand;
      best = std::move(cand);
    }
  }
  if (opts.best_effort && best) return *best;
  throw TowerSearchFailed("refine_uniform: no tower height up to " +
                          std::to_string(opts.max_height) + " captures T outside 2 eps");
}

// ------------------------------------------------------------ copying

namespace {

bool mirror_valid(const OdometerSystem& sys, const LabeledPartition& u,
                  const std::vector<std::vector<int>>& vtilde,
                  const std::vector<std::vector<Rational>>& nu, const CopyOptions& opts) {
  if (!opts.mirror_fibers || !opts.mirror_maps) return false;
  const Space& space = sys.space();
  const auto& fibers = *opts.mirror_fibers;
  const auto& maps = *opts.mirror_maps;
  if (fibers.size() != nu.size() || maps.size() != nu.size()) return false;
  std::vector<Word> all;
  std::size_t count = 0;
  for (std::size_t i = 0; i < nu.size(); ++i) {
    if (fibers[i].size() != nu[i].size()) return false;
    for (std::size_t d = 0; d < nu[i].size(); ++d) {
      const ClopenSet& f = fibers[i][d];
      for (const auto& w : f.words)
        if (!space.valid(w)) return false;
      if (sys.mass(f) != nu[i][d]) return false;
      if (!space.is_subset(f, u.atoms.at(vtilde[i][d]))) return false;
      all.insert(all.end(), f.words.begin(), f.words.end());
      count += f.words.size();
    }
    for (const auto& p : maps[i].pieces)
      if (!space.valid(p.cylinder) || !space.translate(p.cylinder, p.power)) return false;
  }
  // Pairwise disjoint fibers canonicalize without merging into fewer words
  // only if no word is a prefix of another; check via the measure instead.
  Rational total(0);
  for (std::size_t i = 0; i < nu.size(); ++i)
    for (std::size_t d = 0; d < nu[i].size(); ++d) total += nu[i][d];
  if (sys.mass(space.canonicalize(all)) != total) return false;
  for (std::size_t i = 0; i < nu.size(); ++i)
    for (std::size_t d = 0; d < nu[i].size(); ++d)
      if (image(space, maps[i], fibers[0][d]) != fibers[i][d]) return false;
  (void)count;
  return true;
}

enum class CopyMode { Lambda, Eps };

// Weights of every extension of a given length starting at a given level,
// each with its lexicographically smallest extension word.
class Extensions {
 public:
  explicit Extensions(const OdometerSystem& sys) : sys_(sys) {}

  const std::map<Rational, Word>& at(int level, int len) {
    auto key = std::make_pair(level, len);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    std::map<Rational, Word> cur{{Rational(1), Word{}}};
    for (int j = level; j < level + len; ++j) {
      std::map<Rational, Word> next;
      for (const auto& [w, word] : cur)
        for (int c = 0; c < sys_.space().size_at(j); ++c) {
          Rational x = w * sys_.measure().weight(j, c);
          Word e = word;
          e.push_back(c);
          auto [pos, fresh] = next.emplace(std::move(x), e);
          if (!fresh && e < pos->second) pos->second = std::move(e);
        }
      cur = std::move(next);
    }
    return cache_.emplace(key, std::move(cur)).first->second;
  }

 private:
  const OdometerSystem& sys_;
  std::map<std::pair<int, int>, std::map<Rational, Word>> cache_;
};

// Free part of an atom as disjoint cylinders no shorter than a floor depth
// (from there on masses are multiplicative), indexed by (length, mass).
class CellPool {
 public:
  CellPool(const OdometerSystem& sys, const ClopenSet& set, int floor)
      : sys_(sys), floor_(floor) {
    for (auto& w : sys.space().refine_words(set.words, floor)) {
      Rational m = sys.mass(w);
      add(std::move(w), std::move(m));
    }
  }

  Relation relate(const Word& w) const {
    auto it = words_.upper_bound(w);
    if (it != words_.begin() && is_prefix(std::prev(it)->first, w)) return Relation::Inside;
    if (it != words_.end() && is_prefix(w, it->first)) return Relation::Partial;
    return Relation::Disjoint;
  }

  /// Free words with their masses, sorted by word.
  std::vector<std::pair<Rational, Word>> cells() const {
    std::vector<std::pair<Rational, Word>> out;
    for (const auto& [w, m] : words_) out.emplace_back(m, w);
    return out;
  }
  const Rational& mass() const { return mass_; }

  /// Removes [w], which must be free.
  void take(const Word& w) {
    auto it = std::prev(words_.upper_bound(w));
    Word q = it->first;
    Rational running = it->second;
    drop(it);
    for (std::size_t j = q.size(); j < w.size(); ++j) {
      const int lvl = static_cast<int>(j);
      Word s(w.begin(), w.begin() + static_cast<std::ptrdiff_t>(j));
      s.push_back(0);
      for (int c = 0; c < sys_.space().size_at(lvl); ++c) {
        if (c == w[j]) continue;
        s.back() = c;
        add(s, running * sys_.measure().weight(lvl, c));
      }
      running *= sys_.measure().weight(lvl, w[j]);
    }
  }

  /// Returns [w] of mass m, disjoint from the free part, merging complete families.
  void give(Word w, Rational m) {
    while (static_cast<int>(w.size()) > floor_) {
      const int j = static_cast<int>(w.size()) - 1;
      Word s = w;
      bool complete = true;
      for (int c = 0; c < sys_.space().size_at(j) && complete; ++c) {
        if (c == w[j]) continue;
        s[j] = c;
        complete = words_.count(s) > 0;
      }
      if (!complete) break;
      Rational parent = m;
      for (int c = 0; c < sys_.space().size_at(j); ++c) {
        if (c == w[j]) continue;
        s[j] = c;
        auto it = words_.find(s);
        parent += it->second;
        drop(it);
      }
      w.pop_back();
      m = std::move(parent);
    }
    add(std::move(w), std::move(m));
  }

  /// A free cylinder of length `len` with mass in [lo, hi], carved from the
  /// finest free word that admits one.
  std::optional<Word> find(std::size_t len, const Rational& lo, const Rational& hi,
                           Extensions& ext) const {
    for (auto b = buckets_.rbegin(); b != buckets_.rend(); ++b) {
      const auto& [key, ws] = *b;
      const auto& [l, m] = key;
      if (l > len) continue;
      const auto& table = ext.at(static_cast<int>(l), static_cast<int>(len - l));
      auto it = table.lower_bound(Rational(lo / m));
      if (it == table.end() || it->first * m > hi) continue;
      Word out = *ws.begin();
      out.insert(out.end(), it->second.begin(), it->second.end());
      return out;
    }
    return std::nullopt;
  }

 private:
  struct KeyLess {
    bool operator()(const std::pair<std::size_t, Rational>& x,
                    const std::pair<std::size_t, Rational>& y) const {
      if (x.first != y.first) return x.first < y.first;
      return x.second < y.second;
    }
  };
  using WordMap = std::map<Word, Rational>;

  void add(Word w, Rational m) {
    mass_ += m;
    buckets_[{w.size(), m}].insert(w);
    words_.emplace(std::move(w), std::move(m));
  }
  void drop(WordMap::iterator it) {
    mass_ -= it->second;
    auto b = buckets_.find({it->first.size(), it->second});
    b->second.erase(it->first);
    if (b->second.empty()) buckets_.erase(b);
    words_.erase(it);
  }

  const OdometerSystem& sys_;
  int floor_;
  Rational mass_{0};
  WordMap words_;
  std::map<std::pair<std::size_t, Rational>, std::set<Word>, KeyLess> buckets_;
};

CopyResult copy_structure(const OdometerSystem& sys, const ClopenSet& b, const LabeledPartition& u,
                          const std::vector<std::vector<int>>& vtilde,
                          const std::vector<std::vector<Rational>>& nu, CopyMode mode,
                          const Rational& param, const CopyOptions& opts) {
  const Space& space = sys.space();
  const int r = static_cast<int>(nu.size());
  if (r < 1 || vtilde.size() != nu.size())
    throw PreconditionFailed("copy_structure: nu and v~ need r >= 1 matching rows");
  const int nd = static_cast<int>(nu[0].size());
  for (int i = 0; i < r; ++i)
    if (static_cast<int>(nu[i].size()) != nd || static_cast<int>(vtilde[i].size()) != nd)
      throw PreconditionFailed("copy_structure: ragged nu or v~");
  const int nu_labels = static_cast<int>(u.atoms.size());
  for (int i = 0; i < r; ++i)
    for (int d = 0; d < nd; ++d)
      if (vtilde[i][d] < 0 || vtilde[i][d] >= nu_labels)
        throw PreconditionFailed("copy_structure: v~ names an unknown label");

  // Prescribed fiber ratios nu(i,d~)/nu(0,d~); in lambda mode exact powers.
  std::vector<std::vector<Rational>> ratio(r, std::vector<Rational>(nd, Rational(1)));
  for (int d = 0; d < nd; ++d)
    for (int i = 1; i < r; ++i) {
      if (nu[i][d] == 0 && nu[0][d] == 0) continue;
      if (nu[0][d] == 0 || nu[i][d] == 0)
        throw PreconditionFailed("copy_structure: a label has an empty fiber");
      ratio[i][d] = nu[i][d] / nu[0][d];
      long k = 0;
      if (mode == CopyMode::Lambda && !is_power_of(ratio[i][d], param, &k))
        throw PreconditionFailed("copy_structure: fiber ratio is not a power of lambda");
    }

  CopyResult res;
  // Output labels; each remembers the input label it carries.
  std::vector<std::vector<std::vector<Piece>>> maps(r);
  std::vector<ClopenSet> base;

  if (mirror_valid(sys, u, vtilde, nu, opts)) {
    res.mirrored = true;
    for (int d = 0; d < nd; ++d) {
      res.origin.push_back(d);
      base.push_back((*opts.mirror_fibers)[0][d]);
      for (int i = 0; i < r; ++i)
        maps[i].push_back(restrict_to(space, (*opts.mirror_maps)[i], base[d]).pieces);
    }
  } else {
    // Scale so every atom can hold what is asked of it.
    std::vector<Rational> demand(nu_labels, Rational(0));
    for (int i = 0; i < r; ++i)
      for (int d = 0; d < nd; ++d) demand[vtilde[i][d]] += nu[i][d];
    std::vector<Rational> scale(nu_labels, Rational(1));
    for (int a = 0; a < nu_labels; ++a)
      if (demand[a] > 0) scale[a] = std::min(Rational(1), Rational(sys.mass(u.atoms[a]) / demand[a]));
    std::vector<Rational> want(nd);
    for (int d = 0; d < nd; ++d) {
      Rational s(1);
      for (int i = 0; i < r; ++i) s = std::min(s, scale[vtilde[i][d]]);
      want[d] = nu[0][d] * s;
    }

    // Each label is carried by a single power per fiber, so every composite
    // stays one power on each label. Candidate power vectors come from the
    // labels already placed and from partner searches on the largest free
    // cells; the one realizing the most mass wins.
    const int floor = sys.working_depth();
    std::vector<CellPool> pool;
    for (const auto& atom : u.atoms) pool.emplace_back(sys, atom, floor);
    Extensions ext(sys);
    const Rational f = mode == CopyMode::Eps ? exp_lower(param) : Rational(1);
    std::vector<int> order(nd);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int x, int y) { return want[x] > want[y]; });
    using Vector = std::vector<std::int64_t>;
    std::vector<Vector> used;

    struct Taken {
      int atom;
      Word w;
      Rational m;
    };
    // Places cells of label d along `pv` until its fiber 0 is full; returns
    // the realized mass and logs every cell taken.
    auto sweep = [&](int d, const Vector& pv, const Rational& target, std::vector<Taken>& log) {
      const int a0 = vtilde[0][d];
      const Rational stop = want[d] * opts.tolerance;
      Rational left = target;
      auto cells = pool[a0].cells();
      std::size_t longest = 0;
      for (const auto& [m, w] : cells) longest = std::max(longest, w.size());
      const std::size_t limit =
          std::min<std::size_t>(space.depth_max(), longest + opts.transport_depth);
      std::int64_t work = 0;
      std::vector<Word> partners(r);
      std::vector<Rational> partner_mass(r);
      while (!cells.empty() && left > stop && work < opts.attempt_cap) {
        std::stable_sort(cells.begin(), cells.end(),
                         [](const auto& x, const auto& y) { return x.first > y.first; });
        std::vector<std::pair<Rational, Word>> next;
        for (auto& [m, c] : cells) {
          if (left <= stop || ++work > opts.attempt_cap) break;
          const Relation rel = pool[a0].relate(c);
          if (rel == Relation::Disjoint) continue;
          // Past the floor a child's partner is the parent's partner
          // extended by the same letter, with the same ratio; children can
          // only help where a partner escapes or is partly taken.
          bool hopeless = false;
          if (rel == Relation::Inside) {
            bool fits = true;
            for (int i = 1; i < r && fits; ++i) {
              auto w = space.translate(c, pv[i - 1]);
              if (!w) {
                fits = false;
                break;
              }
              const Relation pr = pool[vtilde[i][d]].relate(*w);
              fits = pr == Relation::Inside;
              if (pr == Relation::Disjoint) hopeless = true;
              if (!fits) break;
              const Rational t = m * ratio[i][d];
              partner_mass[i] = sys.mass(*w);
              fits = partner_mass[i] >= t / f && partner_mass[i] <= t * f;
              if (!fits) hopeless = true;
              partners[i] = std::move(*w);
            }
            if (fits && m > left) fits = false;
            if (fits) {
              pool[a0].take(c);
              log.push_back({a0, c, m});
              for (int i = 1; i < r; ++i) {
                pool[vtilde[i][d]].take(partners[i]);
                log.push_back({vtilde[i][d], partners[i], partner_mass[i]});
              }
              left -= m;
              continue;
            }
          }
          if (hopeless || c.size() >= limit || m * 64 <= stop) continue;
          const int j = static_cast<int>(c.size());
          for (int k = 0; k < space.size_at(j); ++k) {
            Word w = c;
            w.push_back(k);
            next.emplace_back(m * sys.measure().weight(j, k), std::move(w));
          }
        }
        cells = std::move(next);
      }
      return Rational(target - left);
    };
    auto undo = [&](std::vector<Taken>& log) {
      for (auto it = log.rbegin(); it != log.rend(); ++it) pool[it->atom].give(it->w, it->m);
      log.clear();
    };
    // Powers of the partners found for one seed cell by exact lookup.
    auto seed_vector = [&](int d, const Word& c, const Rational& m) -> std::optional<Vector> {
      std::vector<Taken> log;
      const int a0 = vtilde[0][d];
      pool[a0].take(c);
      log.push_back({a0, c, m});
      Vector pv;
      for (int i = 1; i < r; ++i) {
        const Rational t = m * ratio[i][d];
        CellPool& target = pool[vtilde[i][d]];
        // Nearby powers first: their ratios depend on few letters, so the
        // same vector tends to fit the neighbours of c as well.
        std::optional<Word> w;
        Rational pm;
        for (std::int64_t k = 1; k <= opts.local_span && !w; ++k)
          for (std::int64_t p : {k, -k}) {
            auto x = space.translate(c, p);
            if (!x || target.relate(*x) != Relation::Inside) continue;
            Rational xm = sys.mass(*x);
            if (xm < t / f || xm > t * f) continue;
            w = std::move(x);
            pm = std::move(xm);
            break;
          }
        if (!w) {
          w = target.find(c.size(), t / f, t * f, ext);
          if (!w) break;
          pm = sys.mass(*w);
        }
        target.take(*w);
        log.push_back({vtilde[i][d], *w, pm});
        pv.push_back(space.value(*w) - space.value(c));
      }
      undo(log);
      if (static_cast<int>(pv.size()) != r - 1) return std::nullopt;
      return pv;
    };

    for (int d : order) {
      const int a0 = vtilde[0][d];
      Rational remaining = want[d];
      for (int v = 0; v < opts.max_vectors && remaining > want[d] * opts.tolerance; ++v) {
        std::vector<Vector> cands;
        for (auto it = used.rbegin(); it != used.rend() && cands.size() < 8; ++it)
          if (std::find(cands.begin(), cands.end(), *it) == cands.end()) cands.push_back(*it);
        // Seeds: the largest free cells no heavier than what is left, split as needed.
        // Heaviest first, then lexicographically smallest.
        auto lighter = [](const auto& x, const auto& y) {
          return x.first != y.first ? x.first < y.first : x.second > y.second;
        };
        std::priority_queue<std::pair<Rational, Word>, std::vector<std::pair<Rational, Word>>,
                            decltype(lighter)>
            cells(lighter, pool[a0].cells());
        // Cells whose partners are all longer than they are find nothing;
        // their children are tried in turn.
        int found = 0, tries = 0;
        while (!cells.empty() && found < 4 && tries < 64) {
          auto [m, c] = cells.top();
          cells.pop();
          std::optional<Vector> pv;
          if (m <= remaining) {
            ++tries;
            pv = seed_vector(d, c, m);
          }
          if (pv) {
            ++found;
            if (std::find(cands.begin(), cands.end(), *pv) == cands.end()) cands.push_back(*pv);
            continue;
          }
          if (static_cast<int>(c.size()) >= space.depth_max()) continue;
          const int j = static_cast<int>(c.size());
          for (int k = 0; k < space.size_at(j); ++k) {
            Word w = c;
            w.push_back(k);
            cells.emplace(m * sys.measure().weight(j, k), std::move(w));
          }
        }
        if (r == 1) cands = {Vector{}};

        std::optional<Vector> best;
        Rational best_mass(0);
        if (cands.size() == 1) best = cands.front();
        for (const auto& pv : cands) {
          if (cands.size() == 1) break;
          std::vector<Taken> log;
          const Rational got = sweep(d, pv, remaining, log);
          undo(log);
          if (got > best_mass) {
            best_mass = got;
            best = pv;
          }
          if (got >= remaining - want[d] * opts.tolerance) break;
        }
        if (!best) break;
        std::vector<Taken> log;
        const Rational got = sweep(d, *best, remaining, log);
        if (got == 0) break;
        remaining -= got;
        std::vector<Word> words;
        for (int i = 0; i < r; ++i) maps[i].emplace_back();
        for (std::size_t t = 0; t < log.size(); t += r) {
          const Word& c = log[t].w;
          words.push_back(c);
          for (int i = 0; i < r; ++i) maps[i].back().push_back({c, i == 0 ? 0 : (*best)[i - 1]});
        }
        base.push_back(space.canonicalize(std::move(words)));
        res.origin.push_back(d);
        if (r > 1) used.push_back(*best);
      }
      if (std::find(res.origin.begin(), res.origin.end(), d) == res.origin.end()) {
        for (int i = 0; i < r; ++i) maps[i].emplace_back();
        base.emplace_back();
        res.origin.push_back(d);
      }
    }
    // Output labels in input order.
    std::vector<int> perm(base.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::stable_sort(perm.begin(), perm.end(),
                     [&](int x, int y) { return res.origin[x] < res.origin[y]; });
    auto permute = [&](auto& v) {
      std::remove_reference_t<decltype(v)> out;
      for (int k : perm) out.push_back(std::move(v[k]));
      v = std::move(out);
    };
    permute(base);
    permute(res.origin);
    for (int i = 0; i < r; ++i) permute(maps[i]);
  }

  // Restrict every map to the surviving fiber-0 cells.
  const int no = static_cast<int>(base.size());
  res.labels.atoms = base;
  res.fibers.assign(r, std::vector<ClopenSet>(no));
  std::vector<std::vector<Piece>> split(r);
  std::vector<Word> fund_words;
  for (int o = 0; o < no; ++o) {
    fund_words.insert(fund_words.end(), base[o].words.begin(), base[o].words.end());
    for (int i = 0; i < r; ++i) {
      GroupoidMap h = restrict_to(space, from_pieces(space, maps[i][o]), base[o]);
      res.fibers[i][o] = i == 0 ? base[o] : covered_image(space, h);
      split[i].insert(split[i].end(), h.pieces.begin(), h.pieces.end());
    }
  }
  res.relation.r = r;
  res.relation.fundamental = space.canonicalize(std::move(fund_words));
  for (int i = 0; i < r; ++i) {
    GroupoidMap h = from_pieces(space, std::move(split[i]));
    h.domain = res.relation.fundamental;
    res.relation.splitting.push_back(std::move(h));
  }
  res.defect = space.subtract(b, res.relation.ambient(space));
  res.relation.defect = res.defect;
  std::vector<std::vector<Rational>> realized(r, std::vector<Rational>(nd, Rational(0)));
  for (int i = 0; i < r; ++i)
    for (int o = 0; o < no; ++o) realized[i][res.origin[o]] += sys.mass(res.fibers[i][o]);
  for (int i = 0; i < r; ++i)
    for (int d = 0; d < nd; ++d) {
      res.packing_deviation += rabs(Rational(realized[i][d] - nu[i][d]));
      if (nu[i][d] > 0)
        res.worst_relative =
            std::max(res.worst_relative, rabs(Rational(realized[i][d] / nu[i][d] - 1)));
    }
  return res;
}

}  // namespace

CopyResult copy_structure_lambda(const OdometerSystem& sys, const ClopenSet& b,
                                 const LabeledPartition& u,
                                 const std::vector<std::vector<int>>& vtilde,
                                 const std::vector<std::vector<Rational>>& nu,
                                 const Rational& lambda, const CopyOptions& opts) {
  if (lambda <= 0 || lambda >= 1) throw PreconditionFailed("copy_structure: lambda must lie in (0,1)");
  return copy_structure(sys, b, u, vtilde, nu, CopyMode::Lambda, lambda, opts);
}

CopyResult copy_structure_eps(const OdometerSystem& sys, const ClopenSet& b,
                              const LabeledPartition& u,
                              const std::vector<std::vector<int>>& vtilde,
                              const std::vector<std::vector<Rational>>& nu, const Rational& eps,
                              const CopyOptions& opts) {
  if (eps <= 0) throw PreconditionFailed("copy_structure: eps must be positive");
  return copy_structure(sys, b, u, vtilde, nu, CopyMode::Eps, eps, opts);
}

}  // namespace foe
