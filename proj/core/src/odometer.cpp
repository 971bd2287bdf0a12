#include "foe/odometer.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "foe/errors.hpp"
#include "foe/lattice.hpp"

namespace foe {

OdometerSystem::OdometerSystem(LevelSpec levels, Measure measure)
    : space_(std::move(levels)), measure_(std::move(measure)) {
  validate_measure(space_, measure_);
}

OdometerSystem::OdometerSystem(const SystemConfig& config)
    : OdometerSystem(config.levels, config.measure) {}

int OdometerSystem::working_depth() const {
  return std::max(space_.spec().prefix_length(), measure_.density_depth());
}

Rational OdometerSystem::step_ratio(const Word& w) const {
  std::size_t j = 0;
  while (j < w.size() && w[j] == space_.size_at(static_cast<int>(j)) - 1) ++j;
  if (j == w.size()) throw PreconditionFailed("step_ratio: all-maximal word");
  Rational r(1);
  for (std::size_t i = 0; i < j; ++i) {
    const int lvl = static_cast<int>(i);
    r *= measure_.weight(lvl, 0) / measure_.weight(lvl, space_.size_at(lvl) - 1);
  }
  const int lvl = static_cast<int>(j);
  r *= measure_.weight(lvl, w[j] + 1) / measure_.weight(lvl, w[j]);
  if (!measure_.density.empty()) {
    auto before = measure_.density_on(w);
    auto after = measure_.density_on(*space_.translate(w, 1));
    if (!before || !after) throw PreconditionFailed("step_ratio: word shorter than density depth");
    r *= *after / *before;
  }
  return r;
}

std::optional<Word> successor(const Space& space, const Word& w) {
  space.check(w);
  return space.translate(w, 1);
}

CocycleValue rn_derivative(const OdometerSystem& sys, const Word& w, std::int64_t n) {
  const Space& space = sys.space();
  space.check(w);
  if (n == 0) return {w, Rational(1)};
  Word x = w;
  while (!space.translate(x, n)) {
    if (static_cast<int>(x.size()) >= space.depth_max())
      throw DepthExceeded("carry of T^" + std::to_string(n) + " on " + word_to_string(w) +
                          " escapes depth_max");
    x.push_back(n > 0 ? 0 : space.size_at(static_cast<int>(x.size())) - 1);
  }
  while (static_cast<int>(x.size()) < sys.measure().density_depth()) x.push_back(0);
  Word img = *space.translate(x, n);
  Rational ratio = sys.mass(img) / sys.mass(x);
  return {std::move(x), std::move(ratio)};
}

// ------------------------------------------------------------ groupoid maps

namespace {

// Index of the piece whose cylinder is a prefix of x; pieces are sorted.
std::optional<std::size_t> find_piece(const GroupoidMap& g, const Word& x) {
  auto it = std::upper_bound(g.pieces.begin(), g.pieces.end(), x,
                             [](const Word& v, const Piece& p) { return v < p.cylinder; });
  if (it == g.pieces.begin()) return std::nullopt;
  --it;
  if (!is_prefix(it->cylinder, x)) return std::nullopt;
  return static_cast<std::size_t>(it - g.pieces.begin());
}

// Pieces strictly inside [x].
std::vector<std::size_t> pieces_below(const GroupoidMap& g, const Word& x) {
  std::vector<std::size_t> out;
  auto it = std::lower_bound(g.pieces.begin(), g.pieces.end(), x,
                             [](const Piece& p, const Word& v) { return p.cylinder < v; });
  for (; it != g.pieces.end() && is_prefix(x, it->cylinder); ++it)
    if (it->cylinder.size() > x.size()) out.push_back(static_cast<std::size_t>(it - g.pieces.begin()));
  return out;
}

void sort_pieces(std::vector<Piece>& pieces) { std::sort(pieces.begin(), pieces.end()); }

bool sorted_antichain(const std::vector<Word>& words) {
  for (std::size_t i = 1; i < words.size(); ++i)
    if (!(words[i - 1] < words[i]) || is_prefix(words[i - 1], words[i])) return false;
  return true;
}

std::string set_line(const char* key, const ClopenSet& a) {
  std::string s = key;
  for (const auto& w : a.words) s += " " + word_to_string(w);
  return s;
}

}  // namespace

Word piece_image(const Space& space, const Piece& p) {
  auto img = space.translate(p.cylinder, p.power);
  if (!img)
    throw PreconditionFailed("piece " + word_to_string(p.cylinder) + " with power " +
                             std::to_string(p.power) + " is not cylinder-to-cylinder");
  return *img;
}

std::optional<Word> apply(const Space& space, const GroupoidMap& g, const Word& x) {
  auto idx = find_piece(g, x);
  if (!idx) return std::nullopt;
  const Piece& p = g.pieces[*idx];
  return space.translate(x, p.power, p.cylinder.size());
}

ClopenSet image(const Space& space, const GroupoidMap& g, const ClopenSet& a) {
  std::vector<Word> out;
  for (const auto& p : g.pieces) {
    switch (space.relate(a, p.cylinder)) {
      case Relation::Inside:
        out.push_back(piece_image(space, p));
        break;
      case Relation::Disjoint:
        break;
      case Relation::Partial:
        for (const auto& u : space.intersect(a, space.cylinder(p.cylinder)).words)
          out.push_back(*space.translate(u, p.power, p.cylinder.size()));
        break;
    }
  }
  return space.canonicalize(std::move(out));
}

ClopenSet covered(const Space& space, const GroupoidMap& g) {
  std::vector<Word> ws;
  for (const auto& p : g.pieces) ws.push_back(p.cylinder);
  return space.canonicalize(std::move(ws));
}

ClopenSet covered_image(const Space& space, const GroupoidMap& g) {
  std::vector<Word> ws;
  for (const auto& p : g.pieces) ws.push_back(piece_image(space, p));
  return space.canonicalize(std::move(ws));
}

GroupoidMap identity_map(const Space& space, const ClopenSet& a) {
  GroupoidMap g;
  for (const auto& w : a.words) g.pieces.push_back({w, 0});
  g.domain = a;
  g.range = a;
  (void)space;
  return g;
}

GroupoidMap from_pieces(const Space& space, std::vector<Piece> pieces) {
  GroupoidMap g;
  sort_pieces(pieces);
  g.pieces = std::move(pieces);
  g.domain = covered(space, g);
  g.range = covered_image(space, g);
  return g;
}

GroupoidMap compose(const Space& space, const GroupoidMap& f, const GroupoidMap& g) {
  GroupoidMap out;
  std::vector<Word> lost = f.defect.words;
  for (const auto& p : f.pieces) {
    const Word img = piece_image(space, p);
    if (auto idx = find_piece(g, img)) {
      out.pieces.push_back({p.cylinder, p.power + g.pieces[*idx].power});
      continue;
    }
    std::vector<Word> hit;
    for (std::size_t i : pieces_below(g, img)) {
      const Piece& q = g.pieces[i];
      out.pieces.push_back({*space.translate(q.cylinder, -p.power, p.cylinder.size()),
                            p.power + q.power});
      hit.push_back(q.cylinder);
    }
    for (const auto& u : space.subtract(space.cylinder(img), space.canonicalize(hit)).words)
      lost.push_back(*space.translate(u, -p.power, p.cylinder.size()));
  }
  sort_pieces(out.pieces);
  out.domain = f.domain;
  out.defect = space.canonicalize(std::move(lost));
  out.range = g.range;
  out.range_defect = space.subtract(g.range, covered_image(space, out));
  return out;
}

GroupoidMap invert(const Space& space, const GroupoidMap& g) {
  GroupoidMap out;
  for (const auto& p : g.pieces) out.pieces.push_back({piece_image(space, p), -p.power});
  sort_pieces(out.pieces);
  out.domain = g.range;
  out.range = g.domain;
  out.defect = g.range_defect;
  out.range_defect = g.defect;
  return out;
}

GroupoidMap restrict_to(const Space& space, const GroupoidMap& g, const ClopenSet& a) {
  GroupoidMap out;
  for (const auto& p : g.pieces) {
    switch (space.relate(a, p.cylinder)) {
      case Relation::Inside:
        out.pieces.push_back(p);
        break;
      case Relation::Disjoint:
        break;
      case Relation::Partial:
        for (const auto& u : space.intersect(a, space.cylinder(p.cylinder)).words)
          out.pieces.push_back({u, p.power});
        break;
    }
  }
  sort_pieces(out.pieces);
  out.domain = a;
  out.defect = space.subtract(a, covered(space, out));
  out.range = covered_image(space, out);
  return out;
}

GroupoidMap normalize_map(const Space& space, GroupoidMap g) {
  bool changed = true;
  while (changed) {
    changed = false;
    std::map<std::pair<Word, std::int64_t>, int> families;
    for (const auto& p : g.pieces) {
      if (p.cylinder.empty()) continue;
      Word parent(p.cylinder.begin(), p.cylinder.end() - 1);
      ++families[{parent, p.power}];
    }
    std::set<std::pair<Word, std::int64_t>> merge;
    for (const auto& [key, count] : families) {
      const int level = static_cast<int>(key.first.size());
      if (count == space.size_at(level) && space.translate(key.first, key.second))
        merge.insert(key);
    }
    if (merge.empty()) break;
    std::vector<Piece> next;
    for (const auto& p : g.pieces) {
      if (!p.cylinder.empty()) {
        Word parent(p.cylinder.begin(), p.cylinder.end() - 1);
        if (merge.count({parent, p.power})) continue;
      }
      next.push_back(p);
    }
    for (const auto& [parent, power] : merge) next.push_back({parent, power});
    sort_pieces(next);
    g.pieces = std::move(next);
    changed = true;
  }
  sort_pieces(g.pieces);
  return g;
}

ClopenSet agree_set(const Space& space, const GroupoidMap& f, const GroupoidMap& g) {
  std::vector<Word> out;
  for (const auto& p : f.pieces) {
    if (auto idx = find_piece(g, p.cylinder)) {
      if (g.pieces[*idx].power == p.power) out.push_back(p.cylinder);
      continue;
    }
    for (std::size_t i : pieces_below(g, p.cylinder))
      if (g.pieces[i].power == p.power) out.push_back(g.pieces[i].cylinder);
  }
  return space.canonicalize(std::move(out));
}

bool is_identity(const Space& space, const GroupoidMap& g) {
  for (const auto& p : g.pieces)
    if (p.power != 0) return false;
  return covered(space, g) == space.subtract(g.domain, g.defect);
}

void validate_map(const Space& space, const GroupoidMap& g) {
  std::vector<Word> cyl, img;
  for (const auto& p : g.pieces) {
    space.check(p.cylinder);
    cyl.push_back(p.cylinder);
    img.push_back(piece_image(space, p));
  }
  std::sort(img.begin(), img.end());
  if (!sorted_antichain(cyl)) throw PreconditionFailed("groupoid map: pieces overlap or unsorted");
  if (!sorted_antichain(img)) throw PreconditionFailed("groupoid map: images overlap");
  if (space.canonicalize(cyl) != space.subtract(g.domain, g.defect))
    throw PreconditionFailed("groupoid map: pieces do not cover domain minus defect");
  if (space.canonicalize(img) != space.subtract(g.range, g.range_defect))
    throw PreconditionFailed("groupoid map: images do not cover range minus range defect");
}

std::optional<Rational> piece_ratio(const OdometerSystem& sys, const Piece& p) {
  const Space& space = sys.space();
  std::optional<Rational> ratio;
  for (const auto& u : space.refine_words({p.cylinder}, sys.measure().density_depth())) {
    Rational r = sys.mass(*space.translate(u, p.power, p.cylinder.size())) / sys.mass(u);
    if (ratio && *ratio != r) return std::nullopt;
    ratio = r;
  }
  return ratio;
}

std::string serialize_map(const GroupoidMap& g) {
  std::ostringstream out;
  out << "groupoid-map v1\n"
      << set_line("domain", g.domain) << '\n'
      << set_line("range", g.range) << '\n'
      << set_line("defect", g.defect) << '\n'
      << set_line("range_defect", g.range_defect) << '\n';
  for (const auto& p : g.pieces) out << "piece " << word_to_string(p.cylinder) << ' ' << p.power << '\n';
  out << "end\n";
  return out.str();
}

GroupoidMap parse_map(const Space& space, std::string_view text) {
  GroupoidMap g;
  std::istringstream in{std::string(text)};
  std::string raw;
  int lineno = 0;
  bool header = false, ended = false;
  std::set<std::string> seen;
  while (std::getline(in, raw)) {
    ++lineno;
    auto hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    auto f = split_fields(raw);
    if (f.empty()) continue;
    if (ended) throw ParseError("content after 'end'", lineno);
    if (!header) {
      if (f.size() != 2 || f[0] != "groupoid-map" || f[1] != "v1")
        throw ParseError("expected header 'groupoid-map v1'", lineno);
      header = true;
      continue;
    }
    const std::string& key = f[0];
    if (key == "domain" || key == "range" || key == "defect" || key == "range_defect") {
      if (!seen.insert(key).second) throw ParseError("duplicate '" + key + "'", lineno);
      std::vector<Word> ws;
      for (std::size_t i = 1; i < f.size(); ++i) ws.push_back(parse_word(f[i], lineno));
      for (const auto& w : ws)
        if (!space.valid(w)) throw ParseError("word out of range: " + f[0], lineno);
      ClopenSet set = space.canonicalize(std::move(ws));
      (key == "domain" ? g.domain : key == "range" ? g.range : key == "defect" ? g.defect
                                                                               : g.range_defect) = set;
    } else if (key == "piece") {
      if (f.size() != 3) throw ParseError("expected 'piece <word> <power>'", lineno);
      Word w = parse_word(f[1], lineno);
      if (!space.valid(w)) throw ParseError("piece word out of range", lineno);
      std::int64_t power = 0;
      try {
        std::size_t used = 0;
        power = std::stoll(f[2], &used);
        if (used != f[2].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ParseError("malformed power '" + f[2] + "'", lineno);
      }
      g.pieces.push_back({std::move(w), power});
    } else if (key == "end") {
      ended = true;
    } else {
      throw ParseError("unknown directive '" + key + "'", lineno);
    }
  }
  if (!ended) throw ParseError("missing 'end'", lineno);
  sort_pieces(g.pieces);
  try {
    validate_map(space, g);
  } catch (const Error& e) {
    throw ParseError(e.what(), 0);
  }
  return g;
}

// ------------------------------------------------------------------- walks

namespace {

struct Walk {
  Word base;
  Word cur;
  std::int64_t power = 0;
  std::int64_t steps = 0;
  Rational ratio{1};
  bool judge = false;
  std::vector<std::int64_t> path;
};

enum class Move { Moved, Refine, Lost };

struct WalkResult {
  std::vector<Walk> done;
  std::vector<Word> lost;
};

// Follows every start cylinder until the judge accepts it, splitting a
// cylinder whenever its orbit stops acting as a single translation.
WalkResult walk(const Space& space, std::vector<Walk> start,
                const std::function<Move(Walk&)>& step,
                const std::function<Relation(const Walk&)>& judge,
                std::int64_t step_bound) {
  WalkResult res;
  std::vector<Walk> stack(std::make_move_iterator(start.rbegin()),
                          std::make_move_iterator(start.rend()));
  auto split = [&](Walk& w, bool rejudge) {
    const int level = static_cast<int>(w.base.size());
    if (level >= space.depth_max()) {
      res.lost.push_back(w.base);
      return;
    }
    for (int c = space.size_at(level) - 1; c >= 0; --c) {
      Walk child = w;
      child.base.push_back(c);
      child.cur.push_back(c);
      child.judge = rejudge;
      stack.push_back(std::move(child));
    }
  };
  while (!stack.empty()) {
    Walk w = std::move(stack.back());
    stack.pop_back();
    for (;;) {
      if (w.judge) {
        Relation r = judge(w);
        if (r == Relation::Inside) {
          res.done.push_back(std::move(w));
          break;
        }
        if (r == Relation::Partial) {
          split(w, true);
          break;
        }
        w.judge = false;
      }
      if (w.steps >= step_bound) {
        res.lost.push_back(w.base);
        break;
      }
      Move m = step(w);
      if (m == Move::Lost) {
        res.lost.push_back(w.base);
        break;
      }
      if (m == Move::Refine) {
        split(w, false);
        break;
      }
      ++w.steps;
      w.path.push_back(w.power);
      w.judge = true;
    }
  }
  return res;
}

std::function<Move(Walk&)> t_stepper(const OdometerSystem& sys, bool track_ratio) {
  return [&sys, track_ratio](Walk& w) {
    auto next = sys.space().translate(w.cur, 1);
    if (!next) return static_cast<int>(w.cur.size()) < sys.space().depth_max() ? Move::Refine
                                                                                 : Move::Lost;
    if (track_ratio) w.ratio *= sys.step_ratio(w.cur);
    w.cur = std::move(*next);
    ++w.power;
    return Move::Moved;
  };
}

std::function<Move(Walk&)> map_stepper(const Space& space, const GroupoidMap& g) {
  return [&space, &g](Walk& w) {
    if (auto idx = find_piece(g, w.cur)) {
      const Piece& p = g.pieces[*idx];
      w.cur = *space.translate(w.cur, p.power, p.cylinder.size());
      w.power += p.power;
      return Move::Moved;
    }
    return pieces_below(g, w.cur).empty() ? Move::Lost : Move::Refine;
  };
}

std::vector<Walk> starts(const std::vector<Word>& words) {
  std::vector<Walk> out;
  for (const auto& w : words) {
    Walk s;
    s.base = w;
    s.cur = w;
    s.path.push_back(0);
    out.push_back(std::move(s));
  }
  return out;
}

GroupoidMap assemble(const Space& space, const WalkResult& res, const ClopenSet& domain,
                     const ClopenSet& range) {
  GroupoidMap g;
  for (const auto& w : res.done) g.pieces.push_back({w.base, w.power});
  sort_pieces(g.pieces);
  g.domain = domain;
  g.range = range;
  g.defect = space.canonicalize(res.lost);
  g.range_defect = space.subtract(range, covered_image(space, g));
  return g;
}

}  // namespace

GroupoidMap induced_map(const OdometerSystem& sys, const ClopenSet& a, const WalkOptions& opts) {
  const Space& space = sys.space();
  if (a.empty()) throw PreconditionFailed("induced_map: empty set");
  auto res = walk(space, starts(a.words), t_stepper(sys, false),
                  [&](const Walk& w) { return space.relate(a, w.cur); }, opts.step_bound);
  if (opts.throw_on_defect && !res.lost.empty())
    throw ReturnTimeExceeded("first return not witnessed on " + std::to_string(res.lost.size()) +
                             " cylinders");
  return assemble(space, res, a, a);
}

KacAudit kac_audit(const OdometerSystem& sys, const GroupoidMap& induced) {
  const Space& space = sys.space();
  KacAudit audit;
  audit.swept_mass = 0;
  std::vector<Word> swept;
  for (const auto& p : induced.pieces) {
    for (std::int64_t k = 0; k < p.power; ++k) {
      Word w = *space.translate(p.cylinder, k);
      audit.swept_mass += sys.mass(w);
      swept.push_back(std::move(w));
    }
  }
  audit.swept = space.canonicalize(std::move(swept));
  return audit;
}

Tower rokhlin_tower(const OdometerSystem& sys, int n) {
  if (n < 1) throw PreconditionFailed("rokhlin_tower: n must be >= 1");
  const Space& space = sys.space();
  int k = 0;
  while (space.count_words(k) < n + 1) {
    if (++k > space.depth_max()) throw TowerSearchFailed("castle deeper than depth_max");
  }
  Tower t;
  const std::int64_t height = space.count_words(k);
  if (height > (1 << 22)) throw TowerSearchFailed("castle too tall to enumerate");
  t.height = static_cast<int>(height);
  for (std::int64_t i = 0; i < height; ++i) t.levels.push_back(space.cylinder(space.word_of_value(i, k)));
  t.base = t.levels.front();
  return t;
}

Tower rokhlin_tower(const OdometerSystem& sys, const GroupoidMap& g, int n, const Rational& eps,
                    const WalkOptions& opts) {
  if (n < 1 || eps <= 0) throw PreconditionFailed("rokhlin_tower: need n >= 1 and eps > 0");
  const Space& space = sys.space();
  const ClopenSet& a = g.domain;
  if (a.empty()) throw PreconditionFailed("rokhlin_tower: empty domain");
  const std::int64_t cap = std::int64_t{1} << 20;
  for (int k = space.max_length(a); k <= space.depth_max(); ++k) {
    // A single small cylinder of a serves as the base of the column castle.
    Word seed = space.refine_to_depth(a, k).front();
    ClopenSet e = space.cylinder(seed);
    auto res = walk(space, starts({seed}), map_stepper(space, g),
                    [&](const Walk& w) { return space.relate(e, w.cur); }, opts.step_bound);
    const int h = n + 1;
    std::vector<std::vector<Word>> levels(h);
    std::int64_t total = 0;
    for (const auto& col : res.done) {
      const std::int64_t blocks = col.steps / h;
      for (std::int64_t b = 0; b < blocks; ++b)
        for (int i = 0; i < h; ++i)
          levels[i].push_back(*space.translate(col.base, col.path[b * h + i], col.base.size()));
      total += blocks * h;
    }
    if (total > cap) break;
    Tower t;
    t.height = h;
    std::vector<Word> all;
    for (auto& lv : levels) {
      all.insert(all.end(), lv.begin(), lv.end());
      t.levels.push_back(space.canonicalize(std::move(lv)));
    }
    t.base = t.levels.front();
    t.residual = space.subtract(a, space.canonicalize(std::move(all)));
    if (!t.base.empty() && sys.mass(t.residual) < eps) return t;
  }
  throw TowerSearchFailed("no tower of height " + std::to_string(n + 1) +
                          " with residual below " + to_string(eps));
}

std::vector<Rational> one_step_ratios(const OdometerSystem& sys, int depth) {
  const Space& space = sys.space();
  const int dd = sys.measure().density_depth();
  std::set<Rational> out;
  Word maxes;
  for (int j = 0; j < depth; ++j) {
    const int size = space.size_at(j);
    for (int c = 0; c + 1 < size; ++c) {
      Word w = maxes;
      w.push_back(c);
      for (const auto& u : space.refine_words({w}, dd)) out.insert(sys.step_ratio(u));
    }
    maxes.push_back(size - 1);
  }
  return {out.begin(), out.end()};
}

GroupoidMap mp_return_map(const OdometerSystem& sys, const WalkOptions& opts) {
  const Space& space = sys.space();
  const int depth = sys.working_depth() + space.spec().block_length();
  auto ratios = one_step_ratios(sys, depth);
  if (group_shape(ratios) == GroupShape::NonCyclic)
    throw NotSpecialMeasure("one-step cocycle values do not lie in a cyclic group");
  auto res = walk(space, starts(space.all_words(sys.measure().density_depth())),
                  t_stepper(sys, true),
                  [](const Walk& w) { return w.ratio == 1 ? Relation::Inside : Relation::Disjoint; },
                  opts.step_bound);
  if (opts.throw_on_defect && !res.lost.empty())
    throw ReturnTimeExceeded("ratio-one return not witnessed on " +
                             std::to_string(res.lost.size()) + " cylinders");
  return assemble(space, res, space.full(), space.full());
}

}  // namespace foe
