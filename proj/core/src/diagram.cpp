#include "foe/diagram.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <string>

#include "diagram_detail.hpp"
#include "foe/errors.hpp"

namespace foe {

namespace detail {

// The power of g on [x] when a single one applies, even if [x] is
// covered by several finer pieces.
std::optional<std::int64_t> uniform_power(const Space& space, const GroupoidMap& g,
                                          const Word& x) {
  auto it = std::upper_bound(g.pieces.begin(), g.pieces.end(), x,
                             [](const Word& v, const Piece& p) { return v < p.cylinder; });
  std::optional<std::int64_t> p;
  if (it != g.pieces.begin() && is_prefix(std::prev(it)->cylinder, x)) {
    p = std::prev(it)->power;
  } else {
    std::vector<Word> under;
    for (; it != g.pieces.end() && is_prefix(x, it->cylinder); ++it) {
      if (p && *p != it->power) return std::nullopt;
      p = it->power;
      under.push_back(it->cylinder);
    }
    if (!p || space.canonicalize(std::move(under)).words != std::vector<Word>{x})
      return std::nullopt;
  }
  if (!space.translate(x, *p)) return std::nullopt;
  return p;
}

Word common_prefix(const std::vector<Word>& ws) {
  if (ws.empty()) return {};
  Word p = ws.front();
  for (const auto& w : ws) {
    std::size_t k = 0;
    while (k < p.size() && k < w.size() && p[k] == w[k]) ++k;
    p.resize(k);
  }
  return p;
}

// Points whose T-image lies in `d` but which are not in `d` themselves.
ClopenSet preimage_step(const Space& space, const ClopenSet& d) {
  std::vector<Word> out;
  for (const auto& w : d.words) {
    auto back = space.translate(w, -1);
    if (back) {
      out.push_back(*back);
    } else {
      Word top(w.size());
      for (std::size_t j = 0; j < w.size(); ++j) top[j] = space.size_at(static_cast<int>(j)) - 1;
      out.push_back(top);
    }
  }
  return space.canonicalize(std::move(out));
}

}  // namespace detail

using namespace detail;

std::int64_t flat_index(const std::vector<int>& radices, const std::vector<int>& index) {
  if (index.size() != radices.size()) throw PreconditionFailed("flat_index: length mismatch");
  std::int64_t v = 0;
  for (std::size_t k = 0; k < radices.size(); ++k) {
    if (index[k] < 0 || index[k] >= radices[k])
      throw PreconditionFailed("flat_index: coordinate out of range");
    v = v * radices[k] + index[k];
  }
  return v;
}

std::vector<int> unflatten_index(const std::vector<int>& radices, std::int64_t flat) {
  std::vector<int> out(radices.size());
  for (std::size_t k = radices.size(); k-- > 0;) {
    out[k] = static_cast<int>(flat % radices[k]);
    flat /= radices[k];
  }
  return out;
}

namespace {

enum class Hit { Inside, Split, Outside };

// Sorted words of a labeled partition, for point lookups.
class LabelIndex {
 public:
  explicit LabelIndex(const std::vector<ClopenSet>& atoms) {
    for (std::size_t d = 0; d < atoms.size(); ++d)
      for (const auto& w : atoms[d].words) entries_.emplace_back(w, static_cast<int>(d));
    std::sort(entries_.begin(), entries_.end());
  }

  std::pair<Hit, int> find(const Word& x) const {
    auto it = std::upper_bound(entries_.begin(), entries_.end(), x,
                               [](const Word& v, const auto& e) { return v < e.first; });
    if (it != entries_.begin() && is_prefix(std::prev(it)->first, x))
      return {Hit::Inside, std::prev(it)->second};
    if (it != entries_.end() && is_prefix(x, it->first)) return {Hit::Split, 0};
    return {Hit::Outside, 0};
  }

 private:
  std::vector<std::pair<Word, int>> entries_;
};

std::pair<Hit, std::int64_t> find_power(const GroupoidMap& g, const Word& x) {
  auto it = std::upper_bound(g.pieces.begin(), g.pieces.end(), x,
                             [](const Word& v, const Piece& p) { return v < p.cylinder; });
  if (it != g.pieces.begin() && is_prefix(std::prev(it)->cylinder, x))
    return {Hit::Inside, std::prev(it)->power};
  if (it != g.pieces.end() && is_prefix(x, it->cylinder)) return {Hit::Split, 0};
  return {Hit::Outside, 0};
}

void sort_pieces(UniformRelation& s) {
  for (auto& h : s.splitting)
    if (!std::is_sorted(h.pieces.begin(), h.pieces.end()))
      std::sort(h.pieces.begin(), h.pieces.end());
}

UniformRelation restrict_relation(const Space& space, const UniformRelation& s,
                                  const ClopenSet& fundamental) {
  UniformRelation out;
  out.r = s.r;
  out.fundamental = fundamental;
  for (const auto& h : s.splitting) out.splitting.push_back(restrict_to(space, h, fundamental));
  out.defect = space.subtract(s.ambient(space), out.ambient(space));
  return out;
}

struct SideState {
  const OdometerSystem* sys = nullptr;
  UniformRelation ext;  ///< composites of every level so far, on B_n
  LabeledPartition labels;
  OESide out;
  Rational packing{0};
};

struct LeaderLabels {
  UniformRelation level;  ///< the new level's relation, restricted to labelled cells
  LabeledPartition labels;
  std::vector<std::vector<int>> g;
  std::vector<std::vector<Rational>> nu;
};

// Cuts the fundamental set of `level` into cells on which every composite of
// `ext` is a single power with a single ratio, every level map lands in one
// previous atom, and the first `depth` letters agree; one label per signature.
LeaderLabels label_cells(const OdometerSystem& sys, const UniformRelation& ext,
                         const UniformRelation& level, const LabeledPartition& prev, int depth,
                         int max_labels) {
  const Space& space = sys.space();
  const LabelIndex index(prev.atoms);
  const int start = std::max(depth, sys.working_depth());
  std::vector<Word> work = space.refine_words(level.fundamental.words, start);
  std::reverse(work.begin(), work.end());

  std::map<std::string, int> ids;
  std::vector<std::vector<Word>> cells;
  LeaderLabels out;
  out.g.assign(level.r, {});
  out.nu.assign(level.r, {});
  std::vector<int> prev_label(level.r);
  std::vector<std::int64_t> step(level.r), powers(ext.r);

  while (!work.empty()) {
    Word c = std::move(work.back());
    work.pop_back();
    bool split = false, drop = false;
    for (int i = 0; i < level.r && !split && !drop; ++i) {
      auto [hit, p] = find_power(level.splitting[i], c);
      if (hit != Hit::Inside) {
        split = hit == Hit::Split;
        drop = hit == Hit::Outside;
        break;
      }
      step[i] = p;
      auto [lhit, lab] = index.find(*space.translate(c, p));
      split = lhit == Hit::Split;
      drop = lhit == Hit::Outside;
      prev_label[i] = lab;
    }
    for (int m = 0; m < ext.r && !split && !drop; ++m) {
      auto [hit, p] = find_power(ext.splitting[m], c);
      split = hit == Hit::Split;
      drop = hit == Hit::Outside;
      powers[m] = p;
    }
    if (split) {
      if (static_cast<int>(c.size()) >= space.depth_max()) continue;
      auto kids = space.children(c);
      work.insert(work.end(), kids.rbegin(), kids.rend());
      continue;
    }
    if (drop) continue;

    const Rational mc = sys.mass(c);
    std::string key = word_to_string(Word(c.begin(), c.begin() + depth)) + "|";
    for (int i = 0; i < level.r; ++i) key += std::to_string(prev_label[i]) + ",";
    key += "|";
    for (int m = 0; m < ext.r; ++m) {
      const Rational q = sys.mass(*space.translate(c, powers[m])) / mc;
      key += std::to_string(powers[m]) + ":" + q.get_str() + ",";
    }
    auto [it, fresh] = ids.emplace(std::move(key), static_cast<int>(cells.size()));
    const int d = it->second;
    if (fresh) {
      cells.emplace_back();
      for (int i = 0; i < level.r; ++i) {
        out.g[i].push_back(prev_label[i]);
        out.nu[i].push_back(Rational(0));
      }
    }
    for (int i = 0; i < level.r; ++i) out.nu[i][d] += sys.mass(*space.translate(c, step[i]));
    cells[d].push_back(std::move(c));
  }

  // Only the heaviest labels survive; the rest joins the defect.
  std::vector<Rational> total(cells.size(), Rational(0));
  for (std::size_t d = 0; d < cells.size(); ++d)
    for (int i = 0; i < level.r; ++i) total[d] += out.nu[i][d];
  std::vector<int> keep(cells.size());
  std::iota(keep.begin(), keep.end(), 0);
  std::stable_sort(keep.begin(), keep.end(), [&](int x, int y) { return total[x] > total[y]; });
  if (max_labels > 0 && static_cast<int>(keep.size()) > max_labels) keep.resize(max_labels);
  std::sort(keep.begin(), keep.end());

  LeaderLabels kept;
  kept.g.assign(level.r, {});
  kept.nu.assign(level.r, {});
  std::vector<Word> all;
  for (int d : keep) {
    for (int i = 0; i < level.r; ++i) {
      kept.g[i].push_back(out.g[i][d]);
      kept.nu[i].push_back(out.nu[i][d]);
    }
    all.insert(all.end(), cells[d].begin(), cells[d].end());
    kept.labels.atoms.push_back(space.canonicalize(std::move(cells[d])));
  }
  kept.level = restrict_relation(space, level, space.canonicalize(std::move(all)));
  return kept;
}

Rational level_eps(const DiagramOptions& opts, int n) {
  if (n - 1 < static_cast<int>(opts.eps.size())) return opts.eps[n - 1];
  return rpow(Rational(1, 2), n + 1);
}

Rational excess(const Rational& x, const Rational& y) {
  Rational q = x / y;
  if (q < 1) q = 1 / q;
  q -= 1;
  q.canonicalize();
  return q;
}

// Follower side of level n: copy the leader's (g, nu) square. Returns the
// leader label behind every new follower label.
std::vector<int> follow(SideState& f, const SideState& leader, const UniformRelation& leader_level,
            const LeaderLabels& lab, const DiagramOptions& opts, const Rational& eps) {
  const Space& space = f.sys->space();
  CopyOptions copts;
  copts.tolerance = opts.packing_tol;
  copts.transport_depth = opts.transport_depth;
  copts.attempt_cap = opts.attempt_cap;
  copts.max_vectors = opts.max_vectors;
  if (opts.identity_shortcut && f.sys->config() == leader.sys->config()) {
    std::vector<std::vector<ClopenSet>> fibers(leader_level.r);
    for (int i = 0; i < leader_level.r; ++i)
      for (const auto& atom : lab.labels.atoms)
        fibers[i].push_back(image(space, leader_level.splitting[i], atom));
    copts.mirror_fibers = std::move(fibers);
    copts.mirror_maps = leader_level.splitting;
  }
  const CopyResult cr =
      opts.mode == DiagramMode::Lambda
          ? copy_structure_lambda(*f.sys, f.ext.fundamental, f.labels, lab.g, lab.nu,
                                  opts.lambda, copts)
          : copy_structure_eps(*f.sys, f.ext.fundamental, f.labels, lab.g, lab.nu, eps, copts);
  f.packing += cr.packing_deviation;
  UniformRelation rel = cr.relation;
  sort_pieces(rel);
  f.out.levels.push_back({rel.splitting, cr.labels.atoms});
  f.ext = natural_extension(space, f.ext, rel);
  sort_pieces(f.ext);
  f.labels = cr.labels;
  return cr.origin;
}

// Largest-first subset of `set` with mass within tol of `target`; after each
// pass the smallest cell that did not fit is split.
ClopenSet trim_to(const OdometerSystem& sys, const ClopenSet& set, const Rational& target,
                  const Rational& tol, int extra_depth) {
  const Space& space = sys.space();
  if (sys.mass(set) <= target) return set;
  const Rational stop = target * tol;
  Rational left = target;
  std::vector<std::pair<Rational, Word>> cells;
  std::size_t longest = 0;
  for (const auto& w : set.words) {
    cells.emplace_back(sys.mass(w), w);
    longest = std::max(longest, w.size());
  }
  const std::size_t limit = std::min<std::size_t>(space.depth_max(), longest + extra_depth);
  std::vector<Word> kept;
  while (!cells.empty() && left > stop) {
    std::stable_sort(cells.begin(), cells.end(),
                     [](const auto& x, const auto& y) { return x.first > y.first; });
    std::vector<std::pair<Rational, Word>> rest;
    for (auto& cell : cells) {
      if (left > stop && cell.first <= left) {
        left -= cell.first;
        kept.push_back(std::move(cell.second));
      } else {
        rest.push_back(std::move(cell));
      }
    }
    // Cells heavier than what is left; the lightest one is split.
    auto spare = std::find_if(rest.rbegin(), rest.rend(),
                              [&](const auto& c) { return c.first > left && c.second.size() < limit; });
    if (left <= stop || spare == rest.rend()) break;
    const Word c = spare->second;
    rest.erase(std::next(spare).base());
    for (auto& w : space.children(c)) {
      Rational mw = sys.mass(w);
      rest.emplace_back(std::move(mw), std::move(w));
    }
    cells = std::move(rest);
  }
  return space.canonicalize(std::move(kept));
}

// Splits every leader label into one part per follower label carrying it,
// each cut to the fiber-0 mass the follower realized; the rest joins the
// defect and the prescribed measure is recomputed from what is left.
void split_leader(const OdometerSystem& sys, LeaderLabels& lab, const std::vector<int>& origin,
                  const LabeledPartition& realized, const OdometerSystem& follower,
                  const DiagramOptions& opts) {
  const Space& space = sys.space();
  std::vector<ClopenSet> rest = lab.labels.atoms;
  LeaderLabels out;
  out.g.assign(lab.level.r, {});
  out.nu.assign(lab.level.r, {});
  std::vector<Word> all;
  for (std::size_t o = 0; o < origin.size(); ++o) {
    const int d = origin[o];
    const Rational target = follower.mass(realized.atoms[o]);
    ClopenSet part = target == 0 ? ClopenSet{}
                                 : trim_to(sys, rest[d], target, opts.packing_tol, opts.transport_depth);
    rest[d] = space.subtract(rest[d], part);
    for (int i = 0; i < lab.level.r; ++i) {
      out.g[i].push_back(lab.g[i][d]);
      out.nu[i].push_back(sys.mass(image(space, lab.level.splitting[i], part)));
    }
    all.insert(all.end(), part.words.begin(), part.words.end());
    out.labels.atoms.push_back(std::move(part));
  }
  out.level = restrict_relation(space, lab.level, space.canonicalize(std::move(all)));
  lab = std::move(out);
}

void lead(SideState& l, LeaderLabels&& lab) {
  l.out.levels.push_back({lab.level.splitting, lab.labels.atoms});
  l.labels = lab.labels;
}


}  // namespace

FinitaryOE build_diagram(const OdometerSystem& sys_a, const OdometerSystem& sys_b,
                         const DiagramOptions& opts) {
  if (opts.depth < 0) throw PreconditionFailed("build_diagram: negative depth");
  if (opts.mode == DiagramMode::Lambda && (opts.lambda <= 0 || opts.lambda >= 1))
    throw PreconditionFailed("build_diagram: lambda must lie in (0,1)");
  for (int n = 1; n <= opts.depth; ++n)
    if (level_eps(opts, n) <= 0) throw PreconditionFailed("build_diagram: eps must be positive");

  FinitaryOE oe;
  oe.mode = opts.mode;
  oe.depth = opts.depth;
  oe.lambda = opts.mode == DiagramMode::Lambda ? opts.lambda : Rational(0);
  oe.packing_tol = opts.packing_tol;
  oe.seed = opts.seed;
  oe.a.config = sys_a.config();
  oe.b.config = sys_b.config();

  const ClopenSet full_a = sys_a.space().full(), full_b = sys_b.space().full();
  if (opts.depth == 0) {
    oe.budgets.defect_a = 1;
    oe.budgets.defect_b = 1;
    return oe;
  }

  SideState a, b;
  a.sys = &sys_a;
  b.sys = &sys_b;
  a.ext = trivial_relation(full_a);
  b.ext = trivial_relation(full_b);
  a.labels.atoms = {full_a};
  b.labels.atoms = {full_b};

  std::vector<int> radices;
  for (int n = 1; n <= opts.depth + 1; ++n) {
    const bool closing = n == opts.depth + 1;
    const Rational eps = level_eps(opts, std::min(n, opts.depth));
    const int depth = Space::depth_for_diameter(eps);
    // Odd levels are led by b, even ones by a; the closing level is led by
    // the side that followed last.
    const bool a_leads = closing ? (opts.depth % 2 == 1) : (n % 2 == 0);
    SideState& leader = a_leads ? a : b;
    SideState& follower = a_leads ? b : a;
    const Space& space = leader.sys->space();

    DiagramLevel dl;
    UniformRelation level;
    if (closing) {
      level = trivial_relation(leader.ext.fundamental);
    } else {
      RefineOptions ropts = opts.refine;
      ropts.max_height = std::max(2, std::min(ropts.max_height, opts.max_composites / leader.ext.r));
      RefineResult rr = refine_uniform(*leader.sys, leader.ext, eps, ropts);
      dl.tower_bound_met = rr.bound_met;
      level = std::move(rr.relation);
      sort_pieces(level);
    }
    UniformRelation ext = level.r == 1 ? leader.ext : natural_extension(space, leader.ext, level);
    sort_pieces(ext);
    LeaderLabels lab = label_cells(*leader.sys, ext, level, leader.labels, depth, opts.max_labels);

    dl.n = n;
    dl.r = level.r;
    dl.cell_depth = depth;
    dl.eps = eps;
    dl.leader = a_leads ? 'a' : 'b';
    dl.closing = closing;
    const std::vector<int> origin = follow(follower, leader, lab.level, lab, opts, eps);
    split_leader(*leader.sys, lab, origin, follower.labels, *follower.sys, opts);
    leader.ext = restrict_relation(space, ext, lab.level.fundamental);
    dl.g = lab.g;
    dl.nu = lab.nu;
    Rational slack(0);
    for (std::size_t d = 0; d < follower.labels.atoms.size(); ++d)
      if (!follower.labels.atoms[d].empty() && lab.nu[0][d] > 0)
        slack = std::max(slack, excess(follower.sys->mass(follower.labels.atoms[d]), lab.nu[0][d]));
    lead(leader, std::move(lab));
    oe.budgets.slack.push_back(slack);
    oe.levels.push_back(std::move(dl));
    if (!closing) radices.push_back(level.r);
  }

  oe.a = std::move(a.out);
  oe.b = std::move(b.out);
  oe.a.config = sys_a.config();
  oe.b.config = sys_b.config();
  oe.budgets.packing_a = a.packing;
  oe.budgets.packing_b = b.packing;

  // Composite powers per final label, single-valued by construction.
  std::int64_t composites = 1;
  for (int r : radices) composites *= r;
  const std::size_t nd = oe.levels.back().nu[0].size();
  auto powers_of = [&](const SideState& s) {
    std::vector<std::vector<std::optional<std::int64_t>>> out(
        nd, std::vector<std::optional<std::int64_t>>(composites));
    for (std::size_t d = 0; d < nd && d < s.labels.atoms.size(); ++d) {
      const auto& words = s.labels.atoms[d].words;
      if (words.empty()) continue;
      for (std::int64_t m = 0; m < composites; ++m) {
        std::optional<std::int64_t> p;
        bool ok = true;
        for (const auto& w : words) {
          auto q = uniform_power(s.sys->space(), s.ext.splitting[m], w);
          if (!q || (p && *p != *q)) {
            ok = false;
            break;
          }
          p = *q;
        }
        if (ok) out[d][m] = p;
      }
    }
    return out;
  };
  const auto pa = powers_of(a), pb = powers_of(b);

  std::vector<Word> matched_a, matched_b;
  for (std::size_t d = 0; d < nd; ++d)
    for (std::int64_t m = 0; m < composites; ++m) {
      if (!pa[d][m] || !pb[d][m]) continue;
      MatchedPair mp;
      mp.index = unflatten_index(radices, m);
      mp.label = static_cast<int>(d);
      mp.power_a = *pa[d][m];
      mp.power_b = *pb[d][m];
      std::vector<Word> wa, wb;
      for (const auto& w : a.labels.atoms[d].words) wa.push_back(*sys_a.space().translate(w, mp.power_a));
      for (const auto& w : b.labels.atoms[d].words) wb.push_back(*sys_b.space().translate(w, mp.power_b));
      mp.word_a = common_prefix(wa);
      mp.word_b = common_prefix(wb);
      mp.mass_a = sys_a.mass(sys_a.space().canonicalize(wa));
      mp.mass_b = sys_b.mass(sys_b.space().canonicalize(wb));
      mp.ratio = mp.mass_b / mp.mass_a;
      mp.ratio.canonicalize();
      oe.budgets.matching += rabs(Rational(mp.mass_a - mp.mass_b));
      oe.budgets.ratio = std::max(oe.budgets.ratio, rabs(Rational(mp.ratio - 1)));
      matched_a.insert(matched_a.end(), wa.begin(), wa.end());
      matched_b.insert(matched_b.end(), wb.begin(), wb.end());
      oe.pairs.push_back(std::move(mp));
    }

  // Cocycle tables: within one label, T moves atom P to atom P + 1.
  auto tables = [&](char side, const auto& own, const auto& other, const SideState& s,
                    std::vector<CocycleEntry>& table, std::vector<Word>& cover) {
    const Space& space = s.sys->space();
    for (std::size_t d = 0; d < nd; ++d) {
      std::map<std::int64_t, std::int64_t> by_power;
      for (std::int64_t m = 0; m < composites; ++m)
        if (own[d][m] && other[d][m]) by_power.emplace(*own[d][m], m);
      for (const auto& [p, m] : by_power) {
        auto next = by_power.find(p + 1);
        if (next == by_power.end()) continue;
        CocycleEntry e;
        e.side = side;
        e.index = unflatten_index(radices, m);
        e.target = unflatten_index(radices, next->second);
        e.label = static_cast<int>(d);
        std::vector<Word> ws;
        for (const auto& w : s.labels.atoms[d].words) ws.push_back(*space.translate(w, p));
        e.cell = common_prefix(ws);
        e.other_power = *other[d][next->second] - *other[d][m];
        cover.insert(cover.end(), ws.begin(), ws.end());
        table.push_back(std::move(e));
      }
    }
  };
  std::vector<Word> cov_a, cov_b;
  tables('a', pa, pb, a, oe.n_table, cov_a);
  tables('b', pb, pa, b, oe.m_table, cov_b);
  oe.coverage_a = sys_a.space().canonicalize(std::move(cov_a));
  oe.coverage_b = sys_b.space().canonicalize(std::move(cov_b));
  oe.coverage_mass_a = sys_a.mass(oe.coverage_a);
  oe.coverage_mass_b = sys_b.mass(oe.coverage_b);

  const ClopenSet da = sys_a.space().complement(sys_a.space().canonicalize(std::move(matched_a)));
  const ClopenSet db = sys_b.space().complement(sys_b.space().canonicalize(std::move(matched_b)));
  oe.budgets.defect_a = sys_a.mass(da);
  oe.budgets.defect_b = sys_b.mass(db);
  oe.budgets.edge_a = sys_a.mass(sys_a.space().subtract(preimage_step(sys_a.space(), da), da));
  oe.budgets.edge_b = sys_b.mass(sys_b.space().subtract(preimage_step(sys_b.space(), db), db));
  return oe;
}

}  // namespace foe
