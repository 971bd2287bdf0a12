#include <algorithm>
#include <cstdio>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

#include "diagram_detail.hpp"
#include "foe/diagram.hpp"
#include "foe/errors.hpp"

namespace foe {

using detail::common_prefix;
using detail::preimage_step;
using detail::uniform_power;

namespace {

// Extra levels a cylinder may be split when a map is not single-valued on it.
constexpr int kSplitDepth = 6;

std::string dual(const Rational& q) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", approx(q));
  return to_string(q) + " (~" + buf + ")";
}

std::string index_string(const std::vector<int>& index) {
  std::string s;
  for (std::size_t k = 0; k < index.size(); ++k) s += (k ? "," : "") + std::to_string(index[k]);
  return "(" + s + ")";
}

Rational excess(const Rational& x, const Rational& y) {
  Rational q = x / y;
  if (q < 1) q = 1 / q;
  q -= 1;
  q.canonicalize();
  return q;
}

bool contains(const Space& space, const ClopenSet& set, const Word& w) {
  return space.relate(set, w) == Relation::Inside;
}

// The replayed data of one side: its system and its stored level stack.
struct Side {
  char name;
  const OESide* data;
  std::unique_ptr<OdometerSystem> sys;
  std::map<std::pair<std::vector<int>, int>, std::optional<std::int64_t>> memo;

  const Space& space() const { return sys->space(); }

  // Power of h_1[i_1] o ... o h_L[i_L] on [w], when it is a single one.
  std::optional<std::int64_t> chain(const std::vector<int>& full, const Word& w, int top,
                                    int budget) const {
    Word cur = w;
    std::int64_t total = 0;
    for (int n = top; n >= 0; --n) {
      const auto& maps = data->levels[n].maps;
      const int i = full[n];
      auto p = uniform_power(space(), maps[i], cur);
      if (!p) {
        if (budget == 0 || static_cast<int>(w.size()) >= space().depth_max()) return std::nullopt;
        std::optional<std::int64_t> common;
        for (const auto& c : space().children(w)) {
          auto q = chain(full, c, top, budget - 1);
          if (!q || (common && *common != *q)) return std::nullopt;
          common = q;
        }
        return common;
      }
      cur = *space().translate(cur, *p);
      total += *p;
    }
    return total;
  }

  // Composite power on the final atom of `label`, or nullopt.
  std::optional<std::int64_t> power(const std::vector<int>& full, int label) {
    auto key = std::make_pair(full, label);
    auto it = memo.find(key);
    if (it != memo.end()) return it->second;
    std::optional<std::int64_t> p;
    const auto& words = data->levels.back().labels[label].words;
    const int top = static_cast<int>(data->levels.size()) - 1;
    for (const auto& w : words) {
      auto q = chain(full, w, top, kSplitDepth);
      if (!q || (p && *p != *q)) {
        p.reset();
        break;
      }
      p = q;
    }
    if (words.empty()) p.reset();
    memo.emplace(std::move(key), p);
    return p;
  }

  std::vector<Word> atom(int label, std::int64_t p) const {
    std::vector<Word> out;
    for (const auto& w : data->levels.back().labels[label].words)
      out.push_back(*space().translate(w, p));
    return out;
  }
};

class Verifier {
 public:
  explicit Verifier(const FinitaryOE& oe) : oe_(oe) {}

  VerificationReport run() {
    if (!systems()) return std::move(rep_);
    if (!levels()) return std::move(rep_);
    if (oe_.mode == DiagramMode::Lambda) lambda_powers();
    pairs();
    defect();
    cocycles();
    coverage();
    if (oe_.mode == DiagramMode::III1) drift();
    return std::move(rep_);
  }

 private:
  void add(std::string name, bool ok, std::string detail) {
    rep_.checks.push_back({std::move(name), ok, std::move(detail)});
  }

  Side& side(char c) { return c == 'a' ? a_ : b_; }

  bool systems() {
    try {
      a_.sys = std::make_unique<OdometerSystem>(oe_.a.config);
      b_.sys = std::make_unique<OdometerSystem>(oe_.b.config);
    } catch (const Error& e) {
      add("systems", false, e.what());
      return false;
    }
    add("systems", true, "both configurations rebuild");
    return true;
  }

  // Shapes, well-formed maps and commutation of every level on both sides.
  bool levels() {
    const std::size_t L = oe_.levels.size();
    if (oe_.depth < 0 || (oe_.depth == 0) != (L == 0) ||
        (L > 0 && static_cast<int>(L) != oe_.depth + 1)) {
      add("levels", false, "level count does not match depth " + std::to_string(oe_.depth));
      return false;
    }
    for (Side* s : {&a_, &b_})
      if (s->data->levels.size() != L) {
        add("levels", false, std::string("side ") + s->name + " stores a different level count");
        return false;
      }
    std::size_t prev = 1;
    for (std::size_t n = 0; n < L; ++n) {
      const DiagramLevel& dl = oe_.levels[n];
      const std::string at = "level " + std::to_string(n + 1);
      const std::size_t nd = dl.nu.empty() ? 0 : dl.nu[0].size();
      bool shape = dl.r >= 1 && dl.g.size() == static_cast<std::size_t>(dl.r) &&
                   dl.nu.size() == static_cast<std::size_t>(dl.r) && (n + 1 < L) != dl.closing &&
                   (!dl.closing || dl.r == 1);
      for (int i = 0; shape && i < dl.r; ++i) {
        shape = dl.g[i].size() == nd && dl.nu[i].size() == nd;
        for (int d : dl.g[i]) shape = shape && d >= 0 && static_cast<std::size_t>(d) < prev;
      }
      for (Side* s : {&a_, &b_}) {
        const SideLevel& sl = s->data->levels[n];
        shape = shape && sl.maps.size() == static_cast<std::size_t>(dl.r) && sl.labels.size() == nd;
      }
      if (!shape) {
        add("levels", false, at + ": inconsistent shape");
        return false;
      }
      for (Side* s : {&a_, &b_}) {
        const SideLevel& sl = s->data->levels[n];
        const Space& space = s->space();
        const std::string where = at + " side " + s->name;
        for (int i = 0; i < dl.r; ++i) {
          const auto& pieces = sl.maps[i].pieces;
          for (std::size_t k = 0; k < pieces.size(); ++k) {
            const Piece& p = pieces[k];
            const bool bad = !space.valid(p.cylinder) || !space.translate(p.cylinder, p.power) ||
                             (i == 0 && p.power != 0) ||
                             (k > 0 && (!(pieces[k - 1].cylinder < p.cylinder) ||
                                        is_prefix(pieces[k - 1].cylinder, p.cylinder)));
            if (bad) {
              add("levels", false,
                  where + " map " + std::to_string(i) + ": bad piece on cylinder " +
                      word_to_string(p.cylinder));
              return false;
            }
          }
        }
        for (std::size_t d = 0; d < nd; ++d)
          for (const auto& w : sl.labels[d].words) {
            if (!space.valid(w)) {
              add("levels", false, where + " label " + std::to_string(d) + ": invalid cylinder " +
                                       word_to_string(w));
              return false;
            }
            for (int i = 0; i < dl.r; ++i) {
              const int parent = dl.g[i][d];
              if (!commutes(*s, n, i, w, parent, kSplitDepth)) {
                add("levels", false,
                    where + " label " + std::to_string(d) + " fiber " + std::to_string(i) +
                        ": cylinder " + word_to_string(w) + " does not land in label " +
                        std::to_string(parent) + " of the previous level");
                return false;
              }
            }
          }
      }
      prev = nd;
    }
    add("levels", true, std::to_string(L) + " levels, diagram commutes on both sides");
    return true;
  }

  bool commutes(const Side& s, std::size_t n, int i, const Word& w, int parent, int budget) {
    const Space& space = s.space();
    auto p = uniform_power(space, s.data->levels[n].maps[i], w);
    if (!p) {
      if (budget == 0 || static_cast<int>(w.size()) >= space.depth_max()) return false;
      for (const auto& c : space.children(w))
        if (!commutes(s, n, i, c, parent, budget - 1)) return false;
      return true;
    }
    if (n == 0) return true;
    return contains(space, s.data->levels[n - 1].labels[parent], *space.translate(w, *p));
  }

  void lambda_powers() {
    for (Side* s : {&a_, &b_})
      for (std::size_t n = 0; n < s->data->levels.size(); ++n)
        for (std::size_t i = 0; i < s->data->levels[n].maps.size(); ++i)
          for (const auto& p : s->data->levels[n].maps[i].pieces) {
            const Rational q = s->sys->mass(*s->space().translate(p.cylinder, p.power)) /
                               s->sys->mass(p.cylinder);
            long k = 0;
            if (q != 1 && !is_power_of(q, oe_.lambda, &k)) {
              add("lambda-powers", false,
                  std::string("side ") + s->name + " level " + std::to_string(n + 1) + " map " +
                      std::to_string(i) + ": ratio " + to_string(q) + " on cylinder " +
                      word_to_string(p.cylinder) + " is not a power of " + to_string(oe_.lambda));
              return;
            }
          }
    add("lambda-powers", true, "every piece ratio is a power of " + to_string(oe_.lambda));
  }

  // The stored index padded with the closing level's single fiber.
  std::optional<std::vector<int>> full_index(const std::vector<int>& index) const {
    const std::size_t L = oe_.levels.size();
    if (L == 0 || index.size() + 1 != L) return std::nullopt;
    for (std::size_t n = 0; n < index.size(); ++n)
      if (index[n] < 0 || index[n] >= oe_.levels[n].r) return std::nullopt;
    std::vector<int> full = index;
    full.push_back(0);
    return full;
  }

  bool valid_label(int label) const {
    return !oe_.levels.empty() && label >= 0 &&
           static_cast<std::size_t>(label) < oe_.levels.back().nu[0].size();
  }

  // Check (1) and (2): each pair replays from the level maps alone.
  void pairs() {
    Rational matching(0), worst(0);
    std::vector<Word> all_a, all_b;
    std::vector<std::string> failures;
    for (std::size_t k = 0; k < oe_.pairs.size(); ++k) {
      const MatchedPair& mp = oe_.pairs[k];
      const std::string at = "pair " + std::to_string(k) + " index " + index_string(mp.index) +
                             " label " + std::to_string(mp.label);
      auto full = full_index(mp.index);
      if (!full || !valid_label(mp.label)) {
        failures.push_back(at + ": index or label out of range");
        continue;
      }
      bool ok = true;
      for (auto [s, stored, word, mass] :
           {std::tuple{&a_, mp.power_a, &mp.word_a, &mp.mass_a},
            std::tuple{&b_, mp.power_b, &mp.word_b, &mp.mass_b}}) {
        auto p = s->power(*full, mp.label);
        if (!p || *p != stored) {
          failures.push_back(at + ": side " + s->name + " cylinder " + word_to_string(*word) +
                             " stores power " + std::to_string(stored) + ", replay gives " +
                             (p ? std::to_string(*p) : std::string("no single power")));
          ok = false;
          continue;
        }
        const auto ws = s->atom(mp.label, *p);
        if (common_prefix(ws) != *word ||
            s->sys->mass(s->space().canonicalize(ws)) != *mass) {
          failures.push_back(at + ": side " + s->name + " cylinder " + word_to_string(*word) +
                             " disagrees with its replayed atom");
          ok = false;
          continue;
        }
        auto& all = s == &a_ ? all_a : all_b;
        all.insert(all.end(), ws.begin(), ws.end());
      }
      if (!ok) continue;
      if (mp.mass_a <= 0 || mp.ratio != mp.mass_b / mp.mass_a) {
        failures.push_back(at + ": cylinder " + word_to_string(mp.word_a) + " ratio " +
                           to_string(mp.ratio) + " is not mass_b / mass_a");
        continue;
      }
      matching += rabs(Rational(mp.mass_a - mp.mass_b));
      worst = std::max(worst, rabs(Rational(mp.ratio - 1)));
    }
    for (auto [s, all] : {std::pair{&a_, &all_a}, std::pair{&b_, &all_b}}) {
      std::sort(all->begin(), all->end());
      for (std::size_t k = 1; k < all->size(); ++k)
        if (is_prefix((*all)[k - 1], (*all)[k])) {
          failures.push_back(std::string("side ") + s->name + ": matched atoms overlap on cylinder " +
                             word_to_string((*all)[k]));
          break;
        }
    }
    matched_a_ = a_.space().canonicalize(std::move(all_a));
    matched_b_ = b_.space().canonicalize(std::move(all_b));
    rep_.matching_deviation = matching;
    rep_.worst_ratio = worst;
    if (failures.empty() && matching != oe_.budgets.matching)
      failures.push_back("matching deviation " + to_string(matching) + " differs from budget " +
                         to_string(oe_.budgets.matching));
    if (failures.empty() && worst > oe_.budgets.ratio)
      failures.push_back("ratio deviation " + to_string(worst) + " exceeds budget " +
                         to_string(oe_.budgets.ratio));
    if (failures.empty())
      add("pairs", true,
          std::to_string(oe_.pairs.size()) + " pairs injective, deviation " + dual(matching) +
              ", worst |ratio - 1| " + dual(worst));
    else
      add("pairs", false, failures.front());
  }

  void defect() {
    for (auto [s, matched, mass, edge] :
         {std::tuple{&a_, &matched_a_, oe_.budgets.defect_a, oe_.budgets.edge_a},
          std::tuple{&b_, &matched_b_, oe_.budgets.defect_b, oe_.budgets.edge_b}}) {
      const Space& space = s->space();
      const ClopenSet d = space.complement(*matched);
      const Rational dm = s->sys->mass(d);
      const Rational em = s->sys->mass(space.subtract(preimage_step(space, d), d));
      if (dm != mass || em != edge) {
        add("defect", false,
            std::string("side ") + s->name + ": replayed defect " + to_string(dm) + " and edge " +
                to_string(em) + " differ from the budgets");
        return;
      }
    }
    add("defect", true,
        "defect a " + dual(oe_.budgets.defect_a) + ", b " + dual(oe_.budgets.defect_b));
  }

  // Check (3): one T-step on an atom is the matched move to the next atom.
  void cocycles() {
    for (auto [table, name, own] : {std::tuple{&oe_.n_table, "n", 'a'},
                                    std::tuple{&oe_.m_table, "m", 'b'}}) {
      std::vector<Word> cover;
      std::map<std::pair<std::vector<int>, int>, int> seen;
      for (std::size_t k = 0; k < table->size(); ++k) {
        const CocycleEntry& e = (*table)[k];
        const std::string at = std::string(name) + " entry " + std::to_string(k) + " cylinder " +
                               word_to_string(e.cell);
        auto fail = [&](const std::string& why) {
          add("cocycles", false, at + ": " + why);
        };
        if (e.side != own) return fail("stored on the wrong side");
        auto from = full_index(e.index), to = full_index(e.target);
        if (!from || !to || !valid_label(e.label)) return fail("index or label out of range");
        if (!seen.emplace(std::make_pair(e.index, e.label), 1).second)
          return fail("atom listed twice, so the table is not single-valued");
        Side& s = side(own);
        Side& o = side(own == 'a' ? 'b' : 'a');
        auto p = s.power(*from, e.label), p1 = s.power(*to, e.label);
        auto q = o.power(*from, e.label), q1 = o.power(*to, e.label);
        if (!p || !p1 || !q || !q1) return fail("atom has no single composite power");
        if (*p1 != *p + 1) return fail("target is not the T-image of the atom");
        if (*q1 - *q != e.other_power)
          return fail("stores other power " + std::to_string(e.other_power) + ", replay gives " +
                      std::to_string(*q1 - *q));
        const auto ws = s.atom(e.label, *p);
        if (common_prefix(ws) != e.cell) return fail("cell disagrees with its replayed atom");
        cover.insert(cover.end(), ws.begin(), ws.end());
      }
      (own == 'a' ? cover_a_ : cover_b_) = side(own).space().canonicalize(std::move(cover));
    }
    add("cocycles", true,
        "n table " + std::to_string(oe_.n_table.size()) + " entries, m table " +
            std::to_string(oe_.m_table.size()) + " entries, each one power per cell");
  }

  void coverage() {
    Rational two_eps(0);
    for (const auto& l : oe_.levels)
      if (!l.closing) two_eps += 2 * l.eps;
    const Budgets& b = oe_.budgets;
    bool ok = true;
    std::string detail;
    for (auto [s, cover, stored, stored_mass, budget, out] :
         {std::tuple{&a_, &cover_a_, &oe_.coverage_a, oe_.coverage_mass_a,
                     Rational(b.defect_a + b.edge_a + b.packing_a + b.matching), &rep_.coverage_a},
          std::tuple{&b_, &cover_b_, &oe_.coverage_b, oe_.coverage_mass_b,
                     Rational(b.defect_b + b.edge_b + b.packing_b + b.matching),
                     &rep_.coverage_b}}) {
      const Rational mass = s->sys->mass(*cover);
      *out = mass;
      const Rational bound = 1 - two_eps - budget;
      if (cover->words != stored->words || mass != stored_mass) {
        ok = false;
        detail = std::string("side ") + s->name + ": stored coverage differs from the replay";
        break;
      }
      if (mass < bound) {
        ok = false;
        detail = std::string("side ") + s->name + ": coverage " + dual(mass) + " below bound " +
                 dual(bound);
        break;
      }
      detail += std::string(detail.empty() ? "" : "; ") + s->name + " " + dual(mass) +
                " >= " + dual(bound);
    }
    if (oe_.levels.empty()) detail = "empty diagram";
    add("coverage", ok, detail);
  }

  // Check (4): A_n(d) = mu_b(L_n(d)) / mu_a(L_n(d)) moves by at most
  // 2 eps_n plus the packing slack of both levels between n and n + 1.
  void drift() {
    const std::size_t L = oe_.levels.size();
    auto ratio_at = [&](std::size_t n, std::size_t d) -> std::optional<Rational> {
      const Rational ma = a_.sys->mass(oe_.a.levels[n].labels[d]);
      const Rational mb = b_.sys->mass(oe_.b.levels[n].labels[d]);
      if (ma == 0 || mb == 0) return std::nullopt;
      return Rational(mb / ma);
    };
    auto slack = [&](std::size_t n) {
      return n < oe_.budgets.slack.size() ? oe_.budgets.slack[n] : Rational(0);
    };
    bool ok = true;
    std::string detail;
    for (std::size_t n = 0; n + 1 < L; ++n) {
      const DiagramLevel& next = oe_.levels[n + 1];
      VerificationReport::Drift dr;
      dr.side = 'a';
      dr.n = static_cast<int>(n + 1);
      dr.bound = exp_lower(2 * oe_.levels[n].eps) * (1 + slack(n)) * (1 + slack(n + 1)) - 1;
      dr.bound.canonicalize();
      Word worst_cell;
      for (std::size_t d = 0; d < next.nu[0].size(); ++d) {
        auto hi = ratio_at(n + 1, d);
        auto lo = ratio_at(n, static_cast<std::size_t>(next.g[0][d]));
        if (!hi || !lo) continue;
        const Rational x = excess(*hi, *lo);
        if (x > dr.excess) {
          dr.excess = x;
          worst_cell = common_prefix(oe_.a.levels[n + 1].labels[d].words);
        }
      }
      if (dr.excess > dr.bound && ok) {
        ok = false;
        detail = "level " + std::to_string(n + 1) + ": drift " + dual(dr.excess) +
                 " exceeds " + dual(dr.bound) + " on cylinder " + word_to_string(worst_cell);
      }
      rep_.drift.push_back(dr);
    }
    if (ok) detail = std::to_string(rep_.drift.size()) + " level transitions within bound";
    add("drift", ok, detail);
  }

  const FinitaryOE& oe_;
  VerificationReport rep_;
  Side a_{'a', &oe_.a, nullptr, {}};
  Side b_{'b', &oe_.b, nullptr, {}};
  ClopenSet matched_a_, matched_b_, cover_a_, cover_b_;
};

}  // namespace

bool VerificationReport::ok() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.ok; });
}

std::string VerificationReport::text() const {
  std::ostringstream out;
  for (const auto& c : checks)
    out << "check " << c.name << ": " << (c.ok ? "pass" : "FAIL") << " | " << c.detail << "\n";
  out << "coverage a: " << dual(coverage_a) << "\n";
  out << "coverage b: " << dual(coverage_b) << "\n";
  out << "matching deviation: " << dual(matching_deviation) << "\n";
  out << "worst |ratio - 1|: " << dual(worst_ratio) << "\n";
  for (const auto& d : drift)
    out << "drift side " << d.side << " level " << d.n << ": " << dual(d.excess) << " <= "
        << dual(d.bound) << "\n";
  out << "result: " << (ok() ? "pass" : "FAIL") << "\n";
  return out.str();
}

VerificationReport verify_oe(const FinitaryOE& oe) { return Verifier(oe).run(); }

}  // namespace foe
