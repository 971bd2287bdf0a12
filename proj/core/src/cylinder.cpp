#include "foe/cylinder.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "foe/errors.hpp"

namespace foe {

void LevelSpec::validate() const {
  if (block.empty()) throw PreconditionFailed("level spec: repeating block is empty");
  for (int s : prefix)
    if (s < 1) throw PreconditionFailed("level spec: alphabet size must be >= 1");
  bool nonatomic = false;
  for (int s : block) {
    if (s < 1) throw PreconditionFailed("level spec: alphabet size must be >= 1");
    nonatomic |= s >= 2;
  }
  if (!nonatomic)
    throw PreconditionFailed("level spec: repeating block needs a size >= 2");
  if (depth_max < prefix_length() + block_length())
    throw PreconditionFailed("level spec: depth_max shorter than prefix + block");
}

bool is_prefix(const Word& p, const Word& w) {
  return p.size() <= w.size() && std::equal(p.begin(), p.end(), w.begin());
}

std::string word_to_string(const Word& w) {
  if (w.empty()) return ".";
  std::string out;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(w[i]);
  }
  return out;
}

Word parse_word(const std::string& text, int line) {
  if (text == ".") return {};
  Word w;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos)
      throw ParseError("malformed word '" + text + "'", line);
    w.push_back(std::stoi(item));
  }
  if (w.empty()) throw ParseError("malformed word '" + text + "'", line);
  return w;
}

Space::Space(LevelSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

bool Space::valid(const Word& w) const {
  if (static_cast<int>(w.size()) > spec_.depth_max) return false;
  for (std::size_t j = 0; j < w.size(); ++j)
    if (w[j] < 0 || w[j] >= size_at(static_cast<int>(j))) return false;
  return true;
}

void Space::check(const Word& w) const {
  if (static_cast<int>(w.size()) > spec_.depth_max)
    throw DepthExceeded("word " + word_to_string(w) + " exceeds depth_max " +
                        std::to_string(spec_.depth_max));
  if (!valid(w)) throw PreconditionFailed("letter out of range in " + word_to_string(w));
}

ClopenSet Space::canonicalize(std::vector<Word> words) const {
  for (const auto& w : words) check(w);
  std::sort(words.begin(), words.end());
  words.erase(std::unique(words.begin(), words.end()), words.end());
  // Prefix absorption: extensions of a kept word follow it contiguously.
  std::vector<Word> kept;
  for (auto& w : words)
    if (kept.empty() || !is_prefix(kept.back(), w)) kept.push_back(std::move(w));
  // Complete sibling families collapse to their parent, deepest first.
  std::set<Word> s(kept.begin(), kept.end());
  std::size_t maxlen = 0;
  for (const auto& w : s) maxlen = std::max(maxlen, w.size());
  for (std::size_t len = maxlen; len >= 1; --len) {
    std::map<Word, int> parents;
    for (const auto& w : s)
      if (w.size() == len) ++parents[Word(w.begin(), w.end() - 1)];
    for (const auto& [parent, count] : parents) {
      if (count != size_at(static_cast<int>(len) - 1)) continue;
      Word child = parent;
      child.push_back(0);
      for (int c = 0; c < count; ++c) {
        child.back() = c;
        s.erase(child);
      }
      s.insert(parent);
    }
  }
  return ClopenSet{std::vector<Word>(s.begin(), s.end())};
}

ClopenSet Space::unite(const ClopenSet& a, const ClopenSet& b) const {
  std::vector<Word> all = a.words;
  all.insert(all.end(), b.words.begin(), b.words.end());
  return canonicalize(std::move(all));
}

namespace {

// Sorted antichain: the only candidate prefix is the greatest word <= w.
bool has_prefix_in(const std::vector<Word>& sorted, const Word& w) {
  auto it = std::upper_bound(sorted.begin(), sorted.end(), w);
  return it != sorted.begin() && is_prefix(*std::prev(it), w);
}

}  // namespace

ClopenSet Space::intersect(const ClopenSet& a, const ClopenSet& b) const {
  std::vector<Word> out;
  for (const auto& w : a.words) {
    if (has_prefix_in(b.words, w)) {
      out.push_back(w);
      continue;
    }
    for (auto it = std::lower_bound(b.words.begin(), b.words.end(), w);
         it != b.words.end() && is_prefix(w, *it); ++it)
      out.push_back(*it);
  }
  return canonicalize(std::move(out));
}

void Space::complement_rec(Word& prefix, std::vector<Word>::const_iterator lo,
                           std::vector<Word>::const_iterator hi,
                           std::vector<Word>& out) const {
  if (lo == hi) {
    out.push_back(prefix);
    return;
  }
  if (*lo == prefix) return;
  const std::size_t pos = prefix.size();
  const int n = size_at(static_cast<int>(pos));
  auto cur = lo;
  for (int c = 0; c < n; ++c) {
    auto next = std::partition_point(cur, hi, [&](const Word& w) { return w[pos] <= c; });
    prefix.push_back(c);
    complement_rec(prefix, cur, next, out);
    prefix.pop_back();
    cur = next;
  }
}

ClopenSet Space::complement(const ClopenSet& a) const {
  std::vector<Word> out;
  Word prefix;
  complement_rec(prefix, a.words.begin(), a.words.end(), out);
  return canonicalize(std::move(out));
}

ClopenSet Space::subtract(const ClopenSet& a, const ClopenSet& b) const {
  if (b.empty() || a.empty()) return a;
  return intersect(a, complement(b));
}

std::vector<Word> Space::refine_words(const std::vector<Word>& words, int d) const {
  if (d > spec_.depth_max)
    throw DepthExceeded("refinement to depth " + std::to_string(d) + " exceeds depth_max " +
                        std::to_string(spec_.depth_max));
  std::vector<Word> out;
  std::vector<Word> stack;
  for (const auto& w : words) {
    stack.push_back(w);
    while (!stack.empty()) {
      Word cur = std::move(stack.back());
      stack.pop_back();
      if (static_cast<int>(cur.size()) >= d) {
        out.push_back(std::move(cur));
        continue;
      }
      const int n = size_at(static_cast<int>(cur.size()));
      for (int c = n - 1; c >= 0; --c) {
        Word child = cur;
        child.push_back(c);
        stack.push_back(std::move(child));
      }
    }
  }
  return out;
}

std::vector<Word> Space::refine_to_depth(const ClopenSet& a, int d) const {
  return refine_words(a.words, d);
}

bool Space::is_subset(const ClopenSet& a, const ClopenSet& b) const {
  for (const auto& w : a.words)
    if (relate(b, w) != Relation::Inside) return false;
  return true;
}

bool Space::disjoint(const ClopenSet& a, const ClopenSet& b) const {
  for (const auto& w : a.words)
    if (relate(b, w) != Relation::Disjoint) return false;
  return true;
}

Relation Space::relate(const ClopenSet& a, const Word& w) const {
  if (has_prefix_in(a.words, w)) return Relation::Inside;
  auto it = std::lower_bound(a.words.begin(), a.words.end(), w);
  if (it != a.words.end() && is_prefix(w, *it)) return Relation::Partial;
  return Relation::Disjoint;
}

std::vector<Word> Space::children(const Word& w) const {
  std::vector<Word> out;
  const int n = size_at(static_cast<int>(w.size()));
  for (int c = 0; c < n; ++c) {
    Word child = w;
    child.push_back(c);
    out.push_back(std::move(child));
  }
  return out;
}

std::vector<Word> Space::all_words(int depth) const { return refine_words({Word{}}, depth); }

std::int64_t Space::count_words(int depth) const {
  std::int64_t n = 1;
  for (int j = 0; j < depth; ++j) {
    if (n > std::numeric_limits<std::int64_t>::max() / size_at(j))
      return std::numeric_limits<std::int64_t>::max();
    n *= size_at(j);
  }
  return n;
}

int Space::max_length(const ClopenSet& a) const {
  std::size_t m = 0;
  for (const auto& w : a.words) m = std::max(m, w.size());
  return static_cast<int>(m);
}

std::int64_t Space::value(const Word& w) const {
  __int128 v = 0, radix = 1;
  for (std::size_t j = 0; j < w.size(); ++j) {
    v += radix * w[j];
    radix *= size_at(static_cast<int>(j));
    if (v > std::numeric_limits<std::int64_t>::max() ||
        radix > (static_cast<__int128>(1) << 100))
      throw Error("mixed-radix value overflow for " + word_to_string(w));
  }
  return static_cast<std::int64_t>(v);
}

Word Space::word_of_value(std::int64_t v, int depth) const {
  Word w(depth);
  for (int j = 0; j < depth; ++j) {
    const int n = size_at(j);
    w[j] = static_cast<int>(v % n);
    v /= n;
  }
  return w;
}

std::optional<Word> Space::translate(const Word& w, std::int64_t n, std::size_t len) const {
  Word out = w;
  __int128 carry = n;
  for (std::size_t j = 0; j < len && carry != 0; ++j) {
    const __int128 size = size_at(static_cast<int>(j));
    __int128 s = out[j] + carry;
    __int128 q = s / size, r = s % size;
    if (r < 0) {
      r += size;
      --q;
    }
    out[j] = static_cast<int>(r);
    carry = q;
  }
  if (carry != 0) return std::nullopt;
  return out;
}

int Space::depth_for_diameter(const Rational& eps) {
  int k = 0;
  Rational scale(1);
  while (scale > eps) {
    scale /= 2;
    ++k;
  }
  return k;
}

// ---------------------------------------------------------------- measures

int Measure::density_depth() const {
  std::size_t d = 0;
  for (const auto& [w, v] : density) d = std::max(d, w.size());
  return static_cast<int>(d);
}

std::optional<Rational> Measure::density_on(const Word& w) const {
  if (density.empty()) return Rational(1);
  Word p;
  for (std::size_t len = 0; len <= w.size(); ++len) {
    auto it = density.find(p);
    if (it != density.end()) return it->second;
    if (len < w.size()) p.push_back(w[len]);
  }
  auto it = density.lower_bound(w);
  if (it != density.end() && is_prefix(w, it->first)) return std::nullopt;
  return Rational(1);
}

Measure uniform_measure(const LevelSpec& spec) {
  Measure m;
  for (int s : spec.prefix) m.prefix_weights.emplace_back(s, Rational(1, s));
  for (int s : spec.block) m.block_weights.emplace_back(s, Rational(1, s));
  return m;
}

Measure bernoulli_measure(const LevelSpec& spec, const std::vector<Rational>& weights) {
  Measure m;
  for (int s : spec.prefix) {
    if (s != static_cast<int>(weights.size()))
      throw PreconditionFailed("bernoulli measure: size mismatch");
    m.prefix_weights.push_back(weights);
  }
  for (int s : spec.block) {
    if (s != static_cast<int>(weights.size()))
      throw PreconditionFailed("bernoulli measure: size mismatch");
    m.block_weights.push_back(weights);
  }
  return m;
}

Rational cell_mass(const Space& space, const Measure& m, const Word& w) {
  auto d = m.density_on(w);
  if (!d) {
    Rational sum(0);
    for (const auto& c : space.children(w)) sum += cell_mass(space, m, c);
    return sum;
  }
  Rational mass = m.normalization * *d;
  for (std::size_t j = 0; j < w.size(); ++j) mass *= m.weight(static_cast<int>(j), w[j]);
  return mass;
}

Rational measure_of(const Space& space, const Measure& m, const ClopenSet& a) {
  Rational sum(0);
  for (const auto& w : a.words) sum += cell_mass(space, m, w);
  return sum;
}

void normalize(const Space& space, Measure& m) {
  m.normalization = 1;
  Rational total = cell_mass(space, m, Word{});
  m.normalization = 1 / total;
}

void validate_measure(const Space& space, const Measure& m) {
  const auto& spec = space.spec();
  auto check_levels = [&](const std::vector<std::vector<Rational>>& ws,
                          const std::vector<int>& sizes, bool positive, const char* what) {
    if (ws.size() != sizes.size())
      throw PreconditionFailed(std::string("measure: ") + what + " weight count mismatch");
    for (std::size_t j = 0; j < ws.size(); ++j) {
      if (static_cast<int>(ws[j].size()) != sizes[j])
        throw PreconditionFailed(std::string("measure: ") + what + " level " +
                                 std::to_string(j) + " has wrong alphabet size");
      Rational sum(0);
      for (const auto& w : ws[j]) {
        if (w < 0 || (positive && w == 0))
          throw PreconditionFailed(std::string("measure: ") + what + " level " +
                                   std::to_string(j) + " has a non-positive weight");
        sum += w;
      }
      if (sum != 1)
        throw PreconditionFailed(std::string("measure: ") + what + " level " +
                                 std::to_string(j) + " weights do not sum to 1");
    }
  };
  check_levels(m.prefix_weights, spec.prefix, false, "prefix");
  check_levels(m.block_weights, spec.block, true, "block");
  const Word* prev = nullptr;
  for (const auto& [w, v] : m.density) {
    space.check(w);
    if (v <= 0) throw PreconditionFailed("measure: density must be positive");
    if (prev && is_prefix(*prev, w))
      throw PreconditionFailed("measure: density keys must form an antichain");
    prev = &w;
  }
  if (m.normalization <= 0) throw PreconditionFailed("measure: normalization must be positive");
  if (cell_mass(space, m, Word{}) != 1)
    throw PreconditionFailed("measure: total mass is not 1");
}

// ---------------------------------------------------------------- packing

namespace {

struct CellClass {
  Rational mass;
  std::vector<std::size_t> cells;  // indices into the cell list, lexicographic
};

Rational rational_gcd(const std::vector<CellClass>& classes) {
  mpz_class num(0), den(1);
  for (const auto& c : classes) {
    mpz_gcd(num.get_mpz_t(), num.get_mpz_t(), c.mass.get_num_mpz_t());
    mpz_lcm(den.get_mpz_t(), den.get_mpz_t(), c.mass.get_den_mpz_t());
  }
  Rational g(num, den);
  g.canonicalize();
  return g;
}

bool is_integer_multiple(const Rational& x, const Rational& g) {
  Rational q = x / g;
  return q.get_den() == 1;
}

/// Fills bins one at a time (largest target first) with counts taken from
/// mass classes, largest mass first, backtracking on failure.
class ExactPacker {
 public:
  ExactPacker(const std::vector<CellClass>& classes, std::vector<Rational> targets,
              std::int64_t budget)
      : classes_(classes), targets_(std::move(targets)), budget_(budget) {
    avail_.resize(classes_.size());
    for (std::size_t i = 0; i < classes_.size(); ++i)
      avail_[i] = static_cast<std::int64_t>(classes_[i].cells.size());
    order_.resize(targets_.size());
    std::iota(order_.begin(), order_.end(), 0);
    std::stable_sort(order_.begin(), order_.end(),
                     [&](std::size_t a, std::size_t b) { return targets_[a] > targets_[b]; });
    counts_.assign(targets_.size(), std::vector<std::int64_t>(classes_.size(), 0));
  }

  bool run() { return fill_bin(0); }
  bool exhausted() const { return budget_ <= 0; }
  const std::vector<std::vector<std::int64_t>>& counts() const { return counts_; }

 private:
  bool fill_bin(std::size_t k) {
    if (k == order_.size()) return true;
    const std::size_t bin = order_[k];
    if (k + 1 == order_.size()) {
      // Last bin takes everything left; sums agree by construction.
      for (std::size_t i = 0; i < classes_.size(); ++i) counts_[bin][i] = avail_[i];
      Rational sum(0);
      for (std::size_t i = 0; i < classes_.size(); ++i) sum += classes_[i].mass * avail_[i];
      if (sum != targets_[bin]) return false;
      return true;
    }
    return choose(k, bin, 0, targets_[bin]);
  }

  bool choose(std::size_t k, std::size_t bin, std::size_t cls, const Rational& rem) {
    if (--budget_ <= 0) return false;
    if (rem == 0) {
      for (std::size_t i = cls; i < classes_.size(); ++i) counts_[bin][i] = 0;
      return fill_bin(k + 1);
    }
    if (cls == classes_.size()) return false;
    Rational reachable(0);
    for (std::size_t i = cls; i < classes_.size(); ++i) reachable += classes_[i].mass * avail_[i];
    if (reachable < rem) return false;
    const Rational& mass = classes_[cls].mass;
    mpz_class fit = rem.get_num() * mass.get_den() / (rem.get_den() * mass.get_num());
    std::int64_t hi = std::min<std::int64_t>(avail_[cls], fit.fits_slong_p() ? fit.get_si()
                                                                           : avail_[cls]);
    for (std::int64_t c = hi; c >= 0; --c) {
      counts_[bin][cls] = c;
      avail_[cls] -= c;
      bool ok = choose(k, bin, cls + 1, rem - mass * c);
      avail_[cls] += c;
      if (ok) return true;
      if (budget_ <= 0) return false;
    }
    counts_[bin][cls] = 0;
    return false;
  }

  const std::vector<CellClass>& classes_;
  std::vector<Rational> targets_;
  std::int64_t budget_;
  std::vector<std::int64_t> avail_;
  std::vector<std::size_t> order_;
  std::vector<std::vector<std::int64_t>> counts_;
};

std::vector<CellClass> classify_cells(const Space& space, const Measure& m,
                                      const std::vector<Word>& cells) {
  std::map<Rational, std::vector<std::size_t>, std::greater<>> by_mass;
  for (std::size_t i = 0; i < cells.size(); ++i)
    by_mass[cell_mass(space, m, cells[i])].push_back(i);
  std::vector<CellClass> classes;
  for (auto& [mass, idx] : by_mass) classes.push_back({mass, std::move(idx)});
  return classes;
}

int start_depth(const Space& space, const Measure& m, const ClopenSet& a) {
  (void)m;
  return std::max(space.max_length(a), 0);
}

std::optional<std::vector<ClopenSet>> try_exact(const Space& space, const Measure& m,
                                                const std::vector<Word>& cells,
                                                const std::vector<Rational>& targets,
                                                const PackingOptions& opts) {
  auto classes = classify_cells(space, m, cells);
  const Rational g = rational_gcd(classes);
  for (const auto& t : targets)
    if (!is_integer_multiple(t, g)) return std::nullopt;
  ExactPacker packer(classes, targets, opts.node_budget);
  if (!packer.run()) return std::nullopt;
  std::vector<ClopenSet> parts;
  std::vector<std::size_t> next(classes.size(), 0);
  for (std::size_t b = 0; b < targets.size(); ++b) {
    std::vector<Word> words;
    for (std::size_t i = 0; i < classes.size(); ++i)
      for (std::int64_t c = 0; c < packer.counts()[b][i]; ++c)
        words.push_back(cells[classes[i].cells[next[i]++]]);
    parts.push_back(space.canonicalize(std::move(words)));
  }
  return parts;
}

void check_targets(const std::vector<Rational>& targets) {
  for (const auto& t : targets)
    if (t <= 0) throw PreconditionFailed("partition: targets must be positive");
}

}  // namespace

ApproxPartition partition_exact_remainder(const Space& space, const Measure& m,
                                          const ClopenSet& a,
                                          const std::vector<Rational>& targets,
                                          const PackingOptions& opts) {
  check_targets(targets);
  const Rational total = measure_of(space, m, a);
  Rational sum(0);
  for (const auto& t : targets) sum += t;
  if (sum > total) throw TargetSumMismatch("partition: targets exceed the measure of the set");
  std::vector<Rational> bins = targets;
  const bool remainder = sum < total;
  if (remainder) bins.push_back(total - sum);
  if (targets.empty()) return {{}, a};
  for (int d = start_depth(space, m, a); d <= space.depth_max(); ++d) {
    // Cells are enumerated lazily; stop once the refinement is too large.
    std::int64_t estimate = 0;
    for (const auto& w : a.words) {
      std::int64_t per = 1;
      for (int j = static_cast<int>(w.size()); j < d && per <= opts.max_cells; ++j)
        per *= space.size_at(j);
      estimate += per;
      if (estimate > opts.max_cells) break;
    }
    if (estimate > opts.max_cells) break;
    auto cells = space.refine_to_depth(a, d);
    if (auto parts = try_exact(space, m, cells, bins, opts)) {
      ApproxPartition out;
      out.defect = remainder ? parts->back() : space.empty();
      if (remainder) parts->pop_back();
      out.parts = std::move(*parts);
      return out;
    }
  }
  throw ExactPackingUnavailable("no exact packing within depth_max / cell budget");
}

std::vector<ClopenSet> partition_exact(const Space& space, const Measure& m, const ClopenSet& a,
                                       const std::vector<Rational>& targets,
                                       const PackingOptions& opts) {
  check_targets(targets);
  Rational sum(0);
  for (const auto& t : targets) sum += t;
  if (sum != measure_of(space, m, a))
    throw TargetSumMismatch("partition: targets do not sum to the measure of the set");
  return partition_exact_remainder(space, m, a, targets, opts).parts;
}

ApproxPartition partition_approx(const Space& space, const Measure& m, const ClopenSet& a,
                                 const std::vector<Rational>& targets, const Rational& tol,
                                 const PackingOptions& opts) {
  check_targets(targets);
  if (tol < 0) throw PreconditionFailed("partition: tolerance must be non-negative");
  const Rational total = measure_of(space, m, a);
  Rational sum(0);
  for (const auto& t : targets) sum += t;
  if (sum > total) throw TargetSumMismatch("partition: targets exceed the measure of the set");

  PackingOptions quick = opts;
  quick.node_budget = std::min<std::int64_t>(opts.node_budget, 20000);
  try {
    return partition_exact_remainder(space, m, a, targets, quick);
  } catch (const ExactPackingUnavailable&) {
    if (tol == 0) throw ToleranceUnreachable("exact packing unavailable and tolerance is 0");
  }

  for (int d = start_depth(space, m, a); d <= space.depth_max(); ++d) {
    std::int64_t estimate = 0;
    for (const auto& w : a.words) {
      std::int64_t per = 1;
      for (int j = static_cast<int>(w.size()); j < d && per <= opts.max_cells; ++j)
        per *= space.size_at(j);
      estimate += per;
      if (estimate > opts.max_cells) break;
    }
    if (estimate > opts.max_cells) break;
    auto cells = space.refine_to_depth(a, d);
    std::vector<std::pair<Rational, std::size_t>> order;
    for (std::size_t i = 0; i < cells.size(); ++i)
      order.emplace_back(cell_mass(space, m, cells[i]), i);
    std::stable_sort(order.begin(), order.end(),
                     [](const auto& x, const auto& y) { return x.first > y.first; });
    std::vector<Rational> deficit = targets;
    std::vector<std::vector<Word>> bins(targets.size());
    std::vector<Word> rest;
    for (const auto& [mass, idx] : order) {
      std::size_t best = targets.size();
      for (std::size_t b = 0; b < targets.size(); ++b)
        if (mass <= deficit[b] && (best == targets.size() || deficit[b] > deficit[best]))
          best = b;
      if (best == targets.size()) {
        rest.push_back(cells[idx]);
      } else {
        deficit[best] -= mass;
        bins[best].push_back(cells[idx]);
      }
    }
    bool ok = true;
    for (const auto& dft : deficit) ok &= dft <= tol;
    if (!ok) continue;
    ApproxPartition out;
    for (auto& b : bins) out.parts.push_back(space.canonicalize(std::move(b)));
    out.defect = space.canonicalize(std::move(rest));
    return out;
  }
  throw ToleranceUnreachable("tolerance not reachable within depth_max / cell budget");
}

}  // namespace foe
