// One pass/fail line per acceptance criterion; exit status 0 iff all pass.

#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

#include "foe/diagram.hpp"
#include "foe/errors.hpp"
#include "foe/lattice.hpp"
#include "foe/typing.hpp"
#include "oracles.hpp"

using namespace foe;

namespace {

// Pinned parameters and limits.
constexpr int kCocycleTrials = 1000;
constexpr int kCocycleDepth = 16;
constexpr std::uint32_t kSeed = 20260101;
constexpr int kSpecialDepth = 8;
constexpr int kExampleDepth = 6;
constexpr int kDiagramDepth = 4;
const Rational kPackingTol(1, 4096);
const double kLimits[] = {5, 1, 1, 30, 5, 30, 120, 180, 10};

struct Outcome {
  bool ok = true;
  std::string detail;
};

OdometerSystem bernoulli(std::vector<Rational> w) {
  LevelSpec spec{{}, {static_cast<int>(w.size())}, 32};
  return OdometerSystem(spec, bernoulli_measure(spec, w));
}

OdometerSystem two_thirds() { return bernoulli({Rational(2, 3), Rational(1, 3)}); }
OdometerSystem ternary() { return bernoulli({Rational(4, 7), Rational(2, 7), Rational(1, 7)}); }

OdometerSystem alternating(bool swapped) {
  LevelSpec spec{{}, {2, 2}, 32};
  Measure m;
  m.block_weights = {{Rational(2, 3), Rational(1, 3)}, {Rational(3, 4), Rational(1, 4)}};
  if (swapped) std::swap(m.block_weights[0], m.block_weights[1]);
  return OdometerSystem(spec, m);
}

std::string dec(const Rational& q) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", approx(q));
  return buf;
}

Outcome cocycle_suite() {
  std::mt19937 rng(kSeed);
  const auto sys = two_thirds();
  const Space& space = sys.space();
  const auto weights = oracle::level_weights(sys.measure(), 32);
  int bad = 0;
  for (int t = 0; t < kCocycleTrials; ++t) {
    const int len = std::uniform_int_distribution<int>(1, kCocycleDepth)(rng);
    Word x(len);
    for (auto& c : x) c = std::uniform_int_distribution<int>(0, 1)(rng);
    const std::int64_t m = std::uniform_int_distribution<int>(-300, 300)(rng);
    const std::int64_t n = std::uniform_int_distribution<int>(-300, 300)(rng);
    const auto whole = rn_derivative(sys, x, m + n);
    const auto first = rn_derivative(sys, whole.word, n);
    const Word mid = *space.translate(first.word, n);
    const auto second = rn_derivative(sys, mid, m);
    if (whole.ratio != first.ratio * second.ratio) ++bad;
    // Independent product-formula value of the whole move.
    const auto sizes = oracle::sizes_of(sys.levels(), static_cast<int>(whole.word.size()));
    const auto moved = oracle::shift_word(sizes, whole.word, m + n);
    if (!moved || oracle::product_mass(weights, *moved) !=
                      whole.ratio * oracle::product_mass(weights, whole.word))
      ++bad;
  }
  return {bad == 0, std::to_string(kCocycleTrials) + " triples, " + std::to_string(bad) +
                        " violations"};
}

Outcome packing() {
  const auto sys = two_thirds();
  const Space& space = sys.space();
  const std::vector<Rational> targets{Rational(1, 3), Rational(2, 9), Rational(4, 9)};
  const auto parts = partition_exact(space, sys.measure(), space.full(), targets);
  bool ok = parts.size() == 3;
  ClopenSet all = space.empty();
  for (std::size_t i = 0; ok && i < 3; ++i) {
    ok = sys.mass(parts[i]) == targets[i] && space.disjoint(all, parts[i]);
    all = space.unite(all, parts[i]);
  }
  ok = ok && all == space.full();
  const auto uni = bernoulli({Rational(1, 2), Rational(1, 2)});
  bool refused = false;
  try {
    partition_exact(uni.space(), uni.measure(), uni.space().full(),
                    {Rational(1, 3), Rational(2, 3)});
  } catch (const ExactPackingUnavailable&) {
    refused = true;
  }
  return {ok && refused, std::string("three exact disjoint parts: ") + (ok ? "yes" : "no") +
                             ", uniform 1/3 refused: " + (refused ? "yes" : "no")};
}

Outcome castle() {
  const auto sys = two_thirds();
  const Space& space = sys.space();
  const Tower t = rokhlin_tower(sys, 5);
  bool ok = t.residual.empty() && sys.mass(t.residual) == 0 &&
            static_cast<int>(t.levels.size()) == t.height && t.height >= 6;
  ClopenSet all = space.empty();
  Rational sum(0);
  for (const auto& l : t.levels) {
    ok = ok && space.disjoint(all, l);
    all = space.unite(all, l);
    sum += sys.mass(l);
  }
  ok = ok && sum == 1 && all == space.full();
  return {ok, "height " + std::to_string(t.height) + ", residual mass " + to_string(sys.mass(t.residual))};
}

Outcome special() {
  SystemConfig c{LevelSpec{{}, {3}, 32}, {}};
  c.measure = bernoulli_measure(c.levels, {Rational(4, 7), Rational(2, 7), Rational(1, 7)});
  c.measure.density[{0}] = Rational(3, 2);
  normalize(Space(c.levels), c.measure);
  const OdometerSystem sys(c);
  const std::vector<Rational> etas{Rational(1, 2), Rational(1, 4), Rational(1, 8), Rational(1, 16)};
  const auto tr = special_measure(sys, etas, 4);
  const OdometerSystem out(sys.levels(), tr.final_measure);
  const bool checked = check_special(out, Rational(1, 2), kSpecialDepth).ok;
  bool stages = tr.stages.size() == 4;
  for (std::size_t i = 0; stages && i < tr.stages.size(); ++i)
    stages = tr.stages[i].bounds_hold && tr.stages[i].value_bound == 1 + 3 * etas[i];
  return {checked && stages, std::string("check_special at depth 8: ") + (checked ? "true" : "false") +
                                 ", stage bounds 3 eta_i: " + (stages ? "hold" : "violated")};
}

Outcome classification() {
  const auto b = classify(two_thirds());
  const auto u = classify(bernoulli({Rational(1, 2), Rational(1, 2)}));
  const auto a = classify(alternating(false));
  const auto alt = alternating(false);
  bool ok = b.kind == TypeKind::TypeIIILambda && b.lambda == Rational(1, 2) &&
            u.kind == TypeKind::MeasurePreserving && a.kind == TypeKind::TypeIII1Candidate &&
            a.witnesses.size() == 2;
  // Independent witnesses: each replays, and their ratios span a rank-2 lattice.
  if (ok) {
    for (const auto& w : a.witnesses) ok = ok && replay_witness(alt, w);
    ok = ok && lattice_rank(factor_all({a.witnesses[0].ratio, a.witnesses[1].ratio}).vectors) == 2;
  }
  return {ok, type_name(b) + "; " + type_name(u) + "; " + type_name(a) + " with " +
                  std::to_string(a.witnesses.size()) + " witnesses"};
}

Outcome example() {
  const auto rep = example_1_6(Rational(1, 2), Rational(1, 3), kExampleDepth);
  const bool ok = rep.induced_type.kind == TypeKind::TypeIIILambda &&
                  rep.induced_type.lambda == Rational(1, 2) && rep.lambda_witness &&
                  rep.alpha_witness && rep.alpha_witness->ratio == Rational(1, 3) &&
                  rep.obstruction;
  return {ok, "induced " + type_name(rep.induced_type) + ", witnesses for 1/2 and 1/3: " +
                  (rep.lambda_witness && rep.alpha_witness ? "found" : "missing") +
                  ", not almost continuously OE: " + (rep.obstruction ? "yes" : "no")};
}

const CheckResult* find_check(const VerificationReport& r, const std::string& name) {
  for (const auto& c : r.checks)
    if (c.name == name) return &c;
  return nullptr;
}

Outcome diagram_lambda(FinitaryOE& keep) {
  DiagramOptions o;
  o.depth = kDiagramDepth;
  o.packing_tol = kPackingTol;
  o.seed = kSeed;
  keep = build_diagram(two_thirds(), ternary(), o);
  const auto rep = verify_oe(keep);
  const bool ok = rep.ok() && find_check(rep, "coverage") && find_check(rep, "pairs") &&
                  find_check(rep, "cocycles") && find_check(rep, "lambda-powers");
  return {ok, std::string(rep.ok() ? "verified" : "FAILED") + ", coverage a " + dec(rep.coverage_a) +
                  " b " + dec(rep.coverage_b) + ", defect a " + dec(keep.budgets.defect_a) +
                  " b " + dec(keep.budgets.defect_b) + ", worst |ratio-1| " + dec(rep.worst_ratio) +
                  ", " + std::to_string(keep.pairs.size()) + " pairs"};
}

Outcome diagram_iii1() {
  DiagramOptions o;
  o.depth = kDiagramDepth;
  o.mode = DiagramMode::III1;
  o.packing_tol = kPackingTol;
  o.seed = kSeed;
  const auto oe = build_diagram(alternating(false), alternating(true), o);
  const auto rep = verify_oe(oe);
  bool ok = rep.ok() && find_check(rep, "drift") && find_check(rep, "cocycles");
  // Every constructed odd level transition is within its bound.
  int odd = 0;
  for (const auto& d : rep.drift)
    if (d.n % 2 == 1) {
      ++odd;
      ok = ok && d.excess <= d.bound;
    }
  ok = ok && odd == (kDiagramDepth + 1) / 2;
  std::string worst;
  for (const auto& d : rep.drift) worst += (worst.empty() ? "" : " ") + dec(d.excess) + "<=" + dec(d.bound);
  return {ok, std::string(rep.ok() ? "verified" : "FAILED") + ", drift per level " + worst +
                  ", coverage a " + dec(rep.coverage_a) + " b " + dec(rep.coverage_b)};
}

// Runs a command, returning its exit status and stdout.
std::pair<int, std::string> run(const std::string& cmd) {
  std::string out;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return {-1, out};
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) out.append(buf, n);
  const int status = pclose(p);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

Outcome replay(const FinitaryOE& oe) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / ("foe-acceptance-" + std::to_string(::getpid()));
  fs::create_directories(dir);
  const fs::path good = dir / "oe.json", bad = dir / "oe-fault.json";
  const std::string text = write_artifact(oe);
  std::ofstream(good) << text;
  const std::string expected = "seed: " + std::to_string(oe.seed) + "\n" + verify_oe(oe).text();
  const auto [code, out] = run(std::string(FOE_CLI) + " verify-oe " + good.string() + " 2>/dev/null");
  const bool same = code == 0 && out == expected;

  // Single-field fault: pair 0's power on side a.
  auto j = nlohmann::json::parse(text);
  bool detected = false;
  std::string named;
  if (!j["pairs"].empty()) {
    j["pairs"][0]["power_a"] = j["pairs"][0]["power_a"].get<std::int64_t>() + 1;
    named = j["pairs"][0]["word_a"].get<std::string>();
    std::ofstream(bad) << j.dump(1) << "\n";
    const auto [fcode, fout] =
        run(std::string(FOE_CLI) + " verify-oe " + bad.string() + " 2>/dev/null");
    detected = fcode == 5 && fout.find("cylinder " + named) != std::string::npos;
  }
  fs::remove_all(dir);
  return {same && detected, std::string("fresh-process report ") + (same ? "identical" : "DIFFERS") +
                                ", fault on pair 0 " + (detected ? "detected at cylinder " + named : "MISSED")};
}

}  // namespace

int main() {
  FinitaryOE lambda_oe;
  const std::vector<std::function<Outcome()>> criteria = {
      cocycle_suite, packing, castle, special, classification, example,
      [&] { return diagram_lambda(lambda_oe); }, diagram_iii1, [&] { return replay(lambda_oe); }};
  bool all = true;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[k]();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < kLimits[k];
    const bool pass = o.ok && in_time;
    all = all && pass;
    char timing[64];
    std::snprintf(timing, sizeof timing, "%.2f s of %.0f s", secs, kLimits[k]);
    std::cout << "criterion " << k + 1 << ": " << (pass ? "PASS" : "FAIL") << " [" << timing
              << "] " << o.detail << std::endl;
  }
  return all ? 0 : 1;
}
