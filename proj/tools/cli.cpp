#include "cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>

#include "foe/diagram.hpp"
#include "foe/errors.hpp"
#include "foe/typing.hpp"

namespace foe::cli {

namespace {

// Always "p/q", even for integers.
std::string pq(const Rational& q) {
  return q.get_num().get_str() + "/" + q.get_den().get_str();
}

std::string dual(const Rational& q) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", approx(q));
  return pq(q) + " (~" + buf + ")";
}

// Failure with an exit code and a message that already names its location.
struct Failure {
  int code;
  std::string message;
};

std::vector<Rational> parse_list(const std::string& flag, const std::string& text) {
  std::vector<Rational> out;
  std::stringstream ss(text);
  std::string item;
  int k = 0;
  while (std::getline(ss, item, ',')) {
    ++k;
    try {
      out.push_back(parse_rational(item));
    } catch (const ParseError& e) {
      throw Failure{kParse, flag + " item " + std::to_string(k) + ": " + e.what()};
    }
  }
  if (out.empty()) throw Failure{kParse, flag + ": empty list"};
  return out;
}

Rational parse_one(const std::string& flag, const std::string& text) {
  try {
    return parse_rational(text);
  } catch (const ParseError& e) {
    throw Failure{kParse, flag + ": " + e.what()};
  }
}

OdometerSystem load(const std::string& path) {
  try {
    return OdometerSystem(load_system_config(path));
  } catch (const ParseError& e) {
    throw Failure{kParse, path + ": " + e.what()};
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Failure{kParse, path + ": cannot open"};
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out || !(out << text)) throw Failure{kError, path + ": cannot write"};
}

void print_witness(std::ostream& out, const Witness& w) {
  out << "  witness ratio " << dual(w.ratio) << " power " << w.power << " from";
  for (const auto& x : w.a.words) out << ' ' << word_to_string(x);
  out << " to";
  for (const auto& x : w.b.words) out << ' ' << word_to_string(x);
  out << "\n";
}

struct Flags {
  std::string system, system_b, artifact, out;
  std::string eps, etas, budget, mode, word, lambda = "1/2", alpha = "1/3";
  int depth = -1;
  std::int64_t power = 0;
  std::uint64_t seed = 0;
};

int cmd_classify(const Flags& f, std::ostream& out) {
  const auto sys = load(f.system);
  const TypeLabel t = classify(sys);
  out << "type: " << type_name(t) << "\n";
  for (const auto& w : t.witnesses) print_witness(out, w);
  out << "seed: " << f.seed << "\n";
  return t.kind == TypeKind::Unknown ? kUnknown : kOk;
}

int cmd_special_measure(const Flags& f, std::ostream& out) {
  const auto sys = load(f.system);
  const auto etas = parse_list("--etas", f.etas.empty() ? "1/2,1/4,1/8,1/16" : f.etas);
  const int depth = f.depth < 0 ? 8 : f.depth;
  const auto tr = special_measure(sys, etas, static_cast<int>(etas.size()));
  const OdometerSystem special(sys.levels(), tr.final_measure);
  const SpecialCheck check = check_special(special, tr.lambda, depth);
  out << "lambda: " << dual(tr.lambda) << "\n";
  for (std::size_t i = 0; i < tr.stages.size(); ++i) {
    const auto& st = tr.stages[i];
    out << "stage " << i + 1 << ": eta " << dual(st.eta) << ", factors within " << dual(st.factor_bound)
        << ", values within " << dual(st.value_bound) << ", bounds "
        << (st.bounds_hold ? "hold" : "FAIL") << "\n";
  }
  out << "snapped: " << tr.snapped << "\n";
  out << "check_special depth " << depth << ": " << (check.ok ? "pass" : "FAIL") << "\n";
  for (const auto& [w, v] : check.violations)
    out << "  violation " << word_to_string(w) << " " << dual(v) << "\n";
  out << "seed: " << f.seed << "\n";
  if (!f.out.empty()) write_file(f.out, serialize_system_config(special.config()));
  return check.ok ? kOk : kCheckFailed;
}

int cmd_build_oe(const Flags& f, std::ostream& out, std::ostream& err) {
  const auto a = load(f.system), b = load(f.system_b);
  const TypeLabel ta = classify(a), tb = classify(b);
  DiagramOptions opts;
  opts.seed = f.seed;
  opts.depth = f.depth < 0 ? 4 : f.depth;
  std::string mode = f.mode;
  if (mode.empty()) mode = ta.kind == TypeKind::TypeIII1Candidate ? "iii1" : "lambda";
  if (mode == "lambda") {
    if (ta.kind != TypeKind::TypeIIILambda || !ta.same_type(tb))
      throw Failure{kMismatch, "lambda mode needs two III_lambda systems with one lambda, got " +
                                   type_name(ta) + " and " + type_name(tb)};
    opts.lambda = ta.lambda;
    for (const auto* s : {&a, &b}) {
      const int d = s->working_depth() + s->levels().block_length();
      if (!check_special(*s, ta.lambda, d).ok)
        throw Failure{kMismatch, "lambda mode needs special measures; run special-measure first"};
    }
  } else if (mode == "iii1") {
    opts.mode = DiagramMode::III1;
    if (ta.kind != TypeKind::TypeIII1Candidate || tb.kind != TypeKind::TypeIII1Candidate)
      throw Failure{kMismatch, "iii1 mode needs two III_1 candidates, got " + type_name(ta) +
                                   " and " + type_name(tb)};
  } else {
    throw Failure{kParse, "--mode: expected lambda or iii1, got '" + mode + "'"};
  }
  if (!f.eps.empty()) opts.eps = parse_list("--eps", f.eps);
  if (!f.budget.empty()) opts.packing_tol = parse_one("--budget", f.budget);
  if (opts.depth == 0) err << "warning: depth 0 gives an empty diagram\n";

  const FinitaryOE oe = build_diagram(a, b, opts);
  const std::string text = write_artifact(oe);
  if (!f.out.empty()) write_file(f.out, text);
  const VerificationReport rep = verify_oe(oe);

  Rational two_eps(0);
  for (const auto& l : oe.levels)
    if (!l.closing) two_eps += 2 * l.eps;
  const Budgets& bu = oe.budgets;
  out << "mode: " << mode << "\n";
  out << "depth: " << oe.depth << "\n";
  out << "seed: " << oe.seed << "\n";
  out << "pairs: " << oe.pairs.size() << "\n";
  out << "sum 2 eps_n: " << dual(two_eps) << "\n";
  for (auto [side, cov, budget] :
       {std::tuple{'a', oe.coverage_mass_a, Rational(bu.defect_a + bu.edge_a + bu.packing_a + bu.matching)},
        std::tuple{'b', oe.coverage_mass_b, Rational(bu.defect_b + bu.edge_b + bu.packing_b + bu.matching)}})
    out << "coverage " << side << ": " << dual(cov) << " >= 1 - " << dual(two_eps) << " - "
        << dual(budget) << "\n";
  out << "budget matching: " << dual(bu.matching) << "\n";
  out << "budget ratio: " << dual(bu.ratio) << "\n";
  out << "budget defect: a " << dual(bu.defect_a) << ", b " << dual(bu.defect_b) << "\n";
  out << "budget edge: a " << dual(bu.edge_a) << ", b " << dual(bu.edge_b) << "\n";
  out << "verify preview: " << (rep.ok() ? "pass" : "FAIL") << "\n";
  if (!f.out.empty()) out << "artifact: " << f.out << "\n";
  return rep.ok() ? kOk : kCheckFailed;
}

int cmd_verify_oe(const Flags& f, std::ostream& out) {
  const std::string text = read_file(f.artifact);
  FinitaryOE oe;
  try {
    oe = read_artifact(text);
  } catch (const ParseError& e) {
    throw Failure{kParse, f.artifact + ": " + e.what()};
  }
  const VerificationReport rep = verify_oe(oe);
  out << "seed: " << oe.seed << "\n" << rep.text();
  return rep.ok() ? kOk : kCheckFailed;
}

int cmd_example_1_6(const Flags& f, std::ostream& out) {
  const Rational lambda = parse_one("--lambda", f.lambda), alpha = parse_one("--alpha", f.alpha);
  const int depth = f.depth < 0 ? 6 : f.depth;
  const Example16Report rep = example_1_6(lambda, alpha, depth);
  out << "lambda: " << dual(rep.lambda) << "\n";
  out << "alpha: " << dual(rep.alpha) << "\n";
  out << "depth: " << depth << "\n";
  out << "induced type: " << type_name(rep.induced_type) << "\n";
  out << "witness log lambda: " << (rep.lambda_witness ? "found" : "missing") << "\n";
  if (rep.lambda_witness) print_witness(out, *rep.lambda_witness);
  out << "witness log alpha: " << (rep.alpha_witness ? "found" : "missing") << "\n";
  if (rep.alpha_witness) print_witness(out, *rep.alpha_witness);
  out << "alpha is a power of lambda: " << (rep.alpha_power_of_lambda ? "yes" : "no") << "\n";
  out << "verdict: "
      << (rep.obstruction ? "T and T_A are not almost continuously orbit equivalent"
                          : "no r_top obstruction")
      << "\n";
  for (const auto& n : rep.notes) out << "note: " << n << "\n";
  out << "seed: " << f.seed << "\n";
  return kOk;
}

int cmd_cocycle(const Flags& f, std::ostream& out) {
  const auto sys = load(f.system);
  Word w;
  try {
    w = parse_word(f.word);
  } catch (const ParseError& e) {
    throw Failure{kParse, std::string("--word: ") + e.what()};
  }
  if (!sys.space().valid(w)) throw Failure{kParse, "--word: letter out of range"};
  const CocycleValue v = rn_derivative(sys, w, f.power);
  out << "ratio: " << dual(v.ratio) << "\n";
  out << "on cylinder: " << word_to_string(v.word) << "\n";
  out << "seed: " << f.seed << "\n";
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Finitary orbit equivalence of odometers", "foe"};
  app.require_subcommand(1);
  Flags f;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--seed", f.seed, "Recorded in every output (default 0)");
    sub->add_option("--out", f.out, "Output file");
  };
  auto* classify_cmd = app.add_subcommand("classify", "Krieger type of a system");
  classify_cmd->add_option("system", f.system, "System file")->required();
  common(classify_cmd);

  auto* special = app.add_subcommand("special-measure", "Equivalent measure with values in lambda^Z");
  special->add_option("system", f.system, "System file")->required();
  special->add_option("--etas", f.etas, "Stage tolerances, e.g. 1/2,1/4,1/8,1/16");
  special->add_option("--depth", f.depth, "Audit depth of the final check (default 8)");
  common(special);

  auto* build = app.add_subcommand("build-oe", "Build and preview a finitary orbit equivalence");
  build->add_option("system_a", f.system, "First system file")->required();
  build->add_option("system_b", f.system_b, "Second system file")->required();
  build->add_option("--depth", f.depth, "Levels to construct (default 4)");
  build->add_option("--eps", f.eps, "Per-level eps, e.g. 1/4,1/8 (default 2^-(n+1))");
  build->add_option("--budget", f.budget, "Relative packing tolerance (default 1/4096)");
  build->add_option("--mode", f.mode, "lambda or iii1 (default from the types)");
  common(build);

  auto* verify = app.add_subcommand("verify-oe", "Replay every claim of an artifact");
  verify->add_option("artifact", f.artifact, "Artifact file")->required();

  auto* ex = app.add_subcommand("example-1-6", "Induced-system obstruction example");
  ex->add_option("--lambda", f.lambda, "Default 1/2");
  ex->add_option("--alpha", f.alpha, "Default 1/3");
  ex->add_option("--depth", f.depth, "Truncation depth (default 6)");
  common(ex);

  auto* co = app.add_subcommand("cocycle", "Radon-Nikodym cocycle of T^power on a cylinder");
  co->add_option("system", f.system, "System file")->required();
  co->add_option("--word", f.word, "Cylinder, letters separated by ','")->required();
  co->add_option("--power", f.power, "Power of T")->required();
  common(co);

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "foe: " << e.what() << "\n";
    return kParse;
  }

  try {
    if (*classify_cmd) return cmd_classify(f, out);
    if (*special) return cmd_special_measure(f, out);
    if (*build) return cmd_build_oe(f, out, err);
    if (*verify) return cmd_verify_oe(f, out);
    if (*ex) return cmd_example_1_6(f, out);
    if (*co) return cmd_cocycle(f, out);
  } catch (const Failure& e) {
    err << "foe: " << e.message << "\n";
    return e.code;
  } catch (const ParseError& e) {
    err << "foe: " << e.what() << "\n";
    return kParse;
  } catch (const Error& e) {
    err << "foe: " << e.what() << "\n";
    return kError;
  }
  return kError;
}

}  // namespace foe::cli
