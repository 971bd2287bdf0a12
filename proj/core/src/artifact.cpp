#include <json.hpp>

#include <string>

#include "foe/diagram.hpp"
#include "foe/errors.hpp"

namespace foe {

namespace {

using nlohmann::json;

json words_json(const std::vector<Word>& ws) {
  json out = json::array();
  for (const auto& w : ws) out.push_back(word_to_string(w));
  return out;
}

json set_json(const ClopenSet& s) { return words_json(s.words); }

json map_json(const GroupoidMap& g) {
  json pieces = json::array();
  for (const auto& p : g.pieces) pieces.push_back({word_to_string(p.cylinder), p.power});
  return {{"pieces", pieces},
          {"domain", set_json(g.domain)},
          {"range", set_json(g.range)},
          {"defect", set_json(g.defect)},
          {"range_defect", set_json(g.range_defect)}};
}

json side_json(const OESide& s) {
  json levels = json::array();
  for (const auto& l : s.levels) {
    json maps = json::array(), labels = json::array();
    for (const auto& g : l.maps) maps.push_back(map_json(g));
    for (const auto& a : l.labels) labels.push_back(set_json(a));
    levels.push_back({{"maps", maps}, {"labels", labels}});
  }
  return {{"config", serialize_system_config(s.config)}, {"levels", levels}};
}

json rationals_json(const std::vector<Rational>& v) {
  json out = json::array();
  for (const auto& q : v) out.push_back(to_string(q));
  return out;
}

json entry_json(const CocycleEntry& e) {
  return {{"side", std::string(1, e.side)}, {"index", e.index},
          {"target", e.target},             {"label", e.label},
          {"cell", word_to_string(e.cell)}, {"other_power", e.other_power}};
}

template <class T>
T get(const json& j, const std::string& where) {
  try {
    return j.get<T>();
  } catch (const json::exception& e) {
    throw ParseError("artifact " + where + ": " + e.what(), 0);
  }
}

Rational rational_of(const json& j, const std::string& where) {
  try {
    return parse_rational(get<std::string>(j, where));
  } catch (const ParseError& e) {
    throw ParseError("artifact " + where + ": " + e.what(), 0);
  }
}

Word word_of(const json& j, const std::string& where) {
  try {
    return parse_word(get<std::string>(j, where));
  } catch (const ParseError& e) {
    throw ParseError("artifact " + where + ": " + e.what(), 0);
  }
}

ClopenSet set_of(const json& j, const std::string& where) {
  if (!j.is_array()) throw ParseError("artifact " + where + ": expected an array", 0);
  ClopenSet s;
  for (std::size_t k = 0; k < j.size(); ++k)
    s.words.push_back(word_of(j[k], where + "[" + std::to_string(k) + "]"));
  return s;
}

const json& field(const json& j, const std::string& key, const std::string& where) {
  if (!j.is_object() || !j.contains(key))
    throw ParseError("artifact " + where + ": missing field '" + key + "'", 0);
  return j.at(key);
}

const json& array_field(const json& j, const std::string& key, const std::string& where) {
  const json& a = field(j, key, where);
  if (!a.is_array()) throw ParseError("artifact " + where + "." + key + ": expected an array", 0);
  return a;
}

GroupoidMap map_of(const json& j, const std::string& where) {
  GroupoidMap g;
  const json& pieces = array_field(j, "pieces", where);
  for (std::size_t k = 0; k < pieces.size(); ++k) {
    const std::string w = where + ".pieces[" + std::to_string(k) + "]";
    if (!pieces[k].is_array() || pieces[k].size() != 2)
      throw ParseError("artifact " + w + ": expected [cylinder, power]", 0);
    g.pieces.push_back({word_of(pieces[k][0], w), get<std::int64_t>(pieces[k][1], w)});
  }
  g.domain = set_of(field(j, "domain", where), where + ".domain");
  g.range = set_of(field(j, "range", where), where + ".range");
  g.defect = set_of(field(j, "defect", where), where + ".defect");
  g.range_defect = set_of(field(j, "range_defect", where), where + ".range_defect");
  return g;
}

OESide side_of(const json& j, const std::string& where) {
  OESide s;
  try {
    s.config = parse_system_config(get<std::string>(field(j, "config", where), where + ".config"));
  } catch (const ParseError& e) {
    throw ParseError("artifact " + where + ".config: " + e.what(), 0);
  }
  const json& levels = array_field(j, "levels", where);
  for (std::size_t n = 0; n < levels.size(); ++n) {
    const std::string w = where + ".levels[" + std::to_string(n) + "]";
    SideLevel l;
    const json& maps = array_field(levels[n], "maps", w);
    for (std::size_t i = 0; i < maps.size(); ++i)
      l.maps.push_back(map_of(maps[i], w + ".maps[" + std::to_string(i) + "]"));
    const json& labels = array_field(levels[n], "labels", w);
    for (std::size_t d = 0; d < labels.size(); ++d)
      l.labels.push_back(set_of(labels[d], w + ".labels[" + std::to_string(d) + "]"));
    s.levels.push_back(std::move(l));
  }
  return s;
}

std::vector<Rational> rationals_of(const json& j, const std::string& where) {
  if (!j.is_array()) throw ParseError("artifact " + where + ": expected an array", 0);
  std::vector<Rational> out;
  for (std::size_t k = 0; k < j.size(); ++k)
    out.push_back(rational_of(j[k], where + "[" + std::to_string(k) + "]"));
  return out;
}

char side_char(const json& j, const std::string& where) {
  const auto s = get<std::string>(j, where);
  if (s != "a" && s != "b") throw ParseError("artifact " + where + ": side must be a or b", 0);
  return s[0];
}

CocycleEntry entry_of(const json& j, const std::string& where) {
  CocycleEntry e;
  e.side = side_char(field(j, "side", where), where + ".side");
  e.index = get<std::vector<int>>(field(j, "index", where), where + ".index");
  e.target = get<std::vector<int>>(field(j, "target", where), where + ".target");
  e.label = get<int>(field(j, "label", where), where + ".label");
  e.cell = word_of(field(j, "cell", where), where + ".cell");
  e.other_power = get<std::int64_t>(field(j, "other_power", where), where + ".other_power");
  return e;
}

}  // namespace

std::string write_artifact(const FinitaryOE& oe) {
  json levels = json::array();
  for (const auto& l : oe.levels) {
    json nu = json::array();
    for (const auto& row : l.nu) nu.push_back(rationals_json(row));
    levels.push_back({{"n", l.n},
                      {"r", l.r},
                      {"cell_depth", l.cell_depth},
                      {"eps", to_string(l.eps)},
                      {"leader", std::string(1, l.leader)},
                      {"closing", l.closing},
                      {"tower_bound_met", l.tower_bound_met},
                      {"g", l.g},
                      {"nu", nu}});
  }
  json pairs = json::array();
  for (const auto& p : oe.pairs)
    pairs.push_back({{"index", p.index},
                     {"label", p.label},
                     {"power_a", p.power_a},
                     {"power_b", p.power_b},
                     {"word_a", word_to_string(p.word_a)},
                     {"word_b", word_to_string(p.word_b)},
                     {"mass_a", to_string(p.mass_a)},
                     {"mass_b", to_string(p.mass_b)},
                     {"ratio", to_string(p.ratio)}});
  json n_table = json::array(), m_table = json::array();
  for (const auto& e : oe.n_table) n_table.push_back(entry_json(e));
  for (const auto& e : oe.m_table) m_table.push_back(entry_json(e));
  const Budgets& b = oe.budgets;
  json budgets = {{"matching", to_string(b.matching)}, {"ratio", to_string(b.ratio)},
                  {"defect_a", to_string(b.defect_a)}, {"defect_b", to_string(b.defect_b)},
                  {"edge_a", to_string(b.edge_a)},     {"edge_b", to_string(b.edge_b)},
                  {"packing_a", to_string(b.packing_a)}, {"packing_b", to_string(b.packing_b)},
                  {"slack", rationals_json(b.slack)}};
  json out = {{"format", "foe-artifact-1"},
              {"mode", oe.mode == DiagramMode::Lambda ? "lambda" : "iii1"},
              {"depth", oe.depth},
              {"lambda", to_string(oe.lambda)},
              {"packing_tol", to_string(oe.packing_tol)},
              {"seed", oe.seed},
              {"levels", levels},
              {"a", side_json(oe.a)},
              {"b", side_json(oe.b)},
              {"pairs", pairs},
              {"n_table", n_table},
              {"m_table", m_table},
              {"coverage_a", set_json(oe.coverage_a)},
              {"coverage_b", set_json(oe.coverage_b)},
              {"coverage_mass_a", to_string(oe.coverage_mass_a)},
              {"coverage_mass_b", to_string(oe.coverage_mass_b)},
              {"budgets", budgets}};
  return out.dump(1) + "\n";
}

FinitaryOE read_artifact(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("artifact: ") + e.what() + " at byte " + std::to_string(e.byte),
                     0);
  }
  const std::string root = "$";
  if (get<std::string>(field(j, "format", root), "$.format") != "foe-artifact-1")
    throw ParseError("artifact $.format: unsupported format", 0);
  FinitaryOE oe;
  const auto mode = get<std::string>(field(j, "mode", root), "$.mode");
  if (mode == "lambda")
    oe.mode = DiagramMode::Lambda;
  else if (mode == "iii1")
    oe.mode = DiagramMode::III1;
  else
    throw ParseError("artifact $.mode: expected lambda or iii1", 0);
  oe.depth = get<int>(field(j, "depth", root), "$.depth");
  oe.lambda = rational_of(field(j, "lambda", root), "$.lambda");
  oe.packing_tol = rational_of(field(j, "packing_tol", root), "$.packing_tol");
  oe.seed = get<std::uint64_t>(field(j, "seed", root), "$.seed");

  const json& levels = array_field(j, "levels", root);
  for (std::size_t k = 0; k < levels.size(); ++k) {
    const std::string w = "$.levels[" + std::to_string(k) + "]";
    const json& l = levels[k];
    DiagramLevel dl;
    dl.n = get<int>(field(l, "n", w), w + ".n");
    dl.r = get<int>(field(l, "r", w), w + ".r");
    dl.cell_depth = get<int>(field(l, "cell_depth", w), w + ".cell_depth");
    dl.eps = rational_of(field(l, "eps", w), w + ".eps");
    dl.leader = side_char(field(l, "leader", w), w + ".leader");
    dl.closing = get<bool>(field(l, "closing", w), w + ".closing");
    dl.tower_bound_met = get<bool>(field(l, "tower_bound_met", w), w + ".tower_bound_met");
    dl.g = get<std::vector<std::vector<int>>>(field(l, "g", w), w + ".g");
    const json& nu = array_field(l, "nu", w);
    for (std::size_t i = 0; i < nu.size(); ++i)
      dl.nu.push_back(rationals_of(nu[i], w + ".nu[" + std::to_string(i) + "]"));
    oe.levels.push_back(std::move(dl));
  }
  oe.a = side_of(field(j, "a", root), "$.a");
  oe.b = side_of(field(j, "b", root), "$.b");

  const json& pairs = array_field(j, "pairs", root);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const std::string w = "$.pairs[" + std::to_string(k) + "]";
    const json& p = pairs[k];
    MatchedPair mp;
    mp.index = get<std::vector<int>>(field(p, "index", w), w + ".index");
    mp.label = get<int>(field(p, "label", w), w + ".label");
    mp.power_a = get<std::int64_t>(field(p, "power_a", w), w + ".power_a");
    mp.power_b = get<std::int64_t>(field(p, "power_b", w), w + ".power_b");
    mp.word_a = word_of(field(p, "word_a", w), w + ".word_a");
    mp.word_b = word_of(field(p, "word_b", w), w + ".word_b");
    mp.mass_a = rational_of(field(p, "mass_a", w), w + ".mass_a");
    mp.mass_b = rational_of(field(p, "mass_b", w), w + ".mass_b");
    mp.ratio = rational_of(field(p, "ratio", w), w + ".ratio");
    oe.pairs.push_back(std::move(mp));
  }
  const json& n_table = array_field(j, "n_table", root);
  for (std::size_t k = 0; k < n_table.size(); ++k)
    oe.n_table.push_back(entry_of(n_table[k], "$.n_table[" + std::to_string(k) + "]"));
  const json& m_table = array_field(j, "m_table", root);
  for (std::size_t k = 0; k < m_table.size(); ++k)
    oe.m_table.push_back(entry_of(m_table[k], "$.m_table[" + std::to_string(k) + "]"));
  oe.coverage_a = set_of(field(j, "coverage_a", root), "$.coverage_a");
  oe.coverage_b = set_of(field(j, "coverage_b", root), "$.coverage_b");
  oe.coverage_mass_a = rational_of(field(j, "coverage_mass_a", root), "$.coverage_mass_a");
  oe.coverage_mass_b = rational_of(field(j, "coverage_mass_b", root), "$.coverage_mass_b");

  const json& b = field(j, "budgets", root);
  const std::string w = "$.budgets";
  oe.budgets.matching = rational_of(field(b, "matching", w), w + ".matching");
  oe.budgets.ratio = rational_of(field(b, "ratio", w), w + ".ratio");
  oe.budgets.defect_a = rational_of(field(b, "defect_a", w), w + ".defect_a");
  oe.budgets.defect_b = rational_of(field(b, "defect_b", w), w + ".defect_b");
  oe.budgets.edge_a = rational_of(field(b, "edge_a", w), w + ".edge_a");
  oe.budgets.edge_b = rational_of(field(b, "edge_b", w), w + ".edge_b");
  oe.budgets.packing_a = rational_of(field(b, "packing_a", w), w + ".packing_a");
  oe.budgets.packing_b = rational_of(field(b, "packing_b", w), w + ".packing_b");
  oe.budgets.slack = rationals_of(field(b, "slack", w), w + ".slack");
  return oe;
}

}  // namespace foe
