#include "foe/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "foe/errors.hpp"

namespace foe {

std::vector<std::string> split_fields(std::string_view line) {
  std::vector<std::string> out;
  std::istringstream in{std::string(line)};
  std::string field;
  while (in >> field) out.push_back(field);
  return out;
}

namespace {

int parse_int(const std::string& s, int line) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos || s.size() > 9)
    throw ParseError("expected a non-negative integer, got '" + s + "'", line);
  return std::stoi(s);
}

}  // namespace

SystemConfig parse_system_config(std::string_view text) {
  SystemConfig cfg;
  cfg.levels.depth_max = 32;
  bool have_header = false, have_block = false;
  std::map<int, std::vector<Rational>> prefix_w, block_w;
  std::set<std::string> seen;
  std::map<Word, int> density_lines;
  std::istringstream in{std::string(text)};
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    auto hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    auto f = split_fields(raw);
    if (f.empty()) continue;
    const std::string& key = f[0];
    if (!have_header) {
      if (f.size() != 2 || key != "system" || f[1] != "v1")
        throw ParseError("expected header 'system v1'", lineno);
      have_header = true;
      continue;
    }
    if (key == "prefix" || key == "block" || key == "depth_max") {
      if (!seen.insert(key).second) throw ParseError("duplicate '" + key + "'", lineno);
    }
    if (key == "prefix" || key == "block") {
      std::vector<int> sizes;
      for (std::size_t i = 1; i < f.size(); ++i) {
        int s = parse_int(f[i], lineno);
        if (s < 1) throw ParseError("alphabet size must be >= 1", lineno);
        sizes.push_back(s);
      }
      (key == "prefix" ? cfg.levels.prefix : cfg.levels.block) = sizes;
      if (key == "block") have_block = true;
    } else if (key == "depth_max") {
      if (f.size() != 2) throw ParseError("depth_max takes one value", lineno);
      cfg.levels.depth_max = parse_int(f[1], lineno);
    } else if (key == "weight") {
      if (f.size() < 4 || (f[1] != "prefix" && f[1] != "block"))
        throw ParseError("expected 'weight prefix|block <level> <p/q>...'", lineno);
      int level = parse_int(f[2], lineno);
      std::vector<Rational> ws;
      for (std::size_t i = 3; i < f.size(); ++i) ws.push_back(parse_rational(f[i], lineno));
      auto& target = f[1] == "prefix" ? prefix_w : block_w;
      if (!target.emplace(level, ws).second)
        throw ParseError("duplicate weights for level " + f[2], lineno);
    } else if (key == "density") {
      if (f.size() != 3) throw ParseError("expected 'density <word> <p/q>'", lineno);
      Word w = parse_word(f[1], lineno);
      if (!cfg.measure.density.emplace(w, parse_rational(f[2], lineno)).second)
        throw ParseError("duplicate density entry", lineno);
      density_lines[w] = lineno;
    } else {
      throw ParseError("unknown directive '" + key + "'", lineno);
    }
  }
  if (!have_header) throw ParseError("empty configuration", lineno);
  if (!have_block) throw ParseError("missing 'block' line", lineno);
  auto collect = [&](std::map<int, std::vector<Rational>>& ws, std::size_t n, const char* what) {
    std::vector<std::vector<Rational>> out;
    for (std::size_t j = 0; j < n; ++j) {
      auto it = ws.find(static_cast<int>(j));
      if (it == ws.end())
        throw ParseError(std::string("missing weights for ") + what + " level " +
                             std::to_string(j),
                         0);
      out.push_back(it->second);
    }
    if (ws.size() != n) throw ParseError(std::string("extra ") + what + " weight levels", 0);
    return out;
  };
  cfg.measure.prefix_weights = collect(prefix_w, cfg.levels.prefix.size(), "prefix");
  cfg.measure.block_weights = collect(block_w, cfg.levels.block.size(), "block");
  try {
    Space space(cfg.levels);
    for (const auto& [w, line] : density_lines)
      if (!space.valid(w)) throw ParseError("density word out of range", line);
    normalize(space, cfg.measure);
    validate_measure(space, cfg.measure);
  } catch (const PreconditionFailed& e) {
    throw ParseError(e.what(), 0);
  } catch (const DepthExceeded& e) {
    throw ParseError(e.what(), 0);
  }
  return cfg;
}

std::string serialize_system_config(const SystemConfig& c) {
  std::ostringstream out;
  out << "system v1\n";
  auto sizes = [&](const char* key, const std::vector<int>& v) {
    out << key;
    for (int s : v) out << ' ' << s;
    out << '\n';
  };
  if (!c.levels.prefix.empty()) sizes("prefix", c.levels.prefix);
  sizes("block", c.levels.block);
  out << "depth_max " << c.levels.depth_max << '\n';
  auto weights = [&](const char* key, const std::vector<std::vector<Rational>>& ws) {
    for (std::size_t j = 0; j < ws.size(); ++j) {
      out << "weight " << key << ' ' << j;
      for (const auto& w : ws[j]) out << ' ' << to_string(w);
      out << '\n';
    }
  };
  weights("prefix", c.measure.prefix_weights);
  weights("block", c.measure.block_weights);
  for (const auto& [w, v] : c.measure.density)
    out << "density " << word_to_string(w) << ' ' << to_string(v) << '\n';
  return out.str();
}

SystemConfig load_system_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'", 0);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_system_config(buf.str());
}

void save_system_config(const SystemConfig& config, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << serialize_system_config(config);
}

}  // namespace foe
