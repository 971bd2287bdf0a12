#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "doctest.h"

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run foe_run(std::vector<std::string> args) {
  args.insert(args.begin(), "foe");
  std::ostringstream out, err;
  const int code = foe::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string config(const char* name) { return std::string(FOE_CONFIG_DIR) + "/" + name; }

std::filesystem::path scratch(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("foe-cli-test-" + name);
}

}  // namespace

TEST_CASE("classify reports types and exit codes") {
  auto r = foe_run({"classify", config("binary.sys")});
  CHECK(r.code == 0);
  CHECK(r.out.find("type: III_lambda lambda=1/2\n") != std::string::npos);
  CHECK(r.out.find("seed: 0") != std::string::npos);

  r = foe_run({"classify", config("uniform_binary.sys")});
  CHECK(r.code == 0);
  CHECK(r.out.find("type: measure-preserving") != std::string::npos);

  r = foe_run({"classify", config("alternating.sys"), "--seed", "7"});
  CHECK(r.code == 0);
  CHECK(r.out.find("III_1 candidate") != std::string::npos);
  CHECK(r.out.find("seed: 7") != std::string::npos);
}

TEST_CASE("malformed rationals exit 2 with a location") {
  auto r = foe_run({"classify", config("bad_rational.sys")});
  CHECK(r.code == 2);
  CHECK(r.err.find("bad_rational.sys: line 3") != std::string::npos);

  r = foe_run({"build-oe", config("binary.sys"), config("ternary.sys"), "--eps", "1/4,2/0"});
  CHECK(r.code == 2);
  CHECK(r.err.find("--eps item 2") != std::string::npos);

  CHECK(foe_run({}).code == 2);
  CHECK(foe_run({"no-such-command"}).code == 2);
  CHECK(foe_run({"cocycle", config("binary.sys"), "--word", "1,x"}).code == 2);
}

TEST_CASE("cocycle of T on [1,1,0] in binary (2/3,1/3) is 2/1") {
  auto r = foe_run({"cocycle", config("binary.sys"), "--word", "1,1,0", "--power", "1"});
  CHECK(r.code == 0);
  CHECK(r.out.find("ratio: 2/1 (~2)") != std::string::npos);
}

TEST_CASE("build-oe refuses mismatched types") {
  auto r = foe_run({"build-oe", config("binary.sys"), config("alternating.sys")});
  CHECK(r.code == 4);
  r = foe_run({"build-oe", config("binary.sys"), config("ternary.sys"), "--mode", "iii1"});
  CHECK(r.code == 4);
  r = foe_run({"build-oe", config("binary.sys"), config("perturbed_ternary.sys")});
  CHECK(r.code == 4);
  CHECK(r.err.find("special-measure") != std::string::npos);
}

TEST_CASE("depth 0 writes an empty artifact with a warning") {
  const auto path = scratch("empty.json");
  auto r = foe_run({"build-oe", config("binary.sys"), config("ternary.sys"), "--depth", "0",
                    "--out", path.string()});
  CHECK(r.code == 0);
  CHECK(r.err.find("warning") != std::string::npos);
  CHECK(std::filesystem::exists(path));
  CHECK(foe_run({"verify-oe", path.string()}).code == 0);
  std::filesystem::remove(path);
}

TEST_CASE("build-oe then verify-oe round-trips, and a fault exits 5") {
  const auto path = scratch("oe.json");
  auto r = foe_run({"build-oe", config("alternating.sys"), config("alternating_swapped.sys"),
                    "--depth", "2", "--seed", "11", "--out", path.string()});
  CHECK(r.code == 0);
  CHECK(r.out.find("mode: iii1") != std::string::npos);
  CHECK(r.out.find("verify preview: pass") != std::string::npos);
  auto v = foe_run({"verify-oe", path.string()});
  CHECK(v.code == 0);
  CHECK(v.out.rfind("seed: 11\n", 0) == 0);
  CHECK(v.out.find("result: pass") != std::string::npos);
  CHECK(foe_run({"verify-oe", path.string()}).out == v.out);

  // Corrupt the first cocycle entry's other power.
  std::ifstream in(path);
  std::stringstream buf;
  buf << in.rdbuf();
  auto j = nlohmann::json::parse(buf.str());
  REQUIRE_FALSE(j["n_table"].empty());
  j["n_table"][0]["other_power"] = j["n_table"][0]["other_power"].get<long long>() + 1;
  std::ofstream(path) << j.dump(1);
  auto f = foe_run({"verify-oe", path.string()});
  CHECK(f.code == 5);
  CHECK(f.out.find("check cocycles: FAIL") != std::string::npos);
  CHECK(f.out.find("cylinder ") != std::string::npos);

  std::ofstream(path) << "{ not json";
  CHECK(foe_run({"verify-oe", path.string()}).code == 2);
  std::filesystem::remove(path);
}

TEST_CASE("special-measure writes a special system") {
  const auto path = scratch("special.sys");
  auto r = foe_run({"special-measure", config("perturbed_ternary.sys"), "--etas",
                    "1/2,1/4,1/8,1/16", "--out", path.string()});
  CHECK(r.code == 0);
  CHECK(r.out.find("check_special depth 8: pass") != std::string::npos);
  CHECK(foe_run({"classify", path.string()}).out.find("III_lambda lambda=1/2") != std::string::npos);
  std::filesystem::remove(path);
}

TEST_CASE("example-1-6 emits the verdict") {
  auto r = foe_run({"example-1-6", "--depth", "4"});
  CHECK(r.code == 0);
  CHECK(r.out.find("verdict: T and T_A are not almost continuously orbit equivalent") !=
        std::string::npos);
}
