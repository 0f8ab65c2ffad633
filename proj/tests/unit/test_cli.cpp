#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "catch2/catch_amalgamated.hpp"

namespace fs = std::filesystem;

namespace {

int paincast(const std::string& args) {
  const std::string cmd = std::string(PAINCAST_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("paincast_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("bad invocations exit with code 2") {
  CHECK(paincast("--no-such-flag") == 2);
  CHECK(paincast("synth") == 2);
  CHECK(paincast("short-term --in x --out y --models prophet") == 2);
  CHECK(paincast("--help") == 0);
}

TEST_CASE("missing input is a data error") {
  const fs::path dir = scratch("missing");
  CHECK(paincast("cluster --in " + (dir / "nothing").string() + " --out " + dir.string() + " --year 1 --k 2") == 3);
  fs::remove_all(dir);
}

TEST_CASE("synth then short-term") {
  const fs::path dir = scratch("pipeline");
  const std::string cohort = (dir / "cohort").string();
  REQUIRE(paincast("--seed 3 synth --out " + cohort + " --patients 5 --years 1") == 0);
  CHECK(fs::exists(dir / "cohort" / "records.csv"));
  CHECK(fs::exists(dir / "cohort" / "truth.csv"));
  REQUIRE(paincast("--seed 3 short-term --in " + cohort + " --out " + (dir / "st").string() +
                   " --models rf,arima --runs 1 --horizons 1 --scenario mixed --stride 4") == 0);
  CHECK(fs::exists(dir / "st" / "report.json"));
  CHECK(paincast("report --run " + (dir / "st").string() + " --no-svg") == 0);
  CHECK(fs::exists(dir / "st" / "table_mixed.csv"));
  fs::remove_all(dir);
}

TEST_CASE("interpolating raw records lowers missingness") {
  const fs::path dir = scratch("interp");
  REQUIRE(paincast("--seed 4 synth --out " + (dir / "cohort").string() + " --patients 8 --years 1") == 0);
  REQUIRE(paincast("interpolate --in " + (dir / "cohort" / "records.csv").string() + " --out " +
                   (dir / "filled").string()) == 0);
  std::ifstream in(dir / "filled" / "missingness.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "variable,raw_data,after_interpolation");
  int rows = 0;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string name, before, after;
    std::getline(ss, name, ',');
    std::getline(ss, before, ',');
    std::getline(ss, after, ',');
    CHECK(std::stod(after) < std::stod(before));
    ++rows;
  }
  CHECK(rows == 6);
  fs::remove_all(dir);
}
