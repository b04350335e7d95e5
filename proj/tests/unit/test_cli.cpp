#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <string>

#include "sddpc/io.hpp"

namespace fs = std::filesystem;
using sddpc::Json;
using sddpc::read_text_file;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sddpc_cli_test_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Outcome cli(const std::string& args) {
  const fs::path io = scratch("io");
  const std::string cmd = std::string("'") + SDDPC_CLI_PATH + "' " + args + " >'" +
                          (io / "out").string() + "' 2>'" + (io / "err").string() + "'";
  const int status = std::system(cmd.c_str());
  Outcome o;
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  o.out = read_text_file((io / "out").string());
  o.err = read_text_file((io / "err").string());
  return o;
}

}  // namespace

TEST_CASE("run is deterministic for a fixed seed") {
  const fs::path a = scratch("run_a"), b = scratch("run_b");
  REQUIRE(cli("run --seed 7 --steps 6 --out '" + a.string() + "'").code == 0);
  REQUIRE(cli("run --seed 7 --steps 6 --out '" + b.string() + "'").code == 0);
  const std::string ta = read_text_file((a / "trace.csv").string());
  CHECK(ta == read_text_file((b / "trace.csv").string()));
  CHECK(std::count(ta.begin(), ta.end(), '\n') == 7);

  const fs::path c = scratch("run_c");
  REQUIRE(cli("run --seed 8 --steps 6 --out '" + c.string() + "'").code == 0);
  CHECK(read_text_file((c / "trace.csv").string()) != ta);

  SUBCASE("the manifest reproduces the run") {
    const Json m = Json::parse(read_text_file((a / "manifest.json").string()));
    for (const char* key : {"command", "config", "config_hash", "model_hash", "seeds", "versions", "artifacts"})
      CHECK_MESSAGE(m.contains(key), key);
    CHECK(m["command"] == "run");
    CHECK(m["seeds"]["simulation"] == 7);
    CHECK(m["config"]["simulation"]["steps"] == 6);
    CHECK(m["versions"].contains("eigen"));
    const fs::path d = scratch("rerun");
    REQUIRE(cli("run --config '" + (a / "manifest.json").string() + "' --out '" + d.string() + "'").code == 0);
    CHECK(read_text_file((d / "trace.csv").string()) == ta);
    const Json m2 = Json::parse(read_text_file((d / "manifest.json").string()));
    CHECK(m2["model_hash"] == m["model_hash"]);
  }
}

TEST_CASE("errors are machine-readable") {
  const fs::path dir = scratch("bad");
  const std::string path = (dir / "bad.json").string();
  sddpc::write_text_file(path, R"({"ocp": {"horizon": 0, "eps_y": 3.0}, "simulation": {"runs": 0}})");
  const Outcome o = cli("run --config '" + path + "' --out '" + dir.string() + "'");
  CHECK(o.code != 0);
  const Json e = Json::parse(o.err);
  CHECK(e["error"] == "parameter");
  const std::string msg = e["message"];
  for (const char* field : {"ocp.horizon", "ocp.eps_y", "simulation.runs"})
    CHECK_MESSAGE(msg.find(field) != std::string::npos, field);

  sddpc::write_text_file(path, "{ not json");
  const Outcome broken = cli("run --config '" + path + "'");
  CHECK(broken.code != 0);
  CHECK(Json::parse(broken.err)["error"] == "parameter");

  const Outcome flag = cli("run --mu-mode sideways --out '" + dir.string() + "'");
  CHECK(flag.code != 0);
  CHECK(Json::parse(flag.err).contains("error"));

  const Outcome usage = cli("fly");
  CHECK(usage.code != 0);
  CHECK(Json::parse(usage.err)["error"] == "usage");
}

TEST_CASE("verify-lemma residual table") {
  const fs::path dir = scratch("lemma");
  const Outcome o = cli("verify-lemma --trajectories 25 --out '" + dir.string() + "'");
  CHECK(o.code == 0);
  std::istringstream csv(read_text_file((dir / "lemma.csv").string()));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "trajectory,kind,residual");
  int fresh = 0, perturbed = 0;
  while (std::getline(csv, line)) {
    const auto c1 = line.find(','), c2 = line.rfind(',');
    const std::string kind = line.substr(c1 + 1, c2 - c1 - 1);
    const double r = std::stod(line.substr(c2 + 1));
    if (kind == "fresh") {
      ++fresh;
      CHECK(r < 1e-8);
    } else {
      ++perturbed;
      CHECK(r > 1e-3);
    }
  }
  CHECK(fresh == 25);
  CHECK(perturbed == 25);
}

TEST_CASE("collect, terminal and reuse of artifacts") {
  const fs::path dir = scratch("pipeline");
  const std::string out = " --out '" + dir.string() + "'";
  REQUIRE(cli("collect" + out).code == 0);
  CHECK(fs::exists(dir / "archive.json"));
  CHECK(fs::exists(dir / "archive.csv"));
  CHECK(Json::parse(read_text_file((dir / "manifest.json").string()))["persistently_exciting"] == true);

  REQUIRE(cli("terminal --archive '" + (dir / "archive.json").string() + "'" + out).code == 0);
  const Json report = Json::parse(read_text_file((dir / "terminal_report.json").string()));
  CHECK(report["alpha"].get<double>() > 0.0);
  CHECK(report["invariance_violations"] == 0);

  const fs::path fresh = scratch("pipeline_fresh"), reuse = scratch("pipeline_reuse");
  REQUIRE(cli("run --seed 3 --steps 4 --out '" + fresh.string() + "'").code == 0);
  REQUIRE(cli("run --seed 3 --steps 4 --archive '" + (dir / "archive.json").string() + "' --terminal '" +
              (dir / "terminal.json").string() + "' --out '" + reuse.string() + "'")
              .code == 0);
  CHECK(read_text_file((fresh / "trace.csv").string()) == read_text_file((reuse / "trace.csv").string()));
}

TEST_CASE("montecarlo and solve-fixture") {
  const fs::path dir = scratch("mc");
  const Outcome o = cli("montecarlo --runs 3 --steps 4 --seed 5 --out '" + dir.string() + "'");
  REQUIRE(o.code == 0);
  for (const char* f : {"summary.json", "statistics.csv", "histogram.csv", "averaged_cost.csv", "manifest.json"})
    CHECK_MESSAGE(fs::exists(dir / f), f);
  const Json s = Json::parse(read_text_file((dir / "summary.json").string()));
  CHECK(s["runs"] == 3);
  CHECK(s["infeasibility_events"] == 0);

  const fs::path fx = scratch("fixture");
  const Outcome f = cli("solve-fixture --out '" + fx.string() + "'");
  CHECK(f.code == 0);
  CHECK(Json::parse(read_text_file((fx / "solution.json").string()))["status"] == "Optimal");
  const Outcome again = cli("solve-fixture --fixture '" + (fx / "fixture.json").string() + "' --out '" +
                            fx.string() + "'");
  CHECK(again.code == 0);
}
