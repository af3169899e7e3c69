#include <doctest.h>

#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "mground/io.hpp"
#include "support.hpp"

using namespace mground;
using namespace mground::testing;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

Run mground_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Run r;
  r.code = cli::run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = slurp(e.path());
  }
  return files;
}

// Small synthetic corpus plus weights shared by several cases.
struct Workspace {
  TempDir dir{"cli"};
  std::string data = (dir / "data").string();
  std::string weights = (dir / "w.json").string();

  Workspace() {
    REQUIRE(mground_cli({"synth", "--out", data, "--count", "8", "--seed", "3", "--d", "8", "--L", "30"}).code == 0);
    REQUIRE(mground_cli({"pretrain", "--data", data, "--out-weights", weights, "--steps", "40"}).code == 0);
  }
};

}  // namespace

TEST_CASE("exit code mapping") {
  CHECK(cli::exit_code_for(ErrorCode::kConfig, "ground") == 2);
  CHECK(cli::exit_code_for(ErrorCode::kDiverged, "pretrain") == 3);
  CHECK(cli::exit_code_for(ErrorCode::kNumerical, "ground") == 3);
  CHECK(cli::exit_code_for(ErrorCode::kLspUnavailable, "decompose") == 4);
  CHECK(cli::exit_code_for(ErrorCode::kValidation, "eval") == 5);
  CHECK(cli::exit_code_for(ErrorCode::kIo, "eval") == 5);
  CHECK(cli::exit_code_for(ErrorCode::kValidation, "ground") == 2);
}

TEST_CASE("usage errors") {
  CHECK(mground_cli({}).code == 2);
  CHECK(mground_cli({"frobnicate"}).code == 2);
  CHECK(mground_cli({"ground", "--out", "x"}).code == 2);
  CHECK(mground_cli({"gradcheck", "--trials", "0"}).code == 2);
  CHECK(mground_cli({"gradcheck", "--log-level", "loud"}).code == 2);
  const Run help = mground_cli({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("synth") != std::string::npos);
  CHECK(mground_cli({"--version"}).out.find(io::tool_version()) != std::string::npos);
}

TEST_CASE("synth writes instances and a manifest") {
  TempDir dir("synth");
  const Run r = mground_cli({"synth", "--out", (dir / "s").string(), "--count", "3"});
  REQUIRE(r.code == 0);
  const json manifest = io::read_json_file(dir / "s" / "manifest.json");
  CHECK(manifest["count"] == 3);
  CHECK(manifest["files"].size() == 3);
  CHECK(manifest["tool_version"] == io::tool_version());
  CHECK(manifest["config"]["synth"]["k"] == 3);
  const io::InstanceFile inst = io::load_instance(dir / "s" / "inst_00000.json");
  CHECK(inst.queries.size() == 3);
  CHECK(inst.frames.frames() == 60);
  CHECK(inst.meta["tool_version"] == io::tool_version());

  const Run infeasible = mground_cli({"synth", "--out", (dir / "t").string(), "--L", "10"});
  CHECK(infeasible.code == 2);
  CHECK(infeasible.err.find("min_seg_len") != std::string::npos);

  REQUIRE(mground_cli({"synth", "--out", (dir / "b").string(), "--count", "2", "--frames", "f32"}).code == 0);
  CHECK(fs::exists(dir / "b" / "inst_00001.f32"));
  CHECK(io::load_instance(dir / "b" / "inst_00001.json").frames.frames() == 60);
}

TEST_CASE("config files merge with flags") {
  TempDir dir("cfg");
  io::write_json_file(dir / "c.json", {{"synth", {{"k", 2}, {"L", 24}, {"min_seg_len", 4}}}, {"smo", {{"steps", 7}}}});
  REQUIRE(mground_cli({"synth", "--config", (dir / "c.json").string(), "--out", (dir / "s").string(), "--count", "1",
                       "--L", "30"})
              .code == 0);
  const io::InstanceFile inst = io::load_instance(dir / "s" / "inst_00000.json");
  CHECK(inst.queries.size() == 2);
  CHECK(inst.frames.frames() == 30);
  const json manifest = io::read_json_file(dir / "s" / "manifest.json");
  CHECK(manifest["config"]["smo"]["steps"] == 7);

  io::write_json_file(dir / "bad.json", {{"smo", {{"stepz", 7}}}});
  CHECK(mground_cli({"gradcheck", "--config", (dir / "bad.json").string(), "--trials", "1"}).code == 2);
  io::write_json_file(dir / "bad2.json", {{"smo", {{"steps", "many"}}}});
  CHECK(mground_cli({"gradcheck", "--config", (dir / "bad2.json").string(), "--trials", "1"}).code == 2);
}

TEST_CASE("synth, pretrain and ground are bit-reproducible") {
  TempDir dir("repro");
  auto pipeline = [&] {
    const std::string data = (dir / "data").string();
    const std::string w = (dir / "w.json").string();
    const std::string out = (dir / "r.jsonl").string();
    REQUIRE(mground_cli({"synth", "--out", data, "--count", "6", "--seed", "11", "--d", "8", "--L", "30"}).code == 0);
    REQUIRE(mground_cli({"pretrain", "--data", data, "--out-weights", w, "--steps", "30", "--seed", "2"}).code == 0);
    REQUIRE(mground_cli({"ground", "--weights", w, "--instances", data, "--out", out, "--seed", "5", "--jobs", "3",
                         "--trace-dir", (dir / "traces").string()})
                .code == 0);
    return snapshot(dir.path());
  };
  const auto first = pipeline();
  const auto second = pipeline();
  CHECK(first.size() == 6 + 1 + 2 + 2 + 6);  // instances, manifest, weights+csv, results+manifest, traces
  CHECK(first == second);
}

TEST_CASE("pretrain writes weights with provenance and a loss CSV") {
  Workspace ws;
  const io::WeightsFile w = io::load_weights(ws.weights);
  CHECK(w.params.dim() == 8);
  CHECK(w.meta["steps"] == 40);
  CHECK(w.meta["pairs"] == 8);
  CHECK(w.meta["tool_version"] == io::tool_version());
  CHECK(w.meta["final_loss"].get<double>() < w.meta["initial_loss"].get<double>());
  const std::string csv = slurp(fs::path(ws.weights).replace_extension(".loss.csv"));
  CHECK(csv.rfind("step,loss\r\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 41);

  CHECK(mground_cli({"pretrain", "--data", ws.data, "--out-weights", (ws.dir / "x.json").string(), "--lr", "1e308"}).code ==
        3);
  CHECK(mground_cli({"pretrain", "--data", ws.data, "--out-weights", (ws.dir / "x.json").string(), "--tau", "0"}).code ==
        2);
}

TEST_CASE("ground records, parallel determinism and the manifest") {
  Workspace ws;
  const std::string one = (ws.dir / "one.jsonl").string();
  const std::string many = (ws.dir / "many.jsonl").string();
  const Run r1 = mground_cli({"ground", "--weights", ws.weights, "--instances", ws.data, "--out", one});
  REQUIRE(r1.code == 0);
  CHECK(r1.err.find("grounded 8/8 instances") != std::string::npos);
  CHECK(r1.err.find("mean param_count 90.0") != std::string::npos);
  REQUIRE(mground_cli({"ground", "--weights", ws.weights, "--instances", ws.data, "--out", many, "--jobs", "8"}).code == 0);
  CHECK(slurp(one) == slurp(many));

  const auto records = io::load_results(one);
  REQUIRE(records.size() == 8);
  CHECK(records[0].id == "inst_00000");
  for (const auto& r : records) {
    CHECK(r.param_count == 90);
    CHECK(r.steps_run == 100);
  }
  const json manifest = io::read_json_file(one + ".manifest.json");
  CHECK(manifest["grounded"] == 8);
  CHECK(manifest["config"]["smo"]["gamma"] == 100.0);
  CHECK(manifest["config"]["jobs"] == 1);
  CHECK(manifest["weights_meta"]["steps"] == 40);

  REQUIRE(mground_cli({"ground", "--weights", ws.weights, "--instances", ws.data, "--out", one, "--append"}).code == 0);
  CHECK(io::load_results(one).size() == 16);
}

TEST_CASE("ground with zero steps decodes the initial masks") {
  Workspace ws;
  const std::string out = (ws.dir / "z.jsonl").string();
  io::write_json_file(ws.dir / "c.json", {{"smo", {{"init_jitter", 0.0}}}});
  REQUIRE(mground_cli({"ground", "--config", (ws.dir / "c.json").string(), "--weights", ws.weights, "--instances",
                       ws.data, "--out", out, "--steps", "0"})
              .code == 0);
  for (const auto& r : io::load_results(out)) {
    CHECK(r.steps_run == 0);
    CHECK(r.labels == std::vector<int>(30, 0));
    CHECK(r.absent_queries == std::vector<int>{1, 2});
  }
}

TEST_CASE("ground keeps going past bad instances") {
  Workspace ws;
  std::ofstream(ws.dir / "data" / "zz_broken.json") << "{\"id\": 1}";
  const std::string out = (ws.dir / "r.jsonl").string();
  const Run r = mground_cli({"ground", "--weights", ws.weights, "--instances", ws.data, "--out", out});
  CHECK(r.code == 0);
  CHECK(io::load_results(out).size() == 8);
  const json manifest = io::read_json_file(out + ".manifest.json");
  CHECK(manifest["failures"].size() == 1);

  const Run all_bad = mground_cli(
      {"ground", "--weights", ws.weights, "--instances", (ws.dir / "data" / "zz_broken.json").string(), "--out", out});
  CHECK(all_bad.code != 0);

  CHECK(mground_cli({"ground", "--weights", ws.weights, "--instances", ws.data, "--out", out, "--lr", "1e308"}).code == 3);
  CHECK(mground_cli({"ground", "--weights", ws.weights, "--instances", ws.data, "--out", out, "--jobs", "0"}).code == 2);
}

TEST_CASE("eval prints AP lines and writes reports") {
  Workspace ws;
  const std::string res = (ws.dir / "r.jsonl").string();
  REQUIRE(mground_cli({"ground", "--weights", ws.weights, "--instances", ws.data, "--out", res}).code == 0);
  const std::string report = (ws.dir / "report.json").string();
  const Run e = mground_cli({"eval", "--results", res, "--instances", ws.data, "--report", report, "--matches-csv",
                             (ws.dir / "m.csv").string(), "--similarity-csv", (ws.dir / "s.csv").string(),
                             "--weights", ws.weights});
  REQUIRE(e.code == 0);
  CHECK(e.out.rfind("AP@0.3 ", 0) == 0);
  CHECK(e.out.find("AP@0.8 ") != std::string::npos);
  CHECK(e.out.find("mAP ") != std::string::npos);
  const json doc = io::read_json_file(report);
  CHECK(doc["thresholds"].size() == 6);
  CHECK(doc["per_instance"].size() == 24);
  CHECK(doc["config"]["paths"]["thresholds"] == "0.3:0.1:0.8");
  CHECK(slurp(ws.dir / "m.csv").rfind("instance_id,query_idx,gt_start,gt_end", 0) == 0);
  CHECK(slurp(ws.dir / "s.csv").rfind("instance_id,query_idx,method,similarity\r\n", 0) == 0);

  // Results scored against themselves as ground truth.
  const Run custom = mground_cli({"eval", "--results", res, "--instances", ws.data, "--thresholds", "0.5:0.25:1"});
  CHECK(custom.code == 0);
  CHECK(custom.out.find("AP@0.75") != std::string::npos);
}

TEST_CASE("eval input errors exit with 5") {
  Workspace ws;
  const std::string res = (ws.dir / "r.jsonl").string();
  REQUIRE(mground_cli({"ground", "--weights", ws.weights, "--instances", ws.data, "--out", res}).code == 0);

  io::InstanceFile no_gt = io::load_instance(fs::path(ws.data) / "inst_00000.json");
  no_gt.gt_segments.reset();
  fs::create_directories(ws.dir / "nogt");
  io::save_instance(no_gt, ws.dir / "nogt" / "inst_00000.json");
  CHECK(mground_cli({"eval", "--results", res, "--instances", (ws.dir / "nogt").string()}).code == 5);

  std::ofstream(res, std::ios::app) << "{broken\n";
  CHECK(mground_cli({"eval", "--results", res, "--instances", ws.data}).code == 5);
  CHECK(mground_cli({"eval", "--results", res, "--instances", ws.data, "--thresholds", "0.9:0.1:0.3"}).code == 2);
  CHECK(mground_cli({"eval", "--results", res, "--instances", ws.data, "--similarity-csv", "x.csv"}).code == 2);
}

TEST_CASE("decompose with every client") {
  TempDir dir("dec");
  io::write_json_file(dir / "table.json", {{"decompositions", {{"sit down while waving", "1. sit down\n2. wave"}}}});
  const Run mock = mground_cli({"decompose", "--client", "mock", "--mock-table", (dir / "table.json").string(), "--text",
                                "sit down while waving"});
  REQUIRE(mock.code == 0);
  const json doc = json::parse(mock.out);
  CHECK(doc["decompositions"][0]["result"]["sub_actions"] == json({"sit down", "wave"}));
  CHECK(doc["decompositions"][0]["result"]["votes"]["sit down|wave"] == 3);
  CHECK(doc["tool_version"] == io::tool_version());

  const Run rules = mground_cli({"decompose", "--client", "rules", "--text", "walk and then jump"});
  REQUIRE(rules.code == 0);
  CHECK(json::parse(rules.out)["decompositions"][0]["result"]["source"] == "rule_based");

  std::ofstream(dir / "lines.txt") << "walk then run\n\nkick, punch\n";
  const std::string out = (dir / "d.json").string();
  REQUIRE(mground_cli({"decompose", "--client", "mock", "--file", (dir / "lines.txt").string(), "--out", out}).code == 0);
  CHECK(io::read_json_file(out)["decompositions"].size() == 2);

  // Nothing listens on port 9.
  ::setenv("ZOMG_LLM_BASE_URL", "http://127.0.0.1:9/v1", 1);
  const Run down = mground_cli({"decompose", "--text", "walk then run", "--timeout", "1", "--max-retries", "0"});
  CHECK(down.code == 4);
  const Run fallback =
      mground_cli({"decompose", "--text", "walk then run", "--timeout", "1", "--max-retries", "0", "--fallback-rules"});
  CHECK(fallback.code == 0);
  CHECK(json::parse(fallback.out)["decompositions"][0]["result"]["source"] == "rule_based");
  ::unsetenv("ZOMG_LLM_BASE_URL");

  CHECK(mground_cli({"decompose", "--client", "mock"}).code == 2);
  CHECK(mground_cli({"decompose", "--client", "mock", "--text", "x", "--n-paraphrases", "-1"}).code == 2);
}

TEST_CASE("decompose cache replays across runs") {
  TempDir dir("deccache");
  const std::string cache = (dir / "cache").string();
  const Run first = mground_cli({"decompose", "--client", "mock", "--text", "walk then run", "--cache-dir", cache});
  REQUIRE(first.code == 0);
  CHECK(json::parse(first.out)["decompositions"][0]["result"]["source"] == "llm_voted");
  const Run second = mground_cli({"decompose", "--client", "mock", "--text", "walk then run", "--cache-dir", cache});
  CHECK(json::parse(second.out)["decompositions"][0]["result"]["source"] == "cached");
}

TEST_CASE("gradcheck exit codes") {
  const Run ok = mground_cli({"gradcheck"});
  CHECK(ok.code == 0);
  CHECK(ok.out.find("20 trials") != std::string::npos);
  CHECK(ok.out.find("PASS") != std::string::npos);
  const Run bad = mground_cli({"gradcheck", "--trials", "3", "--perturb", "0.01"});
  CHECK(bad.code == 6);
  CHECK(bad.out.find("worst: trial") != std::string::npos);
  CHECK(bad.out.find("FAIL") != std::string::npos);
  CHECK(mground_cli({"gradcheck", "--h", "1"}).code == 2);
}
