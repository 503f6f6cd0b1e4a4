#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "relate3d/io_util.hpp"
#include "relate3d/spatial_graph.hpp"

using namespace relate3d;

namespace {

namespace fs = std::filesystem;

struct CliFixture {
  fs::path dir;
  CliFixture() {
    dir = fs::temp_directory_path() / ("relate3d_cli_" + std::to_string(::getpid()) + "_" +
                                       std::to_string(counter()));
    fs::create_directories(dir);
  }
  ~CliFixture() { fs::remove_all(dir); }
  static int counter() {
    static int n = 0;
    return ++n;
  }
  std::string file(const std::string& name) const { return (dir / name).string(); }
};

int run(const std::string& args) {
  const std::string cmd = std::string(RELATE3D_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("synth is byte-deterministic and honors --frames 0") {
  CliFixture fx;
  CHECK(run("synth --pattern parallel_parking --n 12 --seed 9 --frames 3 --out " +
            fx.file("a.jsonl")) == 0);
  CHECK(run("synth --pattern parallel_parking --n 12 --seed 9 --frames 3 --out " +
            fx.file("b.jsonl")) == 0);
  CHECK(read_file(fx.file("a.jsonl")) == read_file(fx.file("b.jsonl")));

  CHECK(run("synth --pattern parallel_parking --n 12 --seed 9 --frames 0 --out " +
            fx.file("empty.jsonl")) == 0);
  CHECK(read_file(fx.file("empty.jsonl")).empty());
}

TEST_CASE("synth rejects bad patterns with exit code 2") {
  CliFixture fx;
  CHECK(run("synth --pattern spiral --n 4 --seed 1 --out " + fx.file("x.jsonl")) == 2);
}

TEST_CASE("usage errors exit with code 1") {
  CliFixture fx;
  CHECK(run("synth --out " + fx.file("x.jsonl")) == 1);  // missing required --seed
  CHECK(run("frobnicate") == 1);
  CHECK(run("") == 1);  // subcommand required
}

TEST_CASE("graph output matches the brute-force oracle") {
  CliFixture fx;
  REQUIRE(run("synth --pattern uniform --n 24 --seed 4 --frames 1 --distractors 4 --out " +
              fx.file("frames.jsonl")) == 0);
  CHECK(run("graph --in " + fx.file("frames.jsonl") +
            " --strategy knn --k 5 --frame-id 000000 --out " + fx.file("kd.json")) == 0);
  CHECK(run("graph --in " + fx.file("frames.jsonl") +
            " --strategy knn --k 5 --frame-id 000000 --brute-force --out " +
            fx.file("bf.json")) == 0);
  CHECK(read_file(fx.file("kd.json")) == read_file(fx.file("bf.json")));

  CHECK(run("graph --in " + fx.file("frames.jsonl") +
            " --strategy radius --r 8 --frame-id 000000 --out " + fx.file("rad.json")) == 0);
  CHECK(run("graph --in " + fx.file("frames.jsonl") +
            " --strategy radius --r 8 --frame-id 000000 --brute-force --out " +
            fx.file("rad_bf.json")) == 0);
  CHECK(read_file(fx.file("rad.json")) == read_file(fx.file("rad_bf.json")));

  const RelationGraph g = graph_from_json(read_file(fx.file("kd.json")));
  CHECK(g.num_nodes == 28);
  for (const auto& nbrs : g.neighbors) CHECK(nbrs.size() == 5);

  CHECK(run("graph --in " + fx.file("frames.jsonl") +
            " --strategy knn --k 5 --frame-id nope --out " + fx.file("y.json")) == 2);
}

TEST_CASE("knn clamps to n-1 on small frames") {
  CliFixture fx;
  REQUIRE(run("synth --pattern uniform --n 10 --seed 6 --frames 1 --out " +
              fx.file("frames.jsonl")) == 0);
  REQUIRE(run("graph --in " + fx.file("frames.jsonl") +
              " --strategy knn --k 16 --frame-id 000000 --out " + fx.file("g.json")) == 0);
  const RelationGraph g = graph_from_json(read_file(fx.file("g.json")));
  for (const auto& nbrs : g.neighbors) CHECK(nbrs.size() == 9);
}

TEST_CASE("train twice with one seed produces identical artifacts") {
  CliFixture fx;
  REQUIRE(run("synth --pattern parallel_parking --n 8 --seed 13 --frames 6 --distractors 2 "
              "--feature-dim 6 --out " +
              fx.file("frames.jsonl")) == 0);
  const std::string common = "train --in " + fx.file("frames.jsonl") +
                             " --epochs 2 --seed 5 --layers 2 --node-dim 8 --output-dim 8 ";
  CHECK(run(common + "--checkpoint-out " + fx.file("ck1.json") + " --metrics-out " +
            fx.file("m1.csv")) == 0);
  CHECK(run(common + "--checkpoint-out " + fx.file("ck2.json") + " --metrics-out " +
            fx.file("m2.csv")) == 0);
  CHECK(read_file(fx.file("m1.csv")) == read_file(fx.file("m2.csv")));
  CHECK(read_file(fx.file("ck1.json")) == read_file(fx.file("ck2.json")));

  const std::string csv = read_file(fx.file("m1.csv"));
  CHECK(csv.rfind("epoch,loss,heading_mae,center_mae\n", 0) == 0);
}

TEST_CASE("refine then eval completes the pipeline") {
  CliFixture fx;
  REQUIRE(run("synth --pattern parallel_parking --n 8 --seed 17 --frames 5 --feature-dim 6 "
              "--center-noise 0.1 --heading-noise 0.05 --out " +
              fx.file("frames.jsonl")) == 0);
  REQUIRE(run("train --in " + fx.file("frames.jsonl") +
              " --epochs 1 --seed 2 --layers 1 --node-dim 8 --output-dim 8 --checkpoint-out " +
              fx.file("ck.json")) == 0);
  CHECK(run("refine --in " + fx.file("frames.jsonl") + " --checkpoint " + fx.file("ck.json") +
            " --out " + fx.file("det.jsonl")) == 0);
  CHECK(run("refine --in " + fx.file("frames.jsonl") + " --checkpoint " + fx.file("ck.json") +
            " --out " + fx.file("det2.jsonl")) == 0);
  CHECK(read_file(fx.file("det.jsonl")) == read_file(fx.file("det2.jsonl")));

  CHECK(run("eval --gt " + fx.file("frames.jsonl") + " --det " + fx.file("det.jsonl") +
            " --classes Car --recall-mode r40 --out " + fx.file("report.json") + " --pr-csv " +
            fx.file("pr.csv")) == 0);
  const std::string report = read_file(fx.file("report.json"));
  CHECK(report.find("\"recall_mode\":\"r40\"") != std::string::npos);
  CHECK(read_file(fx.file("pr.csv")).rfind("class,difficulty,metric", 0) == 0);

  // Feature-dim mismatch between checkpoint and frames is a data error.
  REQUIRE(run("synth --pattern parallel_parking --n 8 --seed 17 --frames 2 --feature-dim 5 "
              "--out " +
              fx.file("other.jsonl")) == 0);
  CHECK(run("refine --in " + fx.file("other.jsonl") + " --checkpoint " + fx.file("ck.json") +
            " --out " + fx.file("z.jsonl")) == 2);
}

TEST_CASE("eval exits 2 on missing files and id mismatches") {
  CliFixture fx;
  CHECK(run("eval --gt nope.jsonl --det nope.jsonl --out " + fx.file("r.json")) == 2);
}

TEST_CASE("check suites pass within tolerance") {
  CHECK(run("check --suite graph") == 0);
  CHECK(run("check --suite iou") == 0);
  CHECK(run("check --suite grad") == 0);
  CHECK(run("check --suite bogus") == 2);
}
