#include <filesystem>
#include <fstream>
#include <sstream>

#include "boxformer/config.hpp"
#include "boxformer/data.hpp"
#include "boxformer/trainer.hpp"
#include "cli.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace boxformer;
using boxformer::testing::bit_identical;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

struct Workspace {
  fs::path root = fs::temp_directory_path() / "boxformer_cli";
  Workspace() {
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~Workspace() { fs::remove_all(root); }
  std::string at(const std::string& rel) const { return (root / rel).string(); }
};

const char* kTinyConfig = R"({
  "backbone": {"image_size": 32, "base_channels": 4, "content_channels": 16, "style_dim": 4},
  "aggregator": {"patch_stride": 2, "token_dim": 16, "blocks": 1, "heads": 2, "mlp_dim": 32},
  "nce": {"patches_per_layer": 16, "projection_dim": 8, "hidden_dim": 16, "instance_grid": 2},
  "train": {"steps": 2, "lr": 0.001, "ckpt_every": 1, "seed": 3}
})";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// gen-data, then a 2-step training run.
void train_tiny(const Workspace& ws) {
  REQUIRE(run({"gen-data", "--out", ws.at("data"), "--n", "4", "--size", "32", "--seed", "1"}).code == 0);
  std::ofstream(ws.at("run.json")) << kTinyConfig;
  const auto r = run({"train", "--config", ws.at("run.json"), "--data-a", ws.at("data/A"), "--data-b",
                      ws.at("data/B"), "--out", ws.at("run")});
  REQUIRE_MESSAGE(r.code == 0, r.err);
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
  CHECK(run({}).code == cli::kExitUsage);
  CHECK(run({"frobnicate"}).code == cli::kExitUsage);
  CHECK(run({"gen-data"}).code == cli::kExitUsage);
  CHECK(run({"--help"}).code == cli::kExitOk);
  Workspace ws;
  CHECK(run({"gen-data", "--out", ws.at("d"), "--size", "30"}).code == cli::kExitUsage);
  CHECK(run({"gen-data", "--out", ws.at("d"), "--domains", "A,C"}).code == cli::kExitUsage);
  CHECK(run({"train", "--config", ws.at("missing.json")}).code == cli::kExitUsage);
  std::ofstream(ws.at("bad.json")) << R"({"train": {"lr": "x"}})";
  const auto r = run({"train", "--config", ws.at("bad.json"), "--data-a", "a", "--data-b", "b", "--out", "o"});
  CHECK(r.code == cli::kExitUsage);
  CHECK(r.err.find("train.lr") != std::string::npos);
}

TEST_CASE("gen-data is deterministic") {
  Workspace ws;
  for (const char* dir : {"one", "two"})
    REQUIRE(run({"gen-data", "--out", ws.at(dir), "--n", "3", "--size", "32", "--seed", "9"}).code == 0);
  for (const char* d : {"A", "B"}) {
    const auto a = read_dataset(ws.at(std::string("one/") + d));
    const auto b = read_dataset(ws.at(std::string("two/") + d));
    REQUIRE(a.size() == 3);
    REQUIRE(b.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(bit_identical(a[i].image, b[i].image));
      CHECK(a[i].boxes == b[i].boxes);
    }
    CHECK(slurp(ws.at(std::string("one/") + d + "/annotations.jsonl")) ==
          slurp(ws.at(std::string("two/") + d + "/annotations.jsonl")));
  }
}

TEST_CASE("train, translate, eval and report end to end") {
  Workspace ws;
  train_tiny(ws);
  CHECK(fs::exists(ws.at("run/checkpoint_000001.ifck")));
  const auto ckpt = ws.at("run/checkpoint_000002.ifck");
  REQUIRE(fs::exists(ckpt));
  CHECK(to_json(load_run_config(ws.at("run/run.json"))) == to_json([&] {
          auto c = parse_run_config(kTinyConfig);
          c.paths = {ws.at("data/A"), ws.at("data/B"), ws.at("run")};
          return c;
        }()));

  SUBCASE("translate") {
    CHECK(run({"translate", "--ckpt", ckpt, "--input", ws.at("data/A"), "--out", ws.at("t1"), "--style-seed", "4"})
              .code == 0);
    CHECK(run({"translate", "--ckpt", ckpt, "--input", ws.at("data/A"), "--out", ws.at("t2"), "--style-seed", "4"})
              .code == 0);
    const auto t1 = read_dataset(ws.at("t1"));
    const auto t2 = read_dataset(ws.at("t2"));
    REQUIRE(t1.size() == 4);
    CHECK(bit_identical(t1[0].image, t2[0].image));
    CHECK(t1[0].boxes == read_dataset(ws.at("data/A"))[0].boxes);
    CHECK(run({"translate", "--ckpt", ckpt, "--input", ws.at("data/A"), "--out", ws.at("t3"), "--style-from",
               ws.at("data/B/images/B_0.ppm")})
              .code == 0);
    CHECK(run({"translate", "--ckpt", ckpt, "--input", ws.at("data/A"), "--out", ws.at("t4"), "--style-seed", "1",
               "--style-from", ws.at("data/B/images/B_0.ppm")})
              .code == cli::kExitUsage);
    CHECK(run({"translate", "--ckpt", ckpt, "--input", ws.at("data/A"), "--out", ws.at("t5"), "--boxes", "maybe"})
              .code == cli::kExitUsage);
  }

  SUBCASE("eval") {
    const auto r = run({"eval", "--ckpt", ckpt, "--data-a", ws.at("data/A"), "--data-b", ws.at("data/B"), "--out",
                        ws.at("ev"), "--boxes", "on"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto text = slurp(ws.at("ev/metrics.json"));
    for (const char* key : {"\"ssim\"", "\"instance_ssim\"", "\"palette_A\"", "\"palette_B\"", "\"aggregate\""})
      CHECK(text.find(key) != std::string::npos);
  }

  SUBCASE("report") {
    const auto r = run({"report", "--run", ws.at("run"), "--out", ws.at("rep"), "--rows", "2"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto montage = read_ppm(ws.at("rep/montage.ppm"));
    CHECK(montage.shape() == Shape{3, 2 * 32 + 2, 3 * 32 + 2 * 2});
    std::ifstream curve(ws.at("rep/loss_curve.csv"));
    std::string line;
    std::getline(curve, line);
    CHECK(line == std::string(kMetricsHeader) + ",total_ma10");
    int rows = 0;
    while (std::getline(curve, line)) ++rows;
    CHECK(rows == 2);
  }

  SUBCASE("resume checks the architecture") {
    auto other = parse_run_config(kTinyConfig);
    other.model.aggregator.token_dim = 24;
    std::ofstream(ws.at("wide.json")) << to_json(other);
    const auto r = run({"train", "--config", ws.at("wide.json"), "--data-a", ws.at("data/A"), "--data-b",
                        ws.at("data/B"), "--out", ws.at("wide"), "--resume", ckpt});
    CHECK(r.code == cli::kExitUsage);
    CHECK(r.err.find("architecture") != std::string::npos);
  }

  SUBCASE("a non-finite loss exits with 3") {
    auto poisoned = load_checkpoint(ws.at("run/checkpoint_000001.ifck"));
    for (auto& rec : poisoned.records)
      if (rec.name.rfind("model.generator.", 0) == 0) rec.values.assign(rec.values.size(), std::nan(""));
    save_checkpoint(ws.at("nan.ifck"), poisoned);
    const auto r = run({"train", "--config", ws.at("run.json"), "--data-a", ws.at("data/A"), "--data-b",
                        ws.at("data/B"), "--out", ws.at("nan_run"), "--resume", ws.at("nan.ifck")});
    CHECK(r.code == cli::kExitNumeric);
    CHECK(r.err.find("non-finite") != std::string::npos);
  }
}
