#include <doctest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "../support/synthetic.hpp"
#include "isearle/inversion_net.hpp"
#include "isearle/oti.hpp"

using namespace isearle;
using nlohmann::json;

namespace {

struct Run {
  int status;
  std::string out;
};

Run run_cli(const std::string& args) {
  const std::string cmd = std::string(CLI_BINARY) + " " + args + " 2>/dev/null";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe);
  std::string out;
  std::array<char, 4096> buf{};
  while (std::size_t n = fread(buf.data(), 1, buf.size(), pipe)) out.append(buf.data(), n);
  const int raw = pclose(pipe);
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, out};
}

const std::string fixtures = FIXTURE_DIR;

}  // namespace

TEST_CASE("cli evaluate matches the hand-computed mAP") {
  const auto r = run_cli("evaluate --results " + fixtures + "/results_small.jsonl --metric map --k 10");
  REQUIRE(r.status == 0);
  const auto doc = json::parse(r.out);
  // (5/6 + 0 + (1/2 + 2/5) / 3) / 3
  CHECK(doc["result"]["values"]["10"].get<double>() == doctest::Approx(17.0 / 45.0).epsilon(1e-12));
  CHECK(doc["command"] == "evaluate");
  CHECK(doc["config"]["oti"]["iterations"] == 500);

  const auto recall = json::parse(run_cli("evaluate --results " + fixtures + "/results_small.jsonl --metric recall --k 1,5").out);
  CHECK(recall["result"]["values"]["1"].get<double>() == doctest::Approx(1.0 / 3.0));
  CHECK(recall["result"]["values"]["5"].get<double>() == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("cli usage and input errors") {
  auto r = run_cli("evaluate --results " + fixtures + "/results_small.jsonl --unknown-flag");
  CHECK(r.status == 2);
  CHECK(json::parse(r.out)["error"]["kind"] == "usage_error");
  CHECK(run_cli("").status == 2);
  CHECK(run_cli("no-such-command").status == 2);
  r = run_cli("evaluate --results " + fixtures + "/results_small.jsonl --k 0");
  CHECK(r.status == 3);
  CHECK(json::parse(r.out)["error"]["kind"] == "input_error");
  r = run_cli("evaluate --results " + fixtures + "/results_small.jsonl --k 11");
  CHECK(r.status == 3);
}

TEST_CASE("cli invert emits one token record") {
  const auto dir = std::filesystem::temp_directory_path() / "isearle_cli_invert";
  std::filesystem::create_directories(dir);
  StubBackbone bb;
  save_checkpoint(dir / "phi.ckpt", PhiNetwork(PhiArchitecture::for_backbone(bb.info()), 4), "{}");
  save_image(testing::synthetic_image(11), dir / "x.png");

  const auto r = run_cli("invert --phi " + (dir / "phi.ckpt").string() + " --image " + (dir / "x.png").string() +
                         " --out " + (dir / "one.bin").string());
  REQUIRE(r.status == 0);
  const auto result = json::parse(r.out)["result"];
  CHECK(result["image_id"] == "x.png");
  CHECK(result["label"] == pseudo_word_label(0));
  CHECK(result["token"].size() == static_cast<std::size_t>(bb.info().token_dim));
  const auto store = read_token_store(dir / "one.bin");
  REQUIRE(store.size() == 1);
  CHECK(store[0].token[0] == doctest::Approx(result["token"][0].get<double>()).epsilon(1e-6));
  std::filesystem::remove_all(dir);
}

TEST_CASE("cli validate-dataset") {
  const auto ok = run_cli("validate-dataset --dataset " + fixtures + "/circo_stats.json");
  REQUIRE(ok.status == 0);
  CHECK(json::parse(ok.out)["result"]["stats"]["gt_total"] == 4624);

  const auto bad = std::filesystem::temp_directory_path() / "isearle_bad_dataset.json";
  std::ofstream(bad) << R"({"queries": [{"query_id": "0", "reference_id": "a", "relative_caption": "x",
    "shared_concept": "c", "target_id": "b", "ground_truth_ids": ["a"], "semantic_aspects": []}]})";
  const auto r = run_cli("validate-dataset --dataset " + bad.string());
  CHECK(r.status == 3);
  CHECK(json::parse(r.out)["error"]["kind"] == "validation_error");
  std::filesystem::remove(bad);
}

TEST_CASE("cli config is echoed and validated") {
  const auto cfg = std::filesystem::temp_directory_path() / "isearle_cli.toml";
  std::ofstream(cfg) << "seed = 3\n[oti]\niterations = 7\n";
  const auto r = run_cli("--config " + cfg.string() + " evaluate --results " + fixtures + "/results_small.jsonl --k 1");
  REQUIRE(r.status == 0);
  CHECK(json::parse(r.out)["config"]["oti"]["iterations"] == 7);
  std::ofstream(cfg) << "[oti]\nbogus = 1\n";
  CHECK(run_cli("--config " + cfg.string() + " evaluate --results " + fixtures + "/results_small.jsonl").status == 3);
  std::filesystem::remove(cfg);
}
