#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <regex>
#include <string>
#include <vector>

#include "lowdens/cli.hpp"
#include "lowdens/config.hpp"
#include "lowdens/error.hpp"

using namespace lowdens;
namespace fs = std::filesystem;

namespace {

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "lowdens");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / "lowdens_unit" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string set_key(std::string text, const std::string& section, const std::string& key, const std::string& value) {
  const auto s = text.find("[" + section + "]");
  REQUIRE(s != std::string::npos);
  const auto k = text.find("\n" + key + " = ", s);
  REQUIRE(k != std::string::npos);
  const auto eol = text.find('\n', k + 1);
  return text.replace(k + 1, eol - k - 1, key + " = " + value);
}

// Small enough that the whole pipeline runs in seconds.
fs::path tiny_config(const fs::path& dir) {
  std::string t = serialize_config(ExperimentConfig::defaults());
  t = set_key(t, "world", "n_per_class", "60");
  t = set_key(t, "schedule", "steps", "20");
  t = set_key(t, "diffusion", "hidden", "16 16");
  t = set_key(t, "diffusion", "steps", "40");
  for (const char* sec : {"embedder", "embedder2", "discriminator"}) {
    t = set_key(t, sec, "hidden", "16 16");
    t = set_key(t, sec, "steps", "40");
  }
  t = set_key(t, "class_model", "grid_stride", "5");
  t = set_key(t, "sampling", "n_per_class", "4");
  t = set_key(t, "sampling", "ddim_substeps", "5");
  t = set_key(t, "cost", "quota", "3");
  t = set_key(t, "cost", "max_draws", "40");
  t = set_key(t, "output", "dir", dir.string());
  const auto path = dir / "tiny.ini";
  std::ofstream(path) << t;
  return path;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("config round trip") {
  const auto d = ExperimentConfig::defaults();
  CHECK_NOTHROW(d.validate());
  const auto text = serialize_config(d);
  CHECK(parse_config(text) == d);
  CHECK(serialize_config(parse_config(text)) == text);
}

TEST_CASE("invalid config values are rejected") {
  const auto text = serialize_config(ExperimentConfig::defaults());
  CHECK_THROWS_AS(parse_config(set_key(text, "schedule", "steps", "0")).validate(), InputError);
  CHECK_THROWS_AS(parse_config(set_key(text, "diffusion", "steps", "0")).validate(), InputError);
  CHECK_THROWS_AS(parse_config(set_key(text, "guidance", "tau", "0")).validate(), InputError);
  CHECK_THROWS_AS(parse_config(set_key(text, "world", "n_per_class", "many")), ParseError);
  CHECK_THROWS_AS(parse_config(text + "\n[nowhere]\nx = 1\n"), InputError);
}

TEST_CASE("exit codes") {
  const auto dir = fresh_dir("cli_codes");
  const auto d = dir.string();
  CHECK(cli({}) == kExitUsage);
  CHECK(cli({"frobnicate"}) == kExitUsage);
  CHECK(cli({"sample", "--sampler", "guided", "--y-max", "0.5", "--dir", d}) == kExitUsage);
  CHECK(cli({"sample", "--sampler", "baseline", "--substeps", "10", "--dir", d}) == kExitUsage);
  CHECK(cli({"sample", "--sampler", "reject", "--dir", d}) == kExitUsage);
  CHECK(cli({"sample", "--sampler", "nope", "--dir", d}) == kExitUsage);
  // nothing trained in this directory yet
  CHECK(cli({"sample", "--sampler", "baseline", "--dir", d}) == kExitInput);
  CHECK(cli({"memcheck", (dir / "missing.txt").string(), "--dir", d}) == kExitInput);
  CHECK(cli({"train", "--config", (dir / "absent.ini").string()}) == kExitInput);

  CHECK(cli({"init-config", (dir / "default.ini").string()}) == kExitOk);
  CHECK(load_config(dir / "default.ini") == ExperimentConfig::defaults());
}

TEST_CASE("memorization alarm") {
  const auto dir = fresh_dir("cli_mem");
  const auto cfg = tiny_config(dir).string();
  REQUIRE(cli({"gen", "--config", cfg}) == kExitOk);
  CHECK(cli({"memcheck", (dir / "train.txt").string(), "--space", "ambient", "--config", cfg}) == kExitAlarm);
  CHECK(cli({"memcheck", (dir / "holdout.txt").string(), "--space", "ambient", "--config", cfg}) == kExitOk);
}

TEST_CASE("tiny end-to-end pipeline") {
  const auto dir = fresh_dir("cli_pipeline");
  const auto cfg = tiny_config(dir).string();
  REQUIRE(cli({"gen", "--config", cfg}) == kExitOk);
  REQUIRE(cli({"train", "--config", cfg}) == kExitOk);
  for (const char* f : {"diffusion.json", "embedder.json", "discriminator.json", "class_models.json"}) {
    CHECK(fs::exists(dir / f));
  }
  CHECK(cli({"sample", "--sampler", "baseline", "--config", cfg}) == kExitOk);
  CHECK(cli({"sample", "--sampler", "guided", "--alpha", "0.5", "--beta", "0.5", "--config", cfg}) == kExitOk);
  CHECK(cli({"sample", "--sampler", "ddim", "--substeps", "4", "--config", cfg}) == kExitOk);
  CHECK(cli({"sample", "--sampler", "smooth", "--y-max", "0.7", "--config", cfg}) == kExitOk);
  CHECK(cli({"sample", "--sampler", "reject", "--percentile", "50", "--config", cfg}) == kExitOk);
  CHECK(cli({"sample", "--sampler", "guided", "--percentile", "50", "--config", cfg}) == kExitOk);
  CHECK(fs::exists(dir / "samples_guided.txt.ledger.txt"));
  CHECK(cli({"grid", "--alphas", "0,0.5", "--betas", "0", "--n", "2", "--config", cfg}) == kExitOk);
  CHECK(cli({"eval", (dir / "samples_baseline.txt").string(), (dir / "samples_guided.txt").string(), "--no-nll",
             "--config", cfg}) == kExitOk);
  CHECK(cli({"cost", "--guided", (dir / "samples_guided.txt").string(), "--reject",
             (dir / "samples_reject.txt").string(), "--config", cfg}) == kExitOk);
  CHECK(fs::exists(dir / "cost.txt"));
}

}
