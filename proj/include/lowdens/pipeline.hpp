#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lowdens/config.hpp"
#include "lowdens/diffusion.hpp"
#include "lowdens/guidance.hpp"
#include "lowdens/metrics.hpp"
#include "lowdens/sampler.hpp"

namespace lowdens {

// File layout inside the output directory.
struct ArtifactPaths {
  std::filesystem::path dir;

  explicit ArtifactPaths(std::filesystem::path d) : dir(std::move(d)) {}
  std::filesystem::path train() const { return dir / "train.txt"; }
  std::filesystem::path holdout() const { return dir / "holdout.txt"; }
  std::filesystem::path diffusion() const { return dir / "diffusion.json"; }
  std::filesystem::path corpus() const { return dir / "baseline_corpus.txt"; }
  std::filesystem::path discriminator() const { return dir / "discriminator.json"; }
  std::filesystem::path embedder() const { return dir / "embedder.json"; }
  std::filesystem::path embedder2() const { return dir / "embedder2.json"; }
  std::filesystem::path class_grid() const { return dir / "class_models.json"; }
  std::filesystem::path trace(const std::string& name) const { return dir / (name + "_trace.txt"); }
};

struct WorldData {
  LabeledDataset train;
  LabeledDataset holdout;
};

WorldData generate_world(const ExperimentConfig& cfg);

struct Artifacts {
  DiffusionModel diffusion;
  MicroNet embedder;
  MicroNet embedder2;
  MicroNet discriminator;
  ClassModelGrid class_grid;

  GuidanceArtifacts view() const { return {&embedder, &class_grid, &discriminator}; }
};

struct TrainingReport {
  std::vector<double> diffusion_trace, embedder_trace, embedder2_trace, discriminator_trace;
  double discriminator_accuracy = 0.0;
  LabeledDataset corpus;
};

// Diffusion model, then a baseline synthetic corpus the size of the training
// set, then the discriminator on real vs corpus, then both embedders and the
// class-model grid of the first embedder.
Artifacts train_all(const ExperimentConfig& cfg, const LabeledDataset& train, TrainingReport* report = nullptr);

void save_artifacts(const Artifacts& art, const ArtifactPaths& paths);
void save_training_report(const TrainingReport& report, const ArtifactPaths& paths);
Artifacts load_artifacts(const ArtifactPaths& paths);
WorldData load_world(const ArtifactPaths& paths);

std::string format_trace(const std::vector<double>& trace);

// Baseline samples of every class with the given per-class count.
LabeledDataset baseline_corpus(const DiffusionModel& model, const std::vector<int>& per_class, std::uint64_t seed,
                               int stride);

// Per-class hardness thresholds at percentile p of the holdout hardness.
std::vector<double> holdout_thresholds(const Artifacts& art, const LabeledDataset& holdout, double percentile);

struct CostComparison {
  double percentile = 0.0;
  CostLedger rejection;
  CostLedger guided;
};

// Quota split evenly over classes, each class against its own threshold.
CostComparison compare_cost(const ExperimentConfig& cfg, const Artifacts& art, const LabeledDataset& holdout,
                            double percentile, const GuidanceConfig& guidance);

std::string format_ledger(const CostLedger& ledger);
CostLedger parse_ledger(std::string_view text);

// Writes (x, y) pairs, one per line, with a schema header.
void write_series(const std::filesystem::path& path, const std::string& x_name, const std::string& y_name,
                  const std::vector<double>& x, const std::vector<double>& y);

// Samples of every class from one sampler configuration.
struct SampleRequest {
  SamplerKind kind = SamplerKind::Baseline;
  GuidanceConfig guidance;
  int substeps = 50;
  double y_max = 1.0;
  int n_per_class = 250;
  std::uint64_t seed = 0;
  int stride = 1;
};

SamplerRun sample_all_classes(const Artifacts& art, const SampleRequest& req);

// Per-sample -log q(x | y) under the true mixture.
std::vector<double> neg_log_true_density(const std::vector<MixtureSpec>& world, const Mat& points,
                                         const std::vector<int>& labels);

}  // namespace lowdens
