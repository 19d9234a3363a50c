#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "lowdens/diffusion.hpp"
#include "lowdens/guidance.hpp"
#include "lowdens/metrics.hpp"
#include "lowdens/synthetic_data.hpp"

namespace lowdens {

struct WorldConfig {
  std::vector<MixtureSpec> classes;
  int n_per_class = 2000;
  std::uint64_t seed = 1;
  double holdout_fraction = 0.2;
  std::uint64_t split_seed = 2;

  int num_classes() const noexcept { return static_cast<int>(classes.size()); }
  int dim() const noexcept { return classes.empty() ? 0 : classes.front().dim(); }
};

struct ScheduleConfig {
  int steps = 200;
  double beta_start = 5e-4;
  double beta_end = 0.1;
  int stride = 1;
  VarianceMode variance = VarianceMode::FixedPosterior;

  NoiseSchedule build() const { return NoiseSchedule::linear(steps, beta_start, beta_end); }
};

struct ClassModelConfig {
  int grid_stride = 10;
  std::uint64_t seed = 41;
  ShrinkageRule shrinkage;
};

struct SamplingConfig {
  int n_per_class = 250;
  std::uint64_t seed = 100;
  std::uint64_t corpus_seed = 90;
  int ddim_substeps = 50;
  double y_max = 1.0;
};

struct MetricsConfig {
  int knn_k = 5;
  int lof_k = 20;
  int precision_k = 3;
  int top_p = 10;
  int neighbor_k = 5;
  MetricSpace space = MetricSpace::Embedding;
  int nll_samples = 4;         // Monte Carlo draws per sample for the VLB
  int correlation_rows = 200;  // samples entering the correlation report
  std::uint64_t nll_seed = 77;
};

struct CostConfig {
  int quota = 200;  // split evenly over classes
  long long max_draws = 20000;
  std::vector<double> percentiles{50.0, 90.0};
  std::uint64_t seed = 300;
};

struct ExperimentConfig {
  WorldConfig world;
  ScheduleConfig schedule;
  DiffusionTrainConfig diffusion;
  ClassifierConfig embedder;
  ClassifierConfig embedder2;
  ClassifierConfig discriminator;
  ClassModelConfig class_model;
  GuidanceConfig guidance;
  SamplingConfig sampling;
  MetricsConfig metrics;
  CostConfig cost;
  std::string out_dir = "out";

  static ExperimentConfig defaults();
  void validate() const;
};

ExperimentConfig parse_config(std::string_view text);
std::string serialize_config(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path);

// Compared through the canonical serialization, which round-trips every value.
bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);

}  // namespace lowdens
