#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <string_view>
#include <vector>

#include "lowdens/diffusion.hpp"
#include "lowdens/guidance.hpp"

namespace lowdens {

enum class SamplerKind { Baseline, Alpha, Guided, Ddim, Smooth, Reject, GuidedQuota };

std::string_view to_string(SamplerKind kind);
SamplerKind sampler_kind_from_string(std::string_view s);

// Read-only networks and statistics consulted by the guidance terms.
struct GuidanceArtifacts {
  const MicroNet* embedder = nullptr;  // classifier with a designated embedding layer
  const ClassModelGrid* class_models = nullptr;
  const MicroNet* discriminator = nullptr;
};

// One reverse step of one chain, handed to an observer after the update.
struct StepRecord {
  int chain = 0;
  int t = 0;
  int t_prev = 0;
  const Vec* x_t = nullptr;
  const Vec* mean = nullptr;      // mu_theta (DDIM: deterministic DDIM mean)
  const Vec* variance = nullptr;  // diagonal of Sigma_theta
  const Vec* noise = nullptr;     // z (zero on the final step and for DDIM)
  const Vec* u1 = nullptr;        // low-density guidance increment before masking
  const Vec* u2 = nullptr;        // fidelity guidance increment before masking
  double mask = 1.0;              // s of the final-step branch
  const Vec* x_next = nullptr;
};
using StepObserver = std::function<void(const StepRecord&)>;

struct SamplerOptions {
  int stride = 1;
  std::vector<int> snapshot_timesteps;
  StepObserver observer;
  std::uint32_t chain_offset = 0;
};

struct Snapshot {
  int t = 0;
  Mat points;  // n x d, state x_t before the step at t (t = 0: final output)
};

struct RunMeta {
  SamplerKind kind = SamplerKind::Baseline;
  GuidanceConfig guidance;
  std::uint64_t seed = 0;
  int stride = 1;
  int substeps = 0;
  double y_max = 1.0;
  double threshold = -std::numeric_limits<double>::infinity();
};

struct SamplerRun {
  Mat samples;  // n x d
  std::vector<int> labels;
  Mat initial_latents;  // n x d, x_T of every chain
  std::vector<Snapshot> snapshots;  // decreasing t
  std::vector<long long> evaluations;  // denoiser evaluations per sample
  long long guidance_evaluations = 0;
  RunMeta meta;

  Eigen::Index size() const noexcept { return samples.rows(); }
  long long total_evaluations() const;
  LabeledDataset as_dataset(int num_classes) const;
};

// Concatenates runs (same kind of sampler, different classes or batches).
SamplerRun concat_runs(const std::vector<SamplerRun>& runs);

// g / max_i |g_i|; the zero vector maps to itself.
Vec normalize_grad(const Vec& g, GradNorm mode = GradNorm::UnitLinf);

// Ancestral reverse process x_{t-1} = mu + Sigma^{1/2} z, z = 0 on the final step.
SamplerRun baseline_sample(const DiffusionModel& model, int y, int n, std::uint64_t seed,
                           const SamplerOptions& opts = {});

// Adds alpha * Sigma * normalize(grad L_g1) before the final step. cfg.beta_fid must be 0.
SamplerRun sample_alpha(const DiffusionModel& model, const GuidanceArtifacts& art, int y,
                        const GuidanceConfig& cfg, int n, std::uint64_t seed,
                        const SamplerOptions& opts = {});

// Low-density plus fidelity guidance; the fidelity term ascends log p(real).
SamplerRun sample_guided(const DiffusionModel& model, const GuidanceArtifacts& art, int y,
                         const GuidanceConfig& cfg, int n, std::uint64_t seed,
                         const SamplerOptions& opts = {});

struct GridCell {
  double alpha = 0.0;
  double beta_fid = 0.0;
  SamplerRun run;
};

// One guided run per (alpha, beta_fid) pair; every cell uses the same seed and
// therefore the same latents and noise.
std::vector<GridCell> sample_grid(const DiffusionModel& model, const GuidanceArtifacts& art, int y,
                                  const std::vector<double>& alphas, const std::vector<double>& betas,
                                  const GuidanceConfig& base, int n, std::uint64_t shared_seed,
                                  const SamplerOptions& opts = {});

// Deterministic DDIM on `substeps` evenly spaced timesteps. Guidance enters as
// eps' = eps - sqrt(1 - abar_t) (alpha g1 + beta_fid g2) with normalized g; the
// resulting increment is reported with the jump's effective Sigma.
SamplerRun sample_ddim_guided(const DiffusionModel& model, const GuidanceArtifacts& art, int y,
                              int substeps, const GuidanceConfig& cfg, int n, std::uint64_t seed,
                              const SamplerOptions& opts = {});

// Baseline sampling conditioned on a smoothed class vector: y_max on class y,
// the remainder spread evenly over the other classes.
SamplerRun sample_smoothed_embedding(const DiffusionModel& model, int y, double y_max, int n,
                                     std::uint64_t seed, const SamplerOptions& opts = {});

Vec smoothed_class_vector(int y, int classes, double y_max);

struct CostLedger {
  double threshold = 0.0;
  int quota = 0;
  long long draws = 0;
  long long accepted = 0;
  long long denoiser_evaluations = 0;
  long long guidance_evaluations = 0;
  bool quota_met = false;

  double acceptance_rate() const { return draws > 0 ? static_cast<double>(accepted) / draws : 0.0; }
};

// Order-insensitive sum of per-chain or per-class ledgers.
CostLedger merge(const CostLedger& a, const CostLedger& b);

struct QuotaRun {
  SamplerRun run;  // accepted samples only
  CostLedger ledger;
};

// Clean-data hardness of each sample under its own class.
std::vector<double> sample_hardness(const GuidanceArtifacts& art, const Mat& samples,
                                    const std::vector<int>& labels);

// Draws baseline chains in order and keeps those with hardness > threshold
// until `quota` are accepted or `max_draws` chains are spent.
QuotaRun rejection_baseline(const DiffusionModel& model, const GuidanceArtifacts& art, int y,
                            double hardness_threshold, int quota, long long max_draws,
                            std::uint64_t seed, const SamplerOptions& opts = {});

// Same acceptance rule applied to guided chains.
QuotaRun guided_until_quota(const DiffusionModel& model, const GuidanceArtifacts& art, int y,
                            const GuidanceConfig& cfg, double hardness_threshold, int quota,
                            long long max_draws, std::uint64_t seed, const SamplerOptions& opts = {});

// Dataset-format sample file plus a JSON metadata sidecar (<path>.meta.json).
void save_run(const SamplerRun& run, int num_classes, const std::filesystem::path& path);
SamplerRun load_run(const std::filesystem::path& path);
std::filesystem::path sidecar_path(const std::filesystem::path& path);

}  // namespace lowdens
