#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "lowdens/nn.hpp"
#include "lowdens/synthetic_data.hpp"

namespace lowdens {

// Linear variance ladder. Index 0 is the clean-data convention
// (alpha_bar = 1); steps are 1..T.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;
  static NoiseSchedule linear(int steps, double beta_start, double beta_end);

  int steps() const noexcept { return steps_; }
  double beta_start() const noexcept { return beta_start_; }
  double beta_end() const noexcept { return beta_end_; }
  double sched_beta(int t) const;
  double alpha(int t) const;
  double alpha_bar(int t) const;
  // Posterior q(x_{t-1} | x_t, x_0) variance. At t = 1 the exact value is 0;
  // it is clipped to the t = 2 value so the reverse step stays non-degenerate.
  double posterior_var(int t) const;

  bool operator==(const NoiseSchedule& o) const = default;

 private:
  void check(int t, int lo) const;

  int steps_ = 0;
  double beta_start_ = 0.0;
  double beta_end_ = 0.0;
  std::vector<double> beta_, alpha_bar_, posterior_var_;
};

enum class VarianceMode { FixedPosterior, FixedSchedBeta };

struct DiffusionModel {
  MicroNet denoiser;  // predicts the injected noise from (x_t, t, class)
  NoiseSchedule schedule;
  bool class_conditional = true;
  int num_classes = 0;
  VarianceMode variance = VarianceMode::FixedPosterior;
  double data_scale = 1.0;  // RMS coordinate of the training data

  int dim() const noexcept { return denoiser.data_dim(); }
};

// Factor applied to x_t before the denoiser, 1 / sqrt(abar s^2 + 1 - abar), which
// keeps the network input near unit scale at every t.
double denoiser_input_gain(const DiffusionModel& model, int t);

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) noise, with t = 0 returning x0.
Vec forward_diffuse(const Vec& x0, int t, const Vec& noise, const NoiseSchedule& sch);

// Precomputed coefficients of one reverse step between two timesteps of a
// (possibly strided) sampling plan.
struct ReverseStep {
  int t = 0;       // current timestep
  int t_prev = 0;  // timestep reached by this step (0 on the last step)
  double alpha_bar = 1.0;
  double alpha_bar_prev = 1.0;
  double beta = 0.0;      // 1 - alpha_bar / alpha_bar_prev
  double variance = 0.0;  // reverse-step variance for the chosen mode
};

// Evenly spaced plan over K steps: t_i = round(i * T / K), walked from K down to 1.
std::vector<ReverseStep> reverse_plan(const NoiseSchedule& sch, int num_steps, VarianceMode mode);
// K = ceil(T / stride).
std::vector<ReverseStep> strided_plan(const NoiseSchedule& sch, int stride, VarianceMode mode);

struct ReverseMoments {
  Vec mean;
  Vec variance;  // diagonal of Sigma_theta
  Vec eps;       // denoiser prediction
};

// One-hot conditioning vector for class y (empty when unconditional).
Vec one_hot(int y, int classes);

// Denoiser prediction for one point; class_probs may be empty for unconditional models.
Vec predict_noise(const DiffusionModel& model, const Vec& x_t, int t, const Vec& class_probs);

ReverseMoments reverse_moments(const DiffusionModel& model, const Vec& x_t, const ReverseStep& step,
                               const Vec& class_probs);

// mu_theta and Sigma_theta at timestep t of the stride-1 schedule.
ReverseMoments posterior_mean_var(const DiffusionModel& model, const Vec& x_t, int t, int y);

struct DiffusionTrainConfig {
  std::vector<int> hidden{64, 64, 64, 64};
  int time_features = 16;
  std::uint64_t init_seed = 0;
  TrainConfig sgd;
};

struct DiffusionTrainResult {
  DiffusionModel model;
  std::vector<double> loss_trace;
};

// Minimizes E || eps - eps_hat(x_t, t, y) ||^2 over random data points,
// t ~ U{1..T} and eps ~ N(0, I).
DiffusionTrainResult train_diffusion(const LabeledDataset& ds, const NoiseSchedule& sch,
                                     const DiffusionTrainConfig& cfg,
                                     VarianceMode mode = VarianceMode::FixedPosterior);

struct NllEstimate {
  double mean = 0.0;            // nats per dimension
  double standard_error = 0.0;  // of the mean
};

// Monte-Carlo variational bound: prior KL + T * E_t[L_t], with L_t the
// Gaussian KL between the true posterior and the model's reverse step for
// t >= 2 and the continuous decoder NLL at t = 1.
NllEstimate vlb_nll(const DiffusionModel& model, const Vec& x0, int y, int n_mc, std::uint64_t seed);

void save_diffusion(const DiffusionModel& model, const std::filesystem::path& path);
DiffusionModel load_diffusion(const std::filesystem::path& path);

}  // namespace lowdens
