#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "lowdens/diffusion.hpp"
#include "lowdens/nn.hpp"
#include "lowdens/synthetic_data.hpp"

namespace lowdens {

struct ClassGaussian {
  Vec mean;
  Mat covariance;  // after shrinkage
  Mat precision;
  double log_det = 0.0;
  double shrinkage = 0.0;  // lambda added to the diagonal
  std::size_t count = 0;
};

// Per-class Gaussian model of embeddings at one timestep.
struct GaussianClassModel {
  int embedding_dim = 0;
  int timestep = 0;
  bool identity_precision = false;
  std::vector<ClassGaussian> classes;

  int num_classes() const noexcept { return static_cast<int>(classes.size()); }
  const ClassGaussian& at(int y) const;
};

// Class models on a grid of timesteps; lookups pick the nearest grid point.
struct ClassModelGrid {
  std::vector<GaussianClassModel> models;  // ascending timestep

  const GaussianClassModel& nearest(int t) const;
  const GaussianClassModel& clean() const;  // the t = 0 entry
};

struct ShrinkageRule {
  double relative = 1e-3;  // lambda = relative * trace(S) / k
  double floor = 1e-6;     // lower bound so degenerate classes stay SPD
};

// Empirical mean/covariance per class of f(x) from raw per-class embeddings
// (one row per sample). Throws InputError naming any class without samples.
GaussianClassModel fit_gaussians(const std::vector<Mat>& per_class_embeddings, int timestep,
                                 bool identity_precision, const ShrinkageRule& rule = {});

// Embeddings f(x_t) of every row, one row per point.
Mat embed(const MicroNet& embedder, const Mat& points, double t);

// Fits on f applied to the data, forward-diffused to timestep t when t > 0
// (noise drawn from `seed`).
GaussianClassModel fit_class_model(const MicroNet& embedder, const LabeledDataset& ds,
                                   std::optional<int> t, const NoiseSchedule* sch = nullptr,
                                   std::uint64_t seed = 0, const ShrinkageRule& rule = {});

// Grid 0, stride, 2*stride, ..., T. Timesteps above 3T/4 use identity precision.
ClassModelGrid fit_class_model_grid(const MicroNet& embedder, const LabeledDataset& ds,
                                    const NoiseSchedule& sch, int grid_stride, std::uint64_t seed,
                                    const ShrinkageRule& rule = {});

// Negative Gaussian log-likelihood of an embedding under class y.
double hardness_score(const GaussianClassModel& model, const Vec& embedding, int y);

struct ScalarAndGrad {
  double value = 0.0;
  Vec grad;  // with respect to the data coordinates x
};

// H(f(x_t), y) and its gradient through the embedder.
ScalarAndGrad hardness_with_grad(const GaussianClassModel& model, const MicroNet& embedder,
                                 const Vec& x, double t, int y);

enum class LossSpace { EmbeddingHardness, LogitSoftmax };
enum class GradNorm { UnitLinf, None };

struct GuidanceConfig {
  double alpha = 0.0;
  double beta_fid = 0.0;
  double tau = 1.0;
  LossSpace loss_space = LossSpace::EmbeddingHardness;
  GradNorm grad_norm = GradNorm::UnitLinf;

  void validate() const;
  bool operator==(const GuidanceConfig&) const = default;
};

// log softmax_y(H(x, .) / tau): every class hypothesis j is evaluated on the
// same input x.
ScalarAndGrad loss_g1(const GaussianClassModel& model, const MicroNet& embedder, const Vec& x,
                      double t, int y, double tau);

// -log softmax_y(logits / tau) of the embedder's classification head.
ScalarAndGrad loss_g1_logit(const MicroNet& classifier, const Vec& x, double t, int y, double tau);

// -log softmax_real(logits / tau) of the discriminator; class 1 is real.
ScalarAndGrad loss_g2(const MicroNet& discriminator, const Vec& x, double t, double tau);

struct ClassifierConfig {
  std::vector<int> hidden{64, 64, 64};
  int embedding_width = 16;
  int time_features = 16;
  std::uint64_t init_seed = 0;
  TrainConfig sgd;
  std::uint64_t noise_seed = 0;
  double time_power = 1.0;  // t = floor((T + 1) u^p); p > 1 favors small t
};

struct ClassifierTrainResult {
  MicroNet net;
  std::vector<double> loss_trace;
};

// Noise-conditioned classifier whose penultimate layer is the embedding.
// Training inputs are forward-diffused to t = floor((T + 1) u^p), u ~ U(0, 1).
ClassifierTrainResult train_embedder(const LabeledDataset& ds, const NoiseSchedule& sch,
                                     const ClassifierConfig& cfg);

struct DiscriminatorTrainResult {
  MicroNet net;
  std::vector<double> loss_trace;
  double heldout_accuracy = 0.0;  // at t = 0
};

// Real (class 1) versus synthetic (class 0); 20% of each set is held out for
// the accuracy estimate.
DiscriminatorTrainResult train_discriminator(const LabeledDataset& real,
                                             const LabeledDataset& synthetic,
                                             const NoiseSchedule& sch, const ClassifierConfig& cfg);

void save_class_grid(const ClassModelGrid& grid, const std::filesystem::path& path);
ClassModelGrid load_class_grid(const std::filesystem::path& path);

}  // namespace lowdens
