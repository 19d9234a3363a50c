#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "lowdens/rng.hpp"

namespace lowdens {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Smooth is SiLU, x * sigmoid(x): differentiable everywhere.
enum class Activation { Smooth, Identity };

struct Layer {
  Mat weight;  // out x in
  Vec bias;
  Activation activation = Activation::Smooth;
};

// Optional extra inputs concatenated after the data coordinates:
// sinusoidal features of t / horizon, then a class-probability vector.
struct Conditioning {
  int time_features = 0;
  int class_count = 0;
  int horizon = 1;
  double input_scale = 1.0;  // data coordinates are multiplied by this on entry

  bool operator==(const Conditioning&) const = default;
};

// Sinusoidal embedding of t / horizon; features must be even.
// Root mean square of all coordinates; 1 for an empty matrix.
double coordinate_rms(const Mat& points);

Mat timestep_features(std::span<const double> t, int features, int horizon);

// A batch of network inputs, one sample per column.
struct NetInput {
  Mat x;                  // data_dim x n
  std::vector<double> t;  // n entries when time conditioned
  Mat class_probs;        // class_count x n when class conditioned
};

struct ForwardCache {
  std::vector<Mat> pre;   // pre-activation of each layer
  std::vector<Mat> post;  // post[0] is the assembled input, post[l + 1] the output of layer l
  std::uint64_t owner = 0;
  std::uint64_t version = 0;

  const Mat& output() const { return post.back(); }
  const Mat& layer_output(int layer) const { return post[static_cast<std::size_t>(layer) + 1]; }
};

struct LayerGrad {
  Mat weight;
  Vec bias;
};
using ParamGrad = std::vector<LayerGrad>;

// Small feed-forward network with reverse-mode gradients with respect to both
// parameters and inputs. Instances are immutable unless explicitly updated;
// every update bumps a version so caches from older parameters are rejected.
class MicroNet {
 public:
  MicroNet();
  MicroNet(int data_dim, Conditioning cond, std::vector<Layer> layers,
           std::optional<int> embedding_layer = std::nullopt);
  MicroNet(const MicroNet& other);
  MicroNet& operator=(const MicroNet& other);
  MicroNet(MicroNet&&) noexcept = default;
  MicroNet& operator=(MicroNet&&) noexcept = default;

  // Hidden layers are Smooth, the last layer is Identity. Weights are drawn
  // from N(0, 1/fan_in), biases start at zero.
  static MicroNet make(int data_dim, const std::vector<int>& widths, int output_dim,
                       Conditioning cond, std::uint64_t seed,
                       std::optional<int> embedding_layer = std::nullopt);

  int data_dim() const noexcept { return data_dim_; }
  int input_width() const noexcept;
  int output_dim() const noexcept;
  int layer_count() const noexcept { return static_cast<int>(layers_.size()); }
  const Conditioning& conditioning() const noexcept { return cond_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  // Layer whose output is the feature embedding f(x), if designated.
  std::optional<int> embedding_layer() const noexcept { return embedding_layer_; }
  int embedding_dim() const;

  ForwardCache forward(const NetInput& in) const;
  Mat evaluate(const NetInput& in) const { return forward(in).output(); }

  // Gradient of sum_ij adjoint(i, j) * output(i, j) with respect to the
  // parameters. The adjoint is taken at the output of layer from_layer
  // (default: the final layer); layers past it contribute zero.
  ParamGrad grad_params(const ForwardCache& cache, const Mat& adjoint,
                        std::optional<int> from_layer = std::nullopt) const;
  // Same contraction, differentiated with respect to the data coordinates.
  Mat grad_input(const ForwardCache& cache, const Mat& adjoint,
                 std::optional<int> from_layer = std::nullopt) const;

  std::size_t parameter_count() const;
  Vec parameters() const;
  void set_parameters(const Vec& flat);
  // params -= lr * direction (layer-wise), with bump of version.
  void apply_step(const ParamGrad& direction, double lr);

  std::uint64_t id() const noexcept { return id_; }
  std::uint64_t version() const noexcept { return version_; }

  friend bool operator==(const MicroNet& a, const MicroNet& b);

 private:
  Mat assemble(const NetInput& in) const;
  void check_cache(const ForwardCache& cache) const;
  // Walks backward from from_layer; accumulates parameter grads when requested.
  Mat backward(const ForwardCache& cache, const Mat& adjoint, int from_layer,
               ParamGrad* param_grad) const;

  int data_dim_ = 0;
  Conditioning cond_;
  std::vector<Layer> layers_;
  std::optional<int> embedding_layer_;
  std::uint64_t id_ = 0;
  std::uint64_t version_ = 0;
};

Vec flatten(const ParamGrad& g);
ParamGrad zero_grad_like(const MicroNet& net);
void accumulate(ParamGrad& into, const ParamGrad& g, double scale = 1.0);

// Checkpoint: layer shapes plus row-major parameters.
nlohmann::json to_json(const MicroNet& net);
MicroNet micronet_from_json(const nlohmann::json& j);
void save_net(const MicroNet& net, const std::filesystem::path& path);
MicroNet load_net(const std::filesystem::path& path);

struct TrainConfig {
  double step_size = 0.01;
  int steps = 1000;
  int batch = 64;
  std::uint64_t seed = 0;
  double weight_decay = 0.0;
  double momentum = 0.9;
  // Step size decays linearly to step_size * final_step_fraction.
  double final_step_fraction = 1.0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct LossAndGrad {
  double loss = 0.0;
  ParamGrad grad;
};

// Minibatch objective. `batch` holds data indices drawn by the trainer; `rng`
// is a per-step stream for any extra randomness (noise, timesteps).
using Objective = std::function<LossAndGrad(const MicroNet& net,
                                            std::span<const std::size_t> batch,
                                            CounterRng& rng)>;

struct TrainResult {
  MicroNet net;
  std::vector<double> loss_trace;
};

// SGD with optional heavy-ball momentum. Throws NumericalError naming the step
// when the loss or gradient stops being finite.
TrainResult train(MicroNet net, const Objective& objective, std::size_t data_size,
                  const TrainConfig& cfg);

}  // namespace lowdens
