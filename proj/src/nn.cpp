#include "lowdens/nn.hpp"

#include <atomic>
#include <cmath>
#include <numbers>

#include "lowdens/error.hpp"
#include "lowdens/text_io.hpp"

namespace lowdens {

namespace {

std::uint64_t next_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void activate(const Mat& pre, Activation act, Mat& post) {
  if (act == Activation::Identity) {
    post = pre;
    return;
  }
  post = pre.unaryExpr([](double v) { return v * sigmoid(v); });
}

// Multiplies the incoming adjoint by the activation derivative in place.
void activation_backward(const Mat& pre, Activation act, Mat& adj) {
  if (act == Activation::Identity) return;
  adj.array() *= pre.unaryExpr([](double v) {
                      const double s = sigmoid(v);
                      return s * (1.0 + v * (1.0 - s));
                    }).array();
}

std::string_view activation_name(Activation a) {
  return a == Activation::Smooth ? "silu" : "identity";
}

Activation activation_from_name(const std::string& s) {
  if (s == "silu") return Activation::Smooth;
  if (s == "identity") return Activation::Identity;
  throw InputError("checkpoint: unknown activation '" + s + "'");
}

}  // namespace

double coordinate_rms(const Mat& points) {
  if (points.size() == 0) return 1.0;
  return std::sqrt(points.squaredNorm() / static_cast<double>(points.size()));
}

Mat timestep_features(std::span<const double> t, int features, int horizon) {
  if (features <= 0 || features % 2 != 0) {
    throw ContractError("timestep features must be a positive even count");
  }
  const int half = features / 2;
  Mat out(features, static_cast<Eigen::Index>(t.size()));
  for (std::size_t j = 0; j < t.size(); ++j) {
    const double s = t[j] / static_cast<double>(horizon);
    for (int i = 0; i < half; ++i) {
      // Frequencies pi/2 * 2^i span one quarter turn to 2^(half-2) turns over [0, 1].
      const double w = 0.5 * std::numbers::pi * std::ldexp(1.0, i);
      out(i, static_cast<Eigen::Index>(j)) = std::sin(w * s);
      out(half + i, static_cast<Eigen::Index>(j)) = std::cos(w * s);
    }
  }
  return out;
}

MicroNet::MicroNet() : id_(next_id()) {}

MicroNet::MicroNet(int data_dim, Conditioning cond, std::vector<Layer> layers,
                   std::optional<int> embedding_layer)
    : data_dim_(data_dim),
      cond_(cond),
      layers_(std::move(layers)),
      embedding_layer_(embedding_layer),
      id_(next_id()) {
  if (data_dim_ < 1) throw ContractError("MicroNet: data_dim must be positive");
  if (layers_.empty()) throw ContractError("MicroNet: at least one layer required");
  if (cond_.time_features < 0 || cond_.time_features % 2 != 0 || cond_.class_count < 0 ||
      cond_.horizon < 1) {
    throw ContractError("MicroNet: invalid conditioning");
  }
  Eigen::Index width = input_width();
  for (const auto& l : layers_) {
    if (l.weight.cols() != width || l.bias.size() != l.weight.rows()) {
      throw ContractError("MicroNet: layer dimensions do not chain");
    }
    if (!l.weight.allFinite() || !l.bias.allFinite()) {
      throw ContractError("MicroNet: non-finite parameters");
    }
    width = l.weight.rows();
  }
  if (embedding_layer_ && (*embedding_layer_ < 0 || *embedding_layer_ >= layer_count())) {
    throw ContractError("MicroNet: embedding layer out of range");
  }
}

MicroNet::MicroNet(const MicroNet& other)
    : data_dim_(other.data_dim_),
      cond_(other.cond_),
      layers_(other.layers_),
      embedding_layer_(other.embedding_layer_),
      id_(next_id()) {}

MicroNet& MicroNet::operator=(const MicroNet& other) {
  if (this != &other) {
    data_dim_ = other.data_dim_;
    cond_ = other.cond_;
    layers_ = other.layers_;
    embedding_layer_ = other.embedding_layer_;
    id_ = next_id();
    version_ = 0;
  }
  return *this;
}

MicroNet MicroNet::make(int data_dim, const std::vector<int>& widths, int output_dim,
                        Conditioning cond, std::uint64_t seed,
                        std::optional<int> embedding_layer) {
  std::vector<Layer> layers;
  int in = data_dim + cond.time_features + cond.class_count;
  std::uint32_t index = 0;
  auto add = [&](int out, Activation act) {
    Layer l;
    l.weight.resize(out, in);
    l.bias = Vec::Zero(out);
    l.activation = act;
    CounterRng rng(seed, stream_id(StreamTag::Init, 0, index++));
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = scale * rng.normal();
    }
    layers.push_back(std::move(l));
    in = out;
  };
  for (int w : widths) add(w, Activation::Smooth);
  add(output_dim, Activation::Identity);
  return MicroNet(data_dim, cond, std::move(layers), embedding_layer);
}

int MicroNet::input_width() const noexcept {
  return data_dim_ + cond_.time_features + cond_.class_count;
}

int MicroNet::output_dim() const noexcept {
  return layers_.empty() ? 0 : static_cast<int>(layers_.back().weight.rows());
}

int MicroNet::embedding_dim() const {
  if (!embedding_layer_) throw ContractError("MicroNet: no embedding layer designated");
  return static_cast<int>(layers_[static_cast<std::size_t>(*embedding_layer_)].weight.rows());
}

Mat MicroNet::assemble(const NetInput& in) const {
  if (in.x.rows() != data_dim_) {
    throw ContractError("MicroNet: input has " + std::to_string(in.x.rows()) +
                        " rows, expected " + std::to_string(data_dim_));
  }
  const Eigen::Index n = in.x.cols();
  if (cond_.time_features == 0 && cond_.class_count == 0) return cond_.input_scale * in.x;
  Mat full(input_width(), n);
  full.topRows(data_dim_) = cond_.input_scale * in.x;
  Eigen::Index row = data_dim_;
  if (cond_.time_features > 0) {
    if (static_cast<Eigen::Index>(in.t.size()) != n) {
      throw ContractError("MicroNet: timestep count does not match batch");
    }
    for (double t : in.t) {
      if (!(t >= 0.0 && t <= cond_.horizon)) {
        throw ContractError("MicroNet: timestep outside [0, horizon]");
      }
    }
    full.middleRows(row, cond_.time_features) =
        timestep_features(in.t, cond_.time_features, cond_.horizon);
    row += cond_.time_features;
  }
  if (cond_.class_count > 0) {
    if (in.class_probs.rows() != cond_.class_count || in.class_probs.cols() != n) {
      throw ContractError("MicroNet: class conditioning has wrong shape");
    }
    full.middleRows(row, cond_.class_count) = in.class_probs;
  }
  return full;
}

ForwardCache MicroNet::forward(const NetInput& in) const {
  ForwardCache cache;
  cache.owner = id_;
  cache.version = version_;
  cache.pre.resize(layers_.size());
  cache.post.resize(layers_.size() + 1);
  cache.post[0] = assemble(in);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    cache.pre[l].noalias() = layers_[l].weight * cache.post[l];
    cache.pre[l].colwise() += layers_[l].bias;
    activate(cache.pre[l], layers_[l].activation, cache.post[l + 1]);
  }
  return cache;
}

void MicroNet::check_cache(const ForwardCache& cache) const {
  if (cache.owner != id_ || cache.version != version_ ||
      cache.post.size() != layers_.size() + 1) {
    throw ContractError("MicroNet: stale or foreign forward cache");
  }
}

Mat MicroNet::backward(const ForwardCache& cache, const Mat& adjoint, int from_layer,
                       ParamGrad* param_grad) const {
  check_cache(cache);
  if (from_layer < 0 || from_layer >= layer_count()) {
    throw ContractError("MicroNet: backward start layer out of range");
  }
  const auto& top = cache.layer_output(from_layer);
  if (adjoint.rows() != top.rows() || adjoint.cols() != top.cols()) {
    throw ContractError("MicroNet: adjoint shape mismatch");
  }
  if (param_grad) *param_grad = zero_grad_like(*this);
  Mat adj = adjoint;
  for (int l = from_layer; l >= 0; --l) {
    const auto& layer = layers_[static_cast<std::size_t>(l)];
    activation_backward(cache.pre[static_cast<std::size_t>(l)], layer.activation, adj);
    if (param_grad) {
      auto& g = (*param_grad)[static_cast<std::size_t>(l)];
      g.weight.noalias() = adj * cache.post[static_cast<std::size_t>(l)].transpose();
      g.bias = adj.rowwise().sum();
    }
    Mat next = layer.weight.transpose() * adj;
    adj = std::move(next);
  }
  return cond_.input_scale * adj.topRows(data_dim_);
}

ParamGrad MicroNet::grad_params(const ForwardCache& cache, const Mat& adjoint,
                                std::optional<int> from_layer) const {
  ParamGrad g;
  backward(cache, adjoint, from_layer.value_or(layer_count() - 1), &g);
  return g;
}

Mat MicroNet::grad_input(const ForwardCache& cache, const Mat& adjoint,
                         std::optional<int> from_layer) const {
  return backward(cache, adjoint, from_layer.value_or(layer_count() - 1), nullptr);
}

std::size_t MicroNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

Vec MicroNet::parameters() const {
  Vec out(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index k = 0;
  for (const auto& l : layers_) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) out[k++] = l.weight(r, c);
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) out[k++] = l.bias[r];
  }
  return out;
}

void MicroNet::set_parameters(const Vec& flat) {
  if (flat.size() != static_cast<Eigen::Index>(parameter_count())) {
    throw ContractError("MicroNet: parameter vector has wrong length");
  }
  Eigen::Index k = 0;
  for (auto& l : layers_) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = flat[k++];
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias[r] = flat[k++];
  }
  ++version_;
}

void MicroNet::apply_step(const ParamGrad& direction, double lr) {
  if (direction.size() != layers_.size()) throw ContractError("apply_step: layer count mismatch");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    layers_[l].weight -= lr * direction[l].weight;
    layers_[l].bias -= lr * direction[l].bias;
  }
  ++version_;
}

bool operator==(const MicroNet& a, const MicroNet& b) {
  if (a.data_dim_ != b.data_dim_ || !(a.cond_ == b.cond_) ||
      a.embedding_layer_ != b.embedding_layer_ || a.layers_.size() != b.layers_.size()) {
    return false;
  }
  for (std::size_t l = 0; l < a.layers_.size(); ++l) {
    const auto& x = a.layers_[l];
    const auto& y = b.layers_[l];
    if (x.activation != y.activation || x.weight.rows() != y.weight.rows() ||
        x.weight.cols() != y.weight.cols() || x.weight != y.weight || x.bias != y.bias) {
      return false;
    }
  }
  return true;
}

Vec flatten(const ParamGrad& g) {
  Eigen::Index n = 0;
  for (const auto& l : g) n += l.weight.size() + l.bias.size();
  Vec out(n);
  Eigen::Index k = 0;
  for (const auto& l : g) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) out[k++] = l.weight(r, c);
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) out[k++] = l.bias[r];
  }
  return out;
}

ParamGrad zero_grad_like(const MicroNet& net) {
  ParamGrad g;
  g.reserve(net.layers().size());
  for (const auto& l : net.layers()) {
    g.push_back({Mat::Zero(l.weight.rows(), l.weight.cols()), Vec::Zero(l.bias.size())});
  }
  return g;
}

void accumulate(ParamGrad& into, const ParamGrad& g, double scale) {
  if (into.size() != g.size()) throw ContractError("accumulate: layer count mismatch");
  for (std::size_t l = 0; l < g.size(); ++l) {
    into[l].weight += scale * g[l].weight;
    into[l].bias += scale * g[l].bias;
  }
}

nlohmann::json to_json(const MicroNet& net) {
  nlohmann::json j;
  j["format"] = "lowdens-micronet";
  j["version"] = 1;
  j["data_dim"] = net.data_dim();
  j["time_features"] = net.conditioning().time_features;
  j["class_count"] = net.conditioning().class_count;
  j["horizon"] = net.conditioning().horizon;
  j["input_scale"] = net.conditioning().input_scale;
  j["embedding_layer"] =
      net.embedding_layer() ? nlohmann::json(*net.embedding_layer()) : nlohmann::json(nullptr);
  auto& layers = j["layers"] = nlohmann::json::array();
  for (const auto& l : net.layers()) {
    nlohmann::json lj;
    lj["rows"] = l.weight.rows();
    lj["cols"] = l.weight.cols();
    lj["activation"] = activation_name(l.activation);
    std::vector<double> w;
    w.reserve(static_cast<std::size_t>(l.weight.size()));
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) w.push_back(l.weight(r, c));
    lj["weight"] = std::move(w);
    lj["bias"] = std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size());
    layers.push_back(std::move(lj));
  }
  return j;
}

MicroNet micronet_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "lowdens-micronet") throw InputError("checkpoint: wrong format tag");
    Conditioning cond;
    cond.time_features = j.at("time_features").get<int>();
    cond.class_count = j.at("class_count").get<int>();
    cond.horizon = j.at("horizon").get<int>();
    cond.input_scale = j.at("input_scale").get<double>();
    std::optional<int> emb;
    if (!j.at("embedding_layer").is_null()) emb = j.at("embedding_layer").get<int>();
    std::vector<Layer> layers;
    for (const auto& lj : j.at("layers")) {
      Layer l;
      const auto rows = lj.at("rows").get<Eigen::Index>();
      const auto cols = lj.at("cols").get<Eigen::Index>();
      const auto w = lj.at("weight").get<std::vector<double>>();
      const auto b = lj.at("bias").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(w.size()) != rows * cols ||
          static_cast<Eigen::Index>(b.size()) != rows) {
        throw InputError("checkpoint: payload size does not match layer shape");
      }
      l.weight.resize(rows, cols);
      for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c)
          l.weight(r, c) = w[static_cast<std::size_t>(r * cols + c)];
      l.bias = Eigen::Map<const Vec>(b.data(), rows);
      l.activation = activation_from_name(lj.at("activation").get<std::string>());
      layers.push_back(std::move(l));
    }
    return MicroNet(j.at("data_dim").get<int>(), cond, std::move(layers), emb);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("checkpoint: ") + e.what());
  } catch (const ContractError& e) {
    throw InputError(std::string("checkpoint: ") + e.what());
  }
}

void save_net(const MicroNet& net, const std::filesystem::path& path) {
  write_text_file(path, to_json(net).dump(1) + "\n");
}

MicroNet load_net(const std::filesystem::path& path) {
  const auto text = read_text_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError("checkpoint '" + path.string() + "': " + e.what());
  }
  return micronet_from_json(j);
}

void TrainConfig::validate() const {
  if (!(step_size >= 0.0) || !std::isfinite(step_size)) {
    throw InputError("train: step_size must be finite and non-negative");
  }
  if (steps < 0) throw InputError("train: steps must be non-negative");
  if (batch < 1) throw InputError("train: batch must be >= 1");
  if (!(weight_decay >= 0.0)) throw InputError("train: weight_decay must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InputError("train: momentum must lie in [0, 1)");
  if (!(final_step_fraction >= 0.0 && final_step_fraction <= 1.0)) {
    throw InputError("train: final_step_fraction must lie in [0, 1]");
  }
}

TrainResult train(MicroNet net, const Objective& objective, std::size_t data_size,
                  const TrainConfig& cfg) {
  cfg.validate();
  if (data_size == 0 && cfg.steps > 0) throw InputError("train: empty training data");
  TrainResult result;
  result.loss_trace.reserve(static_cast<std::size_t>(cfg.steps));
  ParamGrad velocity = zero_grad_like(net);
  std::vector<std::size_t> batch(static_cast<std::size_t>(cfg.batch));
  for (int step = 0; step < cfg.steps; ++step) {
    CounterRng rng(cfg.seed, stream_id(StreamTag::Train, 0, static_cast<std::uint32_t>(step)));
    for (auto& b : batch) b = static_cast<std::size_t>(rng.below(data_size));
    LossAndGrad lg = objective(net, batch, rng);
    bool finite = std::isfinite(lg.loss);
    for (const auto& g : lg.grad) finite = finite && g.weight.allFinite() && g.bias.allFinite();
    if (!finite) {
      throw NumericalError("train: non-finite loss or gradient at step " + std::to_string(step));
    }
    result.loss_trace.push_back(lg.loss);
    for (std::size_t l = 0; l < velocity.size(); ++l) {
      const auto& layer = net.layers()[l];
      velocity[l].weight = cfg.momentum * velocity[l].weight + lg.grad[l].weight +
                           cfg.weight_decay * layer.weight;
      velocity[l].bias = cfg.momentum * velocity[l].bias + lg.grad[l].bias;
    }
    const double progress = cfg.steps > 1 ? static_cast<double>(step) / (cfg.steps - 1) : 0.0;
    const double lr = cfg.step_size * (1.0 - (1.0 - cfg.final_step_fraction) * progress);
    net.apply_step(velocity, lr);
  }
  result.net = std::move(net);
  return result;
}

}  // namespace lowdens
