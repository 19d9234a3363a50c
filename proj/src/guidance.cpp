#include "lowdens/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lowdens/error.hpp"
#include "lowdens/text_io.hpp"

namespace lowdens {

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

// log-sum-exp with max subtraction.
double log_sum_exp(const Vec& v) {
  const double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

Vec softmax(const Vec& v) {
  const double m = v.maxCoeff();
  Vec e = (v.array() - m).exp();
  return e / e.sum();
}

NetInput single_input(const Vec& x, double t, const MicroNet& net) {
  NetInput in;
  in.x = x;
  if (net.conditioning().time_features > 0) in.t = {t};
  return in;
}

}  // namespace

const ClassGaussian& GaussianClassModel::at(int y) const {
  if (y < 0 || y >= num_classes()) {
    throw ContractError("class model: class " + std::to_string(y) + " not present");
  }
  return classes[static_cast<std::size_t>(y)];
}

const GaussianClassModel& ClassModelGrid::nearest(int t) const {
  if (models.empty()) throw ContractError("class model grid is empty");
  const GaussianClassModel* best = &models.front();
  for (const auto& m : models) {
    if (std::abs(m.timestep - t) < std::abs(best->timestep - t)) best = &m;
  }
  return *best;
}

const GaussianClassModel& ClassModelGrid::clean() const {
  for (const auto& m : models) {
    if (m.timestep == 0) return m;
  }
  throw ContractError("class model grid has no t = 0 entry");
}

GaussianClassModel fit_gaussians(const std::vector<Mat>& per_class, int timestep,
                                 bool identity_precision, const ShrinkageRule& rule) {
  if (per_class.empty()) throw InputError("fit_class_model: no classes");
  GaussianClassModel model;
  model.embedding_dim = static_cast<int>(per_class.front().cols());
  model.timestep = timestep;
  model.identity_precision = identity_precision;
  const int k = model.embedding_dim;
  for (std::size_t y = 0; y < per_class.size(); ++y) {
    const Mat& e = per_class[y];
    if (e.rows() == 0) {
      throw InputError("fit_class_model: class " + std::to_string(y) + " has no samples");
    }
    if (e.cols() != k) throw ContractError("fit_class_model: embedding widths disagree");
    ClassGaussian g;
    g.count = static_cast<std::size_t>(e.rows());
    g.mean = e.colwise().mean().transpose();
    if (identity_precision) {
      g.covariance = Mat::Identity(k, k);
      g.precision = Mat::Identity(k, k);
      g.log_det = 0.0;
      g.shrinkage = 0.0;
    } else {
      const Mat centered = e.rowwise() - g.mean.transpose();
      const double denom = e.rows() > 1 ? static_cast<double>(e.rows() - 1) : 1.0;
      Mat cov = (centered.transpose() * centered) / denom;
      g.shrinkage = std::max(rule.relative * cov.trace() / k, rule.floor);
      cov.diagonal().array() += g.shrinkage;
      Eigen::LLT<Mat> llt(cov);
      if (llt.info() != Eigen::Success) {
        throw NumericalError("fit_class_model: covariance of class " + std::to_string(y) +
                             " not positive definite after shrinkage");
      }
      g.precision = llt.solve(Mat::Identity(k, k));
      g.precision = 0.5 * (g.precision + g.precision.transpose()).eval();
      const Mat lower = llt.matrixL();
      g.log_det = 2.0 * lower.diagonal().array().log().sum();
      g.covariance = std::move(cov);
    }
    model.classes.push_back(std::move(g));
  }
  return model;
}

Mat embed(const MicroNet& embedder, const Mat& points, double t) {
  if (!embedder.embedding_layer()) throw ContractError("embed: network has no embedding layer");
  NetInput in;
  in.x = points.transpose();
  if (embedder.conditioning().time_features > 0) in.t.assign(static_cast<std::size_t>(points.rows()), t);
  const auto cache = embedder.forward(in);
  return cache.layer_output(*embedder.embedding_layer()).transpose();
}

GaussianClassModel fit_class_model(const MicroNet& embedder, const LabeledDataset& ds,
                                   std::optional<int> t, const NoiseSchedule* sch,
                                   std::uint64_t seed, const ShrinkageRule& rule) {
  const int ts = t.value_or(0);
  Mat pts = ds.points;
  if (ts > 0) {
    if (!sch) throw ContractError("fit_class_model: schedule required for t > 0");
    const double ab = sch->alpha_bar(ts);
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
      CounterRng rng(seed, stream_id(StreamTag::Diffuse, static_cast<std::uint32_t>(ts),
                                     static_cast<std::uint32_t>(i)));
      for (Eigen::Index j = 0; j < pts.cols(); ++j) {
        pts(i, j) = std::sqrt(ab) * pts(i, j) + std::sqrt(1.0 - ab) * rng.normal();
      }
    }
  }
  const Mat emb = embed(embedder, pts, ts);
  std::vector<Mat> per_class;
  for (int y = 0; y < ds.num_classes; ++y) {
    const auto rows = ds.indices_of(y);
    Mat e(static_cast<Eigen::Index>(rows.size()), emb.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) e.row(static_cast<Eigen::Index>(i)) = emb.row(rows[i]);
    per_class.push_back(std::move(e));
  }
  return fit_gaussians(per_class, ts, false, rule);
}

ClassModelGrid fit_class_model_grid(const MicroNet& embedder, const LabeledDataset& ds,
                                    const NoiseSchedule& sch, int grid_stride, std::uint64_t seed,
                                    const ShrinkageRule& rule) {
  if (grid_stride < 1) throw InputError("class model grid: stride must be >= 1");
  const int T = sch.steps();
  ClassModelGrid grid;
  std::vector<int> ts;
  for (int t = 0; t < T; t += grid_stride) ts.push_back(t);
  ts.push_back(T);
  for (int t : ts) {
    auto m = fit_class_model(embedder, ds, t, &sch, seed, rule);
    // Embeddings of near-white-noise inputs have tiny spread; use identity precision there.
    if (4 * t > 3 * T) {
      for (auto& g : m.classes) {
        g.covariance = Mat::Identity(m.embedding_dim, m.embedding_dim);
        g.precision = Mat::Identity(m.embedding_dim, m.embedding_dim);
        g.log_det = 0.0;
        g.shrinkage = 0.0;
      }
      m.identity_precision = true;
    }
    grid.models.push_back(std::move(m));
  }
  return grid;
}

double hardness_score(const GaussianClassModel& model, const Vec& embedding, int y) {
  const auto& g = model.at(y);
  if (embedding.size() != model.embedding_dim) throw ContractError("hardness: embedding width mismatch");
  const Vec diff = embedding - g.mean;
  return 0.5 * (diff.dot(g.precision * diff) + g.log_det + model.embedding_dim * kLog2Pi);
}

ScalarAndGrad hardness_with_grad(const GaussianClassModel& model, const MicroNet& embedder,
                                 const Vec& x, double t, int y) {
  const int layer = *embedder.embedding_layer();
  const auto cache = embedder.forward(single_input(x, t, embedder));
  const Vec f = cache.layer_output(layer).col(0);
  ScalarAndGrad out;
  out.value = hardness_score(model, f, y);
  const auto& g = model.at(y);
  const Mat adj = g.precision * (f - g.mean);
  out.grad = embedder.grad_input(cache, adj, layer).col(0);
  return out;
}

void GuidanceConfig::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw InputError("guidance: alpha must be >= 0");
  if (!(beta_fid >= 0.0) || !std::isfinite(beta_fid)) throw InputError("guidance: beta_fid must be >= 0");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw InputError("guidance: tau must be > 0");
}

ScalarAndGrad loss_g1(const GaussianClassModel& model, const MicroNet& embedder, const Vec& x,
                      double t, int y, double tau) {
  if (!(tau > 0.0)) throw ContractError("loss_g1: tau must be positive");
  model.at(y);
  if (!embedder.embedding_layer()) throw ContractError("loss_g1: embedder has no embedding layer");
  const int layer = *embedder.embedding_layer();
  const auto cache = embedder.forward(single_input(x, t, embedder));
  const Vec f = cache.layer_output(layer).col(0);
  const int C = model.num_classes();
  Vec scaled(C);
  for (int j = 0; j < C; ++j) scaled[j] = hardness_score(model, f, j) / tau;
  ScalarAndGrad out;
  out.value = scaled[y] - log_sum_exp(scaled);
  const Vec p = softmax(scaled);
  Vec adj = Vec::Zero(f.size());
  for (int j = 0; j < C; ++j) {
    const double w = ((j == y ? 1.0 : 0.0) - p[j]) / tau;
    if (w == 0.0) continue;
    const auto& g = model.at(j);
    adj += w * (g.precision * (f - g.mean));
  }
  out.grad = embedder.grad_input(cache, adj, layer).col(0);
  return out;
}

namespace {

// -log softmax_target(logits / tau) with its input gradient.
ScalarAndGrad neg_log_softmax(const MicroNet& net, const Vec& x, double t, int target, double tau) {
  if (!(tau > 0.0)) throw ContractError("guiding loss: tau must be positive");
  if (target < 0 || target >= net.output_dim()) throw ContractError("guiding loss: class out of range");
  const auto cache = net.forward(single_input(x, t, net));
  const Vec scaled = cache.output().col(0) / tau;
  ScalarAndGrad out;
  out.value = log_sum_exp(scaled) - scaled[target];
  Vec adj = softmax(scaled);
  adj[target] -= 1.0;
  adj /= tau;
  out.grad = net.grad_input(cache, adj).col(0);
  return out;
}

}  // namespace

ScalarAndGrad loss_g1_logit(const MicroNet& classifier, const Vec& x, double t, int y, double tau) {
  return neg_log_softmax(classifier, x, t, y, tau);
}

ScalarAndGrad loss_g2(const MicroNet& discriminator, const Vec& x, double t, double tau) {
  if (discriminator.output_dim() != 2) throw ContractError("loss_g2: discriminator needs 2 logits");
  return neg_log_softmax(discriminator, x, t, 1, tau);
}

namespace {

// Cross-entropy training of a time-conditioned classifier on forward-diffused inputs.
TrainResult train_noisy_classifier(MicroNet net, const Mat& points, const std::vector<int>& labels,
                                   const NoiseSchedule& sch, const TrainConfig& sgd, double time_power) {
  const int d = static_cast<int>(points.cols());
  const int T = sch.steps();
  const int C = net.output_dim();
  auto objective = [&](const MicroNet& m, std::span<const std::size_t> batch, CounterRng& rng) {
    const auto n = static_cast<Eigen::Index>(batch.size());
    NetInput in;
    in.x.resize(d, n);
    in.t.resize(batch.size());
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto row = static_cast<Eigen::Index>(batch[static_cast<std::size_t>(j)]);
      const int t = time_power == 1.0
                        ? static_cast<int>(rng.below(static_cast<std::uint64_t>(T) + 1))
                        : std::min(T, static_cast<int>((T + 1) * std::pow(rng.uniform(), time_power)));
      const double ab = sch.alpha_bar(t);
      for (int i = 0; i < d; ++i) {
        in.x(i, j) = std::sqrt(ab) * points(row, i) + std::sqrt(1.0 - ab) * rng.normal();
      }
      in.t[static_cast<std::size_t>(j)] = t;
    }
    const auto cache = m.forward(in);
    const Mat& logits = cache.output();
    Mat adj(C, n);
    double loss = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      const Vec l = logits.col(j);
      const int y = labels[batch[static_cast<std::size_t>(j)]];
      loss += log_sum_exp(l) - l[y];
      adj.col(j) = softmax(l);
      adj(y, j) -= 1.0;
    }
    adj /= static_cast<double>(n);
    LossAndGrad out;
    out.loss = loss / static_cast<double>(n);
    out.grad = m.grad_params(cache, adj);
    return out;
  };
  return train(std::move(net), objective, static_cast<std::size_t>(points.rows()), sgd);
}

}  // namespace

ClassifierTrainResult train_embedder(const LabeledDataset& ds, const NoiseSchedule& sch,
                                     const ClassifierConfig& cfg) {
  if (ds.size() == 0) throw InputError("train_embedder: empty dataset");
  ds.validate();
  if (cfg.embedding_width < 1) throw InputError("train_embedder: embedding width must be >= 1");
  std::vector<int> widths = cfg.hidden;
  widths.push_back(cfg.embedding_width);
  Conditioning cond{cfg.time_features, 0, sch.steps(), 1.0 / std::max(coordinate_rms(ds.points), 1.0)};
  MicroNet net = MicroNet::make(static_cast<int>(ds.dim()), widths, ds.num_classes, cond,
                                cfg.init_seed, static_cast<int>(widths.size()) - 1);
  auto res = train_noisy_classifier(std::move(net), ds.points, ds.labels, sch, cfg.sgd, cfg.time_power);
  return {std::move(res.net), std::move(res.loss_trace)};
}

DiscriminatorTrainResult train_discriminator(const LabeledDataset& real,
                                             const LabeledDataset& synthetic,
                                             const NoiseSchedule& sch, const ClassifierConfig& cfg) {
  if (real.size() == 0 || synthetic.size() == 0) {
    throw InputError("train_discriminator: real and synthetic sets must be nonempty");
  }
  if (real.dim() != synthetic.dim()) throw InputError("train_discriminator: dimension mismatch");
  const auto d = real.dim();
  // Hold out the last 20% of a seeded shuffle of each set.
  auto shuffled = [&](Eigen::Index n, std::uint32_t group) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    CounterRng rng(cfg.noise_seed, stream_id(StreamTag::Split, group, 1));
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    return idx;
  };
  const auto ridx = shuffled(real.size(), 100);
  const auto sidx = shuffled(synthetic.size(), 101);
  const auto r_train = real.size() - real.size() / 5;
  const auto s_train = synthetic.size() - synthetic.size() / 5;

  Mat train_pts(r_train + s_train, d);
  std::vector<int> train_labels;
  for (Eigen::Index i = 0; i < r_train; ++i) {
    train_pts.row(i) = real.points.row(ridx[static_cast<std::size_t>(i)]);
    train_labels.push_back(1);
  }
  for (Eigen::Index i = 0; i < s_train; ++i) {
    train_pts.row(r_train + i) = synthetic.points.row(sidx[static_cast<std::size_t>(i)]);
    train_labels.push_back(0);
  }
  Conditioning cond{cfg.time_features, 0, sch.steps(), 1.0 / std::max(coordinate_rms(real.points), 1.0)};
  MicroNet net = MicroNet::make(static_cast<int>(d), cfg.hidden, 2, cond, cfg.init_seed);
  auto res = train_noisy_classifier(std::move(net), train_pts, train_labels, sch, cfg.sgd, cfg.time_power);

  DiscriminatorTrainResult out;
  std::size_t correct = 0, total = 0;
  auto score = [&](const LabeledDataset& set, const std::vector<Eigen::Index>& idx, Eigen::Index from,
                   int label) {
    const auto n = set.size() - from;
    if (n <= 0) return;
    NetInput in;
    in.x.resize(d, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      in.x.col(i) = set.points.row(idx[static_cast<std::size_t>(from + i)]).transpose();
    }
    in.t.assign(static_cast<std::size_t>(n), 0.0);
    const Mat logits = res.net.evaluate(in);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int pred = logits(1, i) > logits(0, i) ? 1 : 0;
      correct += pred == label ? 1 : 0;
      ++total;
    }
  };
  score(real, ridx, r_train, 1);
  score(synthetic, sidx, s_train, 0);
  out.heldout_accuracy = total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  out.net = std::move(res.net);
  out.loss_trace = std::move(res.loss_trace);
  return out;
}

namespace {

std::vector<double> row_major(const Mat& m) {
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) v.push_back(m(r, c));
  return v;
}

Mat from_row_major(const std::vector<double>& v, Eigen::Index rows, Eigen::Index cols) {
  if (static_cast<Eigen::Index>(v.size()) != rows * cols) {
    throw InputError("class model file: matrix payload has wrong size");
  }
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = v[static_cast<std::size_t>(r * cols + c)];
  return m;
}

}  // namespace

void save_class_grid(const ClassModelGrid& grid, const std::filesystem::path& path) {
  nlohmann::json j;
  j["format"] = "lowdens-class-models";
  j["version"] = 1;
  auto& models = j["models"] = nlohmann::json::array();
  for (const auto& m : grid.models) {
    nlohmann::json mj;
    mj["timestep"] = m.timestep;
    mj["embedding_dim"] = m.embedding_dim;
    mj["identity_precision"] = m.identity_precision;
    auto& cls = mj["classes"] = nlohmann::json::array();
    for (const auto& g : m.classes) {
      cls.push_back({{"count", g.count},
                     {"shrinkage", g.shrinkage},
                     {"log_det", g.log_det},
                     {"mean", std::vector<double>(g.mean.data(), g.mean.data() + g.mean.size())},
                     {"covariance", row_major(g.covariance)},
                     {"precision", row_major(g.precision)}});
    }
    models.push_back(std::move(mj));
  }
  write_text_file(path, j.dump(1) + "\n");
}

ClassModelGrid load_class_grid(const std::filesystem::path& path) {
  const auto text = read_text_file(path);
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format") != "lowdens-class-models") throw InputError("class model file: wrong format tag");
    ClassModelGrid grid;
    for (const auto& mj : j.at("models")) {
      GaussianClassModel m;
      m.timestep = mj.at("timestep").get<int>();
      m.embedding_dim = mj.at("embedding_dim").get<int>();
      m.identity_precision = mj.at("identity_precision").get<bool>();
      const Eigen::Index k = m.embedding_dim;
      for (const auto& gj : mj.at("classes")) {
        ClassGaussian g;
        g.count = gj.at("count").get<std::size_t>();
        g.shrinkage = gj.at("shrinkage").get<double>();
        g.log_det = gj.at("log_det").get<double>();
        const auto mean = gj.at("mean").get<std::vector<double>>();
        if (static_cast<Eigen::Index>(mean.size()) != k) throw InputError("class model file: bad mean");
        g.mean = Eigen::Map<const Vec>(mean.data(), k);
        g.covariance = from_row_major(gj.at("covariance").get<std::vector<double>>(), k, k);
        g.precision = from_row_major(gj.at("precision").get<std::vector<double>>(), k, k);
        m.classes.push_back(std::move(g));
      }
      grid.models.push_back(std::move(m));
    }
    return grid;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("class model file '" + path.string() + "': " + e.what());
  }
}

}  // namespace lowdens
