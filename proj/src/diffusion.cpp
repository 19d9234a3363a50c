#include "lowdens/diffusion.hpp"

#include <cmath>
#include <numbers>

#include "lowdens/error.hpp"
#include "lowdens/text_io.hpp"

namespace lowdens {

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
  if (steps < 2) throw InputError("schedule: need at least 2 diffusion steps");
  if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end)) {
    throw InputError("schedule: require 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.steps_ = steps;
  s.beta_start_ = beta_start;
  s.beta_end_ = beta_end;
  s.beta_.assign(static_cast<std::size_t>(steps) + 1, 0.0);
  s.alpha_bar_.assign(static_cast<std::size_t>(steps) + 1, 1.0);
  s.posterior_var_.assign(static_cast<std::size_t>(steps) + 1, 0.0);
  for (int t = 1; t <= steps; ++t) {
    const double frac = static_cast<double>(t - 1) / (steps - 1);
    s.beta_[static_cast<std::size_t>(t)] = beta_start + frac * (beta_end - beta_start);
    s.alpha_bar_[static_cast<std::size_t>(t)] =
        s.alpha_bar_[static_cast<std::size_t>(t) - 1] * (1.0 - s.beta_[static_cast<std::size_t>(t)]);
  }
  for (int t = 2; t <= steps; ++t) {
    const auto i = static_cast<std::size_t>(t);
    s.posterior_var_[i] = (1.0 - s.alpha_bar_[i - 1]) / (1.0 - s.alpha_bar_[i]) * s.beta_[i];
  }
  s.posterior_var_[1] = s.posterior_var_[2];
  return s;
}

void NoiseSchedule::check(int t, int lo) const {
  if (t < lo || t > steps_) {
    throw ContractError("schedule: timestep " + std::to_string(t) + " outside [" +
                        std::to_string(lo) + ", " + std::to_string(steps_) + "]");
  }
}

double NoiseSchedule::sched_beta(int t) const {
  check(t, 1);
  return beta_[static_cast<std::size_t>(t)];
}

double NoiseSchedule::alpha(int t) const { return 1.0 - sched_beta(t); }

double NoiseSchedule::alpha_bar(int t) const {
  check(t, 0);
  return alpha_bar_[static_cast<std::size_t>(t)];
}

double NoiseSchedule::posterior_var(int t) const {
  check(t, 1);
  return posterior_var_[static_cast<std::size_t>(t)];
}

Vec forward_diffuse(const Vec& x0, int t, const Vec& noise, const NoiseSchedule& sch) {
  if (t < 0 || t > sch.steps()) {
    throw ContractError("forward_diffuse: timestep " + std::to_string(t) + " out of range");
  }
  if (noise.size() != x0.size()) throw ContractError("forward_diffuse: noise dimension mismatch");
  const double ab = sch.alpha_bar(t);
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * noise;
}

std::vector<ReverseStep> reverse_plan(const NoiseSchedule& sch, int num_steps, VarianceMode mode) {
  const int T = sch.steps();
  if (num_steps < 1 || num_steps > T) {
    throw ContractError("reverse_plan: step count must lie in [1, T]");
  }
  std::vector<int> ts(static_cast<std::size_t>(num_steps) + 1, 0);
  for (int i = 1; i <= num_steps; ++i) {
    ts[static_cast<std::size_t>(i)] =
        static_cast<int>(std::lround(static_cast<double>(i) * T / num_steps));
  }
  std::vector<ReverseStep> plan;
  plan.reserve(static_cast<std::size_t>(num_steps));
  for (int i = num_steps; i >= 1; --i) {
    ReverseStep s;
    s.t = ts[static_cast<std::size_t>(i)];
    s.t_prev = ts[static_cast<std::size_t>(i) - 1];
    s.alpha_bar = sch.alpha_bar(s.t);
    s.alpha_bar_prev = sch.alpha_bar(s.t_prev);
    if (s.t_prev == s.t - 1) {
      // Unit jump: read the schedule directly so stride 1 matches it bit for bit.
      s.beta = sch.sched_beta(s.t);
      s.variance = mode == VarianceMode::FixedSchedBeta ? s.beta : sch.posterior_var(s.t);
    } else {
      s.beta = 1.0 - s.alpha_bar / s.alpha_bar_prev;
      s.variance = mode == VarianceMode::FixedSchedBeta
                       ? s.beta
                       : (1.0 - s.alpha_bar_prev) / (1.0 - s.alpha_bar) * s.beta;
    }
    plan.push_back(s);
  }
  // Exact posterior variance vanishes on the final step; reuse the previous one.
  if (mode == VarianceMode::FixedPosterior && plan.back().t_prev == 0) {
    plan.back().variance = plan.size() >= 2 ? plan[plan.size() - 2].variance : plan.back().beta;
  }
  return plan;
}

std::vector<ReverseStep> strided_plan(const NoiseSchedule& sch, int stride, VarianceMode mode) {
  if (stride < 1) throw ContractError("strided_plan: stride must be >= 1");
  const int T = sch.steps();
  return reverse_plan(sch, (T + stride - 1) / stride, mode);
}

Vec one_hot(int y, int classes) {
  if (classes <= 0) return Vec();
  if (y < 0 || y >= classes) throw ContractError("one_hot: class out of range");
  Vec v = Vec::Zero(classes);
  v[y] = 1.0;
  return v;
}

double denoiser_input_gain(const DiffusionModel& model, int t) {
  const double ab = model.schedule.alpha_bar(t);
  const double s = model.data_scale;
  return 1.0 / std::sqrt(ab * s * s + 1.0 - ab);
}

Vec predict_noise(const DiffusionModel& model, const Vec& x_t, int t, const Vec& class_probs) {
  NetInput in;
  in.x = denoiser_input_gain(model, t) * x_t;
  in.t = {static_cast<double>(t)};
  if (model.class_conditional) {
    if (class_probs.size() != model.num_classes) {
      throw ContractError("predict_noise: class vector has wrong length");
    }
    in.class_probs = class_probs;
  }
  return model.denoiser.evaluate(in).col(0);
}

ReverseMoments reverse_moments(const DiffusionModel& model, const Vec& x_t, const ReverseStep& step,
                               const Vec& class_probs) {
  ReverseMoments m;
  m.eps = predict_noise(model, x_t, step.t, class_probs);
  const double coef = step.beta / std::sqrt(1.0 - step.alpha_bar);
  m.mean = (x_t - coef * m.eps) / std::sqrt(1.0 - step.beta);
  m.variance = Vec::Constant(x_t.size(), step.variance);
  return m;
}

ReverseMoments posterior_mean_var(const DiffusionModel& model, const Vec& x_t, int t, int y) {
  const auto& sch = model.schedule;
  if (t < 1 || t > sch.steps()) throw ContractError("posterior_mean_var: t must lie in [1, T]");
  ReverseStep s;
  s.t = t;
  s.t_prev = t - 1;
  s.alpha_bar = sch.alpha_bar(t);
  s.alpha_bar_prev = sch.alpha_bar(t - 1);
  s.beta = sch.sched_beta(t);
  s.variance = model.variance == VarianceMode::FixedPosterior ? sch.posterior_var(t) : s.beta;
  return reverse_moments(model, x_t, s,
                         model.class_conditional ? one_hot(y, model.num_classes) : Vec());
}

DiffusionTrainResult train_diffusion(const LabeledDataset& ds, const NoiseSchedule& sch,
                                     const DiffusionTrainConfig& cfg, VarianceMode mode) {
  if (ds.size() == 0) throw InputError("train_diffusion: empty dataset");
  ds.validate();
  const int d = static_cast<int>(ds.dim());
  const int classes = ds.num_classes;
  Conditioning cond{cfg.time_features, classes, sch.steps()};
  MicroNet net = MicroNet::make(d, cfg.hidden, d, cond, cfg.init_seed);
  const int T = sch.steps();
  DiffusionModel shape;
  shape.schedule = sch;
  shape.data_scale = coordinate_rms(ds.points);

  auto objective = [&](const MicroNet& m, std::span<const std::size_t> batch, CounterRng& rng) {
    const auto n = static_cast<Eigen::Index>(batch.size());
    NetInput in;
    in.x.resize(d, n);
    in.t.resize(batch.size());
    in.class_probs = Mat::Zero(classes, n);
    Mat eps(d, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto row = static_cast<Eigen::Index>(batch[static_cast<std::size_t>(j)]);
      const int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(T)));
      for (int i = 0; i < d; ++i) eps(i, j) = rng.normal();
      const double ab = sch.alpha_bar(t);
      in.x.col(j) = denoiser_input_gain(shape, t) *
                    (std::sqrt(ab) * ds.points.row(row).transpose() + std::sqrt(1.0 - ab) * eps.col(j));
      in.t[static_cast<std::size_t>(j)] = t;
      in.class_probs(ds.labels[static_cast<std::size_t>(row)], j) = 1.0;
    }
    const auto cache = m.forward(in);
    const Mat resid = cache.output() - eps;
    LossAndGrad out;
    out.loss = resid.squaredNorm() / static_cast<double>(n);
    out.grad = m.grad_params(cache, (2.0 / static_cast<double>(n)) * resid);
    return out;
  };

  auto trained = train(std::move(net), objective, static_cast<std::size_t>(ds.size()), cfg.sgd);
  DiffusionTrainResult result;
  result.model.denoiser = std::move(trained.net);
  result.model.schedule = sch;
  result.model.class_conditional = true;
  result.model.num_classes = classes;
  result.model.variance = mode;
  result.model.data_scale = shape.data_scale;
  result.loss_trace = std::move(trained.loss_trace);
  return result;
}

namespace {

double gaussian_kl(double mean_p, double var_p, double mean_q, double var_q) {
  const double diff = mean_p - mean_q;
  return 0.5 * (std::log(var_q / var_p) + (var_p + diff * diff) / var_q - 1.0);
}

}  // namespace

NllEstimate vlb_nll(const DiffusionModel& model, const Vec& x0, int y, int n_mc, std::uint64_t seed) {
  if (n_mc < 2) throw ContractError("vlb_nll: need at least 2 Monte-Carlo draws");
  const auto& sch = model.schedule;
  const int T = sch.steps();
  const auto d = x0.size();
  const Vec cls = model.class_conditional ? one_hot(y, model.num_classes) : Vec();

  // Prior term KL(q(x_T | x_0) || N(0, I)) is deterministic.
  double prior = 0.0;
  {
    const double abT = sch.alpha_bar(T);
    for (Eigen::Index i = 0; i < d; ++i) prior += gaussian_kl(std::sqrt(abT) * x0[i], 1.0 - abT, 0.0, 1.0);
  }

  std::vector<double> draws;
  draws.reserve(static_cast<std::size_t>(n_mc));
  for (int k = 0; k < n_mc; ++k) {
    CounterRng rng(seed, stream_id(StreamTag::Nll, 0, static_cast<std::uint32_t>(k)));
    const int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(T)));
    Vec eps(d);
    for (Eigen::Index i = 0; i < d; ++i) eps[i] = rng.normal();
    const Vec xt = forward_diffuse(x0, t, eps, sch);
    const auto mom = posterior_mean_var(model, xt, t, y);
    double term = 0.0;
    if (t == 1) {
      for (Eigen::Index i = 0; i < d; ++i) {
        const double v = mom.variance[i];
        const double diff = x0[i] - mom.mean[i];
        term += 0.5 * (std::log(2.0 * std::numbers::pi * v) + diff * diff / v);
      }
    } else {
      const double ab = sch.alpha_bar(t);
      const double ab_prev = sch.alpha_bar(t - 1);
      const double beta = sch.sched_beta(t);
      const double c0 = std::sqrt(ab_prev) * beta / (1.0 - ab);
      const double ct = std::sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab);
      const double true_var = (1.0 - ab_prev) / (1.0 - ab) * beta;
      for (Eigen::Index i = 0; i < d; ++i) {
        term += gaussian_kl(c0 * x0[i] + ct * xt[i], true_var, mom.mean[i], mom.variance[i]);
      }
    }
    draws.push_back((prior + T * term) / static_cast<double>(d));
  }
  double mean = 0.0;
  for (double v : draws) mean += v;
  mean /= n_mc;
  double ss = 0.0;
  for (double v : draws) ss += (v - mean) * (v - mean);
  NllEstimate est;
  est.mean = mean;
  est.standard_error = std::sqrt(ss / (n_mc - 1) / n_mc);
  return est;
}

namespace {

std::string_view variance_name(VarianceMode m) {
  return m == VarianceMode::FixedPosterior ? "fixed-posterior" : "fixed-sched-beta";
}

}  // namespace

void save_diffusion(const DiffusionModel& model, const std::filesystem::path& path) {
  nlohmann::json j;
  j["format"] = "lowdens-diffusion";
  j["version"] = 1;
  j["schedule"] = {{"steps", model.schedule.steps()},
                   {"beta_start", model.schedule.beta_start()},
                   {"beta_end", model.schedule.beta_end()}};
  j["class_conditional"] = model.class_conditional;
  j["num_classes"] = model.num_classes;
  j["variance"] = variance_name(model.variance);
  j["data_scale"] = model.data_scale;
  j["denoiser"] = to_json(model.denoiser);
  write_text_file(path, j.dump(1) + "\n");
}

DiffusionModel load_diffusion(const std::filesystem::path& path) {
  const auto text = read_text_file(path);
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format") != "lowdens-diffusion") throw InputError("diffusion checkpoint: wrong format tag");
    DiffusionModel m;
    const auto& s = j.at("schedule");
    m.schedule = NoiseSchedule::linear(s.at("steps").get<int>(), s.at("beta_start").get<double>(),
                                       s.at("beta_end").get<double>());
    m.class_conditional = j.at("class_conditional").get<bool>();
    m.num_classes = j.at("num_classes").get<int>();
    const auto v = j.at("variance").get<std::string>();
    if (v == "fixed-posterior") {
      m.variance = VarianceMode::FixedPosterior;
    } else if (v == "fixed-sched-beta") {
      m.variance = VarianceMode::FixedSchedBeta;
    } else {
      throw InputError("diffusion checkpoint: unknown variance mode '" + v + "'");
    }
    m.data_scale = j.at("data_scale").get<double>();
    m.denoiser = micronet_from_json(j.at("denoiser"));
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("diffusion checkpoint '" + path.string() + "': " + e.what());
  }
}

}  // namespace lowdens
