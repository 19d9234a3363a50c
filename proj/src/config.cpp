#include "lowdens/config.hpp"

#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "lowdens/error.hpp"
#include "lowdens/text_io.hpp"

namespace lowdens {

namespace {

struct Entry {
  std::string value;
  std::size_t line = 0;
  bool used = false;
};
using Sections = std::map<std::string, std::map<std::string, Entry>>;

Sections read_sections(std::string_view text) {
  Sections out;
  LineReader reader(text);
  std::string section;
  while (auto raw = reader.next_content_line()) {
    const auto line = trim(*raw);
    const auto n = reader.line_number();
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) throw ParseError("malformed section header", n);
      section = std::string(trim(line.substr(1, line.size() - 2)));
      if (out.count(section)) throw ParseError("duplicate section [" + section + "]", n);
      out[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError("expected 'key = value'", n);
    if (section.empty()) throw ParseError("key outside of any section", n);
    const std::string key(trim(line.substr(0, eq)));
    if (key.empty()) throw ParseError("empty key", n);
    auto& sec = out[section];
    if (sec.count(key)) throw ParseError("duplicate key '" + key + "'", n);
    sec[key] = Entry{std::string(trim(line.substr(eq + 1))), n, false};
  }
  return out;
}

std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + format_double(v[i]);
  return s;
}

std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + std::to_string(v[i]);
  return s;
}

std::vector<double> doubles(std::string_view s, std::size_t line) {
  std::vector<double> out;
  for (auto f : split_fields(s)) out.push_back(parse_double(f, line));
  return out;
}

std::vector<int> ints(std::string_view s, std::size_t line) {
  std::vector<int> out;
  for (auto f : split_fields(s)) out.push_back(parse_int<int>(f, line));
  return out;
}

struct Field {
  std::string section, key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, std::string_view, std::size_t)> set;
};

template <class Access>
Field dbl(std::string section, std::string key, Access acc) {
  return {std::move(section), std::move(key),
          [acc](const ExperimentConfig& c) { return format_double(acc(const_cast<ExperimentConfig&>(c))); },
          [acc](ExperimentConfig& c, std::string_view v, std::size_t n) { acc(c) = parse_double(v, n); }};
}

template <class Access>
Field integer(std::string section, std::string key, Access acc) {
  using T = std::remove_reference_t<decltype(acc(std::declval<ExperimentConfig&>()))>;
  return {std::move(section), std::move(key),
          [acc](const ExperimentConfig& c) { return std::to_string(acc(const_cast<ExperimentConfig&>(c))); },
          [acc](ExperimentConfig& c, std::string_view v, std::size_t n) { acc(c) = parse_int<T>(v, n); }};
}

template <class Access>
Field int_list(std::string section, std::string key, Access acc) {
  return {std::move(section), std::move(key),
          [acc](const ExperimentConfig& c) { return join(acc(const_cast<ExperimentConfig&>(c))); },
          [acc](ExperimentConfig& c, std::string_view v, std::size_t n) { acc(c) = ints(v, n); }};
}

template <class Access>
Field dbl_list(std::string section, std::string key, Access acc) {
  return {std::move(section), std::move(key),
          [acc](const ExperimentConfig& c) { return join(acc(const_cast<ExperimentConfig&>(c))); },
          [acc](ExperimentConfig& c, std::string_view v, std::size_t n) { acc(c) = doubles(v, n); }};
}

template <class E, class Access>
Field choice(std::string section, std::string key, Access acc, std::vector<std::pair<E, std::string>> names) {
  return {std::move(section), std::move(key),
          [acc, names](const ExperimentConfig& c) {
            const E v = acc(const_cast<ExperimentConfig&>(c));
            for (const auto& [e, s] : names)
              if (e == v) return s;
            return std::string("?");
          },
          [acc, names](ExperimentConfig& c, std::string_view v, std::size_t n) {
            for (const auto& [e, s] : names) {
              if (s == v) {
                acc(c) = e;
                return;
              }
            }
            throw ParseError("unknown value '" + std::string(v) + "'", n);
          }};
}

void add_sgd(std::vector<Field>& f, const std::string& sec, TrainConfig& (*get)(ExperimentConfig&)) {
  f.push_back(dbl(sec, "step_size", [get](ExperimentConfig& c) -> double& { return get(c).step_size; }));
  f.push_back(integer(sec, "steps", [get](ExperimentConfig& c) -> int& { return get(c).steps; }));
  f.push_back(integer(sec, "batch", [get](ExperimentConfig& c) -> int& { return get(c).batch; }));
  f.push_back(integer(sec, "seed", [get](ExperimentConfig& c) -> std::uint64_t& { return get(c).seed; }));
  f.push_back(dbl(sec, "weight_decay", [get](ExperimentConfig& c) -> double& { return get(c).weight_decay; }));
  f.push_back(dbl(sec, "momentum", [get](ExperimentConfig& c) -> double& { return get(c).momentum; }));
  f.push_back(dbl(sec, "final_step_fraction",
                  [get](ExperimentConfig& c) -> double& { return get(c).final_step_fraction; }));
}

void add_classifier(std::vector<Field>& f, const std::string& sec, ClassifierConfig& (*get)(ExperimentConfig&),
                    TrainConfig& (*sgd)(ExperimentConfig&)) {
  f.push_back(int_list(sec, "hidden", [get](ExperimentConfig& c) -> std::vector<int>& { return get(c).hidden; }));
  f.push_back(integer(sec, "embedding_width", [get](ExperimentConfig& c) -> int& { return get(c).embedding_width; }));
  f.push_back(integer(sec, "time_features", [get](ExperimentConfig& c) -> int& { return get(c).time_features; }));
  f.push_back(integer(sec, "init_seed", [get](ExperimentConfig& c) -> std::uint64_t& { return get(c).init_seed; }));
  f.push_back(integer(sec, "noise_seed", [get](ExperimentConfig& c) -> std::uint64_t& { return get(c).noise_seed; }));
  f.push_back(dbl(sec, "time_power", [get](ExperimentConfig& c) -> double& { return get(c).time_power; }));
  add_sgd(f, sec, sgd);
}

const std::vector<Field>& fields() {
  using C = ExperimentConfig;
  static const std::vector<Field> f = [] {
    std::vector<Field> f;
    f.push_back(integer("world", "n_per_class", [](C& c) -> int& { return c.world.n_per_class; }));
    f.push_back(integer("world", "seed", [](C& c) -> std::uint64_t& { return c.world.seed; }));
    f.push_back(dbl("world", "holdout_fraction", [](C& c) -> double& { return c.world.holdout_fraction; }));
    f.push_back(integer("world", "split_seed", [](C& c) -> std::uint64_t& { return c.world.split_seed; }));

    f.push_back(integer("schedule", "steps", [](C& c) -> int& { return c.schedule.steps; }));
    f.push_back(dbl("schedule", "beta_start", [](C& c) -> double& { return c.schedule.beta_start; }));
    f.push_back(dbl("schedule", "beta_end", [](C& c) -> double& { return c.schedule.beta_end; }));
    f.push_back(integer("schedule", "stride", [](C& c) -> int& { return c.schedule.stride; }));
    f.push_back(choice<VarianceMode>("schedule", "variance", [](C& c) -> VarianceMode& { return c.schedule.variance; },
                                     {{VarianceMode::FixedPosterior, "posterior"},
                                      {VarianceMode::FixedSchedBeta, "beta"}}));

    f.push_back(int_list("diffusion", "hidden", [](C& c) -> std::vector<int>& { return c.diffusion.hidden; }));
    f.push_back(integer("diffusion", "time_features", [](C& c) -> int& { return c.diffusion.time_features; }));
    f.push_back(integer("diffusion", "init_seed", [](C& c) -> std::uint64_t& { return c.diffusion.init_seed; }));
    add_sgd(f, "diffusion", [](C& c) -> TrainConfig& { return c.diffusion.sgd; });

    add_classifier(f, "embedder", [](C& c) -> ClassifierConfig& { return c.embedder; },
                   [](C& c) -> TrainConfig& { return c.embedder.sgd; });
    add_classifier(f, "embedder2", [](C& c) -> ClassifierConfig& { return c.embedder2; },
                   [](C& c) -> TrainConfig& { return c.embedder2.sgd; });
    add_classifier(f, "discriminator", [](C& c) -> ClassifierConfig& { return c.discriminator; },
                   [](C& c) -> TrainConfig& { return c.discriminator.sgd; });

    f.push_back(integer("class_model", "grid_stride", [](C& c) -> int& { return c.class_model.grid_stride; }));
    f.push_back(integer("class_model", "seed", [](C& c) -> std::uint64_t& { return c.class_model.seed; }));
    f.push_back(dbl("class_model", "shrinkage_relative",
                    [](C& c) -> double& { return c.class_model.shrinkage.relative; }));
    f.push_back(dbl("class_model", "shrinkage_floor", [](C& c) -> double& { return c.class_model.shrinkage.floor; }));

    f.push_back(dbl("guidance", "alpha", [](C& c) -> double& { return c.guidance.alpha; }));
    f.push_back(dbl("guidance", "beta_fid", [](C& c) -> double& { return c.guidance.beta_fid; }));
    f.push_back(dbl("guidance", "tau", [](C& c) -> double& { return c.guidance.tau; }));
    f.push_back(choice<LossSpace>("guidance", "loss_space", [](C& c) -> LossSpace& { return c.guidance.loss_space; },
                                  {{LossSpace::EmbeddingHardness, "hardness"},
                                   {LossSpace::LogitSoftmax, "logit"}}));
    f.push_back(choice<GradNorm>("guidance", "grad_norm", [](C& c) -> GradNorm& { return c.guidance.grad_norm; },
                                 {{GradNorm::UnitLinf, "unit-linf"}, {GradNorm::None, "none"}}));

    f.push_back(integer("sampling", "n_per_class", [](C& c) -> int& { return c.sampling.n_per_class; }));
    f.push_back(integer("sampling", "seed", [](C& c) -> std::uint64_t& { return c.sampling.seed; }));
    f.push_back(integer("sampling", "corpus_seed", [](C& c) -> std::uint64_t& { return c.sampling.corpus_seed; }));
    f.push_back(integer("sampling", "ddim_substeps", [](C& c) -> int& { return c.sampling.ddim_substeps; }));
    f.push_back(dbl("sampling", "y_max", [](C& c) -> double& { return c.sampling.y_max; }));

    f.push_back(integer("metrics", "knn_k", [](C& c) -> int& { return c.metrics.knn_k; }));
    f.push_back(integer("metrics", "lof_k", [](C& c) -> int& { return c.metrics.lof_k; }));
    f.push_back(integer("metrics", "precision_k", [](C& c) -> int& { return c.metrics.precision_k; }));
    f.push_back(integer("metrics", "top_p", [](C& c) -> int& { return c.metrics.top_p; }));
    f.push_back(integer("metrics", "neighbor_k", [](C& c) -> int& { return c.metrics.neighbor_k; }));
    f.push_back(choice<MetricSpace>("metrics", "space", [](C& c) -> MetricSpace& { return c.metrics.space; },
                                    {{MetricSpace::Embedding, "embedding"}, {MetricSpace::Ambient, "ambient"}}));
    f.push_back(integer("metrics", "nll_samples", [](C& c) -> int& { return c.metrics.nll_samples; }));
    f.push_back(integer("metrics", "correlation_rows", [](C& c) -> int& { return c.metrics.correlation_rows; }));
    f.push_back(integer("metrics", "nll_seed", [](C& c) -> std::uint64_t& { return c.metrics.nll_seed; }));

    f.push_back(integer("cost", "quota", [](C& c) -> int& { return c.cost.quota; }));
    f.push_back(integer("cost", "max_draws", [](C& c) -> long long& { return c.cost.max_draws; }));
    f.push_back(dbl_list("cost", "percentiles", [](C& c) -> std::vector<double>& { return c.cost.percentiles; }));
    f.push_back(integer("cost", "seed", [](C& c) -> std::uint64_t& { return c.cost.seed; }));

    f.push_back({"output", "dir", [](const C& c) { return c.out_dir; },
                 [](C& c, std::string_view v, std::size_t n) {
                   if (v.empty()) throw ParseError("output dir must not be empty", n);
                   c.out_dir = std::string(v);
                 }});
    return f;
  }();
  return f;
}

const std::string kClassPrefix = "class.";

std::vector<MixtureSpec> read_world(Sections& sections) {
  std::map<int, std::pair<std::string, std::map<std::string, Entry>*>> by_id;
  for (auto& [name, sec] : sections) {
    if (name.rfind(kClassPrefix, 0) != 0) continue;
    std::size_t line = sec.empty() ? 0 : sec.begin()->second.line;
    const int id = parse_int<int>(std::string_view(name).substr(kClassPrefix.size()), line);
    by_id[id] = {name, &sec};
  }
  std::vector<MixtureSpec> world;
  int expect = 0;
  for (auto& [id, named] : by_id) {
    auto& sec = *named.second;
    if (id != expect) throw InputError("config: class sections must be numbered 0, 1, ... without gaps");
    ++expect;
    auto need = [&](const std::string& key) -> Entry& {
      auto it = sec.find(key);
      if (it == sec.end()) throw InputError("config: [" + named.first + "] is missing '" + key + "'");
      it->second.used = true;
      return it->second;
    };
    const auto& w = need("weights");
    const auto weights = doubles(w.value, w.line);
    std::vector<MixtureComponent> comps;
    for (std::size_t j = 0; j < weights.size(); ++j) {
      const auto& m = need("mean." + std::to_string(j));
      const auto& s = need("cov." + std::to_string(j));
      const auto mean = doubles(m.value, m.line);
      const auto cov = doubles(s.value, s.line);
      const auto d = static_cast<Eigen::Index>(mean.size());
      if (static_cast<Eigen::Index>(cov.size()) != d * d) {
        throw ParseError("covariance needs " + std::to_string(d * d) + " entries", s.line);
      }
      MixtureComponent c;
      c.weight = weights[j];
      c.mean = Eigen::Map<const Vec>(mean.data(), d);
      c.covariance = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
          cov.data(), d, d);
      comps.push_back(std::move(c));
    }
    world.emplace_back(id, std::move(comps));
  }
  return world;
}

}  // namespace

ExperimentConfig ExperimentConfig::defaults() {
  ExperimentConfig c;
  c.world.classes = default_world();

  c.diffusion.init_seed = 11;
  c.diffusion.sgd = {0.02, 3000, 128, 12, 0.0, 0.9, 0.05};

  c.embedder.init_seed = 21;
  c.embedder.noise_seed = 23;
  c.embedder.sgd = {0.02, 4000, 128, 22, 0.0, 0.9, 0.05};

  c.embedder2 = c.embedder;
  c.embedder2.init_seed = 31;
  c.embedder2.noise_seed = 33;
  c.embedder2.sgd.seed = 32;

  c.discriminator.init_seed = 51;
  c.discriminator.noise_seed = 53;
  c.discriminator.sgd = {0.02, 4000, 128, 52, 0.0, 0.9, 0.05};

  c.guidance.alpha = 0.5;
  c.guidance.beta_fid = 0.5;
  return c;
}

void ExperimentConfig::validate() const {
  if (world.classes.size() < 2) throw InputError("config: the world needs at least 2 classes");
  for (std::size_t i = 0; i < world.classes.size(); ++i) {
    const auto& spec = world.classes[i];
    if (spec.dim() != world.dim()) throw InputError("config: classes disagree on dimension");
    if (!spec.has_minor_mode()) {
      throw InputError("config: class " + std::to_string(i) + " has no minor mode (a component with weight <= 0.1)");
    }
  }
  if (world.n_per_class < 1) throw InputError("config: world.n_per_class must be >= 1");
  if (!(world.holdout_fraction > 0.0 && world.holdout_fraction < 1.0)) {
    throw InputError("config: world.holdout_fraction must lie in (0, 1)");
  }
  if (schedule.steps < 1) throw InputError("config: schedule.steps must be >= 1");
  if (!(schedule.beta_start > 0.0 && schedule.beta_end < 1.0 && schedule.beta_start <= schedule.beta_end)) {
    throw InputError("config: need 0 < beta_start <= beta_end < 1");
  }
  if (schedule.stride < 1 || schedule.stride > schedule.steps) {
    throw InputError("config: schedule.stride must lie in [1, steps]");
  }
  if (diffusion.sgd.steps < 1) throw InputError("config: diffusion.steps must be >= 1");
  diffusion.sgd.validate();
  for (const auto* cc : {&embedder, &embedder2, &discriminator}) {
    cc->sgd.validate();
    if (cc->hidden.empty()) throw InputError("config: classifier networks need at least one hidden layer");
    if (cc->embedding_width < 1) throw InputError("config: embedding_width must be >= 1");
    if (!(cc->time_power >= 1.0)) throw InputError("config: time_power must be >= 1");
  }
  for (int w : diffusion.hidden)
    if (w < 1) throw InputError("config: hidden widths must be >= 1");
  if (class_model.grid_stride < 1) throw InputError("config: class_model.grid_stride must be >= 1");
  guidance.validate();
  if (sampling.n_per_class < 1) throw InputError("config: sampling.n_per_class must be >= 1");
  if (sampling.ddim_substeps < 2 || sampling.ddim_substeps > schedule.steps) {
    throw InputError("config: sampling.ddim_substeps must lie in [2, steps]");
  }
  if (metrics.knn_k < 1 || metrics.lof_k < 1 || metrics.precision_k < 1 || metrics.neighbor_k < 1) {
    throw InputError("config: neighbor counts must be >= 1");
  }
  if (metrics.top_p < 0) throw InputError("config: metrics.top_p must be >= 0");
  if (metrics.nll_samples < 2) throw InputError("config: metrics.nll_samples must be >= 2");
  if (cost.quota < 1 || cost.max_draws < 1) throw InputError("config: cost quota and max_draws must be >= 1");
  for (double p : cost.percentiles)
    if (!(p >= 0.0 && p <= 100.0)) throw InputError("config: cost percentiles must lie in [0, 100]");
}

ExperimentConfig parse_config(std::string_view text) {
  auto sections = read_sections(text);
  ExperimentConfig cfg = ExperimentConfig::defaults();
  for (const auto& f : fields()) {
    auto sec = sections.find(f.section);
    if (sec == sections.end()) continue;
    auto it = sec->second.find(f.key);
    if (it == sec->second.end()) continue;
    f.set(cfg, it->second.value, it->second.line);
    it->second.used = true;
  }
  auto world = read_world(sections);
  if (!world.empty()) cfg.world.classes = std::move(world);
  for (const auto& [name, sec] : sections) {
    for (const auto& [key, e] : sec) {
      if (!e.used) throw ParseError("unknown key '" + key + "' in [" + name + "]", e.line);
    }
  }
  return cfg;
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::ostringstream out;
  out << "# lowdens experiment config\n";
  std::string current;
  for (const auto& f : fields()) {
    if (f.section != current) {
      if (current == "world") {
        // class sections follow the world block
        for (const auto& spec : cfg.world.classes) {
          out << "\n[class." << spec.class_id() << "]\n";
          std::vector<double> w;
          for (const auto& c : spec.components()) w.push_back(c.weight);
          out << "weights = " << join(w) << '\n';
          for (std::size_t j = 0; j < spec.components().size(); ++j) {
            const auto& c = spec.components()[j];
            std::vector<double> m(c.mean.data(), c.mean.data() + c.mean.size());
            std::vector<double> s;
            for (Eigen::Index r = 0; r < c.covariance.rows(); ++r)
              for (Eigen::Index k = 0; k < c.covariance.cols(); ++k) s.push_back(c.covariance(r, k));
            out << "mean." << j << " = " << join(m) << '\n';
            out << "cov." << j << " = " << join(s) << '\n';
          }
        }
      }
      current = f.section;
      out << "\n[" << current << "]\n";
    }
    out << f.key << " = " << f.get(cfg) << '\n';
  }
  return out.str();
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw InputError("config file not found: " + path.string());
  return parse_config(read_text_file(path));
}

void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path) {
  write_text_file(path, serialize_config(cfg));
}

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
  return serialize_config(a) == serialize_config(b);
}

}  // namespace lowdens
