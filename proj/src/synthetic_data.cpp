#include "lowdens/synthetic_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "lowdens/error.hpp"
#include "lowdens/rng.hpp"
#include "lowdens/text_io.hpp"

namespace lowdens {

MixtureSpec::MixtureSpec(int class_id, std::vector<MixtureComponent> components)
    : class_id_(class_id), components_(std::move(components)) {
  if (components_.empty()) {
    throw InputError("mixture for class " + std::to_string(class_id) + " has no components");
  }
  dim_ = static_cast<int>(components_.front().mean.size());
  if (dim_ < 1) throw InputError("mixture component has empty mean");
  double total = 0.0;
  for (const auto& c : components_) {
    if (c.mean.size() != dim_ || c.covariance.rows() != dim_ || c.covariance.cols() != dim_) {
      throw InputError("mixture component dimensions disagree");
    }
    if (!(c.weight > 0.0) || !std::isfinite(c.weight)) {
      throw InputError("mixture weights must be positive");
    }
    if (!c.mean.allFinite() || !c.covariance.allFinite()) {
      throw InputError("mixture component has non-finite entries");
    }
    if (!c.covariance.isApprox(c.covariance.transpose(), 1e-12)) {
      throw InputError("mixture covariance is not symmetric");
    }
    Eigen::LLT<Mat> llt(c.covariance);
    if (llt.info() != Eigen::Success) {
      throw InputError("mixture covariance is not positive definite");
    }
    Mat lower = llt.matrixL();
    double log_det = 0.0;
    for (int i = 0; i < dim_; ++i) log_det += 2.0 * std::log(lower(i, i));
    chol_.push_back(std::move(lower));
    log_norm_.push_back(-0.5 * (dim_ * std::log(2.0 * std::numbers::pi) + log_det));
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw InputError("mixture weights for class " + std::to_string(class_id) +
                     " sum to " + std::to_string(total) + ", expected 1");
  }
}

bool MixtureSpec::has_minor_mode() const noexcept {
  return std::any_of(components_.begin(), components_.end(),
                     [](const MixtureComponent& c) { return c.weight <= 0.1; });
}

double MixtureSpec::density(const Vec& x) const {
  if (x.size() != dim_) throw ContractError("density: dimension mismatch");
  double p = 0.0;
  for (std::size_t j = 0; j < components_.size(); ++j) {
    const Vec diff = x - components_[j].mean;
    const Vec w = chol_[j].triangularView<Eigen::Lower>().solve(diff);
    p += components_[j].weight * std::exp(log_norm_[j] - 0.5 * w.squaredNorm());
  }
  return p;
}

double true_density(const MixtureSpec& spec, const Vec& x) { return spec.density(x); }

std::string_view to_string(SplitTag tag) {
  return tag == SplitTag::Train ? "train" : "holdout";
}

SplitTag split_tag_from_string(std::string_view s) {
  if (s == "train") return SplitTag::Train;
  if (s == "holdout") return SplitTag::Holdout;
  throw InputError("unknown split tag '" + std::string(s) + "'");
}

void LabeledDataset::validate() const {
  if (static_cast<Eigen::Index>(labels.size()) != points.rows()) {
    throw ContractError("dataset: label count does not match point count");
  }
  for (int y : labels) {
    if (y < 0 || y >= num_classes) {
      throw ContractError("dataset: label " + std::to_string(y) + " outside [0, " +
                          std::to_string(num_classes) + ")");
    }
  }
  if (!points.allFinite()) throw ContractError("dataset: non-finite point");
}

std::vector<Eigen::Index> LabeledDataset::indices_of(int label) const {
  std::vector<Eigen::Index> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == label) out.push_back(static_cast<Eigen::Index>(i));
  }
  return out;
}

LabeledDataset LabeledDataset::subset(const std::vector<Eigen::Index>& rows) const {
  LabeledDataset out;
  out.points.resize(static_cast<Eigen::Index>(rows.size()), points.cols());
  out.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.points.row(static_cast<Eigen::Index>(i)) = points.row(rows[i]);
    out.labels.push_back(labels[static_cast<std::size_t>(rows[i])]);
  }
  out.num_classes = num_classes;
  out.split = split;
  out.seed = seed;
  return out;
}

bool operator==(const LabeledDataset& a, const LabeledDataset& b) {
  return a.num_classes == b.num_classes && a.split == b.split && a.seed == b.seed &&
         a.labels == b.labels && a.points.rows() == b.points.rows() &&
         a.points.cols() == b.points.cols() && a.points == b.points;
}

LabeledDataset generate(const std::vector<MixtureSpec>& spec_set, int n_per_class,
                        std::uint64_t seed) {
  if (spec_set.empty()) throw InputError("generate: empty spec set");
  if (n_per_class < 1) throw InputError("generate: n_per_class must be >= 1");
  const int d = spec_set.front().dim();
  for (const auto& s : spec_set) {
    if (s.dim() != d) throw InputError("generate: specs disagree on dimension");
  }
  const int classes = static_cast<int>(spec_set.size());
  LabeledDataset ds;
  ds.points.resize(static_cast<Eigen::Index>(classes) * n_per_class, d);
  ds.labels.reserve(static_cast<std::size_t>(classes) * n_per_class);
  ds.num_classes = classes;
  ds.seed = seed;
  Eigen::Index row = 0;
  for (int c = 0; c < classes; ++c) {
    for (int i = 0; i < n_per_class; ++i) {
      CounterRng rng(seed, stream_id(StreamTag::Data, static_cast<std::uint32_t>(c),
                                     static_cast<std::uint32_t>(i)));
      ds.points.row(row++) = spec_set[static_cast<std::size_t>(c)].draw(rng).transpose();
      ds.labels.push_back(c);
    }
  }
  return ds;
}

std::pair<LabeledDataset, LabeledDataset> split_holdout(const LabeledDataset& ds,
                                                        double holdout_fraction,
                                                        std::uint64_t seed) {
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) {
    throw InputError("split: holdout fraction must lie in [0, 1)");
  }
  std::vector<Eigen::Index> train_rows, holdout_rows;
  for (int c = 0; c < ds.num_classes; ++c) {
    auto rows = ds.indices_of(c);
    CounterRng rng(seed, stream_id(StreamTag::Split, static_cast<std::uint32_t>(c), 0));
    for (std::size_t i = rows.size(); i > 1; --i) {
      std::swap(rows[i - 1], rows[rng.below(i)]);
    }
    const auto n_hold = static_cast<std::size_t>(std::llround(holdout_fraction * rows.size()));
    std::sort(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_hold));
    std::sort(rows.begin() + static_cast<std::ptrdiff_t>(n_hold), rows.end());
    holdout_rows.insert(holdout_rows.end(), rows.begin(),
                        rows.begin() + static_cast<std::ptrdiff_t>(n_hold));
    train_rows.insert(train_rows.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_hold),
                      rows.end());
  }
  LabeledDataset train = ds.subset(train_rows);
  LabeledDataset holdout = ds.subset(holdout_rows);
  train.split = SplitTag::Train;
  holdout.split = SplitTag::Holdout;
  return {std::move(train), std::move(holdout)};
}

// File layout:
//   # lowdens dataset v1
//   dim <d>
//   classes <C>
//   count <N>
//   seed <seed>
//   split <train|holdout>
//   data
//   <x_1> ... <x_d> <label>      (N rows, whitespace separated)
std::string format_dataset(const LabeledDataset& ds) {
  std::string out;
  out += "# lowdens dataset v1\n";
  out += "dim " + std::to_string(ds.dim()) + "\n";
  out += "classes " + std::to_string(ds.num_classes) + "\n";
  out += "count " + std::to_string(ds.size()) + "\n";
  out += "seed " + std::to_string(ds.seed) + "\n";
  out += "split " + std::string(to_string(ds.split)) + "\n";
  out += "data\n";
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    for (Eigen::Index j = 0; j < ds.dim(); ++j) {
      out += format_double(ds.points(i, j));
      out += ' ';
    }
    out += std::to_string(ds.labels[static_cast<std::size_t>(i)]);
    out += '\n';
  }
  return out;
}

LabeledDataset parse_dataset(std::string_view text) {
  LineReader reader(text);
  auto expect_header = [&](std::string_view key) {
    auto line = reader.next_content_line();
    if (!line) throw ParseError("dataset: unexpected end of file, expected '" + std::string(key) + "'", reader.line_number());
    auto fields = split_fields(*line);
    if (fields.size() != 2 || fields[0] != key) {
      throw ParseError("dataset: expected '" + std::string(key) + " <value>'", reader.line_number());
    }
    return std::string(fields[1]);
  };
  LabeledDataset ds;
  const auto dim = parse_int<long long>(expect_header("dim"), reader.line_number());
  ds.num_classes = static_cast<int>(parse_int<long long>(expect_header("classes"), reader.line_number()));
  const auto count = parse_int<long long>(expect_header("count"), reader.line_number());
  ds.seed = parse_int<std::uint64_t>(expect_header("seed"), reader.line_number());
  try {
    ds.split = split_tag_from_string(expect_header("split"));
  } catch (const ParseError&) {
    throw;
  } catch (const InputError& e) {
    throw ParseError(std::string("dataset: ") + e.what(), reader.line_number());
  }
  if (dim < 1 || count < 0 || ds.num_classes < 1) {
    throw ParseError("dataset: invalid header values", reader.line_number());
  }
  {
    auto line = reader.next_content_line();
    if (!line || trim(*line) != "data") throw ParseError("dataset: expected 'data'", reader.line_number());
  }
  ds.points.resize(count, dim);
  ds.labels.resize(static_cast<std::size_t>(count));
  for (long long i = 0; i < count; ++i) {
    auto line = reader.next_content_line();
    if (!line) {
      throw ParseError("dataset: truncated, expected " + std::to_string(count) + " rows, got " +
                           std::to_string(i),
                       reader.line_number());
    }
    auto fields = split_fields(*line);
    if (static_cast<long long>(fields.size()) != dim + 1) {
      throw ParseError("dataset: row has " + std::to_string(fields.size()) + " fields, expected " +
                           std::to_string(dim + 1),
                       reader.line_number());
    }
    for (long long j = 0; j < dim; ++j) {
      ds.points(i, j) = parse_double(fields[static_cast<std::size_t>(j)], reader.line_number());
    }
    const auto label = parse_int<long long>(fields.back(), reader.line_number());
    if (label < 0 || label >= ds.num_classes) {
      throw ParseError("dataset: label out of range", reader.line_number());
    }
    ds.labels[static_cast<std::size_t>(i)] = static_cast<int>(label);
  }
  if (reader.next_content_line()) {
    throw ParseError("dataset: trailing rows beyond declared count", reader.line_number());
  }
  if (!ds.points.allFinite()) throw ParseError("dataset: non-finite value", reader.line_number());
  return ds;
}

void save_dataset(const LabeledDataset& ds, const std::filesystem::path& path) {
  write_text_file(path, format_dataset(ds));
}

LabeledDataset load_dataset(const std::filesystem::path& path) {
  return parse_dataset(read_text_file(path));
}

std::vector<MixtureSpec> default_world() {
  constexpr int kClasses = 4;
  std::vector<MixtureSpec> world;
  world.reserve(kClasses);
  auto at = [](double radius, double angle) {
    Vec v(2);
    v << radius * std::cos(angle), radius * std::sin(angle);
    return v;
  };
  auto iso = [](double var) { return Mat(var * Mat::Identity(2, 2)); };
  // Length unit of the layout. Guidance displaces a chain by alpha times the summed
  // reverse-step variance, a few units in total; s sets mode widths against that.
  constexpr double s = 30.0;
  for (int c = 0; c < kClasses; ++c) {
    const double theta = std::numbers::pi / 4.0 + c * std::numbers::pi / 2.0;
    // Major mode elongated along the tangential direction.
    Vec tangent(2);
    tangent << -std::sin(theta), std::cos(theta);
    Mat major = s * s * (0.03 * Mat::Identity(2, 2) + 0.05 * tangent * tangent.transpose());
    std::vector<MixtureComponent> comps;
    comps.push_back({0.80, at(2.0 * s, theta), major});
    comps.push_back({0.15, at(2.1 * s, theta + 0.40), iso(0.02 * s * s)});
    // The minor mode sits on the inner side, so guidance toward low density passes through
    // the sparse gap between it and the major mode.
    comps.push_back({0.05, at(1.1 * s, theta - 0.15), iso(0.015 * s * s)});
    world.emplace_back(c, std::move(comps));
  }
  return world;
}

}  // namespace lowdens
