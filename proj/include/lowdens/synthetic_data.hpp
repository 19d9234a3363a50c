#pragma once

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace lowdens {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct MixtureComponent {
  double weight = 0.0;
  Vec mean;
  Mat covariance;
};

// Gaussian mixture density of one class. Construction validates weights and
// covariances and caches Cholesky factors for sampling and evaluation.
class MixtureSpec {
 public:
  MixtureSpec(int class_id, std::vector<MixtureComponent> components);

  int class_id() const noexcept { return class_id_; }
  int dim() const noexcept { return dim_; }
  const std::vector<MixtureComponent>& components() const noexcept { return components_; }

  // True when some component carries weight <= 0.1, i.e. the class has a
  // minor mode and its density is long-tailed.
  bool has_minor_mode() const noexcept;

  // Exact mixture density sum_j w_j N(x; m_j, S_j).
  double density(const Vec& x) const;

  template <class Rng>
  Vec draw(Rng& rng) const;

 private:
  int class_id_;
  int dim_;
  std::vector<MixtureComponent> components_;
  std::vector<Mat> chol_;           // lower factors
  std::vector<double> log_norm_;    // -0.5 (d ln 2pi + ln det S_j)
};

enum class SplitTag { Train, Holdout };

std::string_view to_string(SplitTag tag);
SplitTag split_tag_from_string(std::string_view s);

// Points are stored one per row.
struct LabeledDataset {
  Mat points;
  std::vector<int> labels;
  int num_classes = 0;
  SplitTag split = SplitTag::Train;
  std::uint64_t seed = 0;

  Eigen::Index size() const noexcept { return points.rows(); }
  Eigen::Index dim() const noexcept { return points.cols(); }
  // Throws ContractError when labels/points disagree or a value is non-finite.
  void validate() const;
  std::vector<Eigen::Index> indices_of(int label) const;
  LabeledDataset subset(const std::vector<Eigen::Index>& rows) const;
};

bool operator==(const LabeledDataset& a, const LabeledDataset& b);

// Component-weighted ancestral sampling, n_per_class points per class.
// Classes are labelled by their position in spec_set.
LabeledDataset generate(const std::vector<MixtureSpec>& spec_set, int n_per_class,
                        std::uint64_t seed);

double true_density(const MixtureSpec& spec, const Vec& x);

// Stratified per-class split; holdout_fraction of each class goes to the
// holdout set. Returns (train, holdout).
std::pair<LabeledDataset, LabeledDataset> split_holdout(const LabeledDataset& ds,
                                                        double holdout_fraction,
                                                        std::uint64_t seed);

void save_dataset(const LabeledDataset& ds, const std::filesystem::path& path);
LabeledDataset load_dataset(const std::filesystem::path& path);

// Serialization to/from an in-memory string, used by the file functions.
std::string format_dataset(const LabeledDataset& ds);
LabeledDataset parse_dataset(std::string_view text);

// Four classes in the plane, each a (0.80, 0.15, 0.05) three-component mixture.
std::vector<MixtureSpec> default_world();

// ---------------------------------------------------------------------------

template <class Rng>
Vec MixtureSpec::draw(Rng& rng) const {
  const double u = rng.uniform();
  std::size_t j = 0;
  double acc = components_[0].weight;
  while (u >= acc && j + 1 < components_.size()) {
    ++j;
    acc += components_[j].weight;
  }
  Vec z(dim_);
  for (int i = 0; i < dim_; ++i) z[i] = rng.normal();
  return components_[j].mean + chol_[j] * z;
}

}  // namespace lowdens
