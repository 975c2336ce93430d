#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "vibrosense/modal.hpp"
#include "vibrosense/model.hpp"
#include "vibrosense/train.hpp"

namespace vibro {

// Test categories of the six-way protocol:
//   a  held-out speaker filter          b  unseen container instance
//   c  intermediate fill levels         d  ambient-surrogate excitation
//   e  c and d combined                 f  b and d combined
struct CategorySplit {
  char category = 'a';
  bool available = false;
  std::vector<ManifestRow> test;
};

struct DatasetSplits {
  std::vector<ManifestRow> train;  // pool minus the held-out speaker
  int held_out_speaker = -1;
  int unseen_instance = -1;
  std::array<CategorySplit, 6> categories;

  const CategorySplit& category(char c) const;
};

// Splits a manifest by its strata. Categories whose strata are missing are
// flagged unavailable rather than silently empty.
DatasetSplits split_dataset(const std::vector<ManifestRow>& manifest);

struct EvalRow {
  char category = 'a';
  bool available = false;
  double level_mae = 0.0;
  double class_accuracy = 0.0;
  int n_samples = 0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::uint64_t checkpoint_hash = 0;
  std::uint64_t dataset_hash = 0;
  std::string notes;  // e.g. the ambient-surrogate caveat
};

std::uint64_t manifest_hash(const std::vector<ManifestRow>& rows);

// Loads one manifest row into the raw magnitude domain (three points).
TrainSample featurize_row(const ManifestRow& row, const FrequencyGrid& grid);

using SampleLoader = std::function<TrainSample(const ManifestRow&)>;

// Per-category MAE and class accuracy. Categories c and e use the
// expectation estimator (their labels sit between grid levels); the rest
// use the MAP estimator. Deterministic in (params, splits).
EvalReport evaluate(const TransformerParams& params,
                    const DatasetSplits& splits, const SampleLoader& loader,
                    unsigned n_threads = 1);

struct AblationRow {
  int n_points = 0;
  char category = 'a';
  double level_mae = 0.0;
  int n_samples = 0;
};

struct AblationReport {
  std::vector<AblationRow> rows;
  double mae_for(int n_points, char category) const;
};

// Trains a 3-point and a 1-point (point index 0 only) variant with the same
// seed and budget, then compares MAE on categories a and b.
AblationReport ablate_points(const std::vector<TrainSample>& train_samples,
                             const DatasetSplits& splits,
                             const SampleLoader& loader,
                             const ModelConfig& model_config,
                             const TrainConfig& train_config,
                             const FrequencyGrid& grid);

struct LatentProjection {
  Eigen::MatrixXd points;      // n x 3, PCA coordinates
  std::vector<double> levels;  // per row
  std::vector<int> classes;
  Eigen::MatrixXd components;  // d x 3, orthonormal
  Eigen::Vector3d explained_variance_ratio;  // non-increasing
};

// CLS embeddings of every sample, centered, projected on the top three
// principal components (eigen-decomposition of the covariance).
LatentProjection latent_pca(const TransformerParams& params,
                            const std::vector<TrainSample>& samples);

// Mean silhouette of grouping by level, restricted to on-grid levels.
double silhouette_by_level(const LatentProjection& proj);

// Fraction of intermediate-level samples whose projection is closer to the
// segment between their two neighboring level centroids than to the segment
// of any other centroid pair.
double intermediate_between_fraction(const LatentProjection& proj);

void save_eval_report(const EvalReport& report, const std::string& csv_path);
EvalReport load_eval_report(const std::string& csv_path);
std::string format_report_table(const EvalReport& report);

// Minimal static plots; all well-formed standalone SVG.
void svg_training_curves(const std::vector<EpochLog>& log,
                         const std::string& path);
void svg_pca_scatter(const LatentProjection& proj, const std::string& path);
void svg_spectrum(const SpectralFeature& s, const FrequencyGrid& grid,
                  const std::string& path);

}  // namespace vibro
