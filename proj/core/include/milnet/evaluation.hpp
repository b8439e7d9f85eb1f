#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "milnet/data_io.hpp"
#include "milnet/metrics.hpp"
#include "milnet/training.hpp"

namespace milnet {

/// Stratified fold assignment. Run t tests on fold t, validates on fold
/// (t + 1) mod n and trains on the rest.
struct FoldPlan {
  std::size_t n_folds = 5;
  std::vector<std::size_t> fold_of;

  struct Run {
    std::size_t test_fold = 0;
    std::size_t val_fold = 0;
    std::vector<std::size_t> train, val, test;
  };
  Run run(std::size_t test_fold) const;
};

/// Each class is shuffled with a seed-derived stream and dealt round-robin;
/// the negative deal continues where the positive one stopped, so fold sizes
/// differ by at most one and per-fold class counts differ by at most one.
FoldPlan make_folds(std::span<const int> labels, std::size_t n_folds, std::uint64_t seed);

enum class BagMode { kAverage, kVote };
BagMode parse_bag_mode(const std::string& text);

/// Combines per-model score lists: elementwise mean, or fraction of models with score >= 0.5.
std::vector<double> bagging(const std::vector<std::vector<double>>& model_scores, BagMode mode);

struct FoldResult {
  std::size_t fold = 0;
  double accuracy = 0.0;
  double auc = 0.0;
  std::size_t k = 0;  // label_assign: the k used
  std::vector<std::size_t> test_indices;
  std::vector<double> test_scores;
  TrainResult training;
};

struct CvSummary {
  std::vector<FoldResult> folds;
  double mean_accuracy = 0.0, std_accuracy = 0.0;
  double mean_auc = 0.0, std_auc = 0.0;
};

struct CvOptions {
  std::size_t n_folds = 5;
  bool select_k = false;
  std::size_t workers = 1;
  std::function<void(std::size_t fold, const EpochMetrics&)> on_epoch;
};

CvSummary cross_validate(const std::vector<Sample>& samples, const TrainConfig& config, const CvOptions& options);

/// `fold,accuracy,auc` rows, then `mean` and `std` rows (sample std, n - 1).
std::string cv_summary_csv(const CvSummary& summary);

/// Mean and sample standard deviation.
std::pair<double, double> mean_std(std::span<const double> values);

struct Histogram {
  std::string quantity;
  std::vector<double> lo, hi;
  std::vector<std::size_t> count;
};

/// Equal-width histogram; a single distinct value yields one bin.
Histogram histogram(const std::string& quantity, std::span<const double> values, std::size_t bins = 10);

struct DatasetStats {
  std::vector<Histogram> histograms;  // image_width, image_height, mass_width, mass_height
  double mean_image_width = 0.0, mean_image_height = 0.0;
  double mean_mass_width = 0.0, mean_mass_height = 0.0;
  double mass_area_fraction = 0.0;  // mean of box area / image area over boxed images
  std::size_t images = 0, masses = 0;
};

DatasetStats dataset_stats(const Manifest& manifest, std::size_t bins = 10);

/// `quantity,bin_lo,bin_hi,count`.
std::string histograms_csv(const DatasetStats& stats);
/// `statistic,value`.
std::string stats_summary_csv(const DatasetStats& stats);

/// Nearest-neighbour upsample of a response grid to width x height.
GrayImage upsample_nearest(const ResponseMap& map, std::size_t width, std::size_t height);

/// Pixel rectangle of grid cell `index` under upsample_nearest.
Box cell_rect(const ResponseMap& map, std::size_t index, std::size_t width, std::size_t height);

/// True when the highest-response cell intersects `mass` (first cell on ties).
bool argmax_hits(const ResponseMap& map, const Box& mass, std::size_t width, std::size_t height);

struct ResponseExport {
  ResponseMap map;
  GrayImage grid;     // grid_w x grid_h, values 255 * r
  GrayImage overlay;  // input-sized nearest-neighbour upsample, values 255 * r
};

ResponseExport export_response_map(const Checkpoint& ckpt, const GrayImage& prepared);

/// Writes responses.csv, responses.pgm, overlay.pgm and input.pgm into `dir`.
void write_response_export(const ResponseExport& ex, const GrayImage& prepared, const std::filesystem::path& dir);

}  // namespace milnet
