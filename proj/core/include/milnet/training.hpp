#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "milnet/data_io.hpp"
#include "milnet/key_values.hpp"
#include "milnet/mil_heads.hpp"
#include "milnet/model.hpp"
#include "milnet/preprocess.hpp"

namespace milnet {

/// Network-ready sample: image already cropped and resized to the backbone input.
struct Sample {
  GrayImage image;
  int label = 0;
  std::optional<Box> mass;  // in the resized frame
};

std::vector<Sample> prepare_samples(const Manifest& manifest, std::size_t input_size);

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t epochs = 50;
  std::size_t batch_size = 8;
  MilConfig mil;
  std::uint64_t seed = 1;
  std::vector<std::size_t> k_grid{4, 8, 12, 16};
  std::string preset = "desk";
  AugmentConfig augment;

  void validate() const;

  /// Config keys accepted by from_key_values, in documentation order.
  static const std::vector<std::string>& known_keys();
  /// One-line description per key, for --help.
  static const std::map<std::string, std::string>& key_docs();

  /// Applies head-dependent defaults and rejects keys that do not apply to the head.
  static TrainConfig from_key_values(const KeyValues& kv);
  /// Round-trips through from_key_values (with every applicable key spelled out).
  std::string to_text() const;
};

using GradMap = std::map<std::string, Tensor>;

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;

  bool operator==(const AdamState&) const = default;
};

struct TrainState {
  ModelParams params;
  AdamState adam;

  bool operator==(const TrainState&) const = default;
};

AdamState zero_moments(const ModelParams& params);

/// Bias-corrected Adam update of every parameter. Throws if a parameter has no gradient.
void adam_step(TrainState& state, const GradMap& grads, double lr, double beta1, double beta2, double eps);

/// Magic "MILN", u32 version, u64 length + config text, then tensors
/// (u32 name length, name, u32 rank, u64 dims, u8 dtype 0 = f64 LE, payload).
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  TrainConfig config;
  BackboneSpec backbone;
  TrainState state;

  std::string serialize() const;
  static Checkpoint deserialize(const std::string& bytes);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean batch loss over the epoch
  double val_auc = 0.0;  // NaN without a validation set
  double val_acc = 0.0;
};

/// CSV with header `epoch,train_loss,val_auc,val_acc`.
std::string metrics_csv(const std::vector<EpochMetrics>& log);

struct TrainResult {
  Checkpoint best;
  std::size_t best_epoch = 0;
  std::vector<EpochMetrics> log;
  /// Sum of per-step losses of the last epoch divided by the step count.
  double last_step_loss = 0.0;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Bag probabilities (top response) for each sample.
std::vector<double> predict_scores(const BackboneSpec& spec, const ModelParams& params,
                                   const std::vector<const Sample*>& samples, std::size_t chunk = 16);

/// One forward + backward pass; returns the loss and fills `grads`.
double loss_and_grads(const BackboneSpec& spec, const ModelParams& params, const std::vector<const Sample*>& batch,
                      const std::vector<const GrayImage*>& images, const MilConfig& mil, const BagWeights& weights,
                      GradMap& grads);

/// Trains from a fresh seed-determined initialization. Keeps the checkpoint of
/// the epoch with the highest validation AUC (earliest on ties); without a
/// validation set the last epoch wins.
TrainResult train(const std::vector<const Sample*>& train_set, const std::vector<const Sample*>& val_set,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

struct SelectKResult {
  std::size_t k = 0;
  TrainResult result;
  std::vector<std::pair<std::size_t, double>> val_auc_by_k;
};

/// Label-assign only: trains once per k in config.k_grid and keeps the best
/// validation AUC (smaller k on ties).
SelectKResult select_k(const std::vector<const Sample*>& train_set, const std::vector<const Sample*>& val_set,
                       const TrainConfig& config, const EpochCallback& on_epoch = {});

}  // namespace milnet
