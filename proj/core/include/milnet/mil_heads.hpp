#pragma once

#include <cstddef>
#include <span>
#include <string>

#include "milnet/autodiff.hpp"

namespace milnet {

enum class HeadKind { kMaxPool, kLabelAssign, kSparse };
enum class WeightMode { kBalanced, kLiteral };

std::string to_string(HeadKind head);
std::string to_string(WeightMode mode);
HeadKind parse_head(const std::string& text);
WeightMode parse_weight_mode(const std::string& text);

/// Responses are clamped into [kResponseFloor, 1 - kResponseFloor] before any log.
inline constexpr double kResponseFloor = 1e-7;

struct MilConfig {
  HeadKind head = HeadKind::kMaxPool;
  std::size_t k = 4;     // label-assign only
  double mu = 0.0;       // sparse only
  double lambda = 0.0;
  WeightMode weight_mode = WeightMode::kBalanced;
  std::size_t m = 0;     // instances per bag; 0 = not yet known

  void validate() const;
};

struct BagWeights {
  double w1 = 0.5;        // bag-level, positive bags
  double w0 = 0.5;        // bag-level, negative bags
  double w1_patch = 0.5;  // patch-level, k * N_pos / (m * N)
  double w0_patch = 0.5;  // 1 - w1_patch
};

/// Class weights from training-set counts. Balanced mode gives each class the
/// other class's prevalence; literal mode gives each class its own prevalence.
BagWeights bag_weights(std::size_t n_pos, std::size_t n_total, std::size_t k, std::size_t m, WeightMode mode);

/// Per-bag losses over ranked responses [N, m] (rows nonincreasing). Each
/// returns the batch sum without the parameter penalty.
Var max_pool_term(Var ranked, std::span<const int> labels, const BagWeights& w);
Var label_assign_term(Var ranked, std::span<const int> labels, std::size_t k, const BagWeights& w);
Var sparse_term(Var ranked, std::span<const int> labels, double mu, const BagWeights& w);

/// (lambda / 2) * sum of squared entries over all parameters.
Var weight_penalty(std::span<const Var> params, double lambda);

/// Full objectives: head term + weight penalty.
Var loss_max_pool(Var ranked, std::span<const int> labels, const BagWeights& w, double lambda,
                  std::span<const Var> params);
Var loss_label_assign(Var ranked, std::span<const int> labels, std::size_t k, const BagWeights& w, double lambda,
                      std::span<const Var> params);
Var loss_sparse(Var ranked, std::span<const int> labels, double mu, const BagWeights& w, double lambda,
                std::span<const Var> params);

/// Dispatches on cfg.head.
Var mil_loss(Var ranked, std::span<const int> labels, const MilConfig& cfg, const BagWeights& w,
             std::span<const Var> params);

/// Bag probability: the top ranked response, for every head.
double infer_bag(std::span<const double> ranked);

}  // namespace milnet
