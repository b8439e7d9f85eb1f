#include "milnet/mil_heads.hpp"

#include <cmath>
#include <stdexcept>

#include "milnet/ops.hpp"

namespace milnet {

std::string to_string(HeadKind head) {
  switch (head) {
    case HeadKind::kMaxPool: return "max_pool";
    case HeadKind::kLabelAssign: return "label_assign";
    case HeadKind::kSparse: return "sparse";
  }
  return "?";
}

std::string to_string(WeightMode mode) { return mode == WeightMode::kBalanced ? "balanced" : "literal"; }

HeadKind parse_head(const std::string& text) {
  if (text == "max_pool") return HeadKind::kMaxPool;
  if (text == "label_assign") return HeadKind::kLabelAssign;
  if (text == "sparse") return HeadKind::kSparse;
  throw std::invalid_argument("unknown head '" + text + "' (expected max_pool, label_assign or sparse)");
}

WeightMode parse_weight_mode(const std::string& text) {
  if (text == "balanced") return WeightMode::kBalanced;
  if (text == "literal") return WeightMode::kLiteral;
  throw std::invalid_argument("unknown weight_mode '" + text + "' (expected balanced or literal)");
}

void MilConfig::validate() const {
  if (k == 0) throw std::invalid_argument("k must be positive");
  if (m > 0 && k > m) {
    throw std::invalid_argument("k = " + std::to_string(k) + " exceeds the " + std::to_string(m) + " instances per bag");
  }
  if (!(mu >= 0.0) || !std::isfinite(mu)) throw std::invalid_argument("mu must be a nonnegative number");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("lambda must be a nonnegative number");
}

BagWeights bag_weights(std::size_t n_pos, std::size_t n_total, std::size_t k, std::size_t m, WeightMode mode) {
  if (n_pos == 0 || n_pos >= n_total) {
    throw std::invalid_argument("class weights need both classes present (n_pos = " + std::to_string(n_pos) +
                                ", n_total = " + std::to_string(n_total) + ")");
  }
  if (m == 0 || k == 0 || k > m) {
    throw std::invalid_argument("class weights need 0 < k <= m (k = " + std::to_string(k) + ", m = " +
                                std::to_string(m) + ")");
  }
  const double prevalence = double(n_pos) / double(n_total);
  BagWeights w;
  if (mode == WeightMode::kLiteral) {
    w.w1 = prevalence;
    w.w0 = 1.0 - prevalence;
  } else {
    w.w1 = 1.0 - prevalence;
    w.w0 = prevalence;
  }
  w.w1_patch = double(k * n_pos) / double(m * n_total);
  w.w0_patch = 1.0 - w.w1_patch;
  return w;
}

namespace {

void check_batch(Var ranked, std::span<const int> labels) {
  const Tensor& r = ranked.value();
  if (r.rank() != 2) throw std::invalid_argument("ranked responses must be [bags, instances], got " + shape_str(r.shape()));
  if (r.dim(0) != labels.size()) {
    throw std::invalid_argument("got " + std::to_string(labels.size()) + " labels for " + std::to_string(r.dim(0)) + " bags");
  }
  for (int y : labels)
    if (y != 0 && y != 1) throw std::invalid_argument("bag labels must be 0 or 1");
}

// -(sum pos_w * log r + sum neg_w * log(1 - r)) over clamped responses.
Var cross_entropy(Var ranked, const Tensor& pos_w, const Tensor& neg_w) {
  Var r = ops::clamp(ranked, kResponseFloor, 1.0 - kResponseFloor);
  Var pos = ops::weighted_sum(ops::log(r), pos_w);
  Var neg = ops::weighted_sum(ops::log(ops::one_minus(r)), neg_w);
  return ops::scale(ops::add(pos, neg), -1.0);
}

Var top_instance_term(Var ranked, std::span<const int> labels, const BagWeights& w) {
  check_batch(ranked, labels);
  const Shape& s = ranked.shape();
  Tensor pos_w(s, 0.0), neg_w(s, 0.0);
  const std::size_t m = s[1];
  for (std::size_t n = 0; n < labels.size(); ++n) {
    if (labels[n] == 1) {
      pos_w[n * m] = w.w1;
    } else {
      neg_w[n * m] = w.w0;
    }
  }
  return cross_entropy(ranked, pos_w, neg_w);
}

Var with_penalty(Var term, std::span<const Var> params, double lambda) {
  if (params.empty()) return term;
  return ops::add(term, weight_penalty(params, lambda));
}

}  // namespace

Var max_pool_term(Var ranked, std::span<const int> labels, const BagWeights& w) {
  return top_instance_term(ranked, labels, w);
}

Var label_assign_term(Var ranked, std::span<const int> labels, std::size_t k, const BagWeights& w) {
  check_batch(ranked, labels);
  const Shape& s = ranked.shape();
  const std::size_t m = s[1];
  if (k == 0 || k > m) throw std::invalid_argument("label assignment needs 0 < k <= m, got k = " + std::to_string(k));
  Tensor pos_w(s, 0.0), neg_w(s, 0.0);
  for (std::size_t n = 0; n < labels.size(); ++n) {
    for (std::size_t j = 0; j < m; ++j) {
      if (labels[n] == 1 && j < k) {
        pos_w[n * m + j] = w.w1_patch;
      } else {
        neg_w[n * m + j] = w.w0_patch;
      }
    }
  }
  return cross_entropy(ranked, pos_w, neg_w);
}

Var sparse_term(Var ranked, std::span<const int> labels, double mu, const BagWeights& w) {
  if (!(mu >= 0.0)) throw std::invalid_argument("mu must be nonnegative");
  Var bag = top_instance_term(ranked, labels, w);
  return ops::add(bag, ops::scale(ops::l1_norm(ranked), mu));
}

Var weight_penalty(std::span<const Var> params, double lambda) {
  if (params.empty()) throw std::invalid_argument("weight_penalty: no parameters");
  Var total = ops::l2_norm_sq(params[0]);
  for (std::size_t i = 1; i < params.size(); ++i) total = ops::add(total, ops::l2_norm_sq(params[i]));
  return ops::scale(total, 0.5 * lambda);
}

Var loss_max_pool(Var ranked, std::span<const int> labels, const BagWeights& w, double lambda,
                  std::span<const Var> params) {
  return with_penalty(max_pool_term(ranked, labels, w), params, lambda);
}

Var loss_label_assign(Var ranked, std::span<const int> labels, std::size_t k, const BagWeights& w, double lambda,
                      std::span<const Var> params) {
  return with_penalty(label_assign_term(ranked, labels, k, w), params, lambda);
}

Var loss_sparse(Var ranked, std::span<const int> labels, double mu, const BagWeights& w, double lambda,
                std::span<const Var> params) {
  return with_penalty(sparse_term(ranked, labels, mu, w), params, lambda);
}

Var mil_loss(Var ranked, std::span<const int> labels, const MilConfig& cfg, const BagWeights& w,
             std::span<const Var> params) {
  switch (cfg.head) {
    case HeadKind::kMaxPool: return loss_max_pool(ranked, labels, w, cfg.lambda, params);
    case HeadKind::kLabelAssign: return loss_label_assign(ranked, labels, cfg.k, w, cfg.lambda, params);
    case HeadKind::kSparse: return loss_sparse(ranked, labels, cfg.mu, w, cfg.lambda, params);
  }
  throw std::logic_error("unhandled head");
}

double infer_bag(std::span<const double> ranked) {
  if (ranked.empty()) throw std::invalid_argument("infer_bag: empty bag");
  return ranked[0];
}

}  // namespace milnet
