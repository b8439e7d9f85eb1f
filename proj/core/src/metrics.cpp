#include "milnet/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace milnet {
namespace {

void check_inputs(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw std::invalid_argument("got " + std::to_string(scores.size()) + " scores for " + std::to_string(labels.size()) +
                                " labels");
  }
  if (scores.empty()) throw std::invalid_argument("empty score list");
  for (int y : labels)
    if (y != 0 && y != 1) throw std::invalid_argument("labels must be 0 or 1");
}

std::pair<std::size_t, std::size_t> class_counts(std::span<const int> labels) {
  const auto pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (pos == 0 || pos == labels.size()) throw std::invalid_argument("AUC needs both classes present");
  return {pos, labels.size() - pos};
}

std::vector<std::size_t> descending_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace

double accuracy(std::span<const double> scores, std::span<const int> labels, double threshold) {
  check_inputs(scores, labels);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) correct += int(scores[i] >= threshold) == labels[i];
  return double(correct) / double(scores.size());
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  const auto [n_pos, n_neg] = class_counts(labels);
  // Walk tie groups from the top; each positive beats every negative below its group
  // and gets half credit for negatives inside it.
  const auto order = descending_order(scores);
  double wins = 0.0;
  std::size_t neg_above = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i, pos = 0, neg = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] == 1 ? pos : neg)++;
      ++j;
    }
    wins += double(pos) * (double(n_neg - neg_above - neg) + 0.5 * double(neg));
    neg_above += neg;
    i = j;
  }
  return wins / (double(n_pos) * double(n_neg));
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  const auto [n_pos, n_neg] = class_counts(labels);
  const auto order = descending_order(scores);
  std::vector<RocPoint> curve{{0.0, 0.0, std::numeric_limits<double>::infinity()}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double t = scores[order[i]];
    while (i < order.size() && scores[order[i]] == t) {
      (labels[order[i]] == 1 ? tp : fp)++;
      ++i;
    }
    curve.push_back({double(fp) / double(n_neg), double(tp) / double(n_pos), t});
  }
  return curve;
}

double trapezoid_area(const std::vector<RocPoint>& curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    area += (curve[i].fpr - curve[i - 1].fpr) * (curve[i].tpr + curve[i - 1].tpr) * 0.5;
  }
  return area;
}

std::string roc_csv(const std::vector<RocPoint>& curve) {
  std::ostringstream os;
  os << "fpr,tpr,threshold\n";
  char buf[96];
  for (const auto& p : curve) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g\n", p.fpr, p.tpr, p.threshold);
    os << buf;
  }
  return os.str();
}

}  // namespace milnet
