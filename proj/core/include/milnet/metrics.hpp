#pragma once

#include <span>
#include <string>
#include <vector>

namespace milnet {

/// Fraction of samples where (score >= threshold) matches the label.
double accuracy(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5);

/// Mann-Whitney AUC: (#{pos > neg} + 0.5 #{pos == neg}) / (n_pos n_neg).
/// Computed by ranking in O(n log n).
double auc(std::span<const double> scores, std::span<const int> labels);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;  // +inf for the (0,0) endpoint
};

/// Thresholds sweep the distinct scores in descending order; starts at (0,0), ends at (1,1).
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels);

double trapezoid_area(const std::vector<RocPoint>& curve);

/// CSV with header `fpr,tpr,threshold`.
std::string roc_csv(const std::vector<RocPoint>& curve);

}  // namespace milnet
