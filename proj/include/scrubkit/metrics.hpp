#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "scrubkit/dataset.hpp"
#include "scrubkit/model.hpp"

namespace scrub {

struct ConfusionMatrix {
  // counts(a, b) = examples of true class a predicted as b
  Eigen::MatrixXi counts;

  int num_classes() const { return static_cast<int>(counts.rows()); }
  long total() const { return counts.sum(); }
  long row_sum(int label) const { return counts.row(label).sum(); }
};

ConfusionMatrix confusion_matrix(const ClassifierModel& model, const LabeledDataset& data);

// Fraction of class-a and class-b examples predicted as any wrong class:
// (sum_{k != a} counts(a,k) + sum_{k != b} counts(b,k)) / (|D_a| + |D_b|)
double ic_err(const ConfusionMatrix& matrix, int class_a, int class_b);

// Raw count of mistakes strictly between the two classes:
// counts(a,b) + counts(b,a)
long fgt_err(const ConfusionMatrix& matrix, int class_a, int class_b);

struct MiaResult {
  double attack_accuracy_mean = 0.0;
  double attack_accuracy_std = 0.0;
  std::vector<double> fold_accuracies;  // always 5 entries
  int n_forget = 0;
  int n_test = 0;
};

// Loss values clipped to [-400, 400] and class-balanced by down-sampling the
// larger side. labels: 1 = forget (member), 0 = test (non-member).
struct AttackSet {
  Eigen::VectorXd features;
  std::vector<int> labels;
};

AttackSet build_attack_set(const Eigen::VectorXd& forget_losses,
                           const Eigen::VectorXd& test_losses, std::uint64_t seed);

// Stratified k-fold index split: each fold preserves the overall label
// balance; folds are disjoint and cover every index.
std::vector<std::vector<int>> stratified_folds(const std::vector<int>& labels, int k,
                                               std::uint64_t seed);

// Loss-based membership inference: a linear logistic attacker on the single
// clipped-loss feature, evaluated with stratified 5-fold cross-validation.
MiaResult mia_score_from_losses(const Eigen::VectorXd& forget_losses,
                                const Eigen::VectorXd& test_losses, std::uint64_t seed);

MiaResult mia_score(const ClassifierModel& model, const LabeledDataset& forget,
                    const LabeledDataset& test, std::uint64_t seed);

double scale_up_factor(double retrain_seconds, double method_seconds);

}  // namespace scrub
