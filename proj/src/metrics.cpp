#include "scrubkit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "scrubkit/error.hpp"
#include "scrubkit/rng.hpp"

namespace scrub {

namespace {

constexpr double kLossClip = 400.0;
constexpr std::uint64_t kBalanceForgetStream = 0x4D1A;
constexpr std::uint64_t kBalanceTestStream = 0x4D1B;
constexpr std::uint64_t kFoldStream = 0x4D1C;

void validate_class_pair(const ConfusionMatrix& matrix, int class_a, int class_b) {
  const int c = matrix.num_classes();
  if (class_a < 0 || class_a >= c || class_b < 0 || class_b >= c)
    throw Error(ErrorCode::invalid_argument, "class index outside [0, " + std::to_string(c) + ")");
  if (class_a == class_b)
    throw Error(ErrorCode::invalid_argument, "confusion metrics need two distinct classes");
}

// Linear logistic attacker on a single standardized feature, fit by Newton's
// method with an L2 penalty of 0.5 * w^2 on the slope (intercept unpenalized).
struct Attacker {
  double slope = 0.0;
  double intercept = 0.0;
  double mean = 0.0;
  double scale = 1.0;  // train-fold standard deviation, floored

  double predict_proba(double x) const {
    const double z = slope * (x - mean) / scale + intercept;
    return 1.0 / (1.0 + std::exp(-z));
  }
};

Attacker fit_attacker(const Eigen::VectorXd& features, const std::vector<int>& labels,
                      const std::vector<int>& train_rows) {
  Attacker a;
  const double n = static_cast<double>(train_rows.size());
  double mean = 0.0;
  for (int r : train_rows) mean += features[r];
  mean /= n;
  double var = 0.0;
  for (int r : train_rows) var += (features[r] - mean) * (features[r] - mean);
  var /= n;
  a.mean = mean;
  a.scale = std::sqrt(var) > 1e-12 ? std::sqrt(var) : 1.0;

  for (int iter = 0; iter < 50; ++iter) {
    double g_w = a.slope, g_b = 0.0;  // penalty gradient on the slope
    double h_ww = 1.0, h_wb = 0.0, h_bb = 0.0;
    for (int r : train_rows) {
      const double x = (features[r] - a.mean) / a.scale;
      const double p = 1.0 / (1.0 + std::exp(-(a.slope * x + a.intercept)));
      const double d = p - static_cast<double>(labels[static_cast<std::size_t>(r)]);
      const double s = p * (1.0 - p);
      g_w += d * x;
      g_b += d;
      h_ww += s * x * x;
      h_wb += s * x;
      h_bb += s;
    }
    const double det = h_ww * h_bb - h_wb * h_wb;
    if (std::abs(det) < 1e-12) break;
    const double step_w = (h_bb * g_w - h_wb * g_b) / det;
    const double step_b = (h_ww * g_b - h_wb * g_w) / det;
    a.slope -= step_w;
    a.intercept -= step_b;
    if (std::abs(step_w) < 1e-10 && std::abs(step_b) < 1e-10) break;
  }
  return a;
}

double attacker_accuracy(const Attacker& a, const Eigen::VectorXd& features,
                         const std::vector<int>& labels, const std::vector<int>& eval_rows) {
  long correct = 0;
  for (int r : eval_rows) {
    const int pred = a.predict_proba(features[r]) > 0.5 ? 1 : 0;
    if (pred == labels[static_cast<std::size_t>(r)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(eval_rows.size());
}

}  // namespace

ConfusionMatrix confusion_matrix(const ClassifierModel& model, const LabeledDataset& data) {
  if (data.empty())
    throw Error(ErrorCode::invalid_argument, "cannot build a confusion matrix of nothing");
  if (data.num_classes() != model.num_classes())
    throw Error(ErrorCode::dimension_mismatch, "dataset and model class counts disagree");
  ConfusionMatrix m;
  m.counts = Eigen::MatrixXi::Zero(model.num_classes(), model.num_classes());
  const std::vector<int> preds = model.predict(data.features());
  for (int i = 0; i < data.size(); ++i)
    ++m.counts(data.labels()[static_cast<std::size_t>(i)], preds[static_cast<std::size_t>(i)]);
  return m;
}

double ic_err(const ConfusionMatrix& matrix, int class_a, int class_b) {
  validate_class_pair(matrix, class_a, class_b);
  const long na = matrix.row_sum(class_a);
  const long nb = matrix.row_sum(class_b);
  if (na + nb == 0)
    throw Error(ErrorCode::invalid_argument, "both classes are empty in this dataset");
  const long wrong =
      (na - matrix.counts(class_a, class_a)) + (nb - matrix.counts(class_b, class_b));
  return static_cast<double>(wrong) / static_cast<double>(na + nb);
}

long fgt_err(const ConfusionMatrix& matrix, int class_a, int class_b) {
  validate_class_pair(matrix, class_a, class_b);
  return static_cast<long>(matrix.counts(class_a, class_b)) +
         static_cast<long>(matrix.counts(class_b, class_a));
}

AttackSet build_attack_set(const Eigen::VectorXd& forget_losses,
                           const Eigen::VectorXd& test_losses, std::uint64_t seed) {
  if (forget_losses.size() == 0 || test_losses.size() == 0)
    throw Error(ErrorCode::invalid_argument, "attack set needs losses from both sides");
  const int n = static_cast<int>(std::min(forget_losses.size(), test_losses.size()));
  auto pick = [&](const Eigen::VectorXd& losses, std::uint64_t stream) {
    std::vector<int> rows;
    if (static_cast<int>(losses.size()) == n) {
      rows.resize(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) rows[static_cast<std::size_t>(i)] = i;
    } else {
      Rng rng(stream_seed(seed, stream));
      rows = rng.sample_without_replacement(static_cast<int>(losses.size()), n);
    }
    return rows;
  };
  const std::vector<int> keep_f = pick(forget_losses, kBalanceForgetStream);
  const std::vector<int> keep_t = pick(test_losses, kBalanceTestStream);

  AttackSet set;
  set.features.resize(2 * n);
  set.labels.resize(static_cast<std::size_t>(2 * n));
  for (int i = 0; i < n; ++i) {
    set.features[i] = std::clamp(forget_losses[keep_f[static_cast<std::size_t>(i)]], -kLossClip,
                                 kLossClip);
    set.labels[static_cast<std::size_t>(i)] = 1;
  }
  for (int i = 0; i < n; ++i) {
    set.features[n + i] = std::clamp(test_losses[keep_t[static_cast<std::size_t>(i)]], -kLossClip,
                                     kLossClip);
    set.labels[static_cast<std::size_t>(n + i)] = 0;
  }
  return set;
}

std::vector<std::vector<int>> stratified_folds(const std::vector<int>& labels, int k,
                                               std::uint64_t seed) {
  if (k < 2) throw Error(ErrorCode::invalid_argument, "need at least 2 folds");
  if (labels.empty()) throw Error(ErrorCode::invalid_argument, "cannot fold an empty label set");
  std::map<int, std::vector<int>> by_label;
  for (std::size_t i = 0; i < labels.size(); ++i)
    by_label[labels[i]].push_back(static_cast<int>(i));

  std::vector<std::vector<int>> folds(static_cast<std::size_t>(k));
  Rng rng(stream_seed(seed, kFoldStream));
  for (auto& [label, rows] : by_label) {
    if (static_cast<int>(rows.size()) < k)
      throw Error(ErrorCode::invalid_argument,
                  "class " + std::to_string(label) + " has fewer than " + std::to_string(k) +
                      " examples");
    rng.shuffle(rows);
    for (std::size_t i = 0; i < rows.size(); ++i)
      folds[i % static_cast<std::size_t>(k)].push_back(rows[i]);
  }
  for (auto& fold : folds) std::sort(fold.begin(), fold.end());
  return folds;
}

MiaResult mia_score_from_losses(const Eigen::VectorXd& forget_losses,
                                const Eigen::VectorXd& test_losses, std::uint64_t seed) {
  const AttackSet set = build_attack_set(forget_losses, test_losses, seed);
  const int per_side = static_cast<int>(set.features.size()) / 2;
  if (per_side < 5)
    throw Error(ErrorCode::invalid_argument,
                "membership inference needs at least 5 examples per side after balancing, got " +
                    std::to_string(per_side));
  const std::vector<std::vector<int>> folds = stratified_folds(set.labels, 5, seed);

  MiaResult result;
  result.n_forget = static_cast<int>(forget_losses.size());
  result.n_test = static_cast<int>(test_losses.size());
  for (const std::vector<int>& fold : folds) {
    std::vector<bool> held(set.labels.size(), false);
    for (int r : fold) held[static_cast<std::size_t>(r)] = true;
    std::vector<int> train_rows;
    train_rows.reserve(set.labels.size() - fold.size());
    for (std::size_t i = 0; i < set.labels.size(); ++i)
      if (!held[i]) train_rows.push_back(static_cast<int>(i));
    const Attacker attacker = fit_attacker(set.features, set.labels, train_rows);
    result.fold_accuracies.push_back(
        attacker_accuracy(attacker, set.features, set.labels, fold));
  }
  double mean = 0.0;
  for (double a : result.fold_accuracies) mean += a;
  mean /= static_cast<double>(result.fold_accuracies.size());
  double var = 0.0;
  for (double a : result.fold_accuracies) var += (a - mean) * (a - mean);
  var /= static_cast<double>(result.fold_accuracies.size());
  result.attack_accuracy_mean = mean;
  result.attack_accuracy_std = std::sqrt(var);
  return result;
}

MiaResult mia_score(const ClassifierModel& model, const LabeledDataset& forget,
                    const LabeledDataset& test, std::uint64_t seed) {
  if (forget.empty() || test.empty())
    throw Error(ErrorCode::invalid_argument,
                "membership inference needs nonempty forget and test sets");
  return mia_score_from_losses(per_example_loss(model, forget), per_example_loss(model, test),
                               seed);
}

double scale_up_factor(double retrain_seconds, double method_seconds) {
  if (!(retrain_seconds > 0.0) || !(method_seconds > 0.0))
    throw Error(ErrorCode::invalid_argument, "scale-up needs positive timings");
  return retrain_seconds / method_seconds;
}

}  // namespace scrub
