#pragma once

#include <Eigen/Core>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace scrub {

// Stable per-example identity: position within the canonical ordering of the
// split the example originated from, plus a tag for that split. Derived sets
// (retain, forget, matched validation) keep the ids of their source examples,
// which is what makes partition and disjointness checks possible.
struct ExampleId {
  std::uint32_t split = 0;
  std::uint32_t index = 0;
  auto operator<=>(const ExampleId&) const = default;
};

inline constexpr std::uint32_t kTrainSplit = 0;
inline constexpr std::uint32_t kValidationSplit = 1;
inline constexpr std::uint32_t kTestSplit = 2;

// Immutable collection of (feature vector, class label) examples.
//
// `original_labels` tracks pre-corruption labels: it differs from `labels`
// only for datasets produced by inject_confusion, where the stored labels are
// the deliberately wrong ones.
class LabeledDataset {
 public:
  LabeledDataset() = default;
  LabeledDataset(Eigen::MatrixXd features, std::vector<int> labels, int num_classes,
                 std::string split_name, std::vector<ExampleId> ids = {},
                 std::vector<int> original_labels = {});

  int size() const { return static_cast<int>(labels_.size()); }
  bool empty() const { return labels_.empty(); }
  int dim() const { return static_cast<int>(features_.cols()); }
  int num_classes() const { return num_classes_; }
  const Eigen::MatrixXd& features() const { return features_; }
  const std::vector<int>& labels() const { return labels_; }
  const std::vector<int>& original_labels() const { return original_labels_; }
  const std::vector<ExampleId>& ids() const { return ids_; }
  const std::string& split_name() const { return split_name_; }

  // Rows of `rows` in the given order, keeping ids and original labels.
  LabeledDataset subset(const std::vector<int>& rows, std::string split_name) const;

  // Feature rows for a batch of example indices.
  Eigen::MatrixXd gather_features(const std::vector<int>& rows) const;
  std::vector<int> gather_labels(const std::vector<int>& rows) const;

  std::vector<int> rows_with_label(int label) const;
  std::vector<int> class_counts() const;

 private:
  Eigen::MatrixXd features_;
  std::vector<int> labels_;
  std::vector<int> original_labels_;
  std::vector<ExampleId> ids_;
  int num_classes_ = 0;
  std::string split_name_;
};

struct DatasetTriplet {
  LabeledDataset train;
  LabeledDataset validation;
  LabeledDataset test;
};

// Synthetic Gaussian-blobs generator: class means are drawn from
// separation * N(0, I), examples from mean + noise * N(0, I).
struct BlobsSpec {
  int classes = 5;
  int dim = 16;
  int train_per_class = 100;
  int val_per_class = 25;
  int test_per_class = 100;
  double separation = 0.45;
  double noise = 1.0;
};

struct DatasetSource {
  std::string kind = "blobs";  // "blobs" | "archive"
  BlobsSpec blobs;
  std::filesystem::path path;  // archive directory
};

struct ForgetSpec {
  enum class Mode { whole_class, selective };
  Mode mode = Mode::whole_class;
  int target_class = 0;
  int count = 0;  // selective mode only
};

struct ConfusionSpec {
  int class_a = 0;
  int class_b = 1;
  int count_per_class = 0;
};

struct RetainForget {
  LabeledDataset retain;
  LabeledDataset forget;
};

struct ConfusionResult {
  LabeledDataset confused_train;
  LabeledDataset forget;  // the mislabeled examples, carrying their corrupted labels
  LabeledDataset retain;  // the untouched remainder
};

DatasetTriplet load_dataset(const DatasetSource& source, std::uint64_t seed);

DatasetTriplet make_blobs(const BlobsSpec& spec, std::uint64_t seed);

RetainForget split_retain_forget(const LabeledDataset& train, const ForgetSpec& spec,
                                 std::uint64_t seed);

ConfusionResult inject_confusion(const LabeledDataset& train, const ConfusionSpec& spec,
                                 std::uint64_t seed);

// Subset of `validation` whose labels appear in the forget set's original
// label set. When validation lacks those classes entirely, falls back to
// holding out examples from `retain` (when provided).
LabeledDataset build_matched_validation(const LabeledDataset& validation,
                                        const LabeledDataset& forget,
                                        const LabeledDataset* retain = nullptr);

// Archive layout: one .tsv file per split (train/validation/test), header line
// carrying classes and feature dimension, then one "label\tf0\tf1..." row per
// example. Round-trips example order and float values exactly.
void save_dataset_archive(const std::filesystem::path& dir, const DatasetTriplet& data);
DatasetTriplet load_dataset_archive(const std::filesystem::path& dir);

}  // namespace scrub
