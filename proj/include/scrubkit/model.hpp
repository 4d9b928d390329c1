#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "scrubkit/dataset.hpp"

namespace scrub {

// Network descriptor. Two families:
//   mlp: input_dim -> hidden[0] (ReLU) -> ... -> num_classes
//   cnn: [conv 3x3 same + ReLU + maxpool 2x2] per conv_channels entry,
//        then flatten -> optional dense_hidden (ReLU) -> num_classes
//
// Blocks are the unit of freezing for CF-k / EU-k: every dense layer of an
// mlp is a block; every conv stage of a cnn is a block and the dense head is
// the final block.
struct ArchitectureSpec {
  enum class Kind { mlp, cnn };
  Kind kind = Kind::mlp;
  int num_classes = 0;

  // mlp
  int input_dim = 0;
  std::vector<int> hidden;

  // cnn (features are channel-major flattened images of shape
  // in_channels x image_size x image_size)
  int in_channels = 1;
  int image_size = 0;
  std::vector<int> conv_channels;
  int dense_hidden = 0;  // 0 = logits directly after flatten

  int feature_dim() const;
  bool operator==(const ArchitectureSpec&) const = default;
};

std::string architecture_to_json(const ArchitectureSpec& arch);
ArchitectureSpec architecture_from_json(const std::string& text);

// Immutable multiclass classifier: an architecture plus a flat weight vector.
// All training-style operations return a new model.
class ClassifierModel {
 public:
  ClassifierModel() = default;
  ClassifierModel(ArchitectureSpec arch, Eigen::VectorXd weights);

  const ArchitectureSpec& architecture() const { return arch_; }
  const Eigen::VectorXd& weights() const { return weights_; }
  int num_classes() const { return arch_.num_classes; }
  int num_weights() const { return static_cast<int>(weights_.size()); }

  int num_blocks() const;
  // [offset, offset + size) of block b within the flat weight vector
  std::pair<int, int> block_span(int block) const;

  ClassifierModel with_weights(Eigen::VectorXd weights) const;

  // Row-wise class probability distributions for a feature batch.
  Eigen::MatrixXd predict_proba(const Eigen::MatrixXd& features) const;
  Eigen::MatrixXd logits(const Eigen::MatrixXd& features) const;
  std::vector<int> predict(const Eigen::MatrixXd& features) const;

 private:
  ArchitectureSpec arch_;
  Eigen::VectorXd weights_;
};

int weight_count(const ArchitectureSpec& arch);

struct TrainConfig {
  enum class Optimizer { sgd, adaptive };
  int epochs = 10;
  double learning_rate = 0.01;
  int batch_size = 32;
  double weight_decay = 0.0;
  double momentum = 0.9;
  Optimizer optimizer = Optimizer::sgd;
  std::uint64_t seed = 0;
};

struct ModelCheckpoint {
  Eigen::VectorXd weights;
  int epoch = 0;
  std::optional<double> forget_error;
  std::optional<double> retain_error;
  double wall_clock_seconds = 0.0;
};

ClassifierModel init_model(const ArchitectureSpec& arch, std::uint64_t seed);

// Mini-batch gradient descent on the mean cross-entropy, `config.epochs`
// passes with a fresh per-epoch shuffle. Throws Error(divergence) with the
// offending epoch on non-finite loss.
ClassifierModel train(const ClassifierModel& model, const LabeledDataset& data,
                      const TrainConfig& config);

// Same loop with the first `frozen_blocks` blocks excluded from all updates.
ClassifierModel train_frozen(const ClassifierModel& model, const LabeledDataset& data,
                             const TrainConfig& config, int frozen_blocks);

// 1 - accuracy; argmax ties break toward the lowest class index.
double evaluate_error(const ClassifierModel& model, const LabeledDataset& data);

// Cross-entropy of each example, in dataset order.
Eigen::VectorXd per_example_loss(const ClassifierModel& model, const LabeledDataset& data);

struct Objective {
  double value = 0.0;
  Eigen::VectorXd grad;  // d value / d weights
};

// Mean cross-entropy over a feature/label batch, with gradient.
Objective cross_entropy_objective(const ClassifierModel& model, const Eigen::MatrixXd& features,
                                  const std::vector<int>& labels);

std::uint64_t weight_hash(const ClassifierModel& model);
std::uint64_t hash_bytes(const void* data, std::size_t size, std::uint64_t seed = 0xcbf29ce484222325ULL);

// Self-describing checkpoint file: architecture descriptor, seed, epoch and
// recorded errors in a JSON header followed by raw little-endian weights.
void save_checkpoint(const std::filesystem::path& file, const ArchitectureSpec& arch,
                     const ModelCheckpoint& checkpoint, std::uint64_t seed);
std::pair<ArchitectureSpec, ModelCheckpoint> load_checkpoint(const std::filesystem::path& file);

}  // namespace scrub
