#pragma once

#include <cstdint>
#include <vector>

#include "scrubkit/dataset.hpp"
#include "scrubkit/error.hpp"
#include "scrubkit/model.hpp"

namespace scrub {

struct ScrubConfig {
  double alpha = 0.5;   // weight of the retain-set KL term
  double gamma = 1.0;   // weight of the retain-set cross-entropy term
  int max_steps = 5;    // epochs that include a max phase on the forget set
  int total_steps = 10; // total epochs; trailing ones are min-only
  int forget_batch_size = 32;
  int retain_batch_size = 32;
  double learning_rate = 5e-4;
  double lr_decay_factor = 0.1;
  int lr_decay_epoch = -1;  // epoch after which the decay applies; -1 = never
  double weight_decay = 0.0;
  double momentum = 0.9;
  TrainConfig::Optimizer optimizer = TrainConfig::Optimizer::adaptive;
  std::uint64_t seed = 0;
};

// The bundle an unlearning method consumes: frozen original weights plus the
// retain / forget split, a validation set matched to the forget distribution,
// and held-out test data.
struct UnlearningTask {
  ClassifierModel original;
  LabeledDataset retain;
  LabeledDataset forget;
  LabeledDataset matched_validation;
  LabeledDataset test;
};

struct CheckpointTrail {
  std::vector<ModelCheckpoint> checkpoints;  // one per epoch, epochs 1..N
};

struct ScrubResult {
  ClassifierModel model;
  CheckpointTrail trail;
};

// Raised when a scrub epoch produces a non-finite loss; carries the trail
// recorded up to that point.
class ScrubDivergence : public Error {
 public:
  ScrubDivergence(const std::string& message, int epoch, CheckpointTrail trail)
      : Error(ErrorCode::divergence, message, epoch), trail_(std::move(trail)) {}
  const CheckpointTrail& trail() const { return trail_; }

 private:
  CheckpointTrail trail_;
};

// KL(teacher || student) between two distributions over the same classes,
// with the 0 log 0 convention and the student probability floored at 1e-12
// inside the log.
double kl_distance(const Eigen::VectorXd& teacher_probs, const Eigen::VectorXd& student_probs);

// Batch objectives. Values and gradients are what the training epochs below
// actually descend/ascend on.

// mean_x KL(teacher(x) || student(x)) over a feature batch
Objective distillation_objective(const ClassifierModel& student, const ClassifierModel& teacher,
                                 const Eigen::MatrixXd& features);

// alpha * mean KL + gamma * mean cross-entropy over a retain batch
Objective min_step_objective(const ClassifierModel& student, const ClassifierModel& teacher,
                             const Eigen::MatrixXd& features, const std::vector<int>& labels,
                             double alpha, double gamma);

// The full unlearning objective over a (retain, forget) batch pair:
// alpha * KL_r + gamma * CE_r - KL_f
Objective scrub_objective(const ClassifierModel& student, const ClassifierModel& teacher,
                          const Eigen::MatrixXd& retain_features, const std::vector<int>& retain_labels,
                          const Eigen::MatrixXd& forget_features, double alpha, double gamma);

// beta * mean CE(retain batch) - (1 - beta) * mean CE(forget batch)
Objective neggrad_objective(const ClassifierModel& model, const Eigen::MatrixXd& retain_features,
                            const std::vector<int>& retain_labels,
                            const Eigen::MatrixXd& forget_features,
                            const std::vector<int>& forget_labels, double beta);

// One gradient-ascent pass over the forget set in batches of
// forget_batch_size, pushing the student's predictions away from the frozen
// teacher. No-op when the forget set is empty.
ClassifierModel do_max_epoch(const ClassifierModel& student, const ClassifierModel& teacher,
                             const LabeledDataset& forget, const ScrubConfig& config);

// One gradient-descent pass over the retain set on
// alpha * KL-to-teacher + gamma * cross-entropy.
ClassifierModel do_min_epoch(const ClassifierModel& student, const ClassifierModel& teacher,
                             const LabeledDataset& retain, const ScrubConfig& config);

// Full alternating schedule: epochs 1..max_steps run a max phase then a min
// phase; the remaining epochs up to total_steps are min-only. A checkpoint
// with forget/retain errors is recorded after every epoch.
ScrubResult scrub(const UnlearningTask& task, const ScrubConfig& config);

// SCRUB+R checkpoint selection. The reference point is the final model's
// error on the matched validation set; when the final forget error exceeds
// it, returns the checkpoint whose forget error is nearest the reference
// (ties toward the latest epoch).
ClassifierModel rewind(const CheckpointTrail& trail, const ClassifierModel& final_model,
                       const UnlearningTask& task);

ClassifierModel finetune(const UnlearningTask& task, const TrainConfig& config);

ClassifierModel retrain(const UnlearningTask& task, const TrainConfig& config);

ClassifierModel neggrad(const UnlearningTask& task, double beta, const TrainConfig& config);

// Freeze the first k blocks of the original model, finetune the rest on the
// retain set.
ClassifierModel cf_k(const UnlearningTask& task, int k_frozen_blocks, const TrainConfig& config);

// Freeze the first k blocks, re-initialize the remaining blocks from
// init_weights and train them on the retain set.
ClassifierModel eu_k(const UnlearningTask& task, int k_frozen_blocks,
                     const Eigen::VectorXd& init_weights, const TrainConfig& config);

// Trail persistence: one checkpoint file per epoch plus a manifest listing
// per-epoch errors.
void save_trail(const std::filesystem::path& dir, const ArchitectureSpec& arch,
                const CheckpointTrail& trail, std::uint64_t seed);
CheckpointTrail load_trail(const std::filesystem::path& dir);

}  // namespace scrub
