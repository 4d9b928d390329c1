#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <utility>
#include <vector>

#include "scrubkit/model.hpp"

namespace scrub::detail {

// The architecture compiled to a flat layer list with weight spans. Blocks
// are runs of consecutive layers; their weight spans are contiguous, so a
// freeze of blocks [0, k) is a single trainable suffix of the weight vector.
struct LayerDesc {
  enum class Type { dense, relu, conv, maxpool };
  Type type = Type::dense;
  int block = 0;
  int w_offset = 0;
  int w_size = 0;
  // dense
  int in_dim = 0;
  int out_dim = 0;
  // conv / maxpool geometry (square feature maps, channel-major rows)
  int in_c = 0;
  int out_c = 0;
  int in_hw = 0;
  int out_hw = 0;
};

struct CompiledNet {
  std::vector<LayerDesc> layers;
  int num_weights = 0;
  int num_blocks = 0;
  std::vector<std::pair<int, int>> block_spans;  // (offset, size) per block
};

CompiledNet compile(const ArchitectureSpec& arch);

struct ForwardCache {
  // acts[0] is the input batch, acts[i+1] the output of layer i
  std::vector<Eigen::MatrixXd> acts;
  // per-layer argmax input indices for maxpool layers (empty otherwise)
  std::vector<Eigen::MatrixXi> pool_argmax;
};

// Returns logits (N x num_classes). `cache` may be null for inference.
Eigen::MatrixXd forward(const CompiledNet& net, const Eigen::VectorXd& weights,
                        const Eigen::MatrixXd& input, ForwardCache* cache);

// Gradient of a scalar loss with respect to the weights, given dLoss/dlogits.
Eigen::VectorXd backward(const CompiledNet& net, const Eigen::VectorXd& weights,
                         const ForwardCache& cache, const Eigen::MatrixXd& dlogits);

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits);

inline constexpr double kProbFloor = 1e-12;

// Batch-mean losses and their logit gradients. The probability floor applies
// inside the log only; gradients account for it exactly (a floored entry
// contributes zero gradient), so they match finite differences everywhere.
double mean_cross_entropy(const Eigen::MatrixXd& probs, const std::vector<int>& labels);
Eigen::MatrixXd mean_cross_entropy_logit_grad(const Eigen::MatrixXd& probs,
                                              const std::vector<int>& labels);
double mean_kl(const Eigen::MatrixXd& teacher_probs, const Eigen::MatrixXd& student_probs);
Eigen::MatrixXd mean_kl_logit_grad(const Eigen::MatrixXd& teacher_probs,
                                   const Eigen::MatrixXd& student_probs);

struct NetEval {
  double value = 0.0;
  Eigen::VectorXd wgrad;
};

NetEval eval_cross_entropy(const CompiledNet& net, const Eigen::VectorXd& weights,
                           const Eigen::MatrixXd& features, const std::vector<int>& labels);

// alpha * mean KL(teacher || student) + gamma * mean cross-entropy.
// Either term is skipped entirely when its coefficient is exactly zero, so
// degenerate configurations reduce bit-for-bit to the remaining term.
NetEval eval_min_step(const CompiledNet& net, const Eigen::VectorXd& weights,
                      const Eigen::MatrixXd& teacher_probs, const Eigen::MatrixXd& features,
                      const std::vector<int>& labels, double alpha, double gamma);

NetEval eval_mean_kl(const CompiledNet& net, const Eigen::VectorXd& weights,
                     const Eigen::MatrixXd& teacher_probs, const Eigen::MatrixXd& features);

// SGD-with-momentum or Adam over the trainable segments of the weight
// vector. Frozen entries keep their exact bits: no state update, no decay.
class Optimizer {
 public:
  Optimizer(TrainConfig::Optimizer kind, double weight_decay, double momentum, int num_weights,
            std::vector<std::pair<int, int>> trainable_segments);

  void step(Eigen::VectorXd& weights, const Eigen::VectorXd& grad, double learning_rate);

 private:
  TrainConfig::Optimizer kind_;
  double weight_decay_;
  double momentum_;
  Eigen::VectorXd velocity_;  // sgd
  Eigen::VectorXd m_, v_;     // adam
  long t_ = 0;
  std::vector<std::pair<int, int>> segments_;
};

std::vector<std::pair<int, int>> trainable_segments(const CompiledNet& net, int frozen_blocks);

// Shuffled index batches for one epoch. Streams keep the retain/forget batch
// orders independent so that skipping one side never perturbs the other.
std::vector<std::vector<int>> epoch_batches(int n, int batch_size, std::uint64_t seed, int epoch,
                                            int stream);

}  // namespace scrub::detail
