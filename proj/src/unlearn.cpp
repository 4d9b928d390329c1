#include "scrubkit/unlearn.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>

#include "network.hpp"
#include "scrubkit/rng.hpp"

namespace scrub {

namespace {

using detail::CompiledNet;
using detail::compile;
using detail::NetEval;

void validate_task(const UnlearningTask& task) {
  if (task.retain.empty())
    throw Error(ErrorCode::invalid_argument, "unlearning task has an empty retain set");
  if (task.original.num_weights() == 0)
    throw Error(ErrorCode::invalid_argument, "unlearning task has no original model");
  std::set<ExampleId> retain_ids(task.retain.ids().begin(), task.retain.ids().end());
  for (const ExampleId& id : task.forget.ids())
    if (retain_ids.count(id))
      throw Error(ErrorCode::invalid_argument,
                  "retain and forget sets overlap (split " + std::to_string(id.split) +
                      ", index " + std::to_string(id.index) + ")");
}

void validate_scrub_config(const ScrubConfig& config) {
  if (config.alpha < 0.0 || config.gamma < 0.0)
    throw Error(ErrorCode::bad_config, "alpha and gamma must be nonnegative");
  if (config.max_steps < 0)
    throw Error(ErrorCode::bad_config, "max_steps must be nonnegative");
  if (config.total_steps < 1)
    throw Error(ErrorCode::bad_config, "total_steps must be positive");
  if (config.max_steps > config.total_steps)
    throw Error(ErrorCode::bad_config,
                "max_steps " + std::to_string(config.max_steps) + " exceeds total_steps " +
                    std::to_string(config.total_steps));
  if (config.forget_batch_size < 1 || config.retain_batch_size < 1)
    throw Error(ErrorCode::bad_config, "batch sizes must be positive");
  if (!(config.learning_rate > 0.0) || !std::isfinite(config.learning_rate))
    throw Error(ErrorCode::bad_config, "learning rate must be a positive real");
  if (!(config.lr_decay_factor > 0.0) || config.lr_decay_factor > 1.0)
    throw Error(ErrorCode::bad_config, "lr_decay_factor must lie in (0, 1]");
}

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& m, const std::vector<int>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

// One ascent pass over the forget set. `teacher_probs_all` holds the frozen
// teacher's distribution for every forget example.
void max_pass(const CompiledNet& net, Eigen::VectorXd& w,
              const Eigen::MatrixXd& teacher_probs_all, const LabeledDataset& forget,
              const ScrubConfig& config, detail::Optimizer& opt, int epoch, double lr) {
  if (forget.empty()) return;
  for (const std::vector<int>& batch :
       detail::epoch_batches(forget.size(), config.forget_batch_size, config.seed, epoch, 1)) {
    const NetEval ev = detail::eval_mean_kl(net, w, gather_rows(teacher_probs_all, batch),
                                            forget.gather_features(batch));
    if (!std::isfinite(ev.value))
      throw Error(ErrorCode::divergence, "forget-set KL became non-finite", epoch);
    opt.step(w, Eigen::VectorXd(-ev.wgrad), lr);  // ascent
  }
}

// One descent pass over the retain set on alpha * KL + gamma * CE.
void min_pass(const CompiledNet& net, Eigen::VectorXd& w,
              const Eigen::MatrixXd& teacher_probs_all, const LabeledDataset& retain,
              const ScrubConfig& config, detail::Optimizer& opt, int epoch, double lr) {
  for (const std::vector<int>& batch :
       detail::epoch_batches(retain.size(), config.retain_batch_size, config.seed, epoch, 0)) {
    const Eigen::MatrixXd tp =
        config.alpha != 0.0 ? gather_rows(teacher_probs_all, batch) : Eigen::MatrixXd();
    const NetEval ev = detail::eval_min_step(net, w, tp, retain.gather_features(batch),
                                             retain.gather_labels(batch), config.alpha,
                                             config.gamma);
    if (!std::isfinite(ev.value))
      throw Error(ErrorCode::divergence, "retain-set objective became non-finite", epoch);
    opt.step(w, ev.wgrad, lr);
  }
}

double epoch_lr(const ScrubConfig& config, int epoch) {
  double lr = config.learning_rate;
  if (config.lr_decay_epoch >= 0 && epoch > config.lr_decay_epoch) lr *= config.lr_decay_factor;
  return lr;
}

}  // namespace

double kl_distance(const Eigen::VectorXd& teacher_probs, const Eigen::VectorXd& student_probs) {
  if (teacher_probs.size() != student_probs.size())
    throw Error(ErrorCode::dimension_mismatch,
                "distributions have different lengths (" + std::to_string(teacher_probs.size()) +
                    " vs " + std::to_string(student_probs.size()) + ")");
  if (teacher_probs.size() == 0)
    throw Error(ErrorCode::invalid_argument, "distributions must be nonempty");
  auto check_distribution = [](const Eigen::VectorXd& p, const char* who) {
    if (p.minCoeff() < 0.0)
      throw Error(ErrorCode::invalid_argument, std::string(who) + " has a negative probability");
    if (std::abs(p.sum() - 1.0) > 1e-6)
      throw Error(ErrorCode::invalid_argument, std::string(who) + " does not sum to 1");
  };
  check_distribution(teacher_probs, "teacher distribution");
  check_distribution(student_probs, "student distribution");
  double total = 0.0;
  for (Eigen::Index c = 0; c < teacher_probs.size(); ++c) {
    const double pt = teacher_probs[c];
    if (pt <= 0.0) continue;
    total += pt * (std::log(pt) - std::log(std::max(student_probs[c], detail::kProbFloor)));
  }
  return std::max(total, 0.0);
}

Objective distillation_objective(const ClassifierModel& student, const ClassifierModel& teacher,
                                 const Eigen::MatrixXd& features) {
  if (student.num_classes() != teacher.num_classes())
    throw Error(ErrorCode::dimension_mismatch, "student and teacher class counts disagree");
  const NetEval ev = detail::eval_mean_kl(compile(student.architecture()), student.weights(),
                                          teacher.predict_proba(features), features);
  return {ev.value, ev.wgrad};
}

Objective min_step_objective(const ClassifierModel& student, const ClassifierModel& teacher,
                             const Eigen::MatrixXd& features, const std::vector<int>& labels,
                             double alpha, double gamma) {
  const Eigen::MatrixXd tp =
      alpha != 0.0 ? teacher.predict_proba(features) : Eigen::MatrixXd();
  const NetEval ev = detail::eval_min_step(compile(student.architecture()), student.weights(), tp,
                                           features, labels, alpha, gamma);
  return {ev.value, ev.wgrad};
}

Objective scrub_objective(const ClassifierModel& student, const ClassifierModel& teacher,
                          const Eigen::MatrixXd& retain_features,
                          const std::vector<int>& retain_labels,
                          const Eigen::MatrixXd& forget_features, double alpha, double gamma) {
  Objective min_part = min_step_objective(student, teacher, retain_features, retain_labels,
                                          alpha, gamma);
  const NetEval forget_part =
      detail::eval_mean_kl(compile(student.architecture()), student.weights(),
                           teacher.predict_proba(forget_features), forget_features);
  min_part.value -= forget_part.value;
  min_part.grad -= forget_part.wgrad;
  return min_part;
}

Objective neggrad_objective(const ClassifierModel& model, const Eigen::MatrixXd& retain_features,
                            const std::vector<int>& retain_labels,
                            const Eigen::MatrixXd& forget_features,
                            const std::vector<int>& forget_labels, double beta) {
  if (beta < 0.0 || beta > 1.0)
    throw Error(ErrorCode::invalid_argument, "beta must lie in [0, 1]");
  const CompiledNet net = compile(model.architecture());
  Objective out{0.0, Eigen::VectorXd::Zero(model.num_weights())};
  if (beta != 0.0) {
    const NetEval r = detail::eval_cross_entropy(net, model.weights(), retain_features,
                                                 retain_labels);
    out.value = beta * r.value;
    out.grad = beta * r.wgrad;
  }
  if (beta != 1.0) {
    const NetEval f = detail::eval_cross_entropy(net, model.weights(), forget_features,
                                                 forget_labels);
    out.value -= (1.0 - beta) * f.value;
    out.grad -= (1.0 - beta) * f.wgrad;
  }
  return out;
}

ClassifierModel do_max_epoch(const ClassifierModel& student, const ClassifierModel& teacher,
                             const LabeledDataset& forget, const ScrubConfig& config) {
  validate_scrub_config(config);
  if (forget.empty()) return student;
  const CompiledNet net = compile(student.architecture());
  detail::Optimizer opt(config.optimizer, config.weight_decay, config.momentum, net.num_weights,
                        detail::trainable_segments(net, 0));
  Eigen::VectorXd w = student.weights();
  max_pass(net, w, teacher.predict_proba(forget.features()), forget, config, opt, 1,
           epoch_lr(config, 1));
  return student.with_weights(std::move(w));
}

ClassifierModel do_min_epoch(const ClassifierModel& student, const ClassifierModel& teacher,
                             const LabeledDataset& retain, const ScrubConfig& config) {
  validate_scrub_config(config);
  if (retain.empty())
    throw Error(ErrorCode::invalid_argument, "min epoch needs a nonempty retain set");
  const CompiledNet net = compile(student.architecture());
  detail::Optimizer opt(config.optimizer, config.weight_decay, config.momentum, net.num_weights,
                        detail::trainable_segments(net, 0));
  Eigen::VectorXd w = student.weights();
  const Eigen::MatrixXd tp =
      config.alpha != 0.0 ? teacher.predict_proba(retain.features()) : Eigen::MatrixXd();
  min_pass(net, w, tp, retain, config, opt, 1, epoch_lr(config, 1));
  return student.with_weights(std::move(w));
}

ScrubResult scrub(const UnlearningTask& task, const ScrubConfig& config) {
  validate_task(task);
  validate_scrub_config(config);
  const ClassifierModel& teacher = task.original;
  const CompiledNet net = compile(teacher.architecture());
  detail::Optimizer opt(config.optimizer, config.weight_decay, config.momentum, net.num_weights,
                        detail::trainable_segments(net, 0));
  Eigen::VectorXd w = teacher.weights();  // student starts at the teacher

  const bool use_max = config.max_steps > 0 && !task.forget.empty();
  const Eigen::MatrixXd forget_tp =
      use_max ? teacher.predict_proba(task.forget.features()) : Eigen::MatrixXd();
  const Eigen::MatrixXd retain_tp =
      config.alpha != 0.0 ? teacher.predict_proba(task.retain.features()) : Eigen::MatrixXd();

  CheckpointTrail trail;
  trail.checkpoints.reserve(static_cast<std::size_t>(config.total_steps));
  const auto start = std::chrono::steady_clock::now();
  for (int epoch = 1; epoch <= config.total_steps; ++epoch) {
    const double lr = epoch_lr(config, epoch);
    try {
      if (epoch <= config.max_steps)
        max_pass(net, w, forget_tp, task.forget, config, opt, epoch, lr);
      min_pass(net, w, retain_tp, task.retain, config, opt, epoch, lr);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::divergence)
        throw ScrubDivergence(e.what(), epoch, std::move(trail));
      throw;
    }
    ModelCheckpoint ckpt;
    ckpt.weights = w;
    ckpt.epoch = epoch;
    const ClassifierModel student = teacher.with_weights(w);
    if (!task.forget.empty()) ckpt.forget_error = evaluate_error(student, task.forget);
    ckpt.retain_error = evaluate_error(student, task.retain);
    ckpt.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    trail.checkpoints.push_back(std::move(ckpt));
  }
  return {teacher.with_weights(std::move(w)), std::move(trail)};
}

ClassifierModel rewind(const CheckpointTrail& trail, const ClassifierModel& final_model,
                       const UnlearningTask& task) {
  if (trail.checkpoints.empty())
    throw Error(ErrorCode::empty_result, "rewind needs a nonempty checkpoint trail");
  if (task.matched_validation.empty())
    throw Error(ErrorCode::invalid_argument, "rewind needs a matched validation set");
  if (task.forget.empty())
    throw Error(ErrorCode::invalid_argument, "rewind needs a forget set");
  const double reference = evaluate_error(final_model, task.matched_validation);
  const double final_forget = evaluate_error(final_model, task.forget);
  if (final_forget <= reference) return final_model;

  const ModelCheckpoint* best = nullptr;
  double best_distance = 0.0;
  for (const ModelCheckpoint& ckpt : trail.checkpoints) {
    if (!ckpt.forget_error)
      throw Error(ErrorCode::invalid_argument,
                  "trail checkpoint " + std::to_string(ckpt.epoch) + " lacks a forget error");
    const double d = std::abs(*ckpt.forget_error - reference);
    if (!best || d <= best_distance) {  // <= sends ties to the latest epoch
      best = &ckpt;
      best_distance = d;
    }
  }
  return final_model.with_weights(best->weights);
}

ClassifierModel finetune(const UnlearningTask& task, const TrainConfig& config) {
  validate_task(task);
  return train(task.original, task.retain, config);
}

ClassifierModel retrain(const UnlearningTask& task, const TrainConfig& config) {
  validate_task(task);
  return train(init_model(task.original.architecture(), config.seed), task.retain, config);
}

ClassifierModel neggrad(const UnlearningTask& task, double beta, const TrainConfig& config) {
  validate_task(task);
  if (beta < 0.0 || beta > 1.0)
    throw Error(ErrorCode::bad_config, "beta must lie in [0, 1]");
  const bool use_forget = beta != 1.0;
  if (use_forget && task.forget.empty())
    throw Error(ErrorCode::invalid_argument, "neggrad with beta < 1 needs a forget set");
  const CompiledNet net = compile(task.original.architecture());
  detail::Optimizer opt(config.optimizer, config.weight_decay, config.momentum, net.num_weights,
                        detail::trainable_segments(net, 0));
  Eigen::VectorXd w = task.original.weights();
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto retain_batches =
        detail::epoch_batches(task.retain.size(), config.batch_size, config.seed, epoch, 0);
    std::vector<std::vector<int>> forget_batches;
    if (use_forget)
      forget_batches =
          detail::epoch_batches(task.forget.size(), config.batch_size, config.seed, epoch, 1);
    for (std::size_t i = 0; i < retain_batches.size(); ++i) {
      double value = 0.0;
      Eigen::VectorXd grad = Eigen::VectorXd::Zero(net.num_weights);
      if (beta != 0.0) {
        NetEval r = detail::eval_cross_entropy(
            net, w, task.retain.gather_features(retain_batches[i]),
            task.retain.gather_labels(retain_batches[i]));
        if (beta != 1.0) {
          r.value *= beta;
          r.wgrad *= beta;
        }
        value = r.value;
        grad = std::move(r.wgrad);
      }
      if (use_forget) {
        const std::vector<int>& fb = forget_batches[i % forget_batches.size()];
        const NetEval f = detail::eval_cross_entropy(net, w, task.forget.gather_features(fb),
                                                     task.forget.gather_labels(fb));
        value -= (1.0 - beta) * f.value;
        grad -= (1.0 - beta) * f.wgrad;
      }
      if (!std::isfinite(value))
        throw Error(ErrorCode::divergence, "unlearning loss became non-finite", epoch);
      opt.step(w, grad, config.learning_rate);
    }
  }
  return task.original.with_weights(std::move(w));
}

ClassifierModel cf_k(const UnlearningTask& task, int k_frozen_blocks,
                     const TrainConfig& config) {
  validate_task(task);
  const int blocks = task.original.num_blocks();
  if (k_frozen_blocks < 0 || k_frozen_blocks >= blocks)
    throw Error(ErrorCode::invalid_argument,
                "k must lie in [0, " + std::to_string(blocks) + "), got " +
                    std::to_string(k_frozen_blocks));
  return train_frozen(task.original, task.retain, config, k_frozen_blocks);
}

ClassifierModel eu_k(const UnlearningTask& task, int k_frozen_blocks,
                     const Eigen::VectorXd& init_weights, const TrainConfig& config) {
  validate_task(task);
  const int blocks = task.original.num_blocks();
  if (k_frozen_blocks < 0 || k_frozen_blocks >= blocks)
    throw Error(ErrorCode::invalid_argument,
                "k must lie in [0, " + std::to_string(blocks) + "), got " +
                    std::to_string(k_frozen_blocks));
  if (init_weights.size() != task.original.weights().size())
    throw Error(ErrorCode::dimension_mismatch,
                "init weight vector has " + std::to_string(init_weights.size()) +
                    " entries, the model has " + std::to_string(task.original.weights().size()));
  Eigen::VectorXd w = task.original.weights();
  const int start = task.original.block_span(k_frozen_blocks).first;
  const Eigen::Index tail = w.size() - start;
  w.segment(start, tail) = init_weights.segment(start, tail);
  return train_frozen(task.original.with_weights(std::move(w)), task.retain, config,
                      k_frozen_blocks);
}

void save_trail(const std::filesystem::path& dir, const ArchitectureSpec& arch,
                const CheckpointTrail& trail, std::uint64_t seed) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::io_error, "cannot create " + dir.string());
  nlohmann::ordered_json manifest;
  manifest["tool"] = "scrubkit";
  manifest["seed"] = seed;
  manifest["epochs"] = trail.checkpoints.size();
  nlohmann::ordered_json entries = nlohmann::ordered_json::array();
  for (const ModelCheckpoint& ckpt : trail.checkpoints) {
    char name[32];
    std::snprintf(name, sizeof(name), "epoch_%04d.ckpt", ckpt.epoch);
    save_checkpoint(dir / name, arch, ckpt, seed);
    nlohmann::ordered_json e;
    e["epoch"] = ckpt.epoch;
    e["file"] = name;
    if (ckpt.forget_error)
      e["forget_error"] = *ckpt.forget_error;
    else
      e["forget_error"] = nullptr;
    if (ckpt.retain_error)
      e["retain_error"] = *ckpt.retain_error;
    else
      e["retain_error"] = nullptr;
    e["wall_clock_seconds"] = ckpt.wall_clock_seconds;
    entries.push_back(std::move(e));
  }
  manifest["entries"] = std::move(entries);
  std::ofstream out(dir / "manifest.json");
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << "\n";
}

CheckpointTrail load_trail(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw Error(ErrorCode::io_error, "cannot read " + (dir / "manifest.json").string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::io_error, "corrupt trail manifest: " + std::string(e.what()));
  }
  CheckpointTrail trail;
  int last_epoch = 0;
  try {
    for (const nlohmann::json& e : manifest.at("entries")) {
      auto [arch, ckpt] = load_checkpoint(dir / e.at("file").get<std::string>());
      if (ckpt.epoch <= last_epoch)
        throw Error(ErrorCode::io_error, "trail epochs are not strictly increasing");
      last_epoch = ckpt.epoch;
      trail.checkpoints.push_back(std::move(ckpt));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::io_error, "corrupt trail manifest: " + std::string(e.what()));
  }
  return trail;
}

}  // namespace scrub
