#include "scrubkit/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

#include "network.hpp"
#include "scrubkit/error.hpp"
#include "scrubkit/rng.hpp"

namespace scrub {

namespace {

using detail::CompiledNet;
using detail::compile;

constexpr std::uint64_t kInitStream = 0x1417;

void validate_batchable(const LabeledDataset& data, const ArchitectureSpec& arch) {
  if (data.empty()) throw Error(ErrorCode::invalid_argument, "cannot train on an empty dataset");
  if (data.dim() != arch.feature_dim())
    throw Error(ErrorCode::dimension_mismatch,
                "dataset has " + std::to_string(data.dim()) + " features, the model expects " +
                    std::to_string(arch.feature_dim()));
  if (data.num_classes() != arch.num_classes)
    throw Error(ErrorCode::dimension_mismatch,
                "dataset has " + std::to_string(data.num_classes()) + " classes, the model has " +
                    std::to_string(arch.num_classes));
}

void validate_train_config(const TrainConfig& config) {
  if (config.epochs < 0)
    throw Error(ErrorCode::bad_config, "epoch count must be nonnegative");
  if (config.batch_size < 1)
    throw Error(ErrorCode::bad_config, "batch size must be positive");
  if (!std::isfinite(config.learning_rate) || config.learning_rate < 0.0)
    throw Error(ErrorCode::bad_config, "learning rate must be finite and nonnegative");
}

ClassifierModel train_impl(const ClassifierModel& model, const LabeledDataset& data,
                           const TrainConfig& config, int frozen_blocks) {
  validate_batchable(data, model.architecture());
  validate_train_config(config);
  const CompiledNet net = compile(model.architecture());
  detail::Optimizer opt(config.optimizer, config.weight_decay, config.momentum, net.num_weights,
                        detail::trainable_segments(net, frozen_blocks));
  Eigen::VectorXd w = model.weights();
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    for (const std::vector<int>& batch :
         detail::epoch_batches(data.size(), config.batch_size, config.seed, epoch, 0)) {
      const detail::NetEval ev = detail::eval_cross_entropy(
          net, w, data.gather_features(batch), data.gather_labels(batch));
      if (!std::isfinite(ev.value))
        throw Error(ErrorCode::divergence, "training loss became non-finite", epoch);
      opt.step(w, ev.wgrad, config.learning_rate);
    }
  }
  return model.with_weights(std::move(w));
}

}  // namespace

int ArchitectureSpec::feature_dim() const {
  return kind == Kind::mlp ? input_dim : in_channels * image_size * image_size;
}

std::string architecture_to_json(const ArchitectureSpec& arch) {
  nlohmann::ordered_json j;
  j["kind"] = arch.kind == ArchitectureSpec::Kind::mlp ? "mlp" : "cnn";
  j["num_classes"] = arch.num_classes;
  if (arch.kind == ArchitectureSpec::Kind::mlp) {
    j["input_dim"] = arch.input_dim;
    j["hidden"] = arch.hidden;
  } else {
    j["in_channels"] = arch.in_channels;
    j["image_size"] = arch.image_size;
    j["conv_channels"] = arch.conv_channels;
    j["dense_hidden"] = arch.dense_hidden;
  }
  return j.dump();
}

ArchitectureSpec architecture_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::io_error, std::string("bad architecture descriptor: ") + e.what());
  }
  ArchitectureSpec arch;
  try {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "mlp")
      arch.kind = ArchitectureSpec::Kind::mlp;
    else if (kind == "cnn")
      arch.kind = ArchitectureSpec::Kind::cnn;
    else
      throw Error(ErrorCode::io_error, "unknown architecture kind '" + kind + "'");
    arch.num_classes = j.at("num_classes").get<int>();
    if (arch.kind == ArchitectureSpec::Kind::mlp) {
      arch.input_dim = j.at("input_dim").get<int>();
      arch.hidden = j.at("hidden").get<std::vector<int>>();
    } else {
      arch.in_channels = j.at("in_channels").get<int>();
      arch.image_size = j.at("image_size").get<int>();
      arch.conv_channels = j.at("conv_channels").get<std::vector<int>>();
      arch.dense_hidden = j.at("dense_hidden").get<int>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::io_error, std::string("bad architecture descriptor: ") + e.what());
  }
  compile(arch);  // validate shape
  return arch;
}

ClassifierModel::ClassifierModel(ArchitectureSpec arch, Eigen::VectorXd weights)
    : arch_(std::move(arch)), weights_(std::move(weights)) {
  const int expected = weight_count(arch_);
  if (static_cast<int>(weights_.size()) != expected)
    throw Error(ErrorCode::dimension_mismatch,
                "weight vector has " + std::to_string(weights_.size()) + " entries, expected " +
                    std::to_string(expected));
}

int ClassifierModel::num_blocks() const { return compile(arch_).num_blocks; }

std::pair<int, int> ClassifierModel::block_span(int block) const {
  const CompiledNet net = compile(arch_);
  if (block < 0 || block >= net.num_blocks)
    throw Error(ErrorCode::invalid_argument,
                "block " + std::to_string(block) + " is outside [0, " +
                    std::to_string(net.num_blocks) + ")");
  return net.block_spans[static_cast<std::size_t>(block)];
}

ClassifierModel ClassifierModel::with_weights(Eigen::VectorXd weights) const {
  return ClassifierModel(arch_, std::move(weights));
}

Eigen::MatrixXd ClassifierModel::logits(const Eigen::MatrixXd& features) const {
  return detail::forward(compile(arch_), weights_, features, nullptr);
}

Eigen::MatrixXd ClassifierModel::predict_proba(const Eigen::MatrixXd& features) const {
  return detail::softmax_rows(logits(features));
}

std::vector<int> ClassifierModel::predict(const Eigen::MatrixXd& features) const {
  const Eigen::MatrixXd z = logits(features);
  std::vector<int> preds(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    int best = 0;
    for (Eigen::Index c = 1; c < z.cols(); ++c)
      if (z(i, c) > z(i, best)) best = static_cast<int>(c);
    preds[static_cast<std::size_t>(i)] = best;
  }
  return preds;
}

int weight_count(const ArchitectureSpec& arch) { return compile(arch).num_weights; }

ClassifierModel init_model(const ArchitectureSpec& arch, std::uint64_t seed) {
  const CompiledNet net = compile(arch);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(net.num_weights);
  Rng rng(stream_seed(seed, kInitStream));
  for (const detail::LayerDesc& l : net.layers) {
    if (l.w_size == 0) continue;
    int fan_in = 0, n_weights = 0;
    if (l.type == detail::LayerDesc::Type::dense) {
      fan_in = l.in_dim;
      n_weights = l.out_dim * l.in_dim;
    } else {
      fan_in = l.in_c * 9;
      n_weights = l.out_c * l.in_c * 9;
    }
    const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (int i = 0; i < n_weights; ++i) w[l.w_offset + i] = scale * rng.normal();
    // biases (the tail of the span) stay zero
  }
  return ClassifierModel(arch, std::move(w));
}

ClassifierModel train(const ClassifierModel& model, const LabeledDataset& data,
                      const TrainConfig& config) {
  return train_impl(model, data, config, 0);
}

ClassifierModel train_frozen(const ClassifierModel& model, const LabeledDataset& data,
                             const TrainConfig& config, int frozen_blocks) {
  return train_impl(model, data, config, frozen_blocks);
}

double evaluate_error(const ClassifierModel& model, const LabeledDataset& data) {
  if (data.empty())
    throw Error(ErrorCode::invalid_argument, "cannot evaluate on an empty dataset");
  const std::vector<int> preds = model.predict(data.features());
  long wrong = 0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (preds[i] != data.labels()[i]) ++wrong;
  return static_cast<double>(wrong) / static_cast<double>(preds.size());
}

Eigen::VectorXd per_example_loss(const ClassifierModel& model, const LabeledDataset& data) {
  if (data.empty())
    throw Error(ErrorCode::invalid_argument, "cannot compute losses on an empty dataset");
  const Eigen::MatrixXd probs = model.predict_proba(data.features());
  Eigen::VectorXd losses(data.size());
  for (int i = 0; i < data.size(); ++i)
    losses[i] = -std::log(std::max(probs(i, data.labels()[static_cast<std::size_t>(i)]),
                                   detail::kProbFloor));
  return losses;
}

Objective cross_entropy_objective(const ClassifierModel& model, const Eigen::MatrixXd& features,
                                  const std::vector<int>& labels) {
  const detail::NetEval ev =
      detail::eval_cross_entropy(compile(model.architecture()), model.weights(), features, labels);
  return {ev.value, ev.wgrad};
}

std::uint64_t hash_bytes(const void* data, std::size_t size, std::uint64_t seed) {
  // FNV-1a
  std::uint64_t h = seed;
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t weight_hash(const ClassifierModel& model) {
  return hash_bytes(model.weights().data(),
                    static_cast<std::size_t>(model.weights().size()) * sizeof(double));
}

void save_checkpoint(const std::filesystem::path& file, const ArchitectureSpec& arch,
                     const ModelCheckpoint& checkpoint, std::uint64_t seed) {
  nlohmann::ordered_json header;
  header["architecture"] = nlohmann::ordered_json::parse(architecture_to_json(arch));
  header["seed"] = seed;
  header["epoch"] = checkpoint.epoch;
  if (checkpoint.forget_error)
    header["forget_error"] = *checkpoint.forget_error;
  else
    header["forget_error"] = nullptr;
  if (checkpoint.retain_error)
    header["retain_error"] = *checkpoint.retain_error;
  else
    header["retain_error"] = nullptr;
  header["wall_clock_seconds"] = checkpoint.wall_clock_seconds;
  header["num_weights"] = checkpoint.weights.size();

  std::ofstream out(file, std::ios::binary);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + file.string());
  out << "SCRUBKIT-CKPT v1\n" << header.dump() << "\n";
  out.write(reinterpret_cast<const char*>(checkpoint.weights.data()),
            static_cast<std::streamsize>(checkpoint.weights.size() * sizeof(double)));
  if (!out) throw Error(ErrorCode::io_error, "failed while writing " + file.string());
}

std::pair<ArchitectureSpec, ModelCheckpoint> load_checkpoint(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot read " + file.string());
  std::string magic, header_line;
  if (!std::getline(in, magic) || magic != "SCRUBKIT-CKPT v1")
    throw Error(ErrorCode::io_error, file.string() + " is not a checkpoint file");
  if (!std::getline(in, header_line))
    throw Error(ErrorCode::io_error, file.string() + " is missing its header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_line);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::io_error, file.string() + " has a corrupt header: " + e.what());
  }
  ArchitectureSpec arch;
  ModelCheckpoint ckpt;
  Eigen::Index n = 0;
  try {
    arch = architecture_from_json(header.at("architecture").dump());
    ckpt.epoch = header.at("epoch").get<int>();
    if (!header.at("forget_error").is_null())
      ckpt.forget_error = header.at("forget_error").get<double>();
    if (!header.at("retain_error").is_null())
      ckpt.retain_error = header.at("retain_error").get<double>();
    ckpt.wall_clock_seconds = header.at("wall_clock_seconds").get<double>();
    n = header.at("num_weights").get<Eigen::Index>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::io_error, file.string() + " has a corrupt header: " + e.what());
  }
  if (n != weight_count(arch))
    throw Error(ErrorCode::io_error, file.string() + " weight count disagrees with architecture");
  ckpt.weights.resize(n);
  in.read(reinterpret_cast<char*>(ckpt.weights.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(n * sizeof(double)))
    throw Error(ErrorCode::io_error, file.string() + " is truncated");
  return {std::move(arch), std::move(ckpt)};
}

}  // namespace scrub
