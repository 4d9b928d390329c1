#include "network.hpp"

#include <cmath>
#include <cstdio>
#include <string>

#include "scrubkit/error.hpp"
#include "scrubkit/rng.hpp"

namespace scrub::detail {

namespace {

using RowMajorMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                                   Eigen::RowMajor>>;
using RowMajorMutMap =
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

void validate_mlp(const ArchitectureSpec& arch) {
  if (arch.input_dim < 1)
    throw Error(ErrorCode::invalid_spec, "mlp input dimension must be positive");
  for (int h : arch.hidden)
    if (h < 1) throw Error(ErrorCode::invalid_spec, "mlp hidden width must be positive");
}

void validate_cnn(const ArchitectureSpec& arch) {
  if (arch.in_channels < 1)
    throw Error(ErrorCode::invalid_spec, "cnn input channel count must be positive");
  if (arch.image_size < 2)
    throw Error(ErrorCode::invalid_spec, "cnn image size must be at least 2");
  if (arch.conv_channels.empty())
    throw Error(ErrorCode::invalid_spec, "cnn needs at least one conv stage");
  int hw = arch.image_size;
  for (int c : arch.conv_channels) {
    if (c < 1) throw Error(ErrorCode::invalid_spec, "cnn conv channel count must be positive");
    if (hw % 2 != 0)
      throw Error(ErrorCode::invalid_spec,
                  "cnn image size " + std::to_string(arch.image_size) +
                      " is not divisible by 2 at every pooling stage");
    hw /= 2;
  }
  if (hw < 1) throw Error(ErrorCode::invalid_spec, "cnn pools the image away entirely");
  if (arch.dense_hidden < 0)
    throw Error(ErrorCode::invalid_spec, "cnn dense hidden width must be nonnegative");
}

}  // namespace

CompiledNet compile(const ArchitectureSpec& arch) {
  if (arch.num_classes < 2)
    throw Error(ErrorCode::invalid_spec, "model needs at least 2 classes");
  CompiledNet net;
  int offset = 0;
  int block = 0;
  auto push_dense = [&](int in_dim, int out_dim) {
    LayerDesc d;
    d.type = LayerDesc::Type::dense;
    d.block = block;
    d.in_dim = in_dim;
    d.out_dim = out_dim;
    d.w_offset = offset;
    d.w_size = out_dim * in_dim + out_dim;
    offset += d.w_size;
    net.layers.push_back(d);
  };
  auto push_relu = [&](int dim) {
    LayerDesc d;
    d.type = LayerDesc::Type::relu;
    d.block = block;
    d.in_dim = dim;
    d.out_dim = dim;
    net.layers.push_back(d);
  };

  if (arch.kind == ArchitectureSpec::Kind::mlp) {
    validate_mlp(arch);
    int in_dim = arch.input_dim;
    for (int h : arch.hidden) {
      push_dense(in_dim, h);
      push_relu(h);
      in_dim = h;
      ++block;
    }
    push_dense(in_dim, arch.num_classes);
    ++block;
  } else {
    validate_cnn(arch);
    int hw = arch.image_size;
    int in_c = arch.in_channels;
    for (int out_c : arch.conv_channels) {
      LayerDesc conv;
      conv.type = LayerDesc::Type::conv;
      conv.block = block;
      conv.in_c = in_c;
      conv.out_c = out_c;
      conv.in_hw = hw;
      conv.out_hw = hw;
      conv.w_offset = offset;
      conv.w_size = out_c * in_c * 9 + out_c;
      offset += conv.w_size;
      net.layers.push_back(conv);
      push_relu(out_c * hw * hw);
      LayerDesc pool;
      pool.type = LayerDesc::Type::maxpool;
      pool.block = block;
      pool.in_c = out_c;
      pool.out_c = out_c;
      pool.in_hw = hw;
      pool.out_hw = hw / 2;
      net.layers.push_back(pool);
      hw /= 2;
      in_c = out_c;
      ++block;
    }
    int flat = in_c * hw * hw;
    if (arch.dense_hidden > 0) {
      push_dense(flat, arch.dense_hidden);
      push_relu(arch.dense_hidden);
      ++block;
      push_dense(arch.dense_hidden, arch.num_classes);
      ++block;
    } else {
      push_dense(flat, arch.num_classes);
      ++block;
    }
  }

  net.num_weights = offset;
  net.num_blocks = block;
  net.block_spans.assign(static_cast<std::size_t>(block), {0, 0});
  std::vector<bool> seen(static_cast<std::size_t>(block), false);
  for (const LayerDesc& l : net.layers) {
    if (l.w_size == 0) continue;
    auto& span = net.block_spans[static_cast<std::size_t>(l.block)];
    if (!seen[static_cast<std::size_t>(l.block)]) {
      span = {l.w_offset, l.w_size};
      seen[static_cast<std::size_t>(l.block)] = true;
    } else {
      span.second = l.w_offset + l.w_size - span.first;
    }
  }
  return net;
}

Eigen::MatrixXd forward(const CompiledNet& net, const Eigen::VectorXd& weights,
                        const Eigen::MatrixXd& input, ForwardCache* cache) {
  if (weights.size() != net.num_weights)
    throw Error(ErrorCode::dimension_mismatch,
                "weight vector has " + std::to_string(weights.size()) + " entries, expected " +
                    std::to_string(net.num_weights));
  if (!net.layers.empty() && input.cols() != (net.layers[0].type == LayerDesc::Type::dense
                                                  ? net.layers[0].in_dim
                                                  : net.layers[0].in_c * net.layers[0].in_hw *
                                                        net.layers[0].in_hw))
    throw Error(ErrorCode::dimension_mismatch,
                "input has " + std::to_string(input.cols()) + " features, model expects another");

  const Eigen::Index n = input.rows();
  if (cache) {
    cache->acts.clear();
    cache->pool_argmax.assign(net.layers.size(), Eigen::MatrixXi());
    cache->acts.reserve(net.layers.size() + 1);
    cache->acts.push_back(input);
  }
  Eigen::MatrixXd act = input;
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    const LayerDesc& l = net.layers[li];
    Eigen::MatrixXd out;
    switch (l.type) {
      case LayerDesc::Type::dense: {
        RowMajorMap w(weights.data() + l.w_offset, l.out_dim, l.in_dim);
        Eigen::Map<const Eigen::VectorXd> b(weights.data() + l.w_offset + l.out_dim * l.in_dim,
                                            l.out_dim);
        out.noalias() = act * w.transpose();
        out.rowwise() += b.transpose();
        break;
      }
      case LayerDesc::Type::relu: {
        out = act.cwiseMax(0.0);
        break;
      }
      case LayerDesc::Type::conv: {
        const int hw = l.in_hw;
        const int plane = hw * hw;
        const double* wk = weights.data() + l.w_offset;
        const double* bias = wk + l.out_c * l.in_c * 9;
        out.setZero(n, static_cast<Eigen::Index>(l.out_c) * plane);
        for (Eigen::Index s = 0; s < n; ++s) {
          for (int co = 0; co < l.out_c; ++co) {
            for (int y = 0; y < hw; ++y) {
              for (int x = 0; x < hw; ++x) {
                double acc = bias[co];
                for (int ci = 0; ci < l.in_c; ++ci) {
                  const double* k = wk + (co * l.in_c + ci) * 9;
                  for (int ky = -1; ky <= 1; ++ky) {
                    const int yy = y + ky;
                    if (yy < 0 || yy >= hw) continue;
                    for (int kx = -1; kx <= 1; ++kx) {
                      const int xx = x + kx;
                      if (xx < 0 || xx >= hw) continue;
                      acc += k[(ky + 1) * 3 + (kx + 1)] * act(s, ci * plane + yy * hw + xx);
                    }
                  }
                }
                out(s, co * plane + y * hw + x) = acc;
              }
            }
          }
        }
        break;
      }
      case LayerDesc::Type::maxpool: {
        const int hw = l.in_hw;
        const int ohw = l.out_hw;
        const int plane = hw * hw;
        const int oplane = ohw * ohw;
        out.resize(n, static_cast<Eigen::Index>(l.out_c) * oplane);
        Eigen::MatrixXi argmax;
        if (cache) argmax.resize(n, static_cast<Eigen::Index>(l.out_c) * oplane);
        for (Eigen::Index s = 0; s < n; ++s) {
          for (int c = 0; c < l.out_c; ++c) {
            for (int y = 0; y < ohw; ++y) {
              for (int x = 0; x < ohw; ++x) {
                int best_idx = c * plane + (2 * y) * hw + (2 * x);
                double best = act(s, best_idx);
                for (int dy = 0; dy < 2; ++dy) {
                  for (int dx = 0; dx < 2; ++dx) {
                    const int idx = c * plane + (2 * y + dy) * hw + (2 * x + dx);
                    const double v = act(s, idx);
                    if (v > best) {
                      best = v;
                      best_idx = idx;
                    }
                  }
                }
                out(s, c * oplane + y * ohw + x) = best;
                if (cache) argmax(s, c * oplane + y * ohw + x) = best_idx;
              }
            }
          }
        }
        if (cache) cache->pool_argmax[li] = std::move(argmax);
        break;
      }
    }
    act = std::move(out);
    if (cache) cache->acts.push_back(act);
  }
  return act;
}

Eigen::VectorXd backward(const CompiledNet& net, const Eigen::VectorXd& weights,
                         const ForwardCache& cache, const Eigen::MatrixXd& dlogits) {
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(net.num_weights);
  Eigen::MatrixXd delta = dlogits;
  const Eigen::Index n = dlogits.rows();
  for (std::size_t li = net.layers.size(); li-- > 0;) {
    const LayerDesc& l = net.layers[li];
    const Eigen::MatrixXd& in_act = cache.acts[li];
    switch (l.type) {
      case LayerDesc::Type::dense: {
        RowMajorMap w(weights.data() + l.w_offset, l.out_dim, l.in_dim);
        RowMajorMutMap gw(grad.data() + l.w_offset, l.out_dim, l.in_dim);
        Eigen::Map<Eigen::VectorXd> gb(grad.data() + l.w_offset + l.out_dim * l.in_dim, l.out_dim);
        gw.noalias() = delta.transpose() * in_act;
        gb = delta.colwise().sum().transpose();
        Eigen::MatrixXd prev;
        prev.noalias() = delta * w;
        delta = std::move(prev);
        break;
      }
      case LayerDesc::Type::relu: {
        delta = (in_act.array() > 0.0).select(delta, 0.0);
        break;
      }
      case LayerDesc::Type::conv: {
        const int hw = l.in_hw;
        const int plane = hw * hw;
        double* gk = grad.data() + l.w_offset;
        double* gb = gk + l.out_c * l.in_c * 9;
        const double* wk = weights.data() + l.w_offset;
        Eigen::MatrixXd prev = Eigen::MatrixXd::Zero(n, in_act.cols());
        for (Eigen::Index s = 0; s < n; ++s) {
          for (int co = 0; co < l.out_c; ++co) {
            for (int y = 0; y < hw; ++y) {
              for (int x = 0; x < hw; ++x) {
                const double d = delta(s, co * plane + y * hw + x);
                if (d == 0.0) continue;
                gb[co] += d;
                for (int ci = 0; ci < l.in_c; ++ci) {
                  double* gkk = gk + (co * l.in_c + ci) * 9;
                  const double* k = wk + (co * l.in_c + ci) * 9;
                  for (int ky = -1; ky <= 1; ++ky) {
                    const int yy = y + ky;
                    if (yy < 0 || yy >= hw) continue;
                    for (int kx = -1; kx <= 1; ++kx) {
                      const int xx = x + kx;
                      if (xx < 0 || xx >= hw) continue;
                      const int in_idx = ci * plane + yy * hw + xx;
                      gkk[(ky + 1) * 3 + (kx + 1)] += d * in_act(s, in_idx);
                      prev(s, in_idx) += d * k[(ky + 1) * 3 + (kx + 1)];
                    }
                  }
                }
              }
            }
          }
        }
        delta = std::move(prev);
        break;
      }
      case LayerDesc::Type::maxpool: {
        const Eigen::MatrixXi& argmax = cache.pool_argmax[li];
        Eigen::MatrixXd prev = Eigen::MatrixXd::Zero(n, in_act.cols());
        for (Eigen::Index s = 0; s < n; ++s)
          for (Eigen::Index j = 0; j < delta.cols(); ++j)
            prev(s, argmax(s, j)) += delta(s, j);
        delta = std::move(prev);
        break;
      }
    }
  }
  return grad;
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd probs(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    Eigen::ArrayXd e = (logits.row(i).array() - m).exp();
    probs.row(i) = (e / e.sum()).matrix();
  }
  return probs;
}

double mean_cross_entropy(const Eigen::MatrixXd& probs, const std::vector<int>& labels) {
  if (static_cast<std::size_t>(probs.rows()) != labels.size())
    throw Error(ErrorCode::dimension_mismatch, "probability rows and labels disagree");
  double total = 0.0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i)
    total += -std::log(std::max(probs(i, labels[static_cast<std::size_t>(i)]), kProbFloor));
  return total / static_cast<double>(probs.rows());
}

Eigen::MatrixXd mean_cross_entropy_logit_grad(const Eigen::MatrixXd& probs,
                                              const std::vector<int>& labels) {
  const double inv_n = 1.0 / static_cast<double>(probs.rows());
  Eigen::MatrixXd g(probs.rows(), probs.cols());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (probs(i, y) <= kProbFloor) {
      // the log is pinned at the floor here, so the loss is locally constant
      g.row(i).setZero();
      continue;
    }
    g.row(i) = probs.row(i) * inv_n;
    g(i, y) -= inv_n;
  }
  return g;
}

double mean_kl(const Eigen::MatrixXd& teacher_probs, const Eigen::MatrixXd& student_probs) {
  if (teacher_probs.rows() != student_probs.rows() ||
      teacher_probs.cols() != student_probs.cols())
    throw Error(ErrorCode::dimension_mismatch, "teacher and student batches disagree in shape");
  double total = 0.0;
  for (Eigen::Index i = 0; i < teacher_probs.rows(); ++i) {
    for (Eigen::Index c = 0; c < teacher_probs.cols(); ++c) {
      const double pt = teacher_probs(i, c);
      if (pt <= 0.0) continue;  // 0 * log 0 convention
      total += pt * (std::log(pt) - std::log(std::max(student_probs(i, c), kProbFloor)));
    }
  }
  return total / static_cast<double>(teacher_probs.rows());
}

Eigen::MatrixXd mean_kl_logit_grad(const Eigen::MatrixXd& teacher_probs,
                                   const Eigen::MatrixXd& student_probs) {
  // d/ds_c of -pt_c log(max(ps_c, floor)) is -pt_c/ps_c above the floor and 0
  // below it; chain through softmax: g_j = ps_j * (a_j - sum_c a_c ps_c).
  const double inv_n = 1.0 / static_cast<double>(teacher_probs.rows());
  Eigen::MatrixXd g(teacher_probs.rows(), teacher_probs.cols());
  Eigen::ArrayXd a(teacher_probs.cols());
  for (Eigen::Index i = 0; i < teacher_probs.rows(); ++i) {
    for (Eigen::Index c = 0; c < teacher_probs.cols(); ++c) {
      const double ps = student_probs(i, c);
      a[c] = ps > kProbFloor ? -teacher_probs(i, c) / ps : 0.0;
    }
    const double s = (a * student_probs.row(i).transpose().array()).sum();
    g.row(i) = (student_probs.row(i).array() * (a - s).transpose() * inv_n).matrix();
  }
  return g;
}

NetEval eval_cross_entropy(const CompiledNet& net, const Eigen::VectorXd& weights,
                           const Eigen::MatrixXd& features, const std::vector<int>& labels) {
  ForwardCache cache;
  const Eigen::MatrixXd probs = softmax_rows(forward(net, weights, features, &cache));
  NetEval out;
  out.value = mean_cross_entropy(probs, labels);
  out.wgrad = backward(net, weights, cache, mean_cross_entropy_logit_grad(probs, labels));
  return out;
}

NetEval eval_min_step(const CompiledNet& net, const Eigen::VectorXd& weights,
                      const Eigen::MatrixXd& teacher_probs, const Eigen::MatrixXd& features,
                      const std::vector<int>& labels, double alpha, double gamma) {
  if (alpha == 0.0) {
    NetEval ce = eval_cross_entropy(net, weights, features, labels);
    if (gamma != 1.0) {
      ce.value *= gamma;
      ce.wgrad *= gamma;
    }
    return ce;
  }
  ForwardCache cache;
  const Eigen::MatrixXd probs = softmax_rows(forward(net, weights, features, &cache));
  Eigen::MatrixXd logit_grad = mean_kl_logit_grad(teacher_probs, probs) * alpha;
  double value = alpha * mean_kl(teacher_probs, probs);
  if (gamma != 0.0) {
    value += gamma * mean_cross_entropy(probs, labels);
    logit_grad += mean_cross_entropy_logit_grad(probs, labels) * gamma;
  }
  NetEval out;
  out.value = value;
  out.wgrad = backward(net, weights, cache, logit_grad);
  return out;
}

NetEval eval_mean_kl(const CompiledNet& net, const Eigen::VectorXd& weights,
                     const Eigen::MatrixXd& teacher_probs, const Eigen::MatrixXd& features) {
  ForwardCache cache;
  const Eigen::MatrixXd probs = softmax_rows(forward(net, weights, features, &cache));
  NetEval out;
  out.value = mean_kl(teacher_probs, probs);
  out.wgrad = backward(net, weights, cache, mean_kl_logit_grad(teacher_probs, probs));
  return out;
}

Optimizer::Optimizer(TrainConfig::Optimizer kind, double weight_decay, double momentum,
                     int num_weights, std::vector<std::pair<int, int>> segments)
    : kind_(kind), weight_decay_(weight_decay), momentum_(momentum),
      segments_(std::move(segments)) {
  if (kind_ == TrainConfig::Optimizer::sgd) {
    velocity_ = Eigen::VectorXd::Zero(num_weights);
  } else {
    m_ = Eigen::VectorXd::Zero(num_weights);
    v_ = Eigen::VectorXd::Zero(num_weights);
  }
}

void Optimizer::step(Eigen::VectorXd& weights, const Eigen::VectorXd& grad,
                     double learning_rate) {
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  if (kind_ == TrainConfig::Optimizer::adaptive) ++t_;
  for (auto [off, len] : segments_) {
    if (len <= 0) continue;
    auto w = weights.segment(off, len);
    auto g = grad.segment(off, len);
    if (kind_ == TrainConfig::Optimizer::sgd) {
      auto vel = velocity_.segment(off, len);
      if (weight_decay_ != 0.0)
        vel = momentum_ * vel + (g + weight_decay_ * w);
      else
        vel = momentum_ * vel + g;
      w -= learning_rate * vel;
    } else {
      const double beta1 = momentum_;
      Eigen::VectorXd gd = weight_decay_ != 0.0 ? Eigen::VectorXd(g + weight_decay_ * w)
                                                : Eigen::VectorXd(g);
      auto mm = m_.segment(off, len);
      auto vv = v_.segment(off, len);
      mm = beta1 * mm + (1.0 - beta1) * gd;
      vv = kBeta2 * vv + (1.0 - kBeta2) * gd.cwiseProduct(gd);
      const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
      const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
      w.array() -= learning_rate * (mm.array() / bc1) /
                   ((vv.array() / bc2).sqrt() + kEps);
    }
  }
}

std::vector<std::pair<int, int>> trainable_segments(const CompiledNet& net, int frozen_blocks) {
  if (frozen_blocks < 0 || frozen_blocks > net.num_blocks)
    throw Error(ErrorCode::invalid_argument,
                "cannot freeze " + std::to_string(frozen_blocks) + " of " +
                    std::to_string(net.num_blocks) + " blocks");
  if (frozen_blocks == net.num_blocks) return {};
  const int start = net.block_spans[static_cast<std::size_t>(frozen_blocks)].first;
  return {{start, net.num_weights - start}};
}

std::vector<std::vector<int>> epoch_batches(int n, int batch_size, std::uint64_t seed, int epoch,
                                            int stream) {
  if (n <= 0) throw Error(ErrorCode::invalid_argument, "cannot batch an empty dataset");
  if (batch_size <= 0) throw Error(ErrorCode::invalid_argument, "batch size must be positive");
  Rng rng(stream_seed(seed, 0xB47C4u + static_cast<std::uint64_t>(stream),
                      static_cast<std::uint64_t>(epoch)));
  std::vector<int> order = rng.permutation(n);
  std::vector<std::vector<int>> batches;
  for (int start = 0; start < n; start += batch_size) {
    const int end = std::min(start + batch_size, n);
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  return batches;
}

}  // namespace scrub::detail
