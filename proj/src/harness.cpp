#include "scrubkit/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <thread>

#include "scrubkit/error.hpp"
#include "scrubkit/rng.hpp"

namespace scrub {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

constexpr std::uint64_t kMiaStream = 0x313A;

const std::set<std::string>& known_methods() {
  static const std::set<std::string> names = {"original", "retrain", "finetune", "neggrad",
                                              "cf_k",     "eu_k",    "scrub",    "scrub_r"};
  return names;
}

bool method_uses_train(const std::string& name) {
  return name == "finetune" || name == "neggrad" || name == "cf_k" || name == "eu_k";
}

bool method_uses_scrub(const std::string& name) {
  return name == "scrub" || name == "scrub_r";
}

[[noreturn]] void bad(const std::string& message) {
  throw Error(ErrorCode::bad_config, message);
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key)) bad("unknown key '" + key + "' in " + where);
}

double get_number(const json& j, const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number()) bad(std::string("'") + key + "' must be a number");
  return j.at(key).get<double>();
}

int get_int(const json& j, const char* key, int fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number_integer()) bad(std::string("'") + key + "' must be an integer");
  return j.at(key).get<int>();
}

std::string get_string(const json& j, const char* key, const std::string& fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_string()) bad(std::string("'") + key + "' must be a string");
  return j.at(key).get<std::string>();
}

TrainConfig::Optimizer optimizer_from_string(const std::string& name) {
  if (name == "sgd") return TrainConfig::Optimizer::sgd;
  if (name == "adaptive") return TrainConfig::Optimizer::adaptive;
  bad("unknown optimizer '" + name + "' (expected sgd or adaptive)");
}

const char* optimizer_to_string(TrainConfig::Optimizer opt) {
  return opt == TrainConfig::Optimizer::sgd ? "sgd" : "adaptive";
}

TrainConfig parse_train(const json& j, const std::string& where, const TrainConfig& defaults) {
  check_keys(j, {"epochs", "learning_rate", "batch_size", "weight_decay", "momentum",
                 "optimizer"},
             where);
  TrainConfig cfg = defaults;
  cfg.epochs = get_int(j, "epochs", cfg.epochs);
  cfg.learning_rate = get_number(j, "learning_rate", cfg.learning_rate);
  cfg.batch_size = get_int(j, "batch_size", cfg.batch_size);
  cfg.weight_decay = get_number(j, "weight_decay", cfg.weight_decay);
  cfg.momentum = get_number(j, "momentum", cfg.momentum);
  cfg.optimizer = optimizer_from_string(
      get_string(j, "optimizer", optimizer_to_string(cfg.optimizer)));
  return cfg;
}

ScrubConfig parse_scrub(const json& j, const std::string& where) {
  check_keys(j,
             {"alpha", "gamma", "max_steps", "total_steps", "forget_batch_size",
              "retain_batch_size", "learning_rate", "lr_decay_factor", "lr_decay_epoch",
              "weight_decay", "momentum", "optimizer"},
             where);
  ScrubConfig cfg;
  cfg.alpha = get_number(j, "alpha", cfg.alpha);
  cfg.gamma = get_number(j, "gamma", cfg.gamma);
  cfg.max_steps = get_int(j, "max_steps", cfg.max_steps);
  cfg.total_steps = get_int(j, "total_steps", cfg.total_steps);
  cfg.forget_batch_size = get_int(j, "forget_batch_size", cfg.forget_batch_size);
  cfg.retain_batch_size = get_int(j, "retain_batch_size", cfg.retain_batch_size);
  cfg.learning_rate = get_number(j, "learning_rate", cfg.learning_rate);
  cfg.lr_decay_factor = get_number(j, "lr_decay_factor", cfg.lr_decay_factor);
  cfg.lr_decay_epoch = get_int(j, "lr_decay_epoch", cfg.lr_decay_epoch);
  cfg.weight_decay = get_number(j, "weight_decay", cfg.weight_decay);
  cfg.momentum = get_number(j, "momentum", cfg.momentum);
  cfg.optimizer = optimizer_from_string(
      get_string(j, "optimizer", optimizer_to_string(cfg.optimizer)));
  return cfg;
}

// Appendix-style defaults for the finetuning-family baselines: 10 epochs of
// SGD at lr 0.01 with weight decay 5e-4.
TrainConfig baseline_train_defaults() {
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.learning_rate = 0.01;
  cfg.batch_size = 32;
  cfg.weight_decay = 5e-4;
  cfg.momentum = 0.9;
  cfg.optimizer = TrainConfig::Optimizer::sgd;
  return cfg;
}

ordered_json train_snapshot(const TrainConfig& cfg) {
  ordered_json j;
  j["epochs"] = cfg.epochs;
  j["learning_rate"] = cfg.learning_rate;
  j["batch_size"] = cfg.batch_size;
  j["weight_decay"] = cfg.weight_decay;
  j["momentum"] = cfg.momentum;
  j["optimizer"] = optimizer_to_string(cfg.optimizer);
  return j;
}

ordered_json scrub_snapshot(const ScrubConfig& cfg) {
  ordered_json j;
  j["alpha"] = cfg.alpha;
  j["gamma"] = cfg.gamma;
  j["max_steps"] = cfg.max_steps;
  j["total_steps"] = cfg.total_steps;
  j["forget_batch_size"] = cfg.forget_batch_size;
  j["retain_batch_size"] = cfg.retain_batch_size;
  j["learning_rate"] = cfg.learning_rate;
  j["lr_decay_factor"] = cfg.lr_decay_factor;
  j["lr_decay_epoch"] = cfg.lr_decay_epoch;
  j["weight_decay"] = cfg.weight_decay;
  j["momentum"] = cfg.momentum;
  j["optimizer"] = optimizer_to_string(cfg.optimizer);
  return j;
}

std::string hash_hex(const std::string& text) {
  const std::uint64_t h = hash_bytes(text.data(), text.size());
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    bad(std::string("config is not valid JSON: ") + e.what());
  }
  if (!root.is_object()) bad("config must be a JSON object");
  check_keys(root,
             {"dataset", "architecture", "train", "forget", "confusion", "methods", "seeds",
              "suites", "output_dir"},
             "config");

  ExperimentConfig cfg;

  if (!root.contains("dataset")) bad("config needs a 'dataset' section");
  {
    const json& d = root.at("dataset");
    check_keys(d, {"kind", "blobs", "path"}, "dataset");
    cfg.dataset.kind = get_string(d, "kind", "blobs");
    if (cfg.dataset.kind == "blobs") {
      if (d.contains("path")) bad("dataset kind 'blobs' takes no 'path'");
      if (d.contains("blobs")) {
        const json& b = d.at("blobs");
        check_keys(b,
                   {"classes", "dim", "train_per_class", "val_per_class", "test_per_class",
                    "separation", "noise"},
                   "dataset.blobs");
        BlobsSpec& s = cfg.dataset.blobs;
        s.classes = get_int(b, "classes", s.classes);
        s.dim = get_int(b, "dim", s.dim);
        s.train_per_class = get_int(b, "train_per_class", s.train_per_class);
        s.val_per_class = get_int(b, "val_per_class", s.val_per_class);
        s.test_per_class = get_int(b, "test_per_class", s.test_per_class);
        s.separation = get_number(b, "separation", s.separation);
        s.noise = get_number(b, "noise", s.noise);
      }
    } else if (cfg.dataset.kind == "archive") {
      if (d.contains("blobs")) bad("dataset kind 'archive' takes no 'blobs'");
      const std::string path = get_string(d, "path", "");
      if (path.empty()) bad("dataset kind 'archive' needs a 'path'");
      cfg.dataset.path = path;
    } else {
      bad("unknown dataset kind '" + cfg.dataset.kind + "' (expected blobs or archive)");
    }
  }

  if (root.contains("architecture")) {
    const json& a = root.at("architecture");
    check_keys(a, {"kind", "hidden", "conv_channels", "dense_hidden", "in_channels"},
               "architecture");
    const std::string kind = get_string(a, "kind", "mlp");
    if (kind == "mlp") {
      cfg.architecture.kind = ArchitectureSpec::Kind::mlp;
      if (a.contains("conv_channels") || a.contains("dense_hidden") || a.contains("in_channels"))
        bad("mlp architectures take only 'hidden'");
      if (a.contains("hidden")) {
        if (!a.at("hidden").is_array()) bad("'hidden' must be an array of widths");
        cfg.architecture.hidden = a.at("hidden").get<std::vector<int>>();
      }
    } else if (kind == "cnn") {
      cfg.architecture.kind = ArchitectureSpec::Kind::cnn;
      if (a.contains("hidden")) bad("cnn architectures take no 'hidden'");
      if (a.contains("conv_channels")) {
        if (!a.at("conv_channels").is_array()) bad("'conv_channels' must be an array");
        cfg.architecture.conv_channels = a.at("conv_channels").get<std::vector<int>>();
      }
      cfg.architecture.dense_hidden = get_int(a, "dense_hidden", cfg.architecture.dense_hidden);
      cfg.architecture.in_channels = get_int(a, "in_channels", cfg.architecture.in_channels);
    } else {
      bad("unknown architecture kind '" + kind + "' (expected mlp or cnn)");
    }
  }

  if (root.contains("train"))
    cfg.train = parse_train(root.at("train"), "train", cfg.train);

  if (root.contains("forget")) {
    const json& f = root.at("forget");
    check_keys(f, {"mode", "target_class", "count"}, "forget");
    ForgetSpec spec;
    const std::string mode = get_string(f, "mode", "class");
    if (mode == "class") {
      spec.mode = ForgetSpec::Mode::whole_class;
      if (f.contains("count")) bad("class-mode forgetting takes no 'count'");
    } else if (mode == "selective") {
      spec.mode = ForgetSpec::Mode::selective;
      spec.count = get_int(f, "count", 0);
      if (spec.count < 1) bad("selective forgetting needs a positive 'count'");
    } else {
      bad("unknown forget mode '" + mode + "' (expected class or selective)");
    }
    spec.target_class = get_int(f, "target_class", 0);
    cfg.forget = spec;
  }

  if (root.contains("confusion")) {
    const json& c = root.at("confusion");
    check_keys(c, {"class_a", "class_b", "count_per_class"}, "confusion");
    ConfusionSpec spec;
    spec.class_a = get_int(c, "class_a", spec.class_a);
    spec.class_b = get_int(c, "class_b", spec.class_b);
    spec.count_per_class = get_int(c, "count_per_class", spec.count_per_class);
    cfg.confusion = spec;
  }

  if (cfg.forget && cfg.confusion)
    bad("'forget' and 'confusion' are mutually exclusive; pick one");
  if (!cfg.forget && !cfg.confusion)
    bad("config needs a 'forget' or 'confusion' section to define the forget set");

  if (!root.contains("methods") || !root.at("methods").is_array() || root.at("methods").empty())
    bad("config needs a nonempty 'methods' array");
  for (const json& m : root.at("methods")) {
    if (!m.is_object()) bad("each method must be an object");
    check_keys(m, {"name", "train", "scrub", "beta", "k"}, "method");
    MethodSpec spec;
    spec.name = get_string(m, "name", "");
    if (!known_methods().count(spec.name)) bad("unknown method '" + spec.name + "'");
    if (method_uses_train(spec.name)) {
      spec.train = baseline_train_defaults();
      if (m.contains("train"))
        spec.train = parse_train(m.at("train"), "method '" + spec.name + "'", spec.train);
    } else if (m.contains("train")) {
      bad("method '" + spec.name + "' takes no 'train' section");
    }
    if (method_uses_scrub(spec.name)) {
      if (m.contains("scrub"))
        spec.scrub_cfg = parse_scrub(m.at("scrub"), "method '" + spec.name + "'");
    } else if (m.contains("scrub")) {
      bad("method '" + spec.name + "' takes no 'scrub' section");
    }
    if (m.contains("beta")) {
      if (spec.name != "neggrad") bad("only neggrad takes 'beta'");
      spec.beta = get_number(m, "beta", spec.beta);
      if (spec.beta < 0.0 || spec.beta > 1.0) bad("'beta' must lie in [0, 1]");
    }
    if (m.contains("k")) {
      if (spec.name != "cf_k" && spec.name != "eu_k") bad("only cf_k and eu_k take 'k'");
      spec.k = get_int(m, "k", spec.k);
      if (spec.k < -1) bad("'k' must be -1 (all but the last block) or nonnegative");
    }
    for (const MethodSpec& existing : cfg.methods)
      if (existing.name == spec.name) bad("method '" + spec.name + "' appears twice");
    cfg.methods.push_back(std::move(spec));
  }

  if (root.contains("seeds")) {
    if (!root.at("seeds").is_array() || root.at("seeds").empty())
      bad("'seeds' must be a nonempty array of integers");
    cfg.seeds.clear();
    for (const json& s : root.at("seeds")) {
      if (!s.is_number_integer() || s.get<long long>() < 0)
        bad("'seeds' entries must be nonnegative integers");
      cfg.seeds.push_back(s.get<std::uint64_t>());
    }
  }

  if (root.contains("suites")) {
    if (!root.at("suites").is_array() || root.at("suites").empty())
      bad("'suites' must be a nonempty array");
    cfg.suites.clear();
    for (const json& s : root.at("suites")) {
      if (!s.is_string()) bad("'suites' entries must be strings");
      const std::string name = s.get<std::string>();
      if (name != "M1" && name != "M2" && name != "M3")
        bad("unknown suite '" + name + "' (expected M1, M2 or M3)");
      cfg.suites.insert(name);
    }
  }

  cfg.output_dir = get_string(root, "output_dir", "");

  if (cfg.suites.count("M2") && !cfg.confusion)
    bad("suite M2 needs a 'confusion' section");
  if (cfg.suites.count("M3") && cfg.confusion)
    bad("suite M3 cannot be combined with label confusion");
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::io_error, "cannot read " + file.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_experiment_config(buffer.str());
}

std::string config_snapshot(const ExperimentConfig& config) {
  ordered_json j;
  {
    ordered_json d;
    d["kind"] = config.dataset.kind;
    if (config.dataset.kind == "blobs") {
      ordered_json b;
      b["classes"] = config.dataset.blobs.classes;
      b["dim"] = config.dataset.blobs.dim;
      b["train_per_class"] = config.dataset.blobs.train_per_class;
      b["val_per_class"] = config.dataset.blobs.val_per_class;
      b["test_per_class"] = config.dataset.blobs.test_per_class;
      b["separation"] = config.dataset.blobs.separation;
      b["noise"] = config.dataset.blobs.noise;
      d["blobs"] = std::move(b);
    } else {
      d["path"] = config.dataset.path.string();
    }
    j["dataset"] = std::move(d);
  }
  {
    ordered_json a;
    if (config.architecture.kind == ArchitectureSpec::Kind::mlp) {
      a["kind"] = "mlp";
      a["hidden"] = config.architecture.hidden;
    } else {
      a["kind"] = "cnn";
      a["in_channels"] = config.architecture.in_channels;
      a["conv_channels"] = config.architecture.conv_channels;
      a["dense_hidden"] = config.architecture.dense_hidden;
    }
    j["architecture"] = std::move(a);
  }
  j["train"] = train_snapshot(config.train);
  if (config.forget) {
    ordered_json f;
    f["mode"] = config.forget->mode == ForgetSpec::Mode::whole_class ? "class" : "selective";
    f["target_class"] = config.forget->target_class;
    if (config.forget->mode == ForgetSpec::Mode::selective) f["count"] = config.forget->count;
    j["forget"] = std::move(f);
  }
  if (config.confusion) {
    ordered_json c;
    c["class_a"] = config.confusion->class_a;
    c["class_b"] = config.confusion->class_b;
    c["count_per_class"] = config.confusion->count_per_class;
    j["confusion"] = std::move(c);
  }
  ordered_json methods = ordered_json::array();
  for (const MethodSpec& m : config.methods) {
    ordered_json s;
    s["name"] = m.name;
    if (method_uses_train(m.name)) s["train"] = train_snapshot(m.train);
    if (method_uses_scrub(m.name)) s["scrub"] = scrub_snapshot(m.scrub_cfg);
    if (m.name == "neggrad") s["beta"] = m.beta;
    if (m.name == "cf_k" || m.name == "eu_k") s["k"] = m.k;
    methods.push_back(std::move(s));
  }
  j["methods"] = std::move(methods);
  j["seeds"] = config.seeds;
  j["suites"] = config.suites;  // std::set serializes in sorted order
  return j.dump(2) + "\n";
}

std::string config_hash(const ExperimentConfig& config) {
  return hash_hex(config_snapshot(config));
}

bool ExperimentReport::all_ok() const {
  return std::all_of(rows.begin(), rows.end(), [](const ReportRow& r) { return r.ok; });
}

const ReportRow* ExperimentReport::find(const std::string& method, std::uint64_t seed) const {
  for (const ReportRow& r : rows)
    if (r.method == method && r.seed == seed) return &r;
  return nullptr;
}

const AggregateRow* ExperimentReport::find_aggregate(const std::string& method) const {
  for (const AggregateRow& a : aggregates)
    if (a.method == method) return &a;
  return nullptr;
}

namespace {

struct MeanStd {
  double mean = 0.0;
  double std_dev = 0.0;
};

std::optional<MeanStd> mean_std(const std::vector<double>& values) {
  if (values.empty()) return std::nullopt;
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(values.size());
  return MeanStd{mean, std::sqrt(var)};
}

}  // namespace

std::vector<AggregateRow> aggregate_rows(const std::vector<ReportRow>& rows) {
  std::vector<std::string> order;
  for (const ReportRow& r : rows)
    if (std::find(order.begin(), order.end(), r.method) == order.end()) order.push_back(r.method);
  std::sort(order.begin(), order.end());

  std::vector<AggregateRow> aggregates;
  for (const std::string& method : order) {
    AggregateRow agg;
    agg.method = method;
    std::vector<double> retain, forget, test, ict, icr, fgt_t, fgt_r, mia;
    for (const ReportRow& r : rows) {
      if (r.method != method || !r.ok) continue;
      ++agg.n;
      if (r.retain_error) retain.push_back(*r.retain_error);
      if (r.forget_error) forget.push_back(*r.forget_error);
      if (r.test_error) test.push_back(*r.test_error);
      if (r.ic_test) ict.push_back(*r.ic_test);
      if (r.ic_retain) icr.push_back(*r.ic_retain);
      if (r.fgt_test) fgt_t.push_back(static_cast<double>(*r.fgt_test));
      if (r.fgt_retain) fgt_r.push_back(static_cast<double>(*r.fgt_retain));
      if (r.mia_mean) mia.push_back(*r.mia_mean);
    }
    auto assign = [](std::optional<double>& m, std::optional<double>& s,
                     const std::optional<MeanStd>& ms) {
      if (ms) {
        m = ms->mean;
        s = ms->std_dev;
      }
    };
    assign(agg.retain_error_mean, agg.retain_error_std, mean_std(retain));
    assign(agg.forget_error_mean, agg.forget_error_std, mean_std(forget));
    assign(agg.test_error_mean, agg.test_error_std, mean_std(test));
    assign(agg.ic_test_mean, agg.ic_test_std, mean_std(ict));
    assign(agg.ic_retain_mean, agg.ic_retain_std, mean_std(icr));
    assign(agg.fgt_test_mean, agg.fgt_test_std, mean_std(fgt_t));
    assign(agg.fgt_retain_mean, agg.fgt_retain_std, mean_std(fgt_r));
    assign(agg.mia_mean_mean, agg.mia_mean_std, mean_std(mia));
    aggregates.push_back(std::move(agg));
  }
  return aggregates;
}

namespace {

// Everything a single seed's method cells share: the data splits, the trained
// original model, and the architecture.
struct SeedContext {
  ArchitectureSpec arch;
  DatasetTriplet data;
  LabeledDataset retain;
  LabeledDataset forget;
  LabeledDataset matched_validation;  // empty when unavailable
  LabeledDataset matched_test;        // test restricted to the forget classes
  ClassifierModel original;
  double original_seconds = 0.0;
};

ArchitectureSpec resolve_architecture(const ArchitectureConfig& cfg,
                                      const LabeledDataset& train) {
  ArchitectureSpec arch;
  arch.kind = cfg.kind;
  arch.num_classes = train.num_classes();
  if (cfg.kind == ArchitectureSpec::Kind::mlp) {
    arch.input_dim = train.dim();
    arch.hidden = cfg.hidden;
  } else {
    arch.in_channels = cfg.in_channels;
    if (cfg.in_channels < 1 || train.dim() % cfg.in_channels != 0)
      throw Error(ErrorCode::bad_config, "feature dimension is not divisible by in_channels");
    const int plane = train.dim() / cfg.in_channels;
    const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(plane))));
    if (side * side != plane)
      throw Error(ErrorCode::bad_config,
                  "feature dimension " + std::to_string(train.dim()) +
                      " does not form square images");
    arch.image_size = side;
    arch.conv_channels = cfg.conv_channels;
    arch.dense_hidden = cfg.dense_hidden;
  }
  weight_count(arch);  // validates the shape
  return arch;
}

SeedContext prepare_seed(const ExperimentConfig& config, std::uint64_t seed) {
  SeedContext ctx;
  ctx.data = load_dataset(config.dataset, seed);

  LabeledDataset train_set;
  if (config.confusion) {
    ConfusionResult res = inject_confusion(ctx.data.train, *config.confusion, seed);
    train_set = std::move(res.confused_train);
    ctx.retain = std::move(res.retain);
    ctx.forget = std::move(res.forget);
  } else {
    RetainForget rf = split_retain_forget(ctx.data.train, *config.forget, seed);
    train_set = ctx.data.train;
    ctx.retain = std::move(rf.retain);
    ctx.forget = std::move(rf.forget);
  }

  ctx.arch = resolve_architecture(config.architecture, train_set);
  TrainConfig train_cfg = config.train;
  train_cfg.seed = seed;
  const auto t0 = std::chrono::steady_clock::now();
  ctx.original = train(init_model(ctx.arch, seed), train_set, train_cfg);
  ctx.original_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  try {
    ctx.matched_validation = build_matched_validation(ctx.data.validation, ctx.forget,
                                                      &ctx.retain);
  } catch (const Error&) {
    // Methods that need the matched validation set fail per-cell instead.
  }
  std::set<int> forget_classes(ctx.forget.original_labels().begin(),
                               ctx.forget.original_labels().end());
  std::vector<int> matched_rows;
  for (int i = 0; i < ctx.data.test.size(); ++i)
    if (forget_classes.count(ctx.data.test.labels()[static_cast<std::size_t>(i)]))
      matched_rows.push_back(i);
  if (!matched_rows.empty())
    ctx.matched_test = ctx.data.test.subset(matched_rows, "matched_test");
  return ctx;
}

ClassifierModel execute_method(const SeedContext& ctx, const MethodSpec& method,
                               const ExperimentConfig& config, std::uint64_t seed,
                               const std::filesystem::path& checkpoint_dir) {
  const UnlearningTask task{ctx.original, ctx.retain, ctx.forget, ctx.matched_validation,
                            ctx.data.test};
  if (method.name == "original") return ctx.original;
  if (method.name == "retrain") {
    TrainConfig cfg = config.train;
    cfg.seed = seed;
    return retrain(task, cfg);
  }
  TrainConfig cfg = method.train;
  cfg.seed = seed;
  if (method.name == "finetune") return finetune(task, cfg);
  if (method.name == "neggrad") return neggrad(task, method.beta, cfg);
  if (method.name == "cf_k" || method.name == "eu_k") {
    const int blocks = ctx.original.num_blocks();
    const int k = method.k >= 0 ? method.k : blocks - 1;
    if (method.name == "cf_k") return cf_k(task, k, cfg);
    return eu_k(task, k, init_model(ctx.arch, seed).weights(), cfg);
  }
  // scrub / scrub_r
  ScrubConfig scfg = method.scrub_cfg;
  scfg.seed = seed;
  ScrubResult result = scrub(task, scfg);
  if (method.name == "scrub") return result.model;
  if (!checkpoint_dir.empty())
    save_trail(checkpoint_dir / method.name / std::to_string(seed), ctx.arch, result.trail,
               seed);
  return rewind(result.trail, result.model, task);
}

ReportRow measure(const SeedContext& ctx, const ExperimentConfig& config,
                  const MethodSpec& method, std::uint64_t seed, const ClassifierModel& model) {
  ReportRow row;
  row.method = method.name;
  row.seed = seed;
  if (config.suites.count("M1")) {
    row.retain_error = evaluate_error(model, ctx.retain);
    row.forget_error = ctx.forget.empty() ? std::optional<double>()
                                          : evaluate_error(model, ctx.forget);
    row.test_error = evaluate_error(model, ctx.data.test);
  }
  if (config.suites.count("M2")) {
    const int a = config.confusion->class_a;
    const int b = config.confusion->class_b;
    const ConfusionMatrix cm_test = confusion_matrix(model, ctx.data.test);
    row.ic_test = ic_err(cm_test, a, b);
    row.fgt_test = fgt_err(cm_test, a, b);
    row.fgt_test_rate = static_cast<double>(*row.fgt_test) /
                        static_cast<double>(cm_test.row_sum(a) + cm_test.row_sum(b));
    const ConfusionMatrix cm_retain = confusion_matrix(model, ctx.retain);
    row.ic_retain = ic_err(cm_retain, a, b);
    row.fgt_retain = fgt_err(cm_retain, a, b);
    row.fgt_retain_rate = static_cast<double>(*row.fgt_retain) /
                          static_cast<double>(cm_retain.row_sum(a) + cm_retain.row_sum(b));
  }
  if (config.suites.count("M3")) {
    if (ctx.matched_test.empty())
      throw Error(ErrorCode::empty_result,
                  "membership inference needs test examples of the forget classes");
    const MiaResult mia = mia_score(model, ctx.forget, ctx.matched_test,
                                    stream_seed(seed, kMiaStream));
    row.mia_mean = mia.attack_accuracy_mean;
    row.mia_std = mia.attack_accuracy_std;
  }
  return row;
}

std::vector<ReportRow> run_seed(const ExperimentConfig& config, std::uint64_t seed,
                                const std::filesystem::path& checkpoint_dir) {
  std::vector<ReportRow> rows;
  SeedContext ctx;
  try {
    ctx = prepare_seed(config, seed);
  } catch (const Error& e) {
    for (const MethodSpec& m : config.methods) {
      ReportRow row;
      row.method = m.name;
      row.seed = seed;
      row.ok = false;
      row.error_code = e.code_name();
      row.error_message = e.what();
      rows.push_back(std::move(row));
    }
    return rows;
  }

  for (const MethodSpec& method : config.methods) {
    ReportRow row;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const ClassifierModel model = execute_method(ctx, method, config, seed, checkpoint_dir);
      row = measure(ctx, config, method, seed, model);
    } catch (const Error& e) {
      row = ReportRow{};
      row.ok = false;
      row.error_code = e.code_name();
      row.error_message = e.what();
    } catch (const std::exception& e) {
      row = ReportRow{};
      row.ok = false;
      row.error_code = error_code_name(ErrorCode::internal);
      row.error_message = e.what();
    }
    row.method = method.name;
    row.seed = seed;
    // The original model's cost is its training run, not the no-op dispatch.
    row.wall_clock_seconds =
        method.name == "original"
            ? ctx.original_seconds
            : std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rows.push_back(std::move(row));
  }

  const ReportRow* retrain_row = nullptr;
  for (const ReportRow& r : rows)
    if (r.method == "retrain" && r.ok) retrain_row = &r;
  if (retrain_row && retrain_row->wall_clock_seconds > 0.0) {
    for (ReportRow& r : rows)
      if (r.ok && r.wall_clock_seconds > 0.0)
        r.scale_up = scale_up_factor(retrain_row->wall_clock_seconds, r.wall_clock_seconds);
  }
  return rows;
}

void validate_experiment_config(const ExperimentConfig& config) {
  if (config.methods.empty()) bad("config has no methods");
  if (config.seeds.empty()) bad("config has no seeds");
  if (config.suites.empty()) bad("config selects no metric suite");
  if (!config.forget && !config.confusion)
    bad("config needs a forget or confusion specification");
  if (config.forget && config.confusion)
    bad("'forget' and 'confusion' are mutually exclusive");
  if (config.suites.count("M2") && !config.confusion) bad("suite M2 needs label confusion");
  if (config.suites.count("M3") && config.confusion)
    bad("suite M3 cannot be combined with label confusion");
  for (const MethodSpec& m : config.methods)
    if (!known_methods().count(m.name)) bad("unknown method '" + m.name + "'");
}

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& config, int jobs,
                                const std::filesystem::path& checkpoint_dir) {
  validate_experiment_config(config);
  const int n_seeds = static_cast<int>(config.seeds.size());
  const int workers = std::clamp(jobs, 1, n_seeds);

  std::vector<std::vector<ReportRow>> per_seed(static_cast<std::size_t>(n_seeds));
  if (workers == 1) {
    for (int i = 0; i < n_seeds; ++i)
      per_seed[static_cast<std::size_t>(i)] =
          run_seed(config, config.seeds[static_cast<std::size_t>(i)], checkpoint_dir);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int t = 0; t < workers; ++t) {
      pool.emplace_back([&]() {
        for (int i = next.fetch_add(1); i < n_seeds; i = next.fetch_add(1))
          per_seed[static_cast<std::size_t>(i)] =
              run_seed(config, config.seeds[static_cast<std::size_t>(i)], checkpoint_dir);
      });
    }
    for (std::thread& t : pool) t.join();
  }

  ExperimentReport report;
  for (auto& rows : per_seed)
    for (ReportRow& row : rows) report.rows.push_back(std::move(row));
  std::sort(report.rows.begin(), report.rows.end(), [](const ReportRow& a, const ReportRow& b) {
    return a.method != b.method ? a.method < b.method : a.seed < b.seed;
  });
  report.aggregates = aggregate_rows(report.rows);
  report.config_hash = config_hash(config);
  report.tool_version = kToolVersion;
  return report;
}

std::filesystem::path resolve_output_root(const std::string& flag_value,
                                          const ExperimentConfig& config) {
  if (!flag_value.empty()) return flag_value;
  if (!config.output_dir.empty()) return config.output_dir;
  if (const char* env = std::getenv("SCRUBKIT_OUT"); env && *env) return env;
  return "runs";
}

}  // namespace scrub
