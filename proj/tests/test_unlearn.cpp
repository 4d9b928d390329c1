#include <cmath>
#include <filesystem>
#include <limits>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "scrubkit/dataset.hpp"
#include "scrubkit/error.hpp"
#include "scrubkit/model.hpp"
#include "scrubkit/unlearn.hpp"

using namespace scrub;
namespace fs = std::filesystem;

namespace {

ArchitectureSpec mlp(int in, std::vector<int> hidden, int classes) {
  ArchitectureSpec arch;
  arch.kind = ArchitectureSpec::Kind::mlp;
  arch.input_dim = in;
  arch.hidden = std::move(hidden);
  arch.num_classes = classes;
  return arch;
}

// A small 4-class task with a trained original model and a selective forget
// split, shared by most tests in this file.
struct Fixture {
  DatasetTriplet data;
  UnlearningTask task;
  ArchitectureSpec arch;
};

Fixture make_fixture(std::uint64_t seed = 3) {
  BlobsSpec spec;
  spec.classes = 4;
  spec.dim = 6;
  spec.train_per_class = 25;
  spec.val_per_class = 10;
  spec.test_per_class = 25;
  spec.separation = 1.2;
  spec.noise = 0.8;

  Fixture fx;
  fx.data = make_blobs(spec, seed);
  fx.arch = mlp(6, {16}, 4);

  TrainConfig cfg;
  cfg.epochs = 12;
  cfg.learning_rate = 0.05;
  cfg.batch_size = 16;
  cfg.seed = seed;
  const ClassifierModel original = train(init_model(fx.arch, seed), fx.data.train, cfg);

  ForgetSpec forget;
  forget.mode = ForgetSpec::Mode::selective;
  forget.target_class = 1;
  forget.count = 12;
  const RetainForget rf = split_retain_forget(fx.data.train, forget, seed);

  fx.task.original = original;
  fx.task.retain = rf.retain;
  fx.task.forget = rf.forget;
  fx.task.matched_validation = build_matched_validation(fx.data.validation, rf.forget);
  fx.task.test = fx.data.test;
  return fx;
}

ScrubConfig plain_scrub(std::uint64_t seed) {
  ScrubConfig cfg;
  cfg.alpha = 0.5;
  cfg.gamma = 1.0;
  cfg.max_steps = 2;
  cfg.total_steps = 4;
  cfg.forget_batch_size = 16;
  cfg.retain_batch_size = 32;
  cfg.learning_rate = 1e-3;
  cfg.seed = seed;
  return cfg;
}

// A task whose models have controllable error rates: 1-d inputs, 2 classes,
// and a zero-weight model that always predicts class 0 (lowest-index tie).
struct SyntheticRewind {
  ArchitectureSpec arch = mlp(1, {}, 2);
  UnlearningTask task;
  ClassifierModel final_model;

  // `ones` of the `n` labels are 1, so the zero-weight model errs at ones/n.
  static LabeledDataset with_error(int n, int ones, const std::string& name) {
    Eigen::MatrixXd x = Eigen::MatrixXd::Constant(n, 1, 0.5);
    std::vector<int> y(static_cast<std::size_t>(n), 0);
    for (int i = 0; i < ones; ++i) y[static_cast<std::size_t>(i)] = 1;
    return LabeledDataset(x, y, 2, name);
  }

  SyntheticRewind(double reference, double final_forget) {
    final_model = ClassifierModel(arch, Eigen::VectorXd::Zero(weight_count(arch)));
    task.original = final_model;
    task.retain = with_error(10, 0, "retain");
    task.matched_validation = with_error(20, static_cast<int>(reference * 20 + 0.5), "val");
    task.forget = with_error(10, static_cast<int>(final_forget * 10 + 0.5), "forget");
  }

  CheckpointTrail trail_with(const std::vector<double>& forget_errors) const {
    CheckpointTrail trail;
    for (std::size_t i = 0; i < forget_errors.size(); ++i) {
      ModelCheckpoint ck;
      ck.epoch = static_cast<int>(i) + 1;
      ck.weights = Eigen::VectorXd::Constant(weight_count(arch), static_cast<double>(i) + 1.0);
      ck.forget_error = forget_errors[i];
      ck.retain_error = 0.0;
      trail.checkpoints.push_back(std::move(ck));
    }
    return trail;
  }
};

}  // namespace

TEST_CASE("kl_distance: canonical values") {
  Eigen::VectorXd p(2), q(2);
  p << 0.5, 0.5;
  q << 0.5, 0.5;
  CHECK(kl_distance(p, q) == doctest::Approx(0.0));

  q << 0.25, 0.75;
  const double want = 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0);
  CHECK(kl_distance(p, q) == doctest::Approx(want).epsilon(1e-9));
  CHECK(kl_distance(p, q) == doctest::Approx(0.14384).epsilon(1e-4));

  p << 1.0, 0.0;
  q << 0.5, 0.5;
  CHECK(kl_distance(p, q) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
  CHECK(kl_distance(p, q) == doctest::Approx(0.69315).epsilon(1e-4));
}

TEST_CASE("kl_distance: zero student mass is floored, zero teacher mass is dropped") {
  Eigen::VectorXd p(2), q(2);
  p << 1.0, 0.0;
  q << 1.0, 0.0;
  CHECK(kl_distance(p, q) == doctest::Approx(0.0));  // 0 log 0 = 0

  p << 0.5, 0.5;
  q << 1.0, 0.0;  // student assigns zero mass to a supported class
  CHECK(kl_distance(p, q) == doctest::Approx(0.5 * std::log(0.5 / 1e-12) + 0.5 * std::log(0.5)));
}

TEST_CASE("kl_distance: rejects malformed distributions") {
  Eigen::VectorXd p(2), q(3);
  p << 0.5, 0.5;
  q << 0.4, 0.3, 0.3;
  CHECK_THROWS_AS(kl_distance(p, q), Error);  // length mismatch

  Eigen::VectorXd neg(2), ok(2);
  neg << -0.1, 1.1;
  ok << 0.5, 0.5;
  CHECK_THROWS_AS(kl_distance(neg, ok), Error);
  CHECK_THROWS_AS(kl_distance(ok, neg), Error);

  Eigen::VectorXd unnorm(2);
  unnorm << 0.7, 0.7;
  CHECK_THROWS_AS(kl_distance(unnorm, ok), Error);
  CHECK_THROWS_AS(kl_distance(Eigen::VectorXd(), Eigen::VectorXd()), Error);
}

TEST_CASE("objectives: values match the raw-loop references") {
  const Fixture fx = make_fixture();
  const ClassifierModel student = init_model(fx.arch, 99);
  const ClassifierModel& teacher = fx.task.original;
  const Eigen::MatrixXd xr = fx.task.retain.features().topRows(10);
  const std::vector<int> yr(fx.task.retain.labels().begin(), fx.task.retain.labels().begin() + 10);
  const Eigen::MatrixXd xf = fx.task.forget.features().topRows(6);
  const std::vector<int> yf(fx.task.forget.labels().begin(), fx.task.forget.labels().begin() + 6);

  const Objective distill = distillation_objective(student, teacher, xf);
  CHECK(distill.value == doctest::Approx(oracle::mean_kl(student, teacher, xf)).epsilon(1e-9));

  const Objective min_step = min_step_objective(student, teacher, xr, yr, 0.7, 1.3);
  const double want_min = 0.7 * oracle::mean_kl(student, teacher, xr) + 1.3 * oracle::mean_ce(student, xr, yr);
  CHECK(min_step.value == doctest::Approx(want_min).epsilon(1e-9));

  const Objective full = scrub_objective(student, teacher, xr, yr, xf, 0.5, 1.0);
  CHECK(full.value ==
        doctest::Approx(oracle::scrub_loss(student, teacher, xr, yr, xf, 0.5, 1.0)).epsilon(1e-9));

  const Objective ng = neggrad_objective(student, xr, yr, xf, yf, 0.95);
  CHECK(ng.value ==
        doctest::Approx(oracle::neggrad_loss(student, xr, yr, xf, yf, 0.95)).epsilon(1e-9));
}

TEST_CASE("objectives: gradients match central finite differences") {
  const ArchitectureSpec arch = mlp(4, {6}, 3);
  const ClassifierModel teacher = init_model(arch, 0);
  const ClassifierModel student = init_model(arch, 1);
  Eigen::MatrixXd xr = Eigen::MatrixXd::Random(7, 4);
  Eigen::MatrixXd xf = Eigen::MatrixXd::Random(5, 4);
  const std::vector<int> yr = {0, 1, 2, 0, 1, 2, 0};
  const std::vector<int> yf = {2, 1, 0, 2, 1};

  const Objective full = scrub_objective(student, teacher, xr, yr, xf, 0.4, 0.9);
  const Eigen::VectorXd fd_full = oracle::fd_grad(
      [&](const Eigen::VectorXd& w) {
        return scrub_objective(student.with_weights(w), teacher, xr, yr, xf, 0.4, 0.9).value;
      },
      student.weights());
  CHECK(oracle::grad_rel_err(full.grad, fd_full) < 1e-6);

  const Objective ng = neggrad_objective(student, xr, yr, xf, yf, 0.7);
  const Eigen::VectorXd fd_ng = oracle::fd_grad(
      [&](const Eigen::VectorXd& w) {
        return neggrad_objective(student.with_weights(w), xr, yr, xf, yf, 0.7).value;
      },
      student.weights());
  CHECK(oracle::grad_rel_err(ng.grad, fd_ng) < 1e-6);
}

TEST_CASE("max epoch: empty forget set is the identity") {
  const Fixture fx = make_fixture();
  const LabeledDataset empty;
  const ClassifierModel out =
      do_max_epoch(fx.task.original, fx.task.original, empty, plain_scrub(0));
  CHECK(out.weights() == fx.task.original.weights());
}

TEST_CASE("max epoch: one small ascent step increases the mean distillation distance") {
  const Fixture fx = make_fixture();
  const ClassifierModel student = init_model(fx.arch, 77);
  const ClassifierModel& teacher = fx.task.original;

  ScrubConfig cfg = plain_scrub(0);
  cfg.forget_batch_size = fx.task.forget.size();  // single full batch
  cfg.learning_rate = 1e-4;
  cfg.momentum = 0.0;
  cfg.optimizer = TrainConfig::Optimizer::sgd;

  const double before = distillation_objective(student, teacher, fx.task.forget.features()).value;
  const ClassifierModel out = do_max_epoch(student, teacher, fx.task.forget, cfg);
  const double after = distillation_objective(out, teacher, fx.task.forget.features()).value;
  CHECK(after > before);
}

TEST_CASE("max epoch: the teacher is never touched") {
  const Fixture fx = make_fixture();
  const std::uint64_t teacher_hash = weight_hash(fx.task.original);
  (void)do_max_epoch(init_model(fx.arch, 5), fx.task.original, fx.task.forget, plain_scrub(0));
  CHECK(weight_hash(fx.task.original) == teacher_hash);
}

TEST_CASE("min epoch: alpha=0, gamma=1 is exactly one fine-tuning epoch") {
  const Fixture fx = make_fixture();
  ScrubConfig cfg = plain_scrub(11);
  cfg.alpha = 0.0;
  cfg.gamma = 1.0;
  cfg.retain_batch_size = 16;
  cfg.learning_rate = 0.01;
  cfg.momentum = 0.9;
  cfg.optimizer = TrainConfig::Optimizer::sgd;

  const ClassifierModel student = init_model(fx.arch, 21);
  const ClassifierModel via_min = do_min_epoch(student, fx.task.original, fx.task.retain, cfg);

  TrainConfig tc;
  tc.epochs = 1;
  tc.learning_rate = 0.01;
  tc.batch_size = 16;
  tc.momentum = 0.9;
  tc.optimizer = TrainConfig::Optimizer::sgd;
  tc.seed = 11;
  const ClassifierModel via_train = train(student, fx.task.retain, tc);

  CHECK(via_min.weights() == via_train.weights());
}

TEST_CASE("min epoch: student at the teacher with gamma=0 stays put") {
  const Fixture fx = make_fixture();
  ScrubConfig cfg = plain_scrub(0);
  cfg.alpha = 1.0;
  cfg.gamma = 0.0;
  cfg.optimizer = TrainConfig::Optimizer::sgd;

  const Objective at_teacher = min_step_objective(
      fx.task.original, fx.task.original, fx.task.retain.features(), fx.task.retain.labels(),
      1.0, 0.0);
  CHECK(at_teacher.value == doctest::Approx(0.0).epsilon(1e-12));

  const ClassifierModel out =
      do_min_epoch(fx.task.original, fx.task.original, fx.task.retain, cfg);
  CHECK((out.weights() - fx.task.original.weights()).norm() < 1e-10);
}

TEST_CASE("min epoch: one small descent step decreases the batch objective") {
  const Fixture fx = make_fixture();
  const ClassifierModel student = init_model(fx.arch, 31);

  ScrubConfig cfg = plain_scrub(0);
  cfg.retain_batch_size = fx.task.retain.size();  // single full batch
  cfg.learning_rate = 1e-4;
  cfg.momentum = 0.0;
  cfg.optimizer = TrainConfig::Optimizer::sgd;

  const double before =
      min_step_objective(student, fx.task.original, fx.task.retain.features(),
                         fx.task.retain.labels(), cfg.alpha, cfg.gamma)
          .value;
  const ClassifierModel out = do_min_epoch(student, fx.task.original, fx.task.retain, cfg);
  const double after = min_step_objective(out, fx.task.original, fx.task.retain.features(),
                                          fx.task.retain.labels(), cfg.alpha, cfg.gamma)
                           .value;
  CHECK(after < before);
}

TEST_CASE("scrub: trail covers every epoch with recorded errors") {
  const Fixture fx = make_fixture();
  const ScrubConfig cfg = plain_scrub(3);
  const ScrubResult result = scrub::scrub(fx.task, cfg);

  REQUIRE(result.trail.checkpoints.size() == 4);
  for (std::size_t i = 0; i < result.trail.checkpoints.size(); ++i) {
    const ModelCheckpoint& ck = result.trail.checkpoints[i];
    CHECK(ck.epoch == static_cast<int>(i) + 1);
    REQUIRE(ck.forget_error.has_value());
    REQUIRE(ck.retain_error.has_value());
    // Recorded errors must be reproducible from the recorded weights.
    const ClassifierModel at(fx.arch, ck.weights);
    CHECK(*ck.forget_error == doctest::Approx(evaluate_error(at, fx.task.forget)));
    CHECK(*ck.retain_error == doctest::Approx(evaluate_error(at, fx.task.retain)));
    CHECK(ck.wall_clock_seconds >= 0.0);
  }
  // The final model is the last checkpoint.
  CHECK(result.model.weights() == result.trail.checkpoints.back().weights);
}

TEST_CASE("scrub: deterministic for a fixed seed") {
  const Fixture fx = make_fixture();
  const ScrubConfig cfg = plain_scrub(9);
  CHECK(weight_hash(scrub::scrub(fx.task, cfg).model) == weight_hash(scrub::scrub(fx.task, cfg).model));
}

TEST_CASE("scrub: min-only schedule with plain cross-entropy is finetune") {
  const Fixture fx = make_fixture();
  ScrubConfig cfg = plain_scrub(13);
  cfg.alpha = 0.0;
  cfg.gamma = 1.0;
  cfg.max_steps = 0;
  cfg.total_steps = 5;
  cfg.retain_batch_size = 16;
  cfg.learning_rate = 0.01;
  cfg.momentum = 0.9;
  cfg.optimizer = TrainConfig::Optimizer::sgd;
  cfg.weight_decay = 5e-4;

  TrainConfig tc;
  tc.epochs = 5;
  tc.learning_rate = 0.01;
  tc.batch_size = 16;
  tc.momentum = 0.9;
  tc.weight_decay = 5e-4;
  tc.optimizer = TrainConfig::Optimizer::sgd;
  tc.seed = 13;

  CHECK(weight_hash(scrub::scrub(fx.task, cfg).model) == weight_hash(finetune(fx.task, tc)));
}

TEST_CASE("scrub: learning-rate decay changes the trajectory only after the cut") {
  const Fixture fx = make_fixture();
  ScrubConfig cfg = plain_scrub(17);
  cfg.total_steps = 4;
  cfg.max_steps = 1;
  ScrubConfig decayed = cfg;
  decayed.lr_decay_epoch = 2;
  decayed.lr_decay_factor = 0.1;

  const ScrubResult plain = scrub::scrub(fx.task, cfg);
  const ScrubResult cut = scrub::scrub(fx.task, decayed);
  CHECK(plain.trail.checkpoints[0].weights == cut.trail.checkpoints[0].weights);
  CHECK(plain.trail.checkpoints[1].weights == cut.trail.checkpoints[1].weights);
  CHECK(plain.trail.checkpoints[2].weights != cut.trail.checkpoints[2].weights);
}

TEST_CASE("scrub: divergence carries the structured trail") {
  Fixture fx = make_fixture();
  // Poison the retain set so the very first min pass sees a non-finite loss.
  Eigen::MatrixXd bad = fx.task.retain.features();
  bad(0, 0) = std::numeric_limits<double>::infinity();
  fx.task.retain = LabeledDataset(bad, fx.task.retain.labels(), 4, "retain",
                                  fx.task.retain.ids());  // keep ids: no fake overlap

  ScrubConfig cfg = plain_scrub(0);
  cfg.retain_batch_size = fx.task.retain.size();  // one batch: must hit the bad row
  try {
    scrub::scrub(fx.task, cfg);
    FAIL("expected divergence");
  } catch (const ScrubDivergence& e) {
    CHECK(e.code() == ErrorCode::divergence);
    CHECK(e.epoch() == 1);
    CHECK(e.trail().checkpoints.empty());
  }
}

TEST_CASE("scrub: config validation") {
  const Fixture fx = make_fixture();
  ScrubConfig cfg = plain_scrub(0);
  cfg.alpha = -0.1;
  CHECK_THROWS_AS(scrub::scrub(fx.task, cfg), Error);
  cfg = plain_scrub(0);
  cfg.max_steps = 7;
  cfg.total_steps = 3;
  CHECK_THROWS_AS(scrub::scrub(fx.task, cfg), Error);
  cfg = plain_scrub(0);
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(scrub::scrub(fx.task, cfg), Error);
  cfg = plain_scrub(0);
  cfg.total_steps = 0;
  CHECK_THROWS_AS(scrub::scrub(fx.task, cfg), Error);
}

TEST_CASE("rewind: final model wins when its forget error is at the reference or below") {
  const SyntheticRewind s(0.55, 0.4);
  const CheckpointTrail trail = s.trail_with({0.1, 0.3, 0.6});
  const ClassifierModel out = rewind(trail, s.final_model, s.task);
  CHECK(out.weights() == s.final_model.weights());
}

TEST_CASE("rewind: picks the checkpoint nearest the reference") {
  const SyntheticRewind s(0.35, 0.9);
  const CheckpointTrail trail = s.trail_with({0.10, 0.30, 0.60, 0.90});
  const ClassifierModel out = rewind(trail, s.final_model, s.task);
  // |0.30 - 0.35| = 0.05 is the closest; that checkpoint's weights are all 2.
  CHECK(out.weights() == Eigen::VectorXd::Constant(4, 2.0));
}

TEST_CASE("rewind: distance ties go to the latest epoch") {
  const SyntheticRewind s(0.50, 0.9);
  const CheckpointTrail trail = s.trail_with({0.20, 0.50, 0.50});
  const ClassifierModel out = rewind(trail, s.final_model, s.task);
  CHECK(out.weights() == Eigen::VectorXd::Constant(4, 3.0));
}

TEST_CASE("rewind: structured errors for unusable inputs") {
  const SyntheticRewind s(0.35, 0.9);
  CHECK_THROWS_AS(rewind(CheckpointTrail{}, s.final_model, s.task), Error);

  CheckpointTrail no_error = s.trail_with({0.1});
  no_error.checkpoints[0].forget_error.reset();
  CHECK_THROWS_AS(rewind(no_error, s.final_model, s.task), Error);

  SyntheticRewind no_val(0.35, 0.9);
  no_val.task.matched_validation = LabeledDataset();
  CHECK_THROWS_AS(rewind(no_val.trail_with({0.1}), no_val.final_model, no_val.task), Error);
}

TEST_CASE("finetune: zero epochs returns the original") {
  const Fixture fx = make_fixture();
  TrainConfig cfg;
  cfg.epochs = 0;
  CHECK(finetune(fx.task, cfg).weights() == fx.task.original.weights());
}

TEST_CASE("finetune: does not raise the retain error on a fit-able task") {
  const Fixture fx = make_fixture();
  TrainConfig cfg;
  cfg.epochs = 8;
  cfg.learning_rate = 0.02;
  cfg.batch_size = 16;
  cfg.seed = 3;
  const double before = evaluate_error(fx.task.original, fx.task.retain);
  const double after = evaluate_error(finetune(fx.task, cfg), fx.task.retain);
  CHECK(after <= before + 1e-12);
}

TEST_CASE("retrain: starts from a fresh seed-derived initialization") {
  const Fixture fx = make_fixture();
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.seed = 41;
  // With zero epochs the retrained model is exactly the fresh initialization.
  const ClassifierModel out = retrain(fx.task, cfg);
  CHECK(out.weights() == init_model(fx.arch, 41).weights());
  CHECK(out.weights() != fx.task.original.weights());
}

TEST_CASE("neggrad: beta=1 is bit-identical to finetune") {
  const Fixture fx = make_fixture();
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.learning_rate = 0.01;
  cfg.batch_size = 16;
  cfg.seed = 19;
  CHECK(weight_hash(neggrad(fx.task, 1.0, cfg)) == weight_hash(finetune(fx.task, cfg)));
}

TEST_CASE("neggrad: pushes the forget loss up relative to finetune") {
  const Fixture fx = make_fixture();
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.learning_rate = 0.02;
  cfg.batch_size = 16;
  cfg.seed = 23;
  const ClassifierModel ng = neggrad(fx.task, 0.9, cfg);
  const ClassifierModel ft = finetune(fx.task, cfg);
  const double ng_loss = per_example_loss(ng, fx.task.forget).mean();
  const double ft_loss = per_example_loss(ft, fx.task.forget).mean();
  CHECK(ng_loss > ft_loss);
}

TEST_CASE("neggrad: beta outside [0, 1] rejected") {
  const Fixture fx = make_fixture();
  CHECK_THROWS_AS(neggrad(fx.task, -0.1, TrainConfig{}), Error);
  CHECK_THROWS_AS(neggrad(fx.task, 1.5, TrainConfig{}), Error);
}

TEST_CASE("cf_k: k=0 is bit-identical to finetune") {
  const Fixture fx = make_fixture();
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.learning_rate = 0.01;
  cfg.batch_size = 16;
  cfg.seed = 29;
  CHECK(weight_hash(cf_k(fx.task, 0, cfg)) == weight_hash(finetune(fx.task, cfg)));
}

TEST_CASE("cf_k: frozen blocks never move") {
  const Fixture fx = make_fixture();
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.learning_rate = 0.02;
  cfg.seed = 31;
  const ClassifierModel out = cf_k(fx.task, 1, cfg);
  const auto [off, size] = fx.task.original.block_span(0);
  CHECK(out.weights().segment(off, size) == fx.task.original.weights().segment(off, size));
  CHECK(out.weights() != fx.task.original.weights());
}

TEST_CASE("cf_k: k must address an existing split point") {
  const Fixture fx = make_fixture();
  CHECK_THROWS_AS(cf_k(fx.task, fx.task.original.num_blocks(), TrainConfig{}), Error);
  CHECK_THROWS_AS(cf_k(fx.task, -1, TrainConfig{}), Error);
}

TEST_CASE("eu_k: k=0 with a fresh init is bit-identical to retrain") {
  const Fixture fx = make_fixture();
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.learning_rate = 0.01;
  cfg.batch_size = 16;
  cfg.seed = 37;
  const Eigen::VectorXd fresh = init_model(fx.arch, 37).weights();
  CHECK(weight_hash(eu_k(fx.task, 0, fresh, cfg)) == weight_hash(retrain(fx.task, cfg)));
}

TEST_CASE("eu_k: unfrozen blocks are re-initialized before training") {
  const Fixture fx = make_fixture();
  TrainConfig cfg;
  cfg.epochs = 0;  // isolate the re-initialization
  cfg.seed = 43;
  const Eigen::VectorXd fresh = init_model(fx.arch, 43).weights();
  const ClassifierModel out = eu_k(fx.task, 1, fresh, cfg);

  const auto [off0, size0] = fx.task.original.block_span(0);
  CHECK(out.weights().segment(off0, size0) == fx.task.original.weights().segment(off0, size0));
  const auto [off1, size1] = fx.task.original.block_span(1);
  CHECK(out.weights().segment(off1, size1) == fresh.segment(off1, size1));
}

TEST_CASE("eu_k: init weight vector must match the architecture") {
  const Fixture fx = make_fixture();
  CHECK_THROWS_AS(eu_k(fx.task, 0, Eigen::VectorXd::Zero(3), TrainConfig{}), Error);
}

TEST_CASE("task validation: overlapping retain and forget sets rejected") {
  Fixture fx = make_fixture();
  // Make forget a subset of retain by id.
  fx.task.forget = fx.task.retain.subset({0, 1, 2}, "forget");
  CHECK_THROWS_AS(finetune(fx.task, TrainConfig{}), Error);
  CHECK_THROWS_AS(scrub::scrub(fx.task, plain_scrub(0)), Error);
}

TEST_CASE("trail persistence: save and load round-trips") {
  const Fixture fx = make_fixture();
  ScrubConfig cfg = plain_scrub(47);
  cfg.total_steps = 3;
  cfg.max_steps = 1;
  const ScrubResult result = scrub::scrub(fx.task, cfg);

  const fs::path dir = fs::temp_directory_path() / "scrubkit_test_trail";
  fs::remove_all(dir);
  save_trail(dir, fx.arch, result.trail, 47);
  const CheckpointTrail loaded = load_trail(dir);

  REQUIRE(loaded.checkpoints.size() == result.trail.checkpoints.size());
  for (std::size_t i = 0; i < loaded.checkpoints.size(); ++i) {
    CHECK(loaded.checkpoints[i].weights == result.trail.checkpoints[i].weights);
    CHECK(loaded.checkpoints[i].epoch == result.trail.checkpoints[i].epoch);
    CHECK(*loaded.checkpoints[i].forget_error ==
          doctest::Approx(*result.trail.checkpoints[i].forget_error));
  }
  fs::remove_all(dir);

  CHECK_THROWS_AS(load_trail("/nonexistent/scrubkit/trail"), Error);
}
