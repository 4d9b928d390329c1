// Python bindings for the core library: dataset construction, model
// training, the unlearning methods, and the evaluation metrics. The
// experiment harness is exposed through its JSON config surface.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "scrubkit/dataset.hpp"
#include "scrubkit/error.hpp"
#include "scrubkit/harness.hpp"
#include "scrubkit/metrics.hpp"
#include "scrubkit/model.hpp"
#include "scrubkit/unlearn.hpp"

namespace py = pybind11;

namespace {

scrub::ArchitectureSpec make_mlp_spec(int input_dim, std::vector<int> hidden, int num_classes) {
  scrub::ArchitectureSpec arch;
  arch.kind = scrub::ArchitectureSpec::Kind::mlp;
  arch.input_dim = input_dim;
  arch.hidden = std::move(hidden);
  arch.num_classes = num_classes;
  scrub::weight_count(arch);  // validate
  return arch;
}

scrub::ArchitectureSpec make_cnn_spec(int in_channels, int image_size,
                                      std::vector<int> conv_channels, int dense_hidden,
                                      int num_classes) {
  scrub::ArchitectureSpec arch;
  arch.kind = scrub::ArchitectureSpec::Kind::cnn;
  arch.in_channels = in_channels;
  arch.image_size = image_size;
  arch.conv_channels = std::move(conv_channels);
  arch.dense_hidden = dense_hidden;
  arch.num_classes = num_classes;
  scrub::weight_count(arch);
  return arch;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "scrubkit: machine-unlearning library and benchmark harness";

  static py::exception<scrub::Error> error_type(m, "ScrubError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const scrub::Error& e) {
      py::set_error(error_type,
                    (std::string("[") + e.code_name() + "] " + e.what()).c_str());
    }
  });

  py::class_<scrub::LabeledDataset>(m, "LabeledDataset")
      .def(py::init([](const Eigen::MatrixXd& features, const std::vector<int>& labels,
                       int num_classes, const std::string& split_name) {
             return scrub::LabeledDataset(features, labels, num_classes, split_name);
           }),
           py::arg("features"), py::arg("labels"), py::arg("num_classes"),
           py::arg("split_name") = "data")
      .def_property_readonly("features", &scrub::LabeledDataset::features)
      .def_property_readonly("labels", &scrub::LabeledDataset::labels)
      .def_property_readonly("original_labels", &scrub::LabeledDataset::original_labels)
      .def_property_readonly("num_classes", &scrub::LabeledDataset::num_classes)
      .def_property_readonly("split_name", &scrub::LabeledDataset::split_name)
      .def("__len__", &scrub::LabeledDataset::size)
      .def("class_counts", &scrub::LabeledDataset::class_counts)
      .def("subset", &scrub::LabeledDataset::subset, py::arg("rows"), py::arg("split_name"));

  py::class_<scrub::DatasetTriplet>(m, "DatasetTriplet")
      .def_readonly("train", &scrub::DatasetTriplet::train)
      .def_readonly("validation", &scrub::DatasetTriplet::validation)
      .def_readonly("test", &scrub::DatasetTriplet::test);

  py::class_<scrub::BlobsSpec>(m, "BlobsSpec")
      .def(py::init<>())
      .def_readwrite("classes", &scrub::BlobsSpec::classes)
      .def_readwrite("dim", &scrub::BlobsSpec::dim)
      .def_readwrite("train_per_class", &scrub::BlobsSpec::train_per_class)
      .def_readwrite("val_per_class", &scrub::BlobsSpec::val_per_class)
      .def_readwrite("test_per_class", &scrub::BlobsSpec::test_per_class)
      .def_readwrite("separation", &scrub::BlobsSpec::separation)
      .def_readwrite("noise", &scrub::BlobsSpec::noise);

  m.def("make_blobs", &scrub::make_blobs, py::arg("spec"), py::arg("seed"));

  py::class_<scrub::ForgetSpec> forget_spec(m, "ForgetSpec");
  py::enum_<scrub::ForgetSpec::Mode>(forget_spec, "Mode")
      .value("whole_class", scrub::ForgetSpec::Mode::whole_class)
      .value("selective", scrub::ForgetSpec::Mode::selective);
  forget_spec.def(py::init<>())
      .def_readwrite("mode", &scrub::ForgetSpec::mode)
      .def_readwrite("target_class", &scrub::ForgetSpec::target_class)
      .def_readwrite("count", &scrub::ForgetSpec::count);

  py::class_<scrub::ConfusionSpec>(m, "ConfusionSpec")
      .def(py::init<>())
      .def_readwrite("class_a", &scrub::ConfusionSpec::class_a)
      .def_readwrite("class_b", &scrub::ConfusionSpec::class_b)
      .def_readwrite("count_per_class", &scrub::ConfusionSpec::count_per_class);

  py::class_<scrub::RetainForget>(m, "RetainForget")
      .def_readonly("retain", &scrub::RetainForget::retain)
      .def_readonly("forget", &scrub::RetainForget::forget);

  py::class_<scrub::ConfusionResult>(m, "ConfusionResult")
      .def_readonly("confused_train", &scrub::ConfusionResult::confused_train)
      .def_readonly("forget", &scrub::ConfusionResult::forget)
      .def_readonly("retain", &scrub::ConfusionResult::retain);

  m.def("split_retain_forget", &scrub::split_retain_forget, py::arg("train"), py::arg("spec"),
        py::arg("seed"));
  m.def("inject_confusion", &scrub::inject_confusion, py::arg("train"), py::arg("spec"),
        py::arg("seed"));
  m.def(
      "build_matched_validation",
      [](const scrub::LabeledDataset& validation, const scrub::LabeledDataset& forget,
         const scrub::LabeledDataset* retain) {
        return scrub::build_matched_validation(validation, forget, retain);
      },
      py::arg("validation"), py::arg("forget"), py::arg("retain") = nullptr);

  py::class_<scrub::ArchitectureSpec>(m, "ArchitectureSpec")
      .def_property_readonly("num_classes",
                             [](const scrub::ArchitectureSpec& a) { return a.num_classes; })
      .def_property_readonly("feature_dim", &scrub::ArchitectureSpec::feature_dim);
  m.def("mlp_architecture", &make_mlp_spec, py::arg("input_dim"), py::arg("hidden"),
        py::arg("num_classes"));
  m.def("cnn_architecture", &make_cnn_spec, py::arg("in_channels"), py::arg("image_size"),
        py::arg("conv_channels"), py::arg("dense_hidden"), py::arg("num_classes"));

  py::class_<scrub::TrainConfig> train_config(m, "TrainConfig");
  py::enum_<scrub::TrainConfig::Optimizer>(train_config, "Optimizer")
      .value("sgd", scrub::TrainConfig::Optimizer::sgd)
      .value("adaptive", scrub::TrainConfig::Optimizer::adaptive);
  train_config.def(py::init<>())
      .def_readwrite("epochs", &scrub::TrainConfig::epochs)
      .def_readwrite("learning_rate", &scrub::TrainConfig::learning_rate)
      .def_readwrite("batch_size", &scrub::TrainConfig::batch_size)
      .def_readwrite("weight_decay", &scrub::TrainConfig::weight_decay)
      .def_readwrite("momentum", &scrub::TrainConfig::momentum)
      .def_readwrite("optimizer", &scrub::TrainConfig::optimizer)
      .def_readwrite("seed", &scrub::TrainConfig::seed);

  py::class_<scrub::ClassifierModel>(m, "ClassifierModel")
      .def_property_readonly("weights",
                             [](const scrub::ClassifierModel& model) { return model.weights(); })
      .def_property_readonly("num_classes", &scrub::ClassifierModel::num_classes)
      .def_property_readonly("num_blocks", &scrub::ClassifierModel::num_blocks)
      .def("with_weights", &scrub::ClassifierModel::with_weights, py::arg("weights"))
      .def("predict", &scrub::ClassifierModel::predict, py::arg("features"))
      .def("predict_proba", &scrub::ClassifierModel::predict_proba, py::arg("features"))
      .def("logits", &scrub::ClassifierModel::logits, py::arg("features"));

  m.def("init_model", &scrub::init_model, py::arg("architecture"), py::arg("seed"));
  m.def("train", &scrub::train, py::arg("model"), py::arg("data"), py::arg("config"));
  m.def("train_frozen", &scrub::train_frozen, py::arg("model"), py::arg("data"),
        py::arg("config"), py::arg("frozen_blocks"));
  m.def("evaluate_error", &scrub::evaluate_error, py::arg("model"), py::arg("data"));
  m.def("per_example_loss", &scrub::per_example_loss, py::arg("model"), py::arg("data"));
  m.def("weight_hash", &scrub::weight_hash, py::arg("model"));

  py::class_<scrub::ScrubConfig>(m, "ScrubConfig")
      .def(py::init<>())
      .def_readwrite("alpha", &scrub::ScrubConfig::alpha)
      .def_readwrite("gamma", &scrub::ScrubConfig::gamma)
      .def_readwrite("max_steps", &scrub::ScrubConfig::max_steps)
      .def_readwrite("total_steps", &scrub::ScrubConfig::total_steps)
      .def_readwrite("forget_batch_size", &scrub::ScrubConfig::forget_batch_size)
      .def_readwrite("retain_batch_size", &scrub::ScrubConfig::retain_batch_size)
      .def_readwrite("learning_rate", &scrub::ScrubConfig::learning_rate)
      .def_readwrite("lr_decay_factor", &scrub::ScrubConfig::lr_decay_factor)
      .def_readwrite("lr_decay_epoch", &scrub::ScrubConfig::lr_decay_epoch)
      .def_readwrite("weight_decay", &scrub::ScrubConfig::weight_decay)
      .def_readwrite("momentum", &scrub::ScrubConfig::momentum)
      .def_readwrite("optimizer", &scrub::ScrubConfig::optimizer)
      .def_readwrite("seed", &scrub::ScrubConfig::seed);

  py::class_<scrub::UnlearningTask>(m, "UnlearningTask")
      .def(py::init([](scrub::ClassifierModel original, scrub::LabeledDataset retain,
                       scrub::LabeledDataset forget, scrub::LabeledDataset matched_validation,
                       scrub::LabeledDataset test) {
             return scrub::UnlearningTask{std::move(original), std::move(retain),
                                          std::move(forget), std::move(matched_validation),
                                          std::move(test)};
           }),
           py::arg("original"), py::arg("retain"), py::arg("forget"),
           py::arg("matched_validation") = scrub::LabeledDataset(),
           py::arg("test") = scrub::LabeledDataset())
      .def_readonly("original", &scrub::UnlearningTask::original)
      .def_readonly("retain", &scrub::UnlearningTask::retain)
      .def_readonly("forget", &scrub::UnlearningTask::forget);

  py::class_<scrub::ModelCheckpoint>(m, "ModelCheckpoint")
      .def_readonly("epoch", &scrub::ModelCheckpoint::epoch)
      .def_readonly("forget_error", &scrub::ModelCheckpoint::forget_error)
      .def_readonly("retain_error", &scrub::ModelCheckpoint::retain_error)
      .def_readonly("weights", &scrub::ModelCheckpoint::weights);

  py::class_<scrub::CheckpointTrail>(m, "CheckpointTrail")
      .def_readonly("checkpoints", &scrub::CheckpointTrail::checkpoints)
      .def("__len__",
           [](const scrub::CheckpointTrail& t) { return t.checkpoints.size(); });

  py::class_<scrub::ScrubResult>(m, "ScrubResult")
      .def_readonly("model", &scrub::ScrubResult::model)
      .def_readonly("trail", &scrub::ScrubResult::trail);

  m.def("kl_distance", &scrub::kl_distance, py::arg("teacher_probs"), py::arg("student_probs"));
  m.def("scrub", &scrub::scrub, py::arg("task"), py::arg("config"));
  m.def("rewind", &scrub::rewind, py::arg("trail"), py::arg("final_model"), py::arg("task"));
  m.def("finetune", &scrub::finetune, py::arg("task"), py::arg("config"));
  m.def("retrain", &scrub::retrain, py::arg("task"), py::arg("config"));
  m.def("neggrad", &scrub::neggrad, py::arg("task"), py::arg("beta"), py::arg("config"));
  m.def("cf_k", &scrub::cf_k, py::arg("task"), py::arg("k_frozen_blocks"), py::arg("config"));
  m.def("eu_k", &scrub::eu_k, py::arg("task"), py::arg("k_frozen_blocks"),
        py::arg("init_weights"), py::arg("config"));

  py::class_<scrub::ConfusionMatrix>(m, "ConfusionMatrix")
      .def_property_readonly("counts",
                             [](const scrub::ConfusionMatrix& c) { return c.counts; })
      .def_property_readonly("num_classes", &scrub::ConfusionMatrix::num_classes);
  m.def("confusion_matrix", &scrub::confusion_matrix, py::arg("model"), py::arg("data"));
  m.def("ic_err", &scrub::ic_err, py::arg("matrix"), py::arg("class_a"), py::arg("class_b"));
  m.def("fgt_err", &scrub::fgt_err, py::arg("matrix"), py::arg("class_a"), py::arg("class_b"));

  py::class_<scrub::MiaResult>(m, "MiaResult")
      .def_readonly("attack_accuracy_mean", &scrub::MiaResult::attack_accuracy_mean)
      .def_readonly("attack_accuracy_std", &scrub::MiaResult::attack_accuracy_std)
      .def_readonly("fold_accuracies", &scrub::MiaResult::fold_accuracies)
      .def_readonly("n_forget", &scrub::MiaResult::n_forget)
      .def_readonly("n_test", &scrub::MiaResult::n_test);
  m.def("mia_score", &scrub::mia_score, py::arg("model"), py::arg("forget"), py::arg("test"),
        py::arg("seed"));
  m.def("mia_score_from_losses", &scrub::mia_score_from_losses, py::arg("forget_losses"),
        py::arg("test_losses"), py::arg("seed"));
  m.def("scale_up_factor", &scrub::scale_up_factor, py::arg("retrain_seconds"),
        py::arg("method_seconds"));

  // Harness access through its JSON surface: run a config, get report JSON.
  m.def(
      "run_experiment_json",
      [](const std::string& config_text, int jobs) {
        const scrub::ExperimentConfig config = scrub::parse_experiment_config(config_text);
        return scrub::report_json(scrub::run_experiment(config, jobs));
      },
      py::arg("config_text"), py::arg("jobs") = 1);
  m.def("config_hash", [](const std::string& config_text) {
    return scrub::config_hash(scrub::parse_experiment_config(config_text));
  });

  m.attr("__version__") = scrub::kToolVersion;
}
