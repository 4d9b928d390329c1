#include "scrubkit/dataset.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "scrubkit/error.hpp"
#include "scrubkit/rng.hpp"

namespace scrub {

namespace {

// Stream tags for the independent random sequences a dataset seed fans out
// into. Distinct tags keep e.g. the test-split noise independent of how many
// training examples were drawn.
constexpr std::uint64_t kMeansStream = 0x11;
constexpr std::uint64_t kSplitNoiseStream = 0x20;  // +0 train, +1 validation, +2 test
constexpr std::uint64_t kForgetStream = 0x31;
constexpr std::uint64_t kConfusionStream = 0x32;

std::vector<int> complement_rows(int n, const std::vector<int>& chosen_sorted) {
  std::vector<int> rest;
  rest.reserve(static_cast<std::size_t>(n) - chosen_sorted.size());
  std::size_t j = 0;
  for (int i = 0; i < n; ++i) {
    if (j < chosen_sorted.size() && chosen_sorted[j] == i)
      ++j;
    else
      rest.push_back(i);
  }
  return rest;
}

void validate_class_index(int c, int num_classes, const char* what) {
  if (c < 0 || c >= num_classes)
    throw Error(ErrorCode::invalid_spec, std::string(what) + " " + std::to_string(c) +
                                             " is outside [0, " + std::to_string(num_classes) +
                                             ")");
}

}  // namespace

LabeledDataset::LabeledDataset(Eigen::MatrixXd features, std::vector<int> labels, int num_classes,
                               std::string split_name, std::vector<ExampleId> ids,
                               std::vector<int> original_labels)
    : features_(std::move(features)), labels_(std::move(labels)),
      original_labels_(std::move(original_labels)), ids_(std::move(ids)),
      num_classes_(num_classes), split_name_(std::move(split_name)) {
  if (static_cast<std::size_t>(features_.rows()) != labels_.size())
    throw Error(ErrorCode::dimension_mismatch, "feature rows and label count disagree");
  if (num_classes_ < 2)
    throw Error(ErrorCode::invalid_spec, "dataset needs at least 2 classes, got " +
                                             std::to_string(num_classes_));
  for (int y : labels_)
    if (y < 0 || y >= num_classes_)
      throw Error(ErrorCode::invalid_spec,
                  "label " + std::to_string(y) + " is outside [0, " +
                      std::to_string(num_classes_) + ")");
  if (original_labels_.empty())
    original_labels_ = labels_;
  else if (original_labels_.size() != labels_.size())
    throw Error(ErrorCode::dimension_mismatch, "original label count disagrees with labels");
  if (ids_.empty()) {
    ids_.reserve(labels_.size());
    for (std::size_t i = 0; i < labels_.size(); ++i)
      ids_.push_back({0, static_cast<std::uint32_t>(i)});
  } else if (ids_.size() != labels_.size()) {
    throw Error(ErrorCode::dimension_mismatch, "example id count disagrees with labels");
  }
}

LabeledDataset LabeledDataset::subset(const std::vector<int>& rows,
                                      std::string split_name) const {
  Eigen::MatrixXd f(static_cast<Eigen::Index>(rows.size()), features_.cols());
  std::vector<int> y, oy;
  std::vector<ExampleId> ids;
  y.reserve(rows.size());
  oy.reserve(rows.size());
  ids.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const int r = rows[i];
    if (r < 0 || r >= size())
      throw Error(ErrorCode::invalid_argument, "subset row " + std::to_string(r) +
                                                   " is outside the dataset");
    f.row(static_cast<Eigen::Index>(i)) = features_.row(r);
    y.push_back(labels_[static_cast<std::size_t>(r)]);
    oy.push_back(original_labels_[static_cast<std::size_t>(r)]);
    ids.push_back(ids_[static_cast<std::size_t>(r)]);
  }
  return LabeledDataset(std::move(f), std::move(y), num_classes_, std::move(split_name),
                        std::move(ids), std::move(oy));
}

Eigen::MatrixXd LabeledDataset::gather_features(const std::vector<int>& rows) const {
  Eigen::MatrixXd f(static_cast<Eigen::Index>(rows.size()), features_.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    f.row(static_cast<Eigen::Index>(i)) = features_.row(rows[i]);
  return f;
}

std::vector<int> LabeledDataset::gather_labels(const std::vector<int>& rows) const {
  std::vector<int> y;
  y.reserve(rows.size());
  for (int r : rows) y.push_back(labels_[static_cast<std::size_t>(r)]);
  return y;
}

std::vector<int> LabeledDataset::rows_with_label(int label) const {
  std::vector<int> rows;
  for (int i = 0; i < size(); ++i)
    if (labels_[static_cast<std::size_t>(i)] == label) rows.push_back(i);
  return rows;
}

std::vector<int> LabeledDataset::class_counts() const {
  std::vector<int> counts(static_cast<std::size_t>(num_classes_), 0);
  for (int y : labels_) ++counts[static_cast<std::size_t>(y)];
  return counts;
}

DatasetTriplet make_blobs(const BlobsSpec& spec, std::uint64_t seed) {
  if (spec.classes < 2)
    throw Error(ErrorCode::invalid_spec, "blobs need at least 2 classes");
  if (spec.dim < 1) throw Error(ErrorCode::invalid_spec, "blobs need a positive dimension");
  if (spec.train_per_class < 1 || spec.test_per_class < 1 || spec.val_per_class < 0)
    throw Error(ErrorCode::invalid_spec, "blobs per-class counts must be positive "
                                         "(validation may be zero)");
  if (spec.noise < 0.0 || spec.separation < 0.0)
    throw Error(ErrorCode::invalid_spec, "blobs noise and separation must be nonnegative");

  Eigen::MatrixXd means(spec.classes, spec.dim);
  Rng mean_rng(stream_seed(seed, kMeansStream));
  for (int c = 0; c < spec.classes; ++c)
    for (int d = 0; d < spec.dim; ++d) means(c, d) = spec.separation * mean_rng.normal();

  auto draw_split = [&](int per_class, std::uint32_t split_tag,
                        const std::string& name) -> LabeledDataset {
    const int n = per_class * spec.classes;
    Eigen::MatrixXd f(n, spec.dim);
    std::vector<int> y(static_cast<std::size_t>(n));
    std::vector<ExampleId> ids(static_cast<std::size_t>(n));
    Rng rng(stream_seed(seed, kSplitNoiseStream + split_tag));
    int row = 0;
    for (int c = 0; c < spec.classes; ++c) {
      for (int i = 0; i < per_class; ++i, ++row) {
        for (int d = 0; d < spec.dim; ++d)
          f(row, d) = means(c, d) + spec.noise * rng.normal();
        y[static_cast<std::size_t>(row)] = c;
        ids[static_cast<std::size_t>(row)] = {split_tag, static_cast<std::uint32_t>(row)};
      }
    }
    return LabeledDataset(std::move(f), std::move(y), spec.classes, name, std::move(ids));
  };

  DatasetTriplet out;
  out.train = draw_split(spec.train_per_class, kTrainSplit, "train");
  if (spec.val_per_class > 0)
    out.validation = draw_split(spec.val_per_class, kValidationSplit, "validation");
  out.test = draw_split(spec.test_per_class, kTestSplit, "test");
  return out;
}

DatasetTriplet load_dataset(const DatasetSource& source, std::uint64_t seed) {
  if (source.kind == "blobs") return make_blobs(source.blobs, seed);
  if (source.kind == "archive") return load_dataset_archive(source.path);
  throw Error(ErrorCode::invalid_argument, "unknown dataset kind '" + source.kind + "'");
}

RetainForget split_retain_forget(const LabeledDataset& train, const ForgetSpec& spec,
                                 std::uint64_t seed) {
  if (train.empty()) throw Error(ErrorCode::invalid_argument, "cannot split an empty train set");
  validate_class_index(spec.target_class, train.num_classes(), "forget target class");
  const std::vector<int> candidates = train.rows_with_label(spec.target_class);
  if (candidates.empty())
    throw Error(ErrorCode::invalid_spec, "train set has no examples of class " +
                                             std::to_string(spec.target_class));

  std::vector<int> chosen;
  if (spec.mode == ForgetSpec::Mode::whole_class) {
    chosen = candidates;
  } else {
    if (spec.count < 1)
      throw Error(ErrorCode::invalid_spec, "selective forget count must be positive");
    if (static_cast<std::size_t>(spec.count) > candidates.size())
      throw Error(ErrorCode::invalid_spec,
                  "selective forget count " + std::to_string(spec.count) + " exceeds the " +
                      std::to_string(candidates.size()) + " examples of class " +
                      std::to_string(spec.target_class));
    Rng rng(stream_seed(seed, kForgetStream));
    for (int i : rng.sample_without_replacement(static_cast<int>(candidates.size()), spec.count))
      chosen.push_back(candidates[static_cast<std::size_t>(i)]);
  }

  RetainForget out;
  out.forget = train.subset(chosen, "forget");
  out.retain = train.subset(complement_rows(train.size(), chosen), "retain");
  return out;
}

ConfusionResult inject_confusion(const LabeledDataset& train, const ConfusionSpec& spec,
                                 std::uint64_t seed) {
  if (train.empty()) throw Error(ErrorCode::invalid_argument, "cannot confuse an empty train set");
  validate_class_index(spec.class_a, train.num_classes(), "confusion class");
  validate_class_index(spec.class_b, train.num_classes(), "confusion class");
  if (spec.class_a == spec.class_b)
    throw Error(ErrorCode::invalid_spec, "confusion classes must differ");
  if (spec.count_per_class < 0)
    throw Error(ErrorCode::invalid_spec, "confusion count must be nonnegative");
  const std::vector<int> rows_a = train.rows_with_label(spec.class_a);
  const std::vector<int> rows_b = train.rows_with_label(spec.class_b);
  if (static_cast<std::size_t>(spec.count_per_class) > rows_a.size() ||
      static_cast<std::size_t>(spec.count_per_class) > rows_b.size())
    throw Error(ErrorCode::invalid_spec,
                "confusion count " + std::to_string(spec.count_per_class) +
                    " exceeds a class population (" + std::to_string(rows_a.size()) + " vs " +
                    std::to_string(rows_b.size()) + ")");

  Rng rng(stream_seed(seed, kConfusionStream));
  std::vector<int> flipped;
  std::vector<int> labels = train.labels();
  for (int i : rng.sample_without_replacement(static_cast<int>(rows_a.size()),
                                              spec.count_per_class)) {
    const int r = rows_a[static_cast<std::size_t>(i)];
    labels[static_cast<std::size_t>(r)] = spec.class_b;
    flipped.push_back(r);
  }
  for (int i : rng.sample_without_replacement(static_cast<int>(rows_b.size()),
                                              spec.count_per_class)) {
    const int r = rows_b[static_cast<std::size_t>(i)];
    labels[static_cast<std::size_t>(r)] = spec.class_a;
    flipped.push_back(r);
  }
  std::sort(flipped.begin(), flipped.end());

  ConfusionResult out;
  out.confused_train = LabeledDataset(train.features(), std::move(labels), train.num_classes(),
                                      train.split_name(), train.ids(), train.original_labels());
  out.forget = out.confused_train.subset(flipped, "forget");
  out.retain = out.confused_train.subset(complement_rows(train.size(), flipped), "retain");
  return out;
}

LabeledDataset build_matched_validation(const LabeledDataset& validation,
                                        const LabeledDataset& forget,
                                        const LabeledDataset* retain) {
  if (forget.empty())
    throw Error(ErrorCode::invalid_argument, "cannot match validation to an empty forget set");
  std::set<int> wanted(forget.original_labels().begin(), forget.original_labels().end());

  std::vector<int> rows;
  for (int i = 0; i < validation.size(); ++i)
    if (wanted.count(validation.labels()[static_cast<std::size_t>(i)])) rows.push_back(i);
  if (!rows.empty()) return validation.subset(rows, "matched_validation");

  if (retain && !retain->empty()) {
    // Hold out a deterministic slice of retain: the first fifth (at least one
    // example) of each wanted class, in row order.
    std::vector<int> held;
    for (int c : wanted) {
      const std::vector<int> rows_c = retain->rows_with_label(c);
      const std::size_t take = std::max<std::size_t>(1, (rows_c.size() + 4) / 5);
      for (std::size_t i = 0; i < take && i < rows_c.size(); ++i) held.push_back(rows_c[i]);
    }
    std::sort(held.begin(), held.end());
    if (!held.empty()) return retain->subset(held, "matched_validation");
  }
  throw Error(ErrorCode::empty_result,
              "no validation examples share a class with the forget set");
}

namespace {

void save_split(const std::filesystem::path& file, const LabeledDataset& data,
                const std::string& name) {
  std::ofstream out(file);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + file.string());
  out << "# scrubkit-dataset\tsplit=" << name << "\tclasses=" << data.num_classes()
      << "\tdim=" << data.dim() << "\tcount=" << data.size() << "\n";
  char buf[64];
  for (int i = 0; i < data.size(); ++i) {
    out << data.labels()[static_cast<std::size_t>(i)];
    for (int d = 0; d < data.dim(); ++d) {
      std::snprintf(buf, sizeof(buf), "%.17g", data.features()(i, d));
      out << '\t' << buf;
    }
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::io_error, "failed while writing " + file.string());
}

LabeledDataset load_split(const std::filesystem::path& file, const std::string& name,
                          std::uint32_t split_tag) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::io_error, "cannot read " + file.string());
  std::string header;
  if (!std::getline(in, header) || header.rfind("# scrubkit-dataset", 0) != 0)
    throw Error(ErrorCode::io_error, file.string() + " is not a dataset split file");
  int classes = -1, dim = -1, count = -1;
  {
    std::istringstream hs(header);
    std::string field;
    while (std::getline(hs, field, '\t')) {
      if (field.rfind("classes=", 0) == 0) classes = std::stoi(field.substr(8));
      if (field.rfind("dim=", 0) == 0) dim = std::stoi(field.substr(4));
      if (field.rfind("count=", 0) == 0) count = std::stoi(field.substr(6));
    }
  }
  if (classes < 2 || dim < 1 || count < 0)
    throw Error(ErrorCode::io_error, file.string() + " has a corrupt header");

  Eigen::MatrixXd f(count, dim);
  std::vector<int> y(static_cast<std::size_t>(count));
  std::vector<ExampleId> ids(static_cast<std::size_t>(count));
  std::string line;
  for (int i = 0; i < count; ++i) {
    if (!std::getline(in, line))
      throw Error(ErrorCode::io_error, file.string() + " ends before row " + std::to_string(i));
    std::istringstream ls(line);
    std::string field;
    if (!std::getline(ls, field, '\t'))
      throw Error(ErrorCode::io_error, file.string() + " has an empty row");
    try {
      y[static_cast<std::size_t>(i)] = std::stoi(field);
    } catch (const std::exception&) {
      throw Error(ErrorCode::io_error, file.string() + " has a non-integer label in row " +
                                           std::to_string(i));
    }
    for (int d = 0; d < dim; ++d) {
      if (!std::getline(ls, field, '\t'))
        throw Error(ErrorCode::io_error, file.string() + " row " + std::to_string(i) +
                                             " has too few features");
      char* end = nullptr;
      f(i, d) = std::strtod(field.c_str(), &end);
      if (end == field.c_str())
        throw Error(ErrorCode::io_error, file.string() + " row " + std::to_string(i) +
                                             " has a non-numeric feature");
    }
    ids[static_cast<std::size_t>(i)] = {split_tag, static_cast<std::uint32_t>(i)};
  }
  try {
    return LabeledDataset(std::move(f), std::move(y), classes, name, std::move(ids));
  } catch (const Error& e) {
    throw Error(ErrorCode::io_error, file.string() + ": " + e.what());
  }
}

}  // namespace

void save_dataset_archive(const std::filesystem::path& dir, const DatasetTriplet& data) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::io_error, "cannot create " + dir.string());
  save_split(dir / "train.tsv", data.train, "train");
  if (!data.validation.empty()) save_split(dir / "validation.tsv", data.validation, "validation");
  save_split(dir / "test.tsv", data.test, "test");
}

DatasetTriplet load_dataset_archive(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir))
    throw Error(ErrorCode::io_error, dir.string() + " is not a dataset directory");
  DatasetTriplet out;
  out.train = load_split(dir / "train.tsv", "train", kTrainSplit);
  if (std::filesystem::exists(dir / "validation.tsv"))
    out.validation = load_split(dir / "validation.tsv", "validation", kValidationSplit);
  out.test = load_split(dir / "test.tsv", "test", kTestSplit);
  if (out.train.dim() != out.test.dim() ||
      (!out.validation.empty() && out.validation.dim() != out.train.dim()))
    throw Error(ErrorCode::io_error, dir.string() + " splits disagree on feature dimension");
  if (out.train.num_classes() != out.test.num_classes() ||
      (!out.validation.empty() && out.validation.num_classes() != out.train.num_classes()))
    throw Error(ErrorCode::io_error, dir.string() + " splits disagree on class count");
  return out;
}

}  // namespace scrub
