#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <utility>
#include <vector>

#include "doctest.h"
#include "scrubkit/dataset.hpp"
#include "scrubkit/error.hpp"

using namespace scrub;
namespace fs = std::filesystem;

namespace {

BlobsSpec small_spec(int classes = 5, int train = 100, int val = 25, int test = 100) {
  BlobsSpec spec;
  spec.classes = classes;
  spec.dim = 8;
  spec.train_per_class = train;
  spec.val_per_class = val;
  spec.test_per_class = test;
  spec.separation = 2.0;
  spec.noise = 0.5;
  return spec;
}

std::multiset<std::pair<std::uint32_t, std::uint32_t>> id_set(const LabeledDataset& d) {
  std::multiset<std::pair<std::uint32_t, std::uint32_t>> s;
  for (const ExampleId& id : d.ids()) s.insert({id.split, id.index});
  return s;
}

}  // namespace

TEST_CASE("blobs: split sizes follow the per-class spec") {
  const DatasetTriplet data = make_blobs(small_spec(), 0);
  CHECK(data.train.size() == 500);
  CHECK(data.validation.size() == 125);
  CHECK(data.test.size() == 500);
  CHECK(data.train.dim() == 8);
  CHECK(data.train.class_counts() == std::vector<int>{100, 100, 100, 100, 100});
}

TEST_CASE("blobs: identical seed gives byte-identical splits") {
  const DatasetTriplet a = make_blobs(small_spec(), 0);
  const DatasetTriplet b = make_blobs(small_spec(), 0);
  CHECK(a.train.features() == b.train.features());
  CHECK(a.train.labels() == b.train.labels());
  CHECK(a.validation.features() == b.validation.features());
  CHECK(a.test.features() == b.test.features());
}

TEST_CASE("blobs: different seeds give different data") {
  const DatasetTriplet a = make_blobs(small_spec(), 0);
  const DatasetTriplet b = make_blobs(small_spec(), 1);
  CHECK(a.train.features() != b.train.features());
}

TEST_CASE("blobs: tiny two-class instance") {
  const DatasetTriplet data = make_blobs(small_spec(2, 10, 2, 10), 1);
  CHECK(data.train.size() == 20);
  CHECK(data.validation.size() == 4);
  CHECK(data.test.size() == 20);
  for (int y : data.train.labels()) CHECK((y == 0 || y == 1));
}

TEST_CASE("blobs: zero validation rows allowed") {
  const DatasetTriplet data = make_blobs(small_spec(3, 5, 0, 5), 2);
  CHECK(data.validation.empty());
  CHECK(data.train.size() == 15);
}

TEST_CASE("blobs: invalid specs are rejected") {
  BlobsSpec bad = small_spec();
  bad.classes = 1;
  CHECK_THROWS_AS(make_blobs(bad, 0), Error);
  bad = small_spec();
  bad.dim = 0;
  CHECK_THROWS_AS(make_blobs(bad, 0), Error);
  bad = small_spec();
  bad.train_per_class = 0;
  CHECK_THROWS_AS(make_blobs(bad, 0), Error);
}

TEST_CASE("split: class mode takes every example of the target class") {
  const DatasetTriplet data = make_blobs(small_spec(), 3);
  ForgetSpec spec;
  spec.mode = ForgetSpec::Mode::whole_class;
  spec.target_class = 2;
  const RetainForget rf = split_retain_forget(data.train, spec, 3);
  CHECK(rf.forget.size() == 100);
  CHECK(rf.retain.size() == 400);
  for (int y : rf.forget.labels()) CHECK(y == 2);
  for (int y : rf.retain.labels()) CHECK(y != 2);
}

TEST_CASE("split: selective mode takes the requested count") {
  const DatasetTriplet data = make_blobs(small_spec(), 3);
  ForgetSpec spec;
  spec.mode = ForgetSpec::Mode::selective;
  spec.target_class = 1;
  spec.count = 40;
  const RetainForget rf = split_retain_forget(data.train, spec, 3);
  CHECK(rf.forget.size() == 40);
  CHECK(rf.retain.size() == 460);
  for (int y : rf.forget.labels()) CHECK(y == 1);
}

TEST_CASE("split: retain and forget partition the train ids") {
  const DatasetTriplet data = make_blobs(small_spec(4, 20, 5, 20), 9);
  ForgetSpec spec;
  spec.mode = ForgetSpec::Mode::selective;
  spec.target_class = 0;
  spec.count = 7;
  const RetainForget rf = split_retain_forget(data.train, spec, 9);

  auto all = id_set(rf.retain);
  for (const auto& id : id_set(rf.forget)) {
    CHECK(all.count(id) == 0);  // disjoint
    all.insert(id);
  }
  CHECK(all == id_set(data.train));
}

TEST_CASE("split: selective over the whole class equals class mode as a set") {
  const DatasetTriplet data = make_blobs(small_spec(), 5);
  ForgetSpec by_class;
  by_class.mode = ForgetSpec::Mode::whole_class;
  by_class.target_class = 4;
  ForgetSpec by_count;
  by_count.mode = ForgetSpec::Mode::selective;
  by_count.target_class = 4;
  by_count.count = 100;
  const RetainForget a = split_retain_forget(data.train, by_class, 5);
  const RetainForget b = split_retain_forget(data.train, by_count, 5);
  CHECK(id_set(a.forget) == id_set(b.forget));
  CHECK(id_set(a.retain) == id_set(b.retain));
}

TEST_CASE("split: invalid class or count rejected") {
  const DatasetTriplet data = make_blobs(small_spec(3, 10, 2, 10), 0);
  ForgetSpec spec;
  spec.target_class = 3;  // out of range
  CHECK_THROWS_AS(split_retain_forget(data.train, spec, 0), Error);
  spec.target_class = 0;
  spec.mode = ForgetSpec::Mode::selective;
  spec.count = 11;  // more than the class has
  CHECK_THROWS_AS(split_retain_forget(data.train, spec, 0), Error);
  spec.count = 0;
  CHECK_THROWS_AS(split_retain_forget(data.train, spec, 0), Error);
}

TEST_CASE("confusion: 50 per class means 100 mislabeled forget examples") {
  const DatasetTriplet data = make_blobs(small_spec(), 11);
  ConfusionSpec spec;
  spec.class_a = 0;
  spec.class_b = 1;
  spec.count_per_class = 50;
  const ConfusionResult result = inject_confusion(data.train, spec, 11);
  CHECK(result.forget.size() == 100);
  CHECK(result.confused_train.size() == data.train.size());
  CHECK(result.retain.size() == 400);

  // Every forget example carries a corrupted label that differs from its
  // original one.
  for (int i = 0; i < result.forget.size(); ++i)
    CHECK(result.forget.labels()[static_cast<std::size_t>(i)] !=
          result.forget.original_labels()[static_cast<std::size_t>(i)]);
}

TEST_CASE("confusion: zero count leaves the train set untouched") {
  const DatasetTriplet data = make_blobs(small_spec(3, 10, 2, 10), 0);
  ConfusionSpec spec;
  spec.class_a = 0;
  spec.class_b = 1;
  spec.count_per_class = 0;
  const ConfusionResult result = inject_confusion(data.train, spec, 0);
  CHECK(result.forget.empty());
  CHECK(result.confused_train.labels() == data.train.labels());
  CHECK(result.confused_train.features() == data.train.features());
}

TEST_CASE("confusion: exactly count flips in each direction") {
  const DatasetTriplet data = make_blobs(small_spec(), 13);
  ConfusionSpec spec;
  spec.class_a = 2;
  spec.class_b = 4;
  spec.count_per_class = 17;
  const ConfusionResult result = inject_confusion(data.train, spec, 13);

  long a_to_b = 0, b_to_a = 0, other = 0;
  const LabeledDataset& mixed = result.confused_train;
  for (int i = 0; i < mixed.size(); ++i) {
    const int was = data.train.labels()[static_cast<std::size_t>(i)];
    const int now = mixed.labels()[static_cast<std::size_t>(i)];
    if (was == now) continue;
    if (was == 2 && now == 4)
      ++a_to_b;
    else if (was == 4 && now == 2)
      ++b_to_a;
    else
      ++other;
  }
  CHECK(a_to_b == 17);
  CHECK(b_to_a == 17);
  CHECK(other == 0);
  CHECK(mixed.original_labels() == data.train.labels());
}

TEST_CASE("confusion: invalid specs rejected") {
  const DatasetTriplet data = make_blobs(small_spec(3, 10, 2, 10), 0);
  ConfusionSpec spec;
  spec.class_a = 1;
  spec.class_b = 1;
  spec.count_per_class = 2;
  CHECK_THROWS_AS(inject_confusion(data.train, spec, 0), Error);
  spec.class_b = 0;
  spec.count_per_class = 11;
  CHECK_THROWS_AS(inject_confusion(data.train, spec, 0), Error);
}

TEST_CASE("matched validation: class forgetting keeps only that class") {
  const DatasetTriplet data = make_blobs(small_spec(), 17);
  ForgetSpec spec;
  spec.mode = ForgetSpec::Mode::whole_class;
  spec.target_class = 0;
  const RetainForget rf = split_retain_forget(data.train, spec, 17);
  const LabeledDataset matched = build_matched_validation(data.validation, rf.forget);
  CHECK(matched.size() == 25);
  for (int y : matched.labels()) CHECK(y == 0);
}

TEST_CASE("matched validation: forget spanning all classes keeps everything") {
  const DatasetTriplet data = make_blobs(small_spec(3, 10, 4, 10), 19);
  // Forget = the whole train set; its label set covers every class.
  const LabeledDataset matched = build_matched_validation(data.validation, data.train);
  CHECK(matched.size() == data.validation.size());
  CHECK(matched.labels() == data.validation.labels());
}

TEST_CASE("matched validation: two-class forget keeps those classes' rows") {
  const DatasetTriplet data = make_blobs(small_spec(4, 10, 6, 10), 23);
  std::vector<int> rows;
  for (int i = 0; i < data.train.size(); ++i) {
    const int y = data.train.labels()[static_cast<std::size_t>(i)];
    if (y == 1 || y == 3) rows.push_back(i);
  }
  const LabeledDataset forget = data.train.subset(rows, "forget");
  const LabeledDataset matched = build_matched_validation(data.validation, forget);

  long want = 0;
  for (int y : data.validation.labels())
    if (y == 1 || y == 3) ++want;
  CHECK(matched.size() == want);
  for (int y : matched.labels()) CHECK((y == 1 || y == 3));
}

TEST_CASE("matched validation: falls back to held-out retain rows") {
  const DatasetTriplet data = make_blobs(small_spec(3, 10, 0, 10), 29);
  ForgetSpec spec;
  spec.mode = ForgetSpec::Mode::selective;
  spec.target_class = 1;
  spec.count = 4;
  const RetainForget rf = split_retain_forget(data.train, spec, 29);

  CHECK_THROWS_AS(build_matched_validation(data.validation, rf.forget), Error);
  const LabeledDataset matched = build_matched_validation(data.validation, rf.forget, &rf.retain);
  CHECK(matched.size() >= 1);
  for (int y : matched.labels()) CHECK(y == 1);
}

TEST_CASE("matched validation: uses original labels of a confused forget set") {
  const DatasetTriplet data = make_blobs(small_spec(), 31);
  ConfusionSpec spec;
  spec.class_a = 0;
  spec.class_b = 1;
  spec.count_per_class = 10;
  const ConfusionResult result = inject_confusion(data.train, spec, 31);
  const LabeledDataset matched = build_matched_validation(data.validation, result.forget);
  // Original labels of the forget set are {0, 1}; matched keeps 25 + 25 rows.
  CHECK(matched.size() == 50);
  for (int y : matched.labels()) CHECK((y == 0 || y == 1));
}

TEST_CASE("archive: save and load round-trips exactly") {
  const DatasetTriplet data = make_blobs(small_spec(3, 7, 2, 5), 37);
  const fs::path dir = fs::temp_directory_path() / "scrubkit_test_archive";
  fs::remove_all(dir);
  save_dataset_archive(dir, data);
  const DatasetTriplet loaded = load_dataset_archive(dir);
  CHECK(loaded.train.features() == data.train.features());
  CHECK(loaded.train.labels() == data.train.labels());
  CHECK(loaded.validation.features() == data.validation.features());
  CHECK(loaded.test.labels() == data.test.labels());
  CHECK(loaded.train.num_classes() == 3);
  fs::remove_all(dir);
}

TEST_CASE("archive: loader reports missing and corrupt inputs") {
  CHECK_THROWS_AS(load_dataset_archive("/nonexistent/scrubkit/archive"), Error);

  const fs::path dir = fs::temp_directory_path() / "scrubkit_test_bad_archive";
  fs::remove_all(dir);
  const DatasetTriplet data = make_blobs(small_spec(2, 3, 1, 2), 0);
  save_dataset_archive(dir, data);
  // Corrupt one split.
  {
    std::ofstream out(dir / "train.tsv");
    out << "not a header\n";
  }
  CHECK_THROWS_AS(load_dataset_archive(dir), Error);
  fs::remove_all(dir);
}

TEST_CASE("dataset: constructor validates shape and labels") {
  Eigen::MatrixXd x(2, 3);
  x.setZero();
  CHECK_THROWS_AS(LabeledDataset(x, {0}, 2, "t"), Error);
  CHECK_THROWS_AS(LabeledDataset(x, {0, 2}, 2, "t"), Error);
  CHECK_THROWS_AS(LabeledDataset(x, {0, 1}, 1, "t"), Error);
  CHECK_NOTHROW(LabeledDataset(x, {0, 1}, 2, "t"));
}
