#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "penrec/dataset_io.hpp"
#include "penrec/eval.hpp"

#include "helpers.hpp"

using namespace penrec;
using penrec::testing::TempDir;

namespace {

// tiny network so run_experiment is cheap inside a unit test
ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.input_len = 12;
  cfg.input_channels = 3;
  cfg.conv_filters = 4;
  cfg.kernel_size = 3;
  cfg.dense_hidden = 6;
  cfg.classes = 4;
  cfg.dropout_rate = 0.2;
  return cfg;
}

PrepDataset fake_dataset(int n_writers, int per_writer, const ModelConfig& cfg,
                         std::uint64_t seed) {
  PrepDataset ds;
  Rng rng(seed);
  for (int w = 0; w < n_writers; ++w) {
    char buf[8];
    std::snprintf(buf, sizeof(buf), "w%03d", w);
    for (int i = 0; i < per_writer; ++i) {
      TensorSample s;
      s.rows = cfg.input_len;
      s.label_idx = i % cfg.classes;
      s.writer_id = buf;
      s.x.resize(static_cast<std::size_t>(cfg.input_len) * cfg.input_channels);
      // class-dependent mean makes the toy problem learnable
      for (auto& v : s.x) v = 0.4 * s.label_idx + 0.1 * rng.normal();
      ds.samples.push_back(std::move(s));
      ds.ids.push_back(make_sample_id(buf, static_cast<char>('A' + (i % cfg.classes)), i));
    }
  }
  return ds;
}

}  // namespace

TEST_CASE("writer-dependent split: 5 folds, 80/20, exact partition") {
  const auto cfg = tiny_config();
  const auto ds = fake_dataset(5, 20, cfg, 1);  // 100 samples
  const auto manifests = split_writer_dependent(ds, 7);
  REQUIRE(manifests.size() == 5);

  std::set<std::string> all_test;
  for (const auto& m : manifests) {
    CHECK(m.test_ids.size() == 20);
    CHECK(m.train_ids.size() == 80);
    // partition per run: every id exactly once
    std::set<std::string> seen(m.train_ids.begin(), m.train_ids.end());
    seen.insert(m.test_ids.begin(), m.test_ids.end());
    CHECK(seen.size() == 100);
    for (const auto& id : m.test_ids) {
      CHECK(all_test.insert(id).second);  // folds are disjoint across runs
    }
  }
  CHECK(all_test.size() == 100);  // every sample is tested exactly once

  SUBCASE("deterministic in the seed") {
    const auto again = split_writer_dependent(ds, 7);
    for (int r = 0; r < 5; ++r) {
      CHECK(again[r].train_ids == manifests[r].train_ids);
      CHECK(again[r].test_ids == manifests[r].test_ids);
    }
    const auto other = split_writer_dependent(ds, 8);
    CHECK(other[0].test_ids != manifests[0].test_ids);
  }
  SUBCASE("uneven sizes still partition") {
    const auto ds2 = fake_dataset(1, 103, cfg, 2);
    const auto m2 = split_writer_dependent(ds2, 3);
    std::size_t total_test = 0;
    for (const auto& m : m2) {
      CHECK(m.train_ids.size() + m.test_ids.size() == 103);
      total_test += m.test_ids.size();
      CHECK(m.test_ids.size() >= 20);
      CHECK(m.test_ids.size() <= 21);
    }
    CHECK(total_test == 103);
  }
  SUBCASE("too few samples throws") {
    const auto ds3 = fake_dataset(1, 4, cfg, 3);
    CHECK_THROWS_AS(split_writer_dependent(ds3, 1), TooFewSamples);
  }
}

TEST_CASE("writer-independent split: writers never straddle the boundary") {
  const auto cfg = tiny_config();
  const auto ds = fake_dataset(38, 8, cfg, 4);
  const auto manifests = split_writer_independent(ds, 11);
  REQUIRE(manifests.size() == 5);

  // map id -> writer for checking
  std::map<std::string, std::string> writer_of;
  for (std::size_t i = 0; i < ds.ids.size(); ++i) writer_of[ds.ids[i]] = ds.samples[i].writer_id;

  for (const auto& m : manifests) {
    std::set<std::string> train_w, test_w;
    for (const auto& id : m.train_ids) train_w.insert(writer_of.at(id));
    for (const auto& id : m.test_ids) test_w.insert(writer_of.at(id));
    for (const auto& w : test_w) CHECK(train_w.count(w) == 0);
    // ceil(24/114 * 38) = ceil(8.0) = 8 test writers
    CHECK(test_w.size() == 8);
    CHECK(train_w.size() == 30);
    CHECK(m.train_ids.size() + m.test_ids.size() == ds.ids.size());
    CHECK(m.test_ids.size() == 8u * 8u);
  }

  SUBCASE("runs draw writers independently, not as disjoint folds") {
    std::set<std::string> first_run_test;
    for (const auto& id : manifests[0].test_ids) first_run_test.insert(writer_of.at(id));
    bool any_reuse = false;
    for (int r = 1; r < 5 && !any_reuse; ++r) {
      for (const auto& id : manifests[r].test_ids) {
        if (first_run_test.count(writer_of.at(id))) {
          any_reuse = true;
          break;
        }
      }
    }
    // with 8 of 38 writers drawn 5 times, overlap is overwhelmingly likely;
    // its absence would indicate fold-style partitioning
    CHECK(any_reuse);
  }
  SUBCASE("deterministic in the seed") {
    const auto again = split_writer_independent(ds, 11);
    CHECK(again[2].test_ids == manifests[2].test_ids);
  }
  SUBCASE("too few writers throws") {
    const auto ds2 = fake_dataset(4, 10, cfg, 5);
    CHECK_THROWS_AS(split_writer_independent(ds2, 1), TooFewWriters);
  }
  SUBCASE("fraction close to one leaves no training writers") {
    CHECK_THROWS_AS(split_writer_independent(ds, 1, 0.999), TooFewWriters);
  }
}

TEST_CASE("evaluate: accuracy equals the confusion trace over the total") {
  const auto cfg = tiny_config();
  Model<float> model(cfg, 13);
  auto ds = fake_dataset(3, 16, cfg, 6);
  std::vector<const TensorSample*> test;
  for (const auto& s : ds.samples) test.push_back(&s);

  const auto [acc, conf] = evaluate(model, test);
  long long trace = 0, total = 0;
  for (int i = 0; i < cfg.classes; ++i) {
    for (int j = 0; j < cfg.classes; ++j) {
      total += conf[i][j];
      if (i == j) trace += conf[i][j];
    }
  }
  CHECK(total == static_cast<long long>(test.size()));
  CHECK(acc == doctest::Approx(static_cast<double>(trace) / total).epsilon(1e-12));

  SUBCASE("row sums equal the per-class sample counts") {
    for (int i = 0; i < cfg.classes; ++i) {
      long long row = 0;
      for (int j = 0; j < cfg.classes; ++j) row += conf[i][j];
      long long expect = 0;
      for (const auto* s : test) {
        if (s->label_idx == i) ++expect;
      }
      CHECK(row == expect);
    }
  }
  SUBCASE("accuracy is invariant to test-set permutation") {
    auto shuffled = test;
    Rng rng(14);
    rng.shuffle(shuffled);
    const auto [acc2, conf2] = evaluate(model, shuffled);
    CHECK(acc2 == doctest::Approx(acc).epsilon(1e-12));
    CHECK(conf2 == conf);
  }
  SUBCASE("empty test set throws") {
    std::vector<const TensorSample*> none;
    CHECK_THROWS_AS(evaluate(model, none), EmptyTestSet);
  }
}

TEST_CASE("top_confusions ordering contract") {
  EvalReport r;
  r.classes = 26;
  r.confusion.assign(26, std::vector<long long>(26, 0));
  const int P = label_index('P'), D = label_index('D');
  const int X = label_index('X'), Y = label_index('Y');
  r.confusion[X][Y] = 5;
  r.confusion[P][D] = 3;
  r.confusion[D][P] = 3;
  r.confusion[X][X] = 99;  // diagonal is ignored

  const auto top = top_confusions(r, 10);
  REQUIRE(top.size() == 3);
  CHECK(top[0] == std::make_tuple(X, Y, 5LL));
  // ties broken by (true, pred) lexicographic order: D < P
  CHECK(top[1] == std::make_tuple(D, P, 3LL));
  CHECK(top[2] == std::make_tuple(P, D, 3LL));

  SUBCASE("n truncates") {
    CHECK(top_confusions(r, 1).size() == 1);
  }
}

TEST_CASE("run_experiment aggregates correctly on a learnable toy problem") {
  const auto cfg = tiny_config();
  auto ds = fake_dataset(6, 12, cfg, 9);
  TrainConfig tc;
  tc.epochs = 8;
  tc.batch_size = 16;
  tc.seed = 3;
  tc.learning_rate = 0.01;

  const auto report = run_experiment(ds, Protocol::kWriterIndependent, cfg, tc);
  REQUIRE(report.run_accuracies.size() == 5);
  CHECK(report.manifests.size() == 5);
  CHECK(report.protocol == Protocol::kWriterIndependent);

  // mean / population-std identities against the per-run accuracies
  double mean = 0;
  for (double a : report.run_accuracies) mean += a;
  mean /= 5;
  double var = 0;
  for (double a : report.run_accuracies) var += (a - mean) * (a - mean);
  const double stddev = std::sqrt(var / 5);
  CHECK(report.mean == doctest::Approx(mean).epsilon(1e-12));
  CHECK(report.stddev == doctest::Approx(stddev).epsilon(1e-12));

  // confusion totals match the test-set sizes summed over runs
  long long total = 0;
  for (const auto& row : report.confusion) {
    for (long long v : row) total += v;
  }
  std::size_t expected = 0;
  for (const auto& m : report.manifests) expected += m.test_ids.size();
  CHECK(total == static_cast<long long>(expected));

  // the class-separable toy data should be learned well above chance (0.25)
  CHECK(report.mean > 0.5);

  SUBCASE("bit-identical on a rerun") {
    const auto again = run_experiment(ds, Protocol::kWriterIndependent, cfg, tc);
    CHECK(again.run_accuracies == report.run_accuracies);
    CHECK(again.confusion == report.confusion);
  }
  SUBCASE("write_report emits the documented artifacts") {
    TempDir dir("report");
    write_report(dir.path, report);
    CHECK(std::filesystem::exists(dir.path / "report.json"));
    CHECK(std::filesystem::exists(dir.path / "confusion.csv"));
    for (int r2 = 0; r2 < 5; ++r2) {
      CHECK(std::filesystem::exists(dir.path /
                                    ("manifest_run" + std::to_string(r2) + ".csv")));
    }
  }
}
