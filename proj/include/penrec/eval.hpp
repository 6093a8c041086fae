#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <tuple>
#include <vector>

#include "penrec/dataset_io.hpp"
#include "penrec/nn.hpp"

namespace penrec {

struct TooFewSamples : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TooFewWriters : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EmptyTestSet : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Protocol { kWriterDependent, kWriterIndependent };

const char* to_string(Protocol p);

inline constexpr int kNumRuns = 5;
inline constexpr double kDefaultTestWriterFraction = 24.0 / 114.0;

struct SplitManifest {
  int run_index = 0;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
  Protocol protocol = Protocol::kWriterDependent;
  std::uint64_t seed = 0;
};

using Confusion = std::vector<std::vector<long long>>;  // [true][pred]

struct EvalReport {
  Protocol protocol = Protocol::kWriterDependent;
  std::vector<double> run_accuracies;
  double mean = 0.0;
  double stddev = 0.0;  // population std over the runs
  Confusion confusion;  // summed over runs
  std::vector<SplitManifest> manifests;
  std::uint64_t seed = 0;
  int classes = 26;
};

// Random permutation partitioned into 5 near-equal folds; run i tests on
// fold i and trains on the rest.
std::vector<SplitManifest> split_writer_dependent(const PrepDataset& ds,
                                                  std::uint64_t seed);

// Per run, ceil(test_fraction * n_writers) writers are drawn as the test set
// (an independent draw per run); all samples of a writer follow their writer.
std::vector<SplitManifest> split_writer_independent(
    const PrepDataset& ds, std::uint64_t seed,
    double test_fraction = kDefaultTestWriterFraction);

template <typename T>
std::pair<double, Confusion> evaluate(const Model<T>& model,
                                      const std::vector<const TensorSample*>& test) {
  if (test.empty()) throw EmptyTestSet("evaluate called with no test samples");
  const int classes = model.config().classes;
  Confusion conf(classes, std::vector<long long>(classes, 0));
  const auto preds = predict(model, test);
  long long correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    conf[test[i]->label_idx][preds[i].cls] += 1;
    if (preds[i].cls == test[i]->label_idx) ++correct;
  }
  return {static_cast<double>(correct) / static_cast<double>(test.size()), conf};
}

// Trains a fresh model per run from per-run seeds and aggregates the report.
EvalReport run_experiment(const PrepDataset& ds, Protocol protocol,
                          const ModelConfig& mcfg, const TrainConfig& tcfg);

// Off-diagonal confusion counts, descending, ties by (true, pred).
std::vector<std::tuple<int, int, long long>> top_confusions(const EvalReport& report,
                                                            std::size_t n);

// report.json + per-run manifest CSVs + confusion.csv
void write_report(const std::filesystem::path& dir, const EvalReport& report);

}  // namespace penrec
