#include "penrec/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "penrec/rng.hpp"

namespace penrec {

const char* to_string(Protocol p) {
  return p == Protocol::kWriterDependent ? "writer_dependent" : "writer_independent";
}

std::vector<SplitManifest> split_writer_dependent(const PrepDataset& ds,
                                                  std::uint64_t seed) {
  const int n = static_cast<int>(ds.samples.size());
  if (n < kNumRuns) {
    throw TooFewSamples("writer-dependent split needs >= " + std::to_string(kNumRuns) +
                        " samples, got " + std::to_string(n));
  }
  std::vector<int> perm(ds.samples.size());
  for (int i = 0; i < n; ++i) perm[i] = i;
  Rng rng(derive_seed(seed, 0));
  rng.shuffle(perm);

  std::vector<SplitManifest> manifests;
  for (int run = 0; run < kNumRuns; ++run) {
    const int lo = static_cast<int>(static_cast<long long>(run) * n / kNumRuns);
    const int hi = static_cast<int>(static_cast<long long>(run + 1) * n / kNumRuns);
    SplitManifest m;
    m.run_index = run;
    m.protocol = Protocol::kWriterDependent;
    m.seed = seed;
    for (int i = 0; i < n; ++i) {
      auto& dst = (i >= lo && i < hi) ? m.test_ids : m.train_ids;
      dst.push_back(ds.ids[static_cast<std::size_t>(perm[i])]);
    }
    manifests.push_back(std::move(m));
  }
  return manifests;
}

std::vector<SplitManifest> split_writer_independent(const PrepDataset& ds,
                                                    std::uint64_t seed,
                                                    double test_fraction) {
  std::vector<std::string> writers;
  for (const auto& s : ds.samples) {
    if (std::find(writers.begin(), writers.end(), s.writer_id) == writers.end()) {
      writers.push_back(s.writer_id);
    }
  }
  std::sort(writers.begin(), writers.end());
  const int w = static_cast<int>(writers.size());
  if (w < kNumRuns) {
    throw TooFewWriters("writer-independent split needs >= " + std::to_string(kNumRuns) +
                        " writers, got " + std::to_string(w));
  }
  const int n_test = std::max(1, static_cast<int>(std::ceil(test_fraction * w)));
  if (n_test >= w) throw TooFewWriters("test fraction leaves no training writers");

  std::vector<SplitManifest> manifests;
  for (int run = 0; run < kNumRuns; ++run) {
    // independent writer draw per run
    std::vector<std::string> pool = writers;
    Rng rng(derive_seed(seed, 100 + static_cast<std::uint64_t>(run)));
    rng.shuffle(pool);
    std::set<std::string> test_writers(pool.begin(), pool.begin() + n_test);

    SplitManifest m;
    m.run_index = run;
    m.protocol = Protocol::kWriterIndependent;
    m.seed = seed;
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
      auto& dst = test_writers.count(ds.samples[i].writer_id) ? m.test_ids : m.train_ids;
      dst.push_back(ds.ids[i]);
    }
    manifests.push_back(std::move(m));
  }
  return manifests;
}

EvalReport run_experiment(const PrepDataset& ds, Protocol protocol,
                          const ModelConfig& mcfg, const TrainConfig& tcfg) {
  const auto manifests = protocol == Protocol::kWriterDependent
                             ? split_writer_dependent(ds, tcfg.seed)
                             : split_writer_independent(ds, tcfg.seed);

  std::map<std::string, const TensorSample*> by_id;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    by_id[ds.ids[i]] = &ds.samples[i];
  }

  EvalReport report;
  report.protocol = protocol;
  report.seed = tcfg.seed;
  report.classes = mcfg.classes;
  report.confusion.assign(mcfg.classes, std::vector<long long>(mcfg.classes, 0));
  report.manifests = manifests;

  for (const auto& m : manifests) {
    std::vector<const TensorSample*> train_set, test_set;
    for (const auto& id : m.train_ids) train_set.push_back(by_id.at(id));
    for (const auto& id : m.test_ids) test_set.push_back(by_id.at(id));

    TrainConfig run_cfg = tcfg;
    run_cfg.seed = derive_seed(tcfg.seed, 1000 + static_cast<std::uint64_t>(m.run_index));
    auto trained = train<float>(train_set, mcfg, run_cfg);
    auto [acc, conf] = evaluate(trained.model, test_set);
    report.run_accuracies.push_back(acc);
    for (int i = 0; i < mcfg.classes; ++i) {
      for (int j = 0; j < mcfg.classes; ++j) report.confusion[i][j] += conf[i][j];
    }
  }

  double sum = 0.0;
  for (double a : report.run_accuracies) sum += a;
  report.mean = sum / report.run_accuracies.size();
  double var = 0.0;
  for (double a : report.run_accuracies) var += (a - report.mean) * (a - report.mean);
  report.stddev = std::sqrt(var / report.run_accuracies.size());
  return report;
}

std::vector<std::tuple<int, int, long long>> top_confusions(const EvalReport& report,
                                                            std::size_t n) {
  std::vector<std::tuple<int, int, long long>> entries;
  for (int i = 0; i < report.classes; ++i) {
    for (int j = 0; j < report.classes; ++j) {
      if (i != j && report.confusion[i][j] > 0) {
        entries.emplace_back(i, j, report.confusion[i][j]);
      }
    }
  }
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (std::get<2>(a) != std::get<2>(b)) return std::get<2>(a) > std::get<2>(b);
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) < std::get<0>(b);
    return std::get<1>(a) < std::get<1>(b);
  });
  if (entries.size() > n) entries.resize(n);
  return entries;
}

void write_report(const std::filesystem::path& dir, const EvalReport& report) {
  std::filesystem::create_directories(dir);

  nlohmann::json j;
  j["protocol"] = to_string(report.protocol);
  j["seed"] = report.seed;
  j["runs"] = report.run_accuracies.size();
  j["run_accuracies"] = report.run_accuracies;
  j["mean_accuracy"] = report.mean;
  j["std_accuracy"] = report.stddev;
  j["std_kind"] = "population";
  // results reported on the original 114-writer pen dataset, for context only
  j["reference_results"] = {
      {"writer_independent_upper", {{"mean", 0.8697}, {"std", 0.0119}}},
      {"writer_independent_lower", {{"mean", 0.8113}, {"std", 0.0252}}},
      {"writer_dependent_upper", {{"mean", 0.9104}, {"std", 0.0034}}},
      {"writer_dependent_lower", {{"mean", 0.8627}, {"std", 0.0075}}}};
  std::ofstream out(dir / "report.json", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write report in " + dir.string());
  out << j.dump(2) << "\n";

  for (const auto& m : report.manifests) {
    std::ofstream mf(dir / ("manifest_run" + std::to_string(m.run_index) + ".csv"),
                     std::ios::binary);
    mf << "sample_id,split\n";
    for (const auto& id : m.train_ids) mf << id << ",train\n";
    for (const auto& id : m.test_ids) mf << id << ",test\n";
  }

  std::ofstream cf(dir / "confusion.csv", std::ios::binary);
  for (int i = 0; i < report.classes; ++i) {
    for (int j2 = 0; j2 < report.classes; ++j2) {
      cf << (j2 ? "," : "") << report.confusion[i][j2];
    }
    cf << "\n";
  }
}

}  // namespace penrec
