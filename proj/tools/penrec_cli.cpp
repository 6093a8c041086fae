// penrec: writer-independent letter recognition from a 13-channel sensor pen.
// Subcommands wire the full pipeline: synth -> ingest -> prep -> train -> eval.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "penrec/dataset_io.hpp"
#include "penrec/eval.hpp"
#include "penrec/gradcheck.hpp"
#include "penrec/ingest.hpp"
#include "penrec/model_io.hpp"
#include "penrec/nn.hpp"
#include "penrec/preprocess.hpp"
#include "penrec/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kToolVersion = "penrec 0.1.0";

#ifndef PENREC_DATA_DIR
#define PENREC_DATA_DIR "data"
#endif

std::string default_template_path() {
  return std::string(PENREC_DATA_DIR) + "/letter_templates.json";
}

// Every output directory gets the exact run configuration for provenance;
// contents are deterministic so reruns stay byte-identical.
void write_run_config(const fs::path& dir, const std::string& subcommand,
                      const json& options) {
  json j;
  j["tool"] = kToolVersion;
  j["subcommand"] = subcommand;
  j["options"] = options;
  std::ofstream out(dir / "run_config.json", std::ios::binary);
  out << j.dump(2) << "\n";
}

penrec::CaseSet parse_case_set(const std::string& s) {
  if (s == "upper") return penrec::CaseSet::kUpper;
  if (s == "lower") return penrec::CaseSet::kLower;
  if (s == "both") return penrec::CaseSet::kBoth;
  throw CLI::ValidationError("--case", "must be upper, lower or both");
}

// Case filter for train/eval: datasets are single-case experiments.
penrec::PrepDataset filter_case(penrec::PrepDataset ds, const std::string& case_name) {
  bool has_upper = false, has_lower = false;
  for (const auto& s : ds.samples) {
    (s.letter_case == penrec::LetterCase::kUpper ? has_upper : has_lower) = true;
  }
  if (case_name.empty()) {
    if (has_upper && has_lower) {
      throw std::runtime_error("dataset contains both cases; pass --case upper|lower");
    }
    return ds;
  }
  const auto want = case_name == "upper" ? penrec::LetterCase::kUpper
                                         : penrec::LetterCase::kLower;
  penrec::PrepDataset out;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    if (ds.samples[i].letter_case == want) {
      out.samples.push_back(ds.samples[i]);
      out.ids.push_back(ds.ids[i]);
    }
  }
  for (const auto& m : ds.manifest) {
    if (penrec::label_case(m.label) == want) out.manifest.push_back(m);
  }
  return out;
}

int run_synth(int writers, int reps, const std::string& case_name, std::uint64_t seed,
              const std::string& out_dir, const std::string& templates) {
  const auto tset = penrec::TemplateSet::load(templates);
  penrec::DatasetOptions opts;
  opts.n_writers = writers;
  opts.reps_per_letter = reps;
  opts.cases = parse_case_set(case_name);
  opts.master_seed = seed;
  const auto ds = penrec::generate_dataset(opts, tset, out_dir);
  write_run_config(out_dir, "synth",
                   {{"writers", writers},
                    {"reps", reps},
                    {"case", case_name},
                    {"seed", seed},
                    {"templates", templates}});
  std::cout << "wrote " << ds.n_sessions << " sessions, " << ds.samples.size()
            << " samples to " << out_dir << "\n";
  return 0;
}

int run_ingest(const std::string& stream, const std::string& labels,
               const std::string& writer, bool lenient) {
  penrec::IngestOptions opts;
  opts.lenient = lenient;
  const auto parsed = penrec::parse_stream(stream, opts);
  const auto intervals = penrec::parse_labels(labels);
  const auto split = penrec::split_session(parsed.frames, intervals, writer);
  std::cout << "frames: " << parsed.frames.size() << "\n"
            << "intervals: " << intervals.size() << "\n"
            << "samples: " << split.samples.size() << "\n"
            << "dropped empty intervals: " << split.dropped_empty_intervals << "\n";
  if (lenient) std::cout << "clamped values: " << parsed.clamped_values << "\n";
  return 0;
}

int run_prep(const std::string& in_dir, const std::string& out_dir,
             const penrec::PreprocessConfig& cfg, bool lenient, bool csv) {
  penrec::IngestOptions iopts;
  iopts.lenient = lenient;

  penrec::PrepDataset ds;
  std::map<std::string, int> seq;  // (writer,letter) occurrence counter
  std::size_t rejected = 0;

  std::vector<fs::path> streams;
  for (const auto& e : fs::directory_iterator(in_dir)) {
    const auto name = e.path().filename().string();
    if (name.size() > 11 && name.substr(name.size() - 11) == "_stream.csv") {
      streams.push_back(e.path());
    }
  }
  std::sort(streams.begin(), streams.end());
  if (streams.empty()) {
    throw std::runtime_error("no *_stream.csv session files in " + in_dir);
  }

  for (const auto& stream_path : streams) {
    auto labels_path = stream_path.string();
    labels_path.replace(labels_path.size() - 11, 11, "_labels.csv");
    const auto stem = stream_path.filename().string();
    const std::string writer_id = stem.substr(0, stem.size() - 11);

    const auto parsed = penrec::parse_stream(stream_path, iopts);
    const auto intervals = penrec::parse_labels(labels_path);
    const auto split = penrec::split_session(parsed.frames, intervals, writer_id);

    for (const auto& sample : split.samples) {
      const std::string key = writer_id + sample.label;
      const std::string id = penrec::make_sample_id(writer_id, sample.label, seq[key]++);
      const auto res = penrec::preprocess_pipeline(sample, cfg);
      penrec::PrepSampleMeta meta;
      meta.id = id;
      meta.writer_id = writer_id;
      meta.label = sample.label;
      if (res.accepted()) {
        ds.samples.push_back(*res.tensor);
        ds.ids.push_back(id);
      } else {
        meta.reject = res.rejected;
        ++rejected;
      }
      ds.manifest.push_back(std::move(meta));
    }
  }

  penrec::write_prep_dir(out_dir, ds, /*packed=*/!csv);
  write_run_config(out_dir, "prep",
                   {{"in", in_dir},
                    {"force_threshold", cfg.force_threshold},
                    {"min_len", cfg.min_len},
                    {"max_len", cfg.max_len},
                    {"target_len", cfg.target_len},
                    {"lenient", lenient},
                    {"packed", !csv}});
  std::cout << "accepted: " << ds.samples.size() << "\nrejected: " << rejected << "\n";
  return 0;
}

int run_train(const std::string& data_dir, const std::string& out_path,
              const std::string& case_name, const penrec::ModelConfig& mcfg,
              const penrec::TrainConfig& tcfg) {
  const auto ds = filter_case(penrec::load_prep_dir(data_dir), case_name);
  if (ds.samples.empty()) throw penrec::EmptyDataset("no accepted samples in " + data_dir);

  std::vector<const penrec::TensorSample*> ptrs;
  for (const auto& s : ds.samples) ptrs.push_back(&s);
  auto result = penrec::train<float>(ptrs, mcfg, tcfg);

  penrec::save_checkpoint(result.model, out_path, tcfg.seed, tcfg.epochs);
  std::ofstream hist(out_path + ".history.csv", std::ios::binary);
  hist << "epoch,train_loss,train_acc\n";
  char buf[64];
  for (std::size_t e = 0; e < result.history.train_loss.size(); ++e) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g\n", e + 1,
                  result.history.train_loss[e], result.history.train_acc[e]);
    hist << buf;
  }
  std::cout << "trained " << tcfg.epochs << " epochs on " << ds.samples.size()
            << " samples; final train acc "
            << result.history.train_acc.back() << "\n";
  return 0;
}

int run_eval(const std::string& data_dir, const std::string& protocol_name,
             const std::string& out_dir, const std::string& case_name,
             const penrec::ModelConfig& mcfg, const penrec::TrainConfig& tcfg) {
  const auto ds = filter_case(penrec::load_prep_dir(data_dir), case_name);
  if (ds.samples.empty()) throw penrec::EmptyDataset("no accepted samples in " + data_dir);
  const auto protocol = protocol_name == "writer-dependent"
                            ? penrec::Protocol::kWriterDependent
                            : penrec::Protocol::kWriterIndependent;
  const auto report = penrec::run_experiment(ds, protocol, mcfg, tcfg);
  penrec::write_report(out_dir, report);
  write_run_config(out_dir, "eval",
                   {{"data", data_dir},
                    {"protocol", protocol_name},
                    {"case", case_name},
                    {"epochs", tcfg.epochs},
                    {"learning_rate", tcfg.learning_rate},
                    {"batch_size", tcfg.batch_size},
                    {"seed", tcfg.seed}});
  std::printf("%s: mean accuracy %.4f +/- %.4f over %d runs\n", protocol_name.c_str(),
              report.mean, report.stddev, penrec::kNumRuns);
  const auto top = penrec::top_confusions(report, 5);
  for (const auto& [t, p, n] : top) {
    const auto lc = ds.samples.front().letter_case;
    std::printf("confusion %c -> %c: %lld\n", penrec::index_to_label(t, lc),
                penrec::index_to_label(p, lc), n);
  }
  return 0;
}

int run_predict(const std::string& model_path, const std::string& data_dir,
                const std::string& case_name, const std::string& out_path) {
  auto model = penrec::load_checkpoint<float>(model_path);
  const auto ds = filter_case(penrec::load_prep_dir(data_dir), case_name);
  if (ds.samples.empty()) throw penrec::EmptyDataset("no accepted samples in " + data_dir);
  std::vector<const penrec::TensorSample*> ptrs;
  for (const auto& s : ds.samples) ptrs.push_back(&s);
  const auto preds = penrec::predict(model, ptrs);

  std::ostream* out = &std::cout;
  std::ofstream file;
  if (!out_path.empty()) {
    file.open(out_path, std::ios::binary);
    out = &file;
  }
  (*out) << "sample_id,true,pred,prob\n";
  int correct = 0;
  char buf[32];
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto lc = ds.samples[i].letter_case;
    std::snprintf(buf, sizeof(buf), "%.6f", preds[i].probs[preds[i].cls]);
    (*out) << ds.ids[i] << ',' << penrec::index_to_label(ds.samples[i].label_idx, lc)
           << ',' << penrec::index_to_label(preds[i].cls, lc) << ',' << buf << "\n";
    if (preds[i].cls == ds.samples[i].label_idx) ++correct;
  }
  std::cerr << "accuracy: " << static_cast<double>(correct) / preds.size() << "\n";
  return 0;
}

int run_gradcheck(std::uint64_t seed, const std::string& templates, bool corrupt) {
  const auto tset = penrec::TemplateSet::load(templates);
  const auto style = penrec::WriterStyle::sample(penrec::derive_seed(seed, 9));
  penrec::PreprocessConfig pcfg;
  std::vector<double> x;
  std::vector<int> labels;
  const int batch = 8;
  for (int i = 0; i < batch; ++i) {
    const char letter = penrec::index_to_label((i * 3) % 26, penrec::LetterCase::kUpper);
    const auto raw = penrec::synthesize_sample(tset.letter_template(letter), style,
                                               penrec::derive_seed(seed, 20 + i));
    const auto res = penrec::preprocess_pipeline(raw, pcfg);
    if (!res.accepted()) throw std::runtime_error("gradcheck sample rejected");
    x.insert(x.end(), res.tensor->x.begin(), res.tensor->x.end());
    labels.push_back(res.tensor->label_idx);
  }
  penrec::ModelConfig mcfg;
  penrec::Model<double> model(mcfg, penrec::derive_seed(seed, 2));
  const auto result = penrec::gradient_check(model, x, batch, labels, 1e-4, 40, corrupt);
  std::printf("gradcheck: max rel err %.3e at %s over %zu probes -> %s\n",
              result.max_rel_err, result.worst_param.c_str(), result.checked,
              result.pass() ? "PASS" : "FAIL");
  return result.pass() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sensor-pen letter recognition pipeline"};
  app.set_version_flag("--version", kToolVersion);
  app.set_config("--config", "", "Flat key=value config file; flags override");
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic pen dataset");
  int s_writers = 1, s_reps = 1;
  std::string s_case = "upper", s_out, s_templates = default_template_path();
  std::uint64_t s_seed = 0;
  synth->add_option("--writers", s_writers, "Number of synthetic writers")
      ->check(CLI::PositiveNumber);
  synth->add_option("--reps", s_reps, "Repetitions per letter")->check(CLI::PositiveNumber);
  synth->add_option("--case", s_case, "upper|lower|both");
  synth->add_option("--seed", s_seed, "Master seed");
  synth->add_option("--out", s_out, "Output session directory")->required();
  synth->add_option("--templates", s_templates, "Letter template JSON");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Parse and split one session");
  std::string i_stream, i_labels, i_writer = "unknown";
  bool i_lenient = false;
  ingest->add_option("--stream", i_stream, "Stream CSV")->required();
  ingest->add_option("--labels", i_labels, "Labels CSV")->required();
  ingest->add_option("--writer", i_writer, "Writer id");
  ingest->add_flag("--lenient", i_lenient, "Clamp out-of-range values instead of failing");

  // prep
  auto* prep = app.add_subcommand("prep", "Preprocess a session directory");
  std::string p_in, p_out;
  penrec::PreprocessConfig pcfg;
  bool p_lenient = false, p_csv = false;
  prep->add_option("--in", p_in, "Session directory from synth")->required();
  prep->add_option("--out", p_out, "Output dataset directory")->required();
  prep->add_option("--force-threshold", pcfg.force_threshold, "Trim threshold, N");
  prep->add_option("--min-len", pcfg.min_len, "Minimum trimmed length");
  prep->add_option("--max-len", pcfg.max_len, "Maximum trimmed length");
  prep->add_option("--target-len", pcfg.target_len, "Resample length");
  prep->add_flag("--lenient", p_lenient, "Clamp out-of-range values instead of failing");
  prep->add_flag("--csv", p_csv, "Per-sample CSVs instead of packed binary");

  // shared model/train options
  penrec::ModelConfig mcfg;
  penrec::TrainConfig tcfg;
  auto add_train_opts = [&](CLI::App* cmd) {
    cmd->add_option("--epochs", tcfg.epochs, "Training epochs")->check(CLI::PositiveNumber);
    cmd->add_option("--lr", tcfg.learning_rate, "Adam learning rate");
    cmd->add_option("--batch-size", tcfg.batch_size, "Mini-batch size");
    cmd->add_option("--seed", tcfg.seed, "Training seed");
    cmd->add_option("--dropout", mcfg.dropout_rate, "Dropout rate, hidden layers 1-2");
  };

  // train
  auto* train_cmd = app.add_subcommand("train", "Train the letter classifier");
  std::string t_data, t_out, t_case;
  train_cmd->add_option("--data", t_data, "Preprocessed dataset directory")->required();
  train_cmd->add_option("--out", t_out, "Checkpoint output path")->required();
  train_cmd->add_option("--case", t_case, "upper|lower (required for mixed datasets)");
  add_train_opts(train_cmd);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Run an evaluation protocol");
  std::string e_data, e_out, e_case, e_protocol = "writer-independent";
  eval_cmd->add_option("--data", e_data, "Preprocessed dataset directory")->required();
  eval_cmd->add_option("--out", e_out, "Report output directory")->required();
  eval_cmd->add_option("--protocol", e_protocol, "writer-dependent|writer-independent")
      ->check(CLI::IsMember({"writer-dependent", "writer-independent"}));
  eval_cmd->add_option("--case", e_case, "upper|lower (required for mixed datasets)");
  add_train_opts(eval_cmd);

  // predict
  auto* predict_cmd = app.add_subcommand("predict", "Classify samples with a checkpoint");
  std::string pr_model, pr_data, pr_case, pr_out;
  predict_cmd->add_option("--model", pr_model, "Checkpoint path")->required();
  predict_cmd->add_option("--data", pr_data, "Preprocessed dataset directory")->required();
  predict_cmd->add_option("--case", pr_case, "upper|lower");
  predict_cmd->add_option("--out", pr_out, "Prediction CSV (default stdout)");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
  std::uint64_t gc_seed = 0;
  std::string gc_templates = default_template_path();
  bool gc_corrupt = false;
  gc->add_option("--seed", gc_seed, "Seed");
  gc->add_option("--templates", gc_templates, "Letter template JSON");
  gc->add_flag("--corrupt-gradient", gc_corrupt,
               "Test hook: corrupt one gradient entry (must fail)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;  // usage/config errors exit 2
  }

  try {
    if (*synth) return run_synth(s_writers, s_reps, s_case, s_seed, s_out, s_templates);
    if (*ingest) return run_ingest(i_stream, i_labels, i_writer, i_lenient);
    if (*prep) return run_prep(p_in, p_out, pcfg, p_lenient, p_csv);
    if (*train_cmd) return run_train(t_data, t_out, t_case, mcfg, tcfg);
    if (*eval_cmd) return run_eval(e_data, e_protocol, e_out, e_case, mcfg, tcfg);
    if (*predict_cmd) return run_predict(pr_model, pr_data, pr_case, pr_out);
    if (*gc) return run_gradcheck(gc_seed, gc_templates, gc_corrupt);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
