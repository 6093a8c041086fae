#include <doctest.h>

#include <cmath>

#include "penrec/dataset_io.hpp"
#include "penrec/model_io.hpp"
#include "penrec/nn.hpp"

#include "helpers.hpp"

using namespace penrec;
using penrec::testing::TempDir;

namespace {

PrepDataset sample_dataset(std::uint64_t seed, int n) {
  PrepDataset ds;
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    TensorSample s;
    s.rows = 50;
    const char label = static_cast<char>('A' + i % 26);
    s.label_idx = label_index(label);
    s.writer_id = "w00" + std::to_string(i % 3);
    s.letter_case = LetterCase::kUpper;
    s.x.resize(static_cast<std::size_t>(50) * 13);
    for (auto& v : s.x) v = rng.normal();
    const std::string id = make_sample_id(s.writer_id, label, i);
    PrepSampleMeta m;
    m.id = id;
    m.writer_id = s.writer_id;
    m.label = label;
    ds.manifest.push_back(m);
    ds.ids.push_back(id);
    ds.samples.push_back(std::move(s));
  }
  // one rejected row with no tensor on disk
  PrepSampleMeta rej;
  rej.id = make_sample_id("w002", 'q', 999);
  rej.writer_id = "w002";
  rej.label = 'q';
  rej.reject = RejectReason::kTooShort;
  ds.manifest.push_back(rej);
  return ds;
}

void check_roundtrip(const PrepDataset& a, const PrepDataset& b, double tol) {
  REQUIRE(b.samples.size() == a.samples.size());
  REQUIRE(b.ids == a.ids);
  REQUIRE(b.manifest.size() == a.manifest.size());
  CHECK(b.manifest.back().reject == RejectReason::kTooShort);
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(b.samples[i].label_idx == a.samples[i].label_idx);
    CHECK(b.samples[i].writer_id == a.samples[i].writer_id);
    CHECK(b.samples[i].rows == a.samples[i].rows);
    REQUIRE(b.samples[i].x.size() == a.samples[i].x.size());
    for (std::size_t j = 0; j < a.samples[i].x.size(); ++j) {
      CHECK(std::abs(b.samples[i].x[j] - a.samples[i].x[j]) <= tol);
    }
  }
}

}  // namespace

TEST_CASE("make_sample_id formats writer, letter and sequence") {
  CHECK(make_sample_id("w007", 'Q', 3) == "w007_Q_003");
  CHECK(make_sample_id("w123", 'b', 45) == "w123_b_045");
}

TEST_CASE("prep dir round-trips in packed form") {
  TempDir dir("prep_packed");
  const auto ds = sample_dataset(1, 40);
  write_prep_dir(dir.path, ds, /*packed=*/true);
  CHECK(std::filesystem::exists(dir.path / "samples.bin"));
  CHECK(std::filesystem::exists(dir.path / "manifest.csv"));
  const auto back = load_prep_dir(dir.path);
  // float32 storage: exact at float precision
  check_roundtrip(ds, back, 1e-6);
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    for (std::size_t j = 0; j < ds.samples[i].x.size(); ++j) {
      CHECK(back.samples[i].x[j] == static_cast<double>(static_cast<float>(ds.samples[i].x[j])));
    }
  }
}

TEST_CASE("prep dir round-trips in per-sample CSV form") {
  TempDir dir("prep_csv");
  const auto ds = sample_dataset(2, 10);
  write_prep_dir(dir.path, ds, /*packed=*/false);
  CHECK(!std::filesystem::exists(dir.path / "samples.bin"));
  CHECK(std::filesystem::exists(dir.path / (ds.ids[0] + ".csv")));
  const auto back = load_prep_dir(dir.path);
  check_roundtrip(ds, back, 1e-7);  // %.9g text
}

TEST_CASE("load_prep_dir without a manifest throws") {
  TempDir dir("prep_missing");
  CHECK_THROWS(load_prep_dir(dir.path));
}

TEST_CASE("model checkpoints round-trip through disk") {
  TempDir dir("ckpt");
  ModelConfig cfg;
  cfg.input_len = 12;
  cfg.input_channels = 3;
  cfg.conv_filters = 4;
  cfg.kernel_size = 3;
  cfg.dense_hidden = 6;
  cfg.classes = 5;
  Model<float> model(cfg, 17);
  // dirty the running stats and step so the round trip covers them
  Rng rng(18);
  for (auto& v : model.bn2.run_mean) v = static_cast<float>(rng.normal());
  model.set_step(123);

  const auto p = dir.path / "model.ckpt";
  save_checkpoint(model, p, /*seed=*/42, /*epoch=*/7);
  auto back = load_checkpoint<float>(p);

  CHECK(back.config().input_len == cfg.input_len);
  CHECK(back.config().classes == cfg.classes);
  CHECK(back.step() == 123);
  auto a = model.state_arrays();
  auto b = back.state_arrays();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    CHECK(*a[i].second == *b[i].second);  // float in, float out: bit-exact
  }

  SUBCASE("identical predictions after reload") {
    std::vector<float> x(static_cast<std::size_t>(2) * cfg.input_len * cfg.input_channels);
    for (auto& v : x) v = static_cast<float>(rng.normal());
    CHECK(model.forward(x, 2, false) == back.forward(x, 2, false));
  }
  SUBCASE("truncated checkpoint is rejected") {
    const auto bad = dir.path / "short.ckpt";
    std::ifstream in(p, std::ios::binary);
    std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    penrec::testing::write_text(bad, all.substr(0, all.size() / 2));
    CHECK_THROWS(load_checkpoint<float>(bad));
  }
  SUBCASE("non-checkpoint file is rejected") {
    const auto bad = dir.path / "junk.ckpt";
    penrec::testing::write_text(bad, "{\"format\":\"other\"}\n");
    CHECK_THROWS(load_checkpoint<float>(bad));
  }
}
