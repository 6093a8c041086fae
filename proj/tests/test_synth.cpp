#include <doctest.h>

#include <cmath>
#include <set>

#include "penrec/ingest.hpp"
#include "penrec/preprocess.hpp"
#include "penrec/synth.hpp"

#include "helpers.hpp"

using namespace penrec;
using penrec::testing::templates;
using penrec::testing::TempDir;

TEST_CASE("template set covers the full alphabet with sane stroke counts") {
  const auto& set = templates();
  CHECK(set.size() == 52);
  for (char c = 'A'; c <= 'Z'; ++c) {
    const auto& t = set.letter_template(c);
    CHECK(t.letter == c);
    CHECK(t.letter_case == LetterCase::kUpper);
    CHECK(t.strokes.size() >= 1);
    CHECK(t.strokes.size() <= 4);
    for (const auto& s : t.strokes) CHECK(s.size() >= 2);
  }
  for (char c = 'a'; c <= 'z'; ++c) {
    CHECK(set.letter_template(c).letter_case == LetterCase::kLower);
  }
  // spot checks against the authored geometry
  CHECK(set.letter_template('B').strokes.size() == 3);
  CHECK(set.letter_template('l').strokes.size() == 1);
  CHECK(set.letter_template('X').strokes.size() == 2);
  CHECK_THROWS_AS(set.letter_template('1'), UnknownLabel);
}

TEST_CASE("synthesize_sample is deterministic in (style, seed)") {
  const auto& tmpl = templates().letter_template('Q');
  const auto style = WriterStyle::sample(99);
  const auto a = synthesize_sample(tmpl, style, 1234);
  const auto b = synthesize_sample(tmpl, style, 1234);
  REQUIRE(a.frames.size() == b.frames.size());
  for (std::size_t i = 0; i < a.frames.size(); ++i) CHECK(a.frames[i] == b.frames[i]);

  const auto c = synthesize_sample(tmpl, style, 1235);
  bool any_diff = c.frames.size() != a.frames.size();
  for (std::size_t i = 0; !any_diff && i < a.frames.size(); ++i) {
    any_diff = !(a.frames[i] == c.frames[i]);
  }
  CHECK(any_diff);
}

TEST_CASE("synthesized frames are range-valid on a 100 Hz clock") {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const char letter = "AgMqZeKs"[trial % 8];
    const auto style = WriterStyle::sample(rng.next_u64());
    const auto s = synthesize_sample(templates().letter_template(letter), style, rng.next_u64());
    REQUIRE(s.frames.size() >= 2);
    CHECK(s.label == letter);
    for (std::size_t i = 0; i < s.frames.size(); ++i) {
      const auto& f = s.frames[i];
      CHECK(f.t_ms == static_cast<std::int64_t>(i) * 10);
      for (int ch = 0; ch < SensorFrame::kChannels; ++ch) {
        CHECK(f.channel(ch) >= ChannelRanges::lo(ch));
        CHECK(f.channel(ch) <= ChannelRanges::hi(ch));
        // every written value sits on the CSV quantization grid
        CHECK(f.channel(ch) == quantize_channel(f.channel(ch)));
      }
    }
  }
}

TEST_CASE("three-stroke letters show distinct force episodes") {
  const auto style = WriterStyle::sample(7);
  const auto s = synthesize_sample(templates().letter_template('B'), style, 42);
  // count maximal runs of force >= 0.2 N
  int episodes = 0;
  bool in_ep = false;
  for (const auto& f : s.frames) {
    if (f.force >= 0.2 && !in_ep) {
      ++episodes;
      in_ep = true;
    } else if (f.force < 0.2) {
      in_ep = false;
    }
  }
  CHECK(episodes >= 3);
  // hover padding at both ends
  CHECK(s.frames.front().force < 0.2);
  CHECK(s.frames.back().force < 0.2);
}

TEST_CASE("generate_dataset produces the advertised counts and survives preprocessing") {
  DatasetOptions opts;
  opts.n_writers = 2;
  opts.reps_per_letter = 1;
  opts.cases = CaseSet::kUpper;
  opts.master_seed = 31;
  const auto ds = generate_dataset(opts, templates());
  CHECK(ds.samples.size() == 52);
  CHECK(ds.n_sessions == 2);

  std::set<std::string> writers;
  std::set<char> letters;
  for (const auto& s : ds.samples) {
    writers.insert(s.writer_id);
    letters.insert(s.label);
    CHECK(label_case(s.label) == LetterCase::kUpper);
  }
  CHECK(writers.size() == 2);
  CHECK(letters.size() == 26);

  PreprocessConfig cfg;
  int accepted = 0;
  for (const auto& s : ds.samples) {
    if (preprocess_pipeline(s, cfg).accepted()) ++accepted;
  }
  CHECK(accepted >= 51);  // >= 99 percent survival

  SUBCASE("writers get distinct styles") {
    const auto s0 = WriterStyle::sample(derive_seed(opts.master_seed, 0));
    const auto s1 = WriterStyle::sample(derive_seed(opts.master_seed, 1));
    CHECK(s0.size_mm != s1.size_mm);
    CHECK(s0.speed_scale != s1.speed_scale);
  }
}

TEST_CASE("generate_dataset session files round-trip through the ingest module") {
  TempDir dir("synth_roundtrip");
  DatasetOptions opts;
  opts.n_writers = 1;
  opts.reps_per_letter = 2;
  opts.cases = CaseSet::kBoth;
  opts.master_seed = 5;
  const auto ds = generate_dataset(opts, templates(), dir.path);
  CHECK(ds.samples.size() == 2u * 52u);

  const auto stream = parse_stream(dir.path / "writer_000_stream.csv");
  const auto labels = parse_labels(dir.path / "writer_000_labels.csv");
  CHECK(labels.size() == 2u * 52u);
  const auto split = split_session(stream.frames, labels, "w000");
  REQUIRE(split.samples.size() == 2u * 52u);
  CHECK(split.dropped_empty_intervals == 0);

  // session split must reproduce the in-memory samples frame for frame
  for (std::size_t i = 0; i < split.samples.size(); ++i) {
    const auto& a = split.samples[i];
    const auto& b = ds.samples[i];
    CHECK(a.label == b.label);
    REQUIRE(a.frames.size() == b.frames.size());
    for (std::size_t j = 0; j < a.frames.size(); ++j) {
      for (int c = 0; c < SensorFrame::kChannels; ++c) {
        CHECK(a.frames[j].channel(c) == b.frames[j].channel(c));
      }
    }
  }
}

TEST_CASE("writer styles stay within their documented ranges") {
  Rng rng(77);
  for (int i = 0; i < 200; ++i) {
    const auto st = WriterStyle::sample(rng.next_u64());
    CHECK(st.speed_scale >= 0.7);
    CHECK(st.speed_scale <= 1.4);
    CHECK(st.size_mm >= 8.0);
    CHECK(st.size_mm <= 14.0);
    CHECK(st.slant_rad >= -0.15);
    CHECK(st.slant_rad <= 0.30);
    CHECK(st.tremor_sigma >= 0.05);
    CHECK(st.tremor_sigma <= 0.25);
    CHECK(st.force_base > 0.2);
    CHECK(st.force_base < 5.32);
    const double qn = std::sqrt(st.hold_quaternion[0] * st.hold_quaternion[0] +
                                st.hold_quaternion[1] * st.hold_quaternion[1] +
                                st.hold_quaternion[2] * st.hold_quaternion[2] +
                                st.hold_quaternion[3] * st.hold_quaternion[3]);
    CHECK(qn == doctest::Approx(1.0).epsilon(1e-9));
  }
}
