#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "penrec/rng.hpp"
#include "penrec/synth.hpp"
#include "penrec/types.hpp"

namespace penrec::testing {

inline std::filesystem::path template_path() {
  return std::filesystem::path(PENREC_DATA_DIR) / "letter_templates.json";
}

inline const TemplateSet& templates() {
  static const TemplateSet set = TemplateSet::load(template_path());
  return set;
}

// Scratch directory unique per tag, wiped on construction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() / ("penrec_test_" + tag);
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

// Sample with the given force profile; other channels small deterministic
// values so the frames stay range-valid.
inline LetterSample make_force_sample(const std::vector<double>& forces,
                                      char label = 'A') {
  LetterSample s;
  s.label = label;
  s.letter_case = label_case(label);
  s.writer_id = "wtest";
  for (std::size_t i = 0; i < forces.size(); ++i) {
    SensorFrame f;
    f.t_ms = static_cast<std::int64_t>(i) * 10;
    for (int c = 0; c < 12; ++c) {
      f.set_channel(c, 0.01 * static_cast<double>((i + c) % 7));
    }
    f.force = forces[i];
    s.frames.push_back(f);
  }
  return s;
}

// Random range-valid sample of the given length.
inline LetterSample random_sample(Rng& rng, int len, char label = 'A') {
  std::vector<double> forces(len);
  for (auto& f : forces) f = rng.uniform(0.0, 2.0);
  LetterSample s = make_force_sample(forces, label);
  for (auto& fr : s.frames) {
    for (int c = 0; c < 12; ++c) {
      fr.set_channel(c, rng.uniform(ChannelRanges::lo(c) * 0.5, ChannelRanges::hi(c) * 0.5));
    }
  }
  return s;
}

}  // namespace penrec::testing
