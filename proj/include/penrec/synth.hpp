#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "penrec/types.hpp"

namespace penrec {

// 2D polylines in a unit box, x right, y up. Hand-authored, loaded from
// data/letter_templates.json.
struct StrokeTemplate {
  char letter = 'A';
  LetterCase letter_case = LetterCase::kUpper;
  std::vector<std::vector<std::array<double, 2>>> strokes;  // each >= 2 points
};

class TemplateSet {
 public:
  static TemplateSet load(const std::filesystem::path& json_path);

  // Deterministic; throws UnknownLabel for anything outside A-Z/a-z.
  const StrokeTemplate& letter_template(char letter) const;

  std::size_t size() const { return templates_.size(); }

 private:
  std::map<char, StrokeTemplate> templates_;
};

// Per-writer handwriting style. All parameters drawn once per writer from a
// split of the master seed, so a writer id maps to one consistent style.
struct WriterStyle {
  double speed_scale = 1.0;        // > 0, multiplies nominal pen-tip speed
  double size_mm = 10.0;           // letter height
  double slant_rad = 0.0;          // shear angle
  double tremor_sigma = 0.1;       // accel noise amplitude, m/s^2
  std::array<double, 4> hold_quaternion{1, 0, 0, 0};  // unit, pen -> world
  double force_base = 1.0;         // N, in (0.2, 5.32)
  std::uint64_t seed = 0;

  static WriterStyle sample(std::uint64_t writer_seed);
};

// Full kinematic simulation of one written letter: template scaled/sheared
// per style, traversed stroke by stroke with a minimum-jerk speed profile,
// sampled at 100 Hz, mapped into the pen frame via the hold quaternion with
// gravity, tremor, orientation wobble, earth magnetic field and a force
// profile that is near zero while hovering. All channels quantized to the
// CSV grid and clipped to the sensor ranges; t_ms starts at 0.
LetterSample synthesize_sample(const StrokeTemplate& tmpl, const WriterStyle& style,
                               std::uint64_t rng_seed);

enum class CaseSet { kUpper, kLower, kBoth };

struct DatasetOptions {
  int n_writers = 1;
  int reps_per_letter = 1;
  CaseSet cases = CaseSet::kUpper;
  std::uint64_t master_seed = 0;
};

struct GeneratedDataset {
  std::vector<LetterSample> samples;  // timestamps are session-relative
  int n_sessions = 0;
};

// One recording session per writer: the requested alphabet(s) in order,
// repeated reps_per_letter times, concatenated on a single session clock.
// When out_dir is non-empty, writes writer_###_stream.csv and
// writer_###_labels.csv pairs consumable by the ingest module.
GeneratedDataset generate_dataset(const DatasetOptions& opts, const TemplateSet& templates,
                                  const std::filesystem::path& out_dir = {});

}  // namespace penrec
