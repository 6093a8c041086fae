#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "penrec/types.hpp"

namespace penrec {

struct IngestError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MalformedRow : IngestError {
  using IngestError::IngestError;
};
struct RangeViolation : IngestError {
  using IngestError::IngestError;
};
struct NonMonotonicTime : IngestError {
  using IngestError::IngestError;
};
struct OverlappingIntervals : IngestError {
  using IngestError::IngestError;
};
struct UnknownLabel : IngestError {
  using IngestError::IngestError;
};

struct IngestOptions {
  // Lenient mode clamps out-of-range values to the sensor range and counts
  // them instead of throwing; real recordings can contain sensor spikes.
  bool lenient = false;
};

struct StreamParseResult {
  std::vector<SensorFrame> frames;
  std::size_t clamped_values = 0;  // only populated in lenient mode
};

StreamParseResult parse_stream(const std::filesystem::path& path,
                               const IngestOptions& opts = {});

std::vector<LabelInterval> parse_labels(const std::filesystem::path& path);

struct SplitResult {
  std::vector<LetterSample> samples;
  std::size_t dropped_empty_intervals = 0;
};

// One LetterSample per interval, containing exactly the frames with
// t_start_ms <= t_ms < t_end_ms. Intervals capturing no frames are dropped
// and counted.
SplitResult split_session(const std::vector<SensorFrame>& frames,
                          const std::vector<LabelInterval>& intervals,
                          const std::string& writer_id);

// Writers for the same CSV formats; used by the generator and round-trip
// tests. Values are written with six decimals, which round-trips exactly for
// generator output (the generator quantizes to the same grid).
void write_stream_csv(const std::filesystem::path& path,
                      const std::vector<SensorFrame>& frames);
void write_labels_csv(const std::filesystem::path& path,
                      const std::vector<LabelInterval>& intervals);

// Quantize a channel value to the 1e-6 CSV grid so that write -> parse is
// an exact identity.
double quantize_channel(double v);

}  // namespace penrec
