#pragma once

#include <optional>
#include <string>
#include <vector>

#include "penrec/types.hpp"

namespace penrec {

struct PreprocessConfig {
  double force_threshold = 0.2;  // N
  int min_len = 10;
  int max_len = 500;
  int target_len = 50;
};

// Fixed target_len x 13 matrix, row-major, channel order as in the stream CSV
// (force last). Each column L2-normalized over time, or identically zero.
struct TensorSample {
  std::vector<double> x;  // target_len * 13
  int rows = 0;
  int label_idx = 0;  // 0-25
  std::string writer_id;
  LetterCase letter_case = LetterCase::kUpper;

  double at(int r, int c) const { return x[static_cast<std::size_t>(r) * SensorFrame::kChannels + c]; }
};

enum class RejectReason { kNoContact, kTooShort, kTooLong };

const char* to_string(RejectReason r);

struct EmptyAfterTrim : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Contiguous subsequence from the first frame with force >= threshold through
// the last such frame, inclusive. Sub-threshold frames in between (pen lifts
// of multi-stroke letters) are retained.
LetterSample trim_by_force(const LetterSample& sample, const PreprocessConfig& cfg);

// keep iff min_len <= len <= max_len (bounds inclusive). Rejection is a value.
std::optional<RejectReason> check_length(const LetterSample& sample,
                                         const PreprocessConfig& cfg);

// Per-channel linear interpolation onto target_len points; row 0 equals the
// first input frame and row target_len-1 the last. Requires input length >= 2.
std::vector<double> resample_linear(const LetterSample& sample, int target_len);

// Divide each column by its L2 norm over the rows; all-zero columns pass
// through unchanged.
void normalize_l2(std::vector<double>& matrix, int rows);

struct PreprocessResult {
  std::optional<TensorSample> tensor;
  std::optional<RejectReason> rejected;
  bool accepted() const { return tensor.has_value(); }
};

// trim -> length filter -> interpolate -> normalize.
PreprocessResult preprocess_pipeline(const LetterSample& sample,
                                     const PreprocessConfig& cfg);

}  // namespace penrec
