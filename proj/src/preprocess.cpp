#include "penrec/preprocess.hpp"

#include <cmath>
#include <cstddef>

namespace penrec {

const char* to_string(RejectReason r) {
  switch (r) {
    case RejectReason::kNoContact: return "no_contact";
    case RejectReason::kTooShort: return "too_short";
    case RejectReason::kTooLong: return "too_long";
  }
  return "?";
}

LetterSample trim_by_force(const LetterSample& sample, const PreprocessConfig& cfg) {
  const auto& frames = sample.frames;
  std::size_t first = 0;
  while (first < frames.size() && frames[first].force < cfg.force_threshold) ++first;
  if (first == frames.size()) {
    throw EmptyAfterTrim("no frame reaches force threshold " +
                         std::to_string(cfg.force_threshold));
  }
  std::size_t last = frames.size() - 1;
  while (frames[last].force < cfg.force_threshold) --last;

  LetterSample out = sample;
  out.frames.assign(frames.begin() + static_cast<std::ptrdiff_t>(first),
                    frames.begin() + static_cast<std::ptrdiff_t>(last) + 1);
  return out;
}

std::optional<RejectReason> check_length(const LetterSample& sample,
                                         const PreprocessConfig& cfg) {
  const int len = static_cast<int>(sample.frames.size());
  if (len < cfg.min_len) return RejectReason::kTooShort;
  if (len > cfg.max_len) return RejectReason::kTooLong;
  return std::nullopt;
}

std::vector<double> resample_linear(const LetterSample& sample, int target_len) {
  const int n = static_cast<int>(sample.frames.size());
  const int ch = SensorFrame::kChannels;
  std::vector<double> out(static_cast<std::size_t>(target_len) * ch);
  for (int i = 0; i < target_len; ++i) {
    // source position i*(n-1)/(target_len-1)
    const double pos = target_len == 1
                           ? 0.0
                           : static_cast<double>(i) * (n - 1) / (target_len - 1);
    int i0 = static_cast<int>(pos);
    if (i0 >= n - 1) i0 = n - 2;
    const double frac = pos - i0;
    for (int c = 0; c < ch; ++c) {
      const double a = sample.frames[static_cast<std::size_t>(i0)].channel(c);
      const double b = sample.frames[static_cast<std::size_t>(i0) + 1].channel(c);
      // exact copy at grid-aligned positions so endpoints survive bit-for-bit
      out[static_cast<std::size_t>(i) * ch + c] =
          frac == 0.0 ? a : (frac == 1.0 ? b : a + frac * (b - a));
    }
  }
  return out;
}

void normalize_l2(std::vector<double>& matrix, int rows) {
  const int ch = SensorFrame::kChannels;
  for (int c = 0; c < ch; ++c) {
    double sq = 0.0;
    for (int r = 0; r < rows; ++r) {
      const double v = matrix[static_cast<std::size_t>(r) * ch + c];
      sq += v * v;
    }
    if (sq == 0.0) continue;
    const double inv = 1.0 / std::sqrt(sq);
    for (int r = 0; r < rows; ++r) {
      matrix[static_cast<std::size_t>(r) * ch + c] *= inv;
    }
  }
}

PreprocessResult preprocess_pipeline(const LetterSample& sample,
                                     const PreprocessConfig& cfg) {
  PreprocessResult result;
  LetterSample trimmed;
  try {
    trimmed = trim_by_force(sample, cfg);
  } catch (const EmptyAfterTrim&) {
    result.rejected = RejectReason::kNoContact;
    return result;
  }
  if (auto reject = check_length(trimmed, cfg)) {
    result.rejected = reject;
    return result;
  }
  if (trimmed.frames.size() < 2) {
    // resampling needs two endpoints; reachable only with min_len == 1
    result.rejected = RejectReason::kTooShort;
    return result;
  }
  TensorSample t;
  t.x = resample_linear(trimmed, cfg.target_len);
  t.rows = cfg.target_len;
  normalize_l2(t.x, t.rows);
  t.label_idx = label_index(sample.label);
  t.writer_id = sample.writer_id;
  t.letter_case = sample.letter_case;
  result.tensor = std::move(t);
  return result;
}

}  // namespace penrec
