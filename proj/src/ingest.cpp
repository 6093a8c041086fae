#include "penrec/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace penrec {

namespace {

std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& s, std::size_t row, int col) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw MalformedRow("row " + std::to_string(row) + ", column " +
                       std::to_string(col) + ": not a number: '" + s + "'");
  }
  if (pos != s.size() || !std::isfinite(v)) {
    throw MalformedRow("row " + std::to_string(row) + ", column " +
                       std::to_string(col) + ": not a number: '" + s + "'");
  }
  return v;
}

std::ifstream open_or_throw(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open " + path.string());
  return in;
}

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

}  // namespace

double quantize_channel(double v) {
  return std::round(v * 1e6) / 1e6;
}

StreamParseResult parse_stream(const std::filesystem::path& path,
                               const IngestOptions& opts) {
  std::ifstream in = open_or_throw(path);
  StreamParseResult result;

  std::string line;
  if (!std::getline(in, line) || strip_cr(line) != kStreamCsvHeader) {
    throw MalformedRow("missing or wrong stream header in " + path.string());
  }

  std::size_t row = 0;
  std::int64_t prev_t = 0;
  while (std::getline(in, line)) {
    line = strip_cr(line);
    if (line.empty()) continue;
    ++row;
    const auto fields = split_csv_row(line);
    if (fields.size() != 14) {
      throw MalformedRow("row " + std::to_string(row) + ": expected 14 columns, got " +
                         std::to_string(fields.size()));
    }
    SensorFrame f;
    const double t = parse_number(fields[0], row, 0);
    f.t_ms = static_cast<std::int64_t>(std::llround(t));
    for (int c = 0; c < SensorFrame::kChannels; ++c) {
      double v = parse_number(fields[c + 1], row, c + 1);
      const double lo = ChannelRanges::lo(c);
      const double hi = ChannelRanges::hi(c);
      if (v < lo || v > hi) {
        if (opts.lenient) {
          v = std::clamp(v, lo, hi);
          ++result.clamped_values;
        } else {
          throw RangeViolation("row " + std::to_string(row) + ": channel " +
                               std::to_string(c) + " value " + fields[c + 1] +
                               " outside [" + std::to_string(lo) + ", " +
                               std::to_string(hi) + "]");
        }
      }
      f.set_channel(c, v);
    }
    if (!result.frames.empty() && f.t_ms <= prev_t) {
      throw NonMonotonicTime("row " + std::to_string(row) + ": t_ms " +
                             std::to_string(f.t_ms) + " not after " +
                             std::to_string(prev_t));
    }
    prev_t = f.t_ms;
    result.frames.push_back(f);
  }
  return result;
}

std::vector<LabelInterval> parse_labels(const std::filesystem::path& path) {
  std::ifstream in = open_or_throw(path);
  std::vector<LabelInterval> intervals;

  std::string line;
  if (!std::getline(in, line) || strip_cr(line) != kLabelsCsvHeader) {
    throw MalformedRow("missing or wrong labels header in " + path.string());
  }

  std::size_t row = 0;
  while (std::getline(in, line)) {
    line = strip_cr(line);
    if (line.empty()) continue;
    ++row;
    const auto fields = split_csv_row(line);
    if (fields.size() != 3) {
      throw MalformedRow("row " + std::to_string(row) + ": expected 3 columns, got " +
                         std::to_string(fields.size()));
    }
    if (fields[0].size() != 1 || !is_known_label(fields[0][0])) {
      throw UnknownLabel("row " + std::to_string(row) + ": label '" + fields[0] +
                         "' not in A-Z/a-z");
    }
    LabelInterval iv;
    iv.label = fields[0][0];
    iv.t_start_ms = static_cast<std::int64_t>(std::llround(parse_number(fields[1], row, 1)));
    iv.t_end_ms = static_cast<std::int64_t>(std::llround(parse_number(fields[2], row, 2)));
    if (iv.t_start_ms >= iv.t_end_ms) {
      throw MalformedRow("row " + std::to_string(row) + ": t_start_ms >= t_end_ms");
    }
    if (!intervals.empty() && iv.t_start_ms < intervals.back().t_end_ms) {
      throw OverlappingIntervals("row " + std::to_string(row) + ": interval [" +
                                 std::to_string(iv.t_start_ms) + ", " +
                                 std::to_string(iv.t_end_ms) + ") overlaps previous");
    }
    intervals.push_back(iv);
  }
  return intervals;
}

SplitResult split_session(const std::vector<SensorFrame>& frames,
                          const std::vector<LabelInterval>& intervals,
                          const std::string& writer_id) {
  SplitResult result;
  auto it = frames.begin();
  for (const auto& iv : intervals) {
    // frames and intervals are both time-ordered, so scan forward once
    while (it != frames.end() && it->t_ms < iv.t_start_ms) ++it;
    auto first = it;
    while (it != frames.end() && it->t_ms < iv.t_end_ms) ++it;
    if (first == it) {
      ++result.dropped_empty_intervals;
      continue;
    }
    LetterSample sample;
    sample.frames.assign(first, it);
    sample.label = iv.label;
    sample.writer_id = writer_id;
    sample.letter_case = label_case(iv.label);
    result.samples.push_back(std::move(sample));
  }
  return result;
}

void write_stream_csv(const std::filesystem::path& path,
                      const std::vector<SensorFrame>& frames) {
  std::ofstream out(path, std::ios::binary);  // binary keeps LF on all platforms
  if (!out) throw IngestError("cannot write " + path.string());
  out << kStreamCsvHeader << "\n";
  char buf[32];
  for (const auto& f : frames) {
    out << f.t_ms;
    for (int c = 0; c < SensorFrame::kChannels; ++c) {
      std::snprintf(buf, sizeof(buf), "%.6f", f.channel(c));
      out << ',' << buf;
    }
    out << "\n";
  }
}

void write_labels_csv(const std::filesystem::path& path,
                      const std::vector<LabelInterval>& intervals) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestError("cannot write " + path.string());
  out << kLabelsCsvHeader << "\n";
  for (const auto& iv : intervals) {
    out << iv.label << ',' << iv.t_start_ms << ',' << iv.t_end_ms << "\n";
  }
}

}  // namespace penrec
