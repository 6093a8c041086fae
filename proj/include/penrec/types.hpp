#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace penrec {

// One 100 Hz sample from the pen. Channel order everywhere in the project
// matches the stream CSV: front accel, rear accel, gyro, magnetometer, force.
struct SensorFrame {
  std::int64_t t_ms = 0;
  std::array<double, 3> acc_front{};  // g
  std::array<double, 3> acc_rear{};   // g
  std::array<double, 3> gyro{};       // deg/s
  std::array<double, 3> mag{};        // mT
  double force = 0.0;                 // N

  static constexpr int kChannels = 13;

  double channel(int c) const {
    switch (c) {
      case 0: case 1: case 2: return acc_front[c];
      case 3: case 4: case 5: return acc_rear[c - 3];
      case 6: case 7: case 8: return gyro[c - 6];
      case 9: case 10: case 11: return mag[c - 9];
      case 12: return force;
      default: throw std::out_of_range("channel index");
    }
  }

  void set_channel(int c, double v) {
    switch (c) {
      case 0: case 1: case 2: acc_front[c] = v; break;
      case 3: case 4: case 5: acc_rear[c - 3] = v; break;
      case 6: case 7: case 8: gyro[c - 6] = v; break;
      case 9: case 10: case 11: mag[c - 9] = v; break;
      case 12: force = v; break;
      default: throw std::out_of_range("channel index");
    }
  }

  bool operator==(const SensorFrame&) const = default;
};

// Physical sensor ranges.
struct ChannelRanges {
  static constexpr double kAccG = 2.0;       // +/- 2 g
  static constexpr double kGyroDps = 1000.0; // +/- 1000 deg/s
  static constexpr double kMagMT = 2.4;      // +/- 2.4 mT
  static constexpr double kForceMaxN = 5.32; // 0 .. 5.32 N

  static double lo(int c) {
    if (c == 12) return 0.0;
    return -hi(c);
  }
  static double hi(int c) {
    if (c < 6) return kAccG;
    if (c < 9) return kGyroDps;
    if (c < 12) return kMagMT;
    return kForceMaxN;
  }
};

inline const char* kStreamCsvHeader =
    "t_ms,afx,afy,afz,arx,ary,arz,gx,gy,gz,mx,my,mz,force";
inline const char* kLabelsCsvHeader = "label,t_start_ms,t_end_ms";

enum class LetterCase { kUpper, kLower };

inline const char* to_string(LetterCase c) {
  return c == LetterCase::kUpper ? "upper" : "lower";
}

inline bool is_known_label(char ch) {
  return (ch >= 'A' && ch <= 'Z') || (ch >= 'a' && ch <= 'z');
}

inline LetterCase label_case(char ch) {
  return (ch >= 'A' && ch <= 'Z') ? LetterCase::kUpper : LetterCase::kLower;
}

// 0-25 within the letter's case.
inline int label_index(char ch) {
  return (ch >= 'A' && ch <= 'Z') ? ch - 'A' : ch - 'a';
}

inline char index_to_label(int idx, LetterCase c) {
  return static_cast<char>((c == LetterCase::kUpper ? 'A' : 'a') + idx);
}

// Display window of one prompted letter, half-open [t_start_ms, t_end_ms).
struct LabelInterval {
  char label = 'A';
  std::int64_t t_start_ms = 0;
  std::int64_t t_end_ms = 0;
};

struct LetterSample {
  std::vector<SensorFrame> frames;
  char label = 'A';
  std::string writer_id;
  LetterCase letter_case = LetterCase::kUpper;

  bool operator==(const LetterSample&) const = default;
};

}  // namespace penrec
