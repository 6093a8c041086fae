#include "penrec/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "penrec/ingest.hpp"
#include "penrec/rng.hpp"

namespace penrec {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kGravity = 9.81;       // m/s^2
constexpr double kSampleDt = 0.01;      // 100 Hz
constexpr double kEarthFieldMT = 0.05;  // magnitude of the simulated field

struct Vec3 {
  double x = 0, y = 0, z = 0;
};

Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
Vec3 operator*(double s, Vec3 v) { return {s * v.x, s * v.y, s * v.z}; }

// Rotate v by the conjugate of unit quaternion q (world -> pen frame).
Vec3 rotate_inverse(const std::array<double, 4>& q, Vec3 v) {
  const double w = q[0], x = -q[1], y = -q[2], z = -q[3];
  // v' = v + 2*cross(q_vec, cross(q_vec, v) + w*v)
  const Vec3 u{x, y, z};
  const Vec3 c1{u.y * v.z - u.z * v.y + w * v.x, u.z * v.x - u.x * v.z + w * v.y,
                u.x * v.y - u.y * v.x + w * v.z};
  const Vec3 c2{u.y * c1.z - u.z * c1.y, u.z * c1.x - u.x * c1.z,
                u.x * c1.y - u.y * c1.x};
  return v + 2.0 * c2;
}

std::array<double, 4> quat_mul(const std::array<double, 4>& a,
                               const std::array<double, 4>& b) {
  return {a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
          a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
          a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
          a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]};
}

std::array<double, 4> quat_from_axis_angle(Vec3 axis, double angle) {
  const double n = std::sqrt(axis.x * axis.x + axis.y * axis.y + axis.z * axis.z);
  if (n < 1e-12) return {1, 0, 0, 0};
  const double s = std::sin(angle / 2) / n;
  return {std::cos(angle / 2), s * axis.x, s * axis.y, s * axis.z};
}

void quat_normalize(std::array<double, 4>& q) {
  const double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
  for (auto& v : q) v /= n;
}

// Minimum-jerk position profile on [0,1]: zero velocity and acceleration at
// both ends.
double min_jerk(double tau) {
  tau = std::clamp(tau, 0.0, 1.0);
  return tau * tau * tau * (10.0 + tau * (-15.0 + 6.0 * tau));
}

// Smooth bump on [0,1], zero with zero slope at both ends, peak 1 at 0.5.
double lift_bump(double tau) {
  tau = std::clamp(tau, 0.0, 1.0);
  const double s = tau * (1.0 - tau);
  return 16.0 * s * s;
}

struct Polyline2 {
  std::vector<std::array<double, 2>> pts;  // meters, paper plane
  std::vector<double> cumlen;
  double total = 0;

  void finish() {
    cumlen.assign(pts.size(), 0.0);
    for (std::size_t i = 1; i < pts.size(); ++i) {
      const double dx = pts[i][0] - pts[i - 1][0];
      const double dy = pts[i][1] - pts[i - 1][1];
      cumlen[i] = cumlen[i - 1] + std::sqrt(dx * dx + dy * dy);
    }
    total = cumlen.back();
  }

  std::array<double, 2> at_arclen(double s) const {
    s = std::clamp(s, 0.0, total);
    std::size_t i = 1;
    while (i + 1 < pts.size() && cumlen[i] < s) ++i;
    const double seg = cumlen[i] - cumlen[i - 1];
    const double f = seg > 0 ? (s - cumlen[i - 1]) / seg : 0.0;
    return {pts[i - 1][0] + f * (pts[i][0] - pts[i - 1][0]),
            pts[i - 1][1] + f * (pts[i][1] - pts[i - 1][1])};
  }
};

struct Segment {
  double t0 = 0, t1 = 0;
  bool on_paper = false;
  Polyline2 path;             // stroke segments
  std::array<double, 2> a{};  // lift segments: endpoints
  std::array<double, 2> b{};
  double lift_height = 0.003;  // m

  Vec3 position(double t) const {
    const double tau = (t - t0) / (t1 - t0);
    if (on_paper) {
      const auto p = path.at_arclen(min_jerk(tau) * path.total);
      return {p[0], p[1], 0.0};
    }
    const double f = min_jerk(tau);
    return {a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1]),
            lift_height * lift_bump(tau)};
  }
};

struct Trajectory {
  std::vector<Segment> segments;
  double total = 0;

  Vec3 position(double t) const {
    if (t <= 0) return segments.front().position(0);
    if (t >= total) return segments.back().position(segments.back().t1);
    for (const auto& s : segments) {
      if (t <= s.t1) return s.position(t);
    }
    return segments.back().position(segments.back().t1);
  }

  const Segment* segment_at(double t) const {
    for (const auto& s : segments) {
      if (t <= s.t1) return &s;
    }
    return &segments.back();
  }
};

}  // namespace

TemplateSet TemplateSet::load(const std::filesystem::path& json_path) {
  std::ifstream in(json_path);
  if (!in) throw std::runtime_error("cannot open template file " + json_path.string());
  nlohmann::json j;
  in >> j;

  TemplateSet set;
  for (const auto& [key, val] : j.at("letters").items()) {
    if (key.size() != 1 || !is_known_label(key[0])) {
      throw std::runtime_error("template file: bad letter key '" + key + "'");
    }
    StrokeTemplate t;
    t.letter = key[0];
    t.letter_case = label_case(key[0]);
    for (const auto& stroke : val.at("strokes")) {
      std::vector<std::array<double, 2>> pts;
      for (const auto& p : stroke) {
        pts.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
      }
      if (pts.size() < 2) throw std::runtime_error("template stroke with < 2 points");
      t.strokes.push_back(std::move(pts));
    }
    if (t.strokes.empty() || t.strokes.size() > 4) {
      throw std::runtime_error(std::string("template '") + key + "': stroke count out of 1-4");
    }
    set.templates_[t.letter] = std::move(t);
  }
  if (set.templates_.size() != 52) {
    throw std::runtime_error("template file must cover all 52 letters, has " +
                             std::to_string(set.templates_.size()));
  }
  return set;
}

const StrokeTemplate& TemplateSet::letter_template(char letter) const {
  auto it = templates_.find(letter);
  if (it == templates_.end()) {
    throw UnknownLabel(std::string("no template for '") + letter + "'");
  }
  return it->second;
}

WriterStyle WriterStyle::sample(std::uint64_t writer_seed) {
  Rng rng(writer_seed);
  WriterStyle s;
  s.speed_scale = rng.uniform(0.7, 1.4);
  s.size_mm = rng.uniform(8.0, 14.0);
  s.slant_rad = rng.uniform(-0.15, 0.30);
  s.tremor_sigma = rng.uniform(0.05, 0.25);
  const Vec3 axis{rng.normal(), rng.normal(), rng.normal()};
  s.hold_quaternion = quat_from_axis_angle(axis, rng.normal(0.0, 0.12));
  quat_normalize(s.hold_quaternion);
  s.force_base = rng.uniform(0.5, 1.8);
  s.seed = writer_seed;
  return s;
}

LetterSample synthesize_sample(const StrokeTemplate& tmpl, const WriterStyle& style,
                               std::uint64_t rng_seed) {
  Rng rng(rng_seed);

  // Per-sample shape variation on top of the writer style.
  const double scale_jitter = 1.0 + rng.normal(0.0, 0.05);
  const double rot_jitter = rng.normal(0.0, 0.03);
  const double cr = std::cos(rot_jitter), sr = std::sin(rot_jitter);
  const double tan_slant = std::tan(style.slant_rad);
  const double size_m = style.size_mm * 1e-3 * scale_jitter;
  const double aspect = 0.7;

  auto map_point = [&](std::array<double, 2> p, double jx, double jy) {
    double x = p[0] + jx;
    double y = p[1] + jy;
    x += tan_slant * y;           // shear
    x *= aspect;
    const double rx = cr * x - sr * y;  // per-sample rotation jitter
    const double ry = sr * x + cr * y;
    return std::array<double, 2>{rx * size_m, ry * size_m};
  };

  std::vector<Polyline2> strokes;
  for (const auto& stroke : tmpl.strokes) {
    Polyline2 line;
    for (const auto& p : stroke) {
      line.pts.push_back(map_point(p, rng.normal(0.0, 0.02), rng.normal(0.0, 0.02)));
    }
    line.finish();
    strokes.push_back(std::move(line));
  }

  const double speed = 0.05 * style.speed_scale;  // m/s nominal tip speed

  Trajectory traj;
  double t = 0;
  const auto first_pt = strokes.front().pts.front();

  auto push_lift = [&](std::array<double, 2> a, std::array<double, 2> b, double dur) {
    Segment seg;
    seg.t0 = t;
    seg.t1 = t + dur;
    seg.on_paper = false;
    seg.a = a;
    seg.b = b;
    seg.lift_height = 0.002 + 0.002 * rng.uniform();
    t = seg.t1;
    traj.segments.push_back(seg);
  };

  // hover before the first stroke (200-400 ms), pen held near the start
  push_lift(first_pt, first_pt, rng.uniform(0.20, 0.40));

  for (std::size_t i = 0; i < strokes.size(); ++i) {
    Segment seg;
    seg.t0 = t;
    seg.on_paper = true;
    seg.path = strokes[i];
    const double dur = std::clamp(seg.path.total / speed, 0.15, 2.0);
    seg.t1 = t + dur;
    t = seg.t1;
    traj.segments.push_back(seg);
    if (i + 1 < strokes.size()) {
      push_lift(strokes[i].pts.back(), strokes[i + 1].pts.front(),
                rng.uniform(0.08, 0.16));
    }
  }

  const auto last_pt = strokes.back().pts.back();
  push_lift(last_pt, last_pt, rng.uniform(0.20, 0.40));
  traj.total = t;

  // per-sample wobble of the hold orientation
  const Vec3 wob_axis{rng.normal(), rng.normal(), rng.normal()};
  auto q = quat_mul(style.hold_quaternion,
                    quat_from_axis_angle(wob_axis, rng.normal(0.0, 0.05)));
  quat_normalize(q);

  // gyro wobble sinusoids
  double gyro_amp[3], gyro_freq[3], gyro_phase[3];
  for (int i = 0; i < 3; ++i) {
    gyro_amp[i] = rng.uniform(10.0, 40.0);
    gyro_freq[i] = rng.uniform(2.0, 6.0);
    gyro_phase[i] = rng.uniform(0.0, 2.0 * kPi);
  }

  const Vec3 earth_field = {kEarthFieldMT * 0.5, 0.0, -kEarthFieldMT * 0.8660254};
  const Vec3 field_pen = rotate_inverse(q, earth_field);

  const int n_frames = static_cast<int>(std::floor(traj.total / kSampleDt));
  LetterSample sample;
  sample.label = tmpl.letter;
  sample.letter_case = tmpl.letter_case;
  sample.frames.reserve(static_cast<std::size_t>(n_frames));

  const double fd = 1e-3;  // central-difference step for acceleration
  for (int i = 0; i < n_frames; ++i) {
    const double ti = i * kSampleDt;
    const Vec3 p0 = traj.position(ti - fd);
    const Vec3 p1 = traj.position(ti);
    const Vec3 p2 = traj.position(ti + fd);
    const Vec3 accel = (1.0 / (fd * fd)) * ((p0 - p1) + (p2 - p1));
    const Vec3 vel = (1.0 / (2.0 * fd)) * (p2 - p0);

    // specific force in the pen frame, in g units
    const Vec3 specific = accel + Vec3{0, 0, kGravity};
    const Vec3 f_pen = (1.0 / kGravity) * rotate_inverse(q, specific);

    SensorFrame f;
    f.t_ms = static_cast<std::int64_t>(i) * 10;
    const double tg = style.tremor_sigma / kGravity;
    for (int a = 0; a < 3; ++a) {
      const double base = a == 0 ? f_pen.x : (a == 1 ? f_pen.y : f_pen.z);
      f.acc_front[a] = base + rng.normal(0.0, tg);
      f.acc_rear[a] = base + rng.normal(0.0, 0.8 * tg);
    }

    const Segment* seg = traj.segment_at(ti);
    const double moving = seg->on_paper ? 1.0 : 0.2;
    // wrist rotation roughly follows the tip velocity, plus wobble
    const double varm = 57.2957795 / 0.05;  // rad/s per (m/s), to deg/s
    const double wx = vel.y * varm;
    const double wy = -vel.x * varm;
    f.gyro[0] = moving * (gyro_amp[0] * std::sin(2 * kPi * gyro_freq[0] * ti + gyro_phase[0])) +
                wx + rng.normal(0.0, 2.0);
    f.gyro[1] = moving * (gyro_amp[1] * std::sin(2 * kPi * gyro_freq[1] * ti + gyro_phase[1])) +
                wy + rng.normal(0.0, 2.0);
    f.gyro[2] = moving * (gyro_amp[2] * std::sin(2 * kPi * gyro_freq[2] * ti + gyro_phase[2])) +
                rng.normal(0.0, 2.0);

    f.mag[0] = field_pen.x + rng.normal(0.0, 0.001);
    f.mag[1] = field_pen.y + rng.normal(0.0, 0.001);
    f.mag[2] = field_pen.z + rng.normal(0.0, 0.001);

    if (seg->on_paper) {
      const double tau = (ti - seg->t0) / (seg->t1 - seg->t0);
      double force = style.force_base * (0.8 + 0.2 * std::sin(kPi * tau)) +
                     rng.normal(0.0, 0.03);
      f.force = std::max(force, 0.25);
    } else {
      f.force = std::clamp(std::abs(rng.normal(0.015, 0.008)), 0.0, 0.08);
    }

    for (int c = 0; c < SensorFrame::kChannels; ++c) {
      const double v = std::clamp(f.channel(c), ChannelRanges::lo(c), ChannelRanges::hi(c));
      f.set_channel(c, quantize_channel(v));
    }
    sample.frames.push_back(f);
  }
  return sample;
}

GeneratedDataset generate_dataset(const DatasetOptions& opts, const TemplateSet& templates,
                                  const std::filesystem::path& out_dir) {
  if (opts.n_writers < 1 || opts.reps_per_letter < 1) {
    throw std::invalid_argument("n_writers and reps_per_letter must be >= 1");
  }
  std::vector<LetterCase> cases;
  if (opts.cases == CaseSet::kUpper || opts.cases == CaseSet::kBoth)
    cases.push_back(LetterCase::kUpper);
  if (opts.cases == CaseSet::kLower || opts.cases == CaseSet::kBoth)
    cases.push_back(LetterCase::kLower);

  const bool write_files = !out_dir.empty();
  if (write_files) std::filesystem::create_directories(out_dir);

  GeneratedDataset out;
  for (int w = 0; w < opts.n_writers; ++w) {
    const std::uint64_t writer_seed =
        derive_seed(opts.master_seed, static_cast<std::uint64_t>(w));
    const WriterStyle style = WriterStyle::sample(writer_seed);

    char idbuf[16];
    std::snprintf(idbuf, sizeof(idbuf), "w%03d", w);
    const std::string writer_id = idbuf;

    std::vector<SensorFrame> session_frames;
    std::vector<LabelInterval> session_labels;
    std::int64_t session_t = 0;
    std::uint64_t slot = 0;

    for (int rep = 0; rep < opts.reps_per_letter; ++rep) {
      for (LetterCase lc : cases) {
        for (int l = 0; l < 26; ++l) {
          const char letter = index_to_label(l, lc);
          LetterSample s = synthesize_sample(templates.letter_template(letter), style,
                                             derive_seed(writer_seed, slot++));
          s.writer_id = writer_id;
          const auto n = static_cast<std::int64_t>(s.frames.size());
          for (auto& f : s.frames) f.t_ms += session_t;
          session_labels.push_back({letter, session_t, session_t + n * 10});
          session_frames.insert(session_frames.end(), s.frames.begin(), s.frames.end());
          session_t += n * 10;
          out.samples.push_back(std::move(s));
        }
      }
    }
    if (write_files) {
      char fbuf[48];
      std::snprintf(fbuf, sizeof(fbuf), "writer_%03d_stream.csv", w);
      write_stream_csv(out_dir / fbuf, session_frames);
      std::snprintf(fbuf, sizeof(fbuf), "writer_%03d_labels.csv", w);
      write_labels_csv(out_dir / fbuf, session_labels);
    }
    ++out.n_sessions;
  }
  return out;
}

}  // namespace penrec
