#include "penrec/dataset_io.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little,
              "packed files are little-endian");

namespace penrec {

namespace {

constexpr const char* kPackedName = "samples.bin";
constexpr const char* kManifestName = "manifest.csv";

RejectReason reject_from_string(const std::string& s) {
  if (s == "no_contact") return RejectReason::kNoContact;
  if (s == "too_short") return RejectReason::kTooShort;
  if (s == "too_long") return RejectReason::kTooLong;
  throw std::runtime_error("manifest: unknown reject reason '" + s + "'");
}

void write_sample_csv(const std::filesystem::path& path, const TensorSample& s) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  char buf[32];
  for (int r = 0; r < s.rows; ++r) {
    for (int c = 0; c < SensorFrame::kChannels; ++c) {
      std::snprintf(buf, sizeof(buf), "%.9g", s.at(r, c));
      out << (c ? "," : "") << buf;
    }
    out << "\n";
  }
}

void read_sample_csv(const std::filesystem::path& path, TensorSample& s) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  s.rows = 0;
  s.x.clear();
  std::string line, field;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    for (int c = 0; c < SensorFrame::kChannels; ++c) {
      if (!std::getline(ss, field, ',')) {
        throw std::runtime_error(path.string() + ": short row " + std::to_string(s.rows));
      }
      s.x.push_back(std::stod(field));
    }
    ++s.rows;
  }
}

}  // namespace

std::string make_sample_id(const std::string& writer_id, char label, int seq) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "_%c_%03d", label, seq);
  return writer_id + buf;
}

void write_prep_dir(const std::filesystem::path& dir, const PrepDataset& ds,
                    bool packed) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / kManifestName, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write manifest in " + dir.string());
    out << "sample_id,writer_id,label,case,reject\n";
    for (const auto& m : ds.manifest) {
      out << m.id << ',' << m.writer_id << ',' << m.label << ','
          << to_string(label_case(m.label)) << ','
          << (m.reject ? to_string(*m.reject) : "") << "\n";
    }
  }
  if (packed) {
    nlohmann::json header;
    header["format"] = "penrec-prep";
    header["version"] = 1;
    header["count"] = ds.samples.size();
    header["rows"] = ds.samples.empty() ? 0 : ds.samples.front().rows;
    header["cols"] = SensorFrame::kChannels;
    std::ofstream out(dir / kPackedName, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (dir / kPackedName).string());
    out << header.dump() << "\n";
    for (const auto& s : ds.samples) {
      std::vector<float> buf(s.x.begin(), s.x.end());
      out.write(reinterpret_cast<const char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
  } else {
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
      write_sample_csv(dir / (ds.ids[i] + ".csv"), ds.samples[i]);
    }
  }
}

PrepDataset load_prep_dir(const std::filesystem::path& dir) {
  PrepDataset ds;
  {
    std::ifstream in(dir / kManifestName);
    if (!in) throw std::runtime_error("no manifest.csv in " + dir.string());
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      std::stringstream ss(line);
      std::string id, writer, label, lcase, reject;
      std::getline(ss, id, ',');
      std::getline(ss, writer, ',');
      std::getline(ss, label, ',');
      std::getline(ss, lcase, ',');
      std::getline(ss, reject, ',');
      if (label.size() != 1 || !is_known_label(label[0])) {
        throw std::runtime_error("manifest: bad label '" + label + "'");
      }
      PrepSampleMeta m;
      m.id = id;
      m.writer_id = writer;
      m.label = label[0];
      if (!reject.empty()) m.reject = reject_from_string(reject);
      ds.manifest.push_back(std::move(m));
    }
  }

  const auto packed_path = dir / kPackedName;
  const bool packed = std::filesystem::exists(packed_path);
  std::ifstream bin;
  int rows = 0;
  if (packed) {
    bin.open(packed_path, std::ios::binary);
    std::string header_line;
    std::getline(bin, header_line);
    const auto header = nlohmann::json::parse(header_line);
    if (header.at("format") != "penrec-prep") {
      throw std::runtime_error("bad packed header in " + packed_path.string());
    }
    rows = header.at("rows").get<int>();
  }

  for (const auto& m : ds.manifest) {
    if (m.reject) continue;
    TensorSample s;
    if (packed) {
      s.rows = rows;
      std::vector<float> buf(static_cast<std::size_t>(rows) * SensorFrame::kChannels);
      bin.read(reinterpret_cast<char*>(buf.data()),
               static_cast<std::streamsize>(buf.size() * sizeof(float)));
      if (!bin) throw std::runtime_error("packed file truncated: " + packed_path.string());
      s.x.assign(buf.begin(), buf.end());
    } else {
      read_sample_csv(dir / (m.id + ".csv"), s);
    }
    s.label_idx = label_index(m.label);
    s.writer_id = m.writer_id;
    s.letter_case = label_case(m.label);
    ds.samples.push_back(std::move(s));
    ds.ids.push_back(m.id);
  }
  return ds;
}

}  // namespace penrec
