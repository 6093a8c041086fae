#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "penrec/preprocess.hpp"

namespace penrec {

// Row of the prep-dir manifest; rejected samples keep their id and reason but
// have no tensor on disk.
struct PrepSampleMeta {
  std::string id;
  std::string writer_id;
  char label = 'A';
  std::optional<RejectReason> reject;
};

struct PrepDataset {
  std::vector<TensorSample> samples;  // accepted only, aligned with ids
  std::vector<std::string> ids;
  std::vector<PrepSampleMeta> manifest;  // accepted + rejected
};

// Preprocessed dataset directory: manifest.csv plus either one CSV per
// accepted sample or a single packed binary (JSON header line followed by
// row-major little-endian float32).
void write_prep_dir(const std::filesystem::path& dir, const PrepDataset& ds,
                    bool packed);

PrepDataset load_prep_dir(const std::filesystem::path& dir);

// Stable sample id: writer, letter, per-(writer,letter) sequence number.
std::string make_sample_id(const std::string& writer_id, char label, int seq);

}  // namespace penrec
