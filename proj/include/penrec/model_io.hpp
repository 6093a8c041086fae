#pragma once

#include <bit>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "penrec/nn.hpp"

namespace penrec {

static_assert(std::endian::native == std::endian::little,
              "checkpoints are little-endian");

// Checkpoint layout: one JSON header line (config, seed, epoch, array names
// with sizes), then packed little-endian float32 arrays in header order.
template <typename T>
void save_checkpoint(Model<T>& model, const std::filesystem::path& path,
                     std::uint64_t seed, int epoch) {
  const ModelConfig& c = model.config();
  nlohmann::json header;
  header["format"] = "penrec-model";
  header["version"] = 1;
  header["seed"] = seed;
  header["epoch"] = epoch;
  header["step"] = model.step();
  header["config"] = {{"input_len", c.input_len},
                      {"input_channels", c.input_channels},
                      {"conv_filters", c.conv_filters},
                      {"kernel_size", c.kernel_size},
                      {"dense_hidden", c.dense_hidden},
                      {"classes", c.classes},
                      {"dropout_rate", c.dropout_rate},
                      {"bn_momentum", c.bn_momentum},
                      {"bn_eps", c.bn_eps}};
  auto arrays = model.state_arrays();
  nlohmann::json names = nlohmann::json::array();
  for (auto& [name, vec] : arrays) {
    names.push_back({{"name", name}, {"size", vec->size()}});
  }
  header["arrays"] = names;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << header.dump() << "\n";
  for (auto& [name, vec] : arrays) {
    std::vector<float> buf(vec->begin(), vec->end());
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
}

template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::string header_line;
  std::getline(in, header_line);
  const auto header = nlohmann::json::parse(header_line);
  if (header.at("format") != "penrec-model") {
    throw std::runtime_error("not a model checkpoint: " + path.string());
  }
  ModelConfig cfg;
  const auto& jc = header.at("config");
  cfg.input_len = jc.at("input_len").get<int>();
  cfg.input_channels = jc.at("input_channels").get<int>();
  cfg.conv_filters = jc.at("conv_filters").get<int>();
  cfg.kernel_size = jc.at("kernel_size").get<int>();
  cfg.dense_hidden = jc.at("dense_hidden").get<int>();
  cfg.classes = jc.at("classes").get<int>();
  cfg.dropout_rate = jc.at("dropout_rate").get<double>();
  cfg.bn_momentum = jc.at("bn_momentum").get<double>();
  cfg.bn_eps = jc.at("bn_eps").get<double>();

  Model<T> model(cfg, /*init_seed=*/0);
  model.set_step(header.value("step", 0LL));
  auto arrays = model.state_arrays();
  const auto& names = header.at("arrays");
  if (names.size() != arrays.size()) {
    throw std::runtime_error("checkpoint array list mismatch in " + path.string());
  }
  for (std::size_t i = 0; i < arrays.size(); ++i) {
    if (names[i].at("name") != arrays[i].first ||
        names[i].at("size").get<std::size_t>() != arrays[i].second->size()) {
      throw std::runtime_error("checkpoint array mismatch at '" + arrays[i].first + "'");
    }
    std::vector<float> buf(arrays[i].second->size());
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) throw std::runtime_error("checkpoint truncated: " + path.string());
    arrays[i].second->assign(buf.begin(), buf.end());
  }
  return model;
}

}  // namespace penrec
