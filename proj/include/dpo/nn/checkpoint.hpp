#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "dpo/nn/network.hpp"

namespace dpo {

// Checkpoint container:
//   {"format": "dpo-network", "version": 1, "spec": {...}, "values": [...]}
// Doubles are written in shortest round-trip form, so save/load is exact.

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json spec_to_json(const NetworkSpec& spec) {
  return {
      {"input_dim", spec.input_dim},
      {"hidden_dims", spec.hidden_dims},
      {"output", {{"kind", spec.output.kind == HeadKind::softmax ? "softmax" : "linear"},
                  {"size", spec.output.size}}},
      {"activation", spec.activation == Activation::relu ? "relu" : "tanh"},
      {"init_seed", spec.init_seed},
  };
}

inline NetworkSpec spec_from_json(const nlohmann::json& j) {
  NetworkSpec spec;
  spec.input_dim = j.at("input_dim").get<int>();
  spec.hidden_dims = j.at("hidden_dims").get<std::vector<int>>();
  const auto kind = j.at("output").at("kind").get<std::string>();
  if (kind != "softmax" && kind != "linear") throw SpecError("checkpoint: unknown output kind " + kind);
  spec.output = {kind == "softmax" ? HeadKind::softmax : HeadKind::linear,
                 j.at("output").at("size").get<int>()};
  const auto act = j.at("activation").get<std::string>();
  if (act != "relu" && act != "tanh") throw SpecError("checkpoint: unknown activation " + act);
  spec.activation = act == "relu" ? Activation::relu : Activation::tanh;
  spec.init_seed = j.at("init_seed").get<std::uint64_t>();
  spec.validate();
  return spec;
}

inline nlohmann::json network_to_json(const Network& net) {
  std::vector<double> values(net.values().data(), net.values().data() + net.size());
  return {{"format", "dpo-network"},
          {"version", kCheckpointVersion},
          {"spec", spec_to_json(net.spec())},
          {"values", std::move(values)}};
}

inline Network network_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "dpo-network") throw IoError("checkpoint: not a dpo-network file");
  if (j.at("version").get<int>() != kCheckpointVersion) {
    throw IoError("checkpoint: unsupported version " + j.at("version").dump());
  }
  const auto spec = spec_from_json(j.at("spec"));
  const auto values = j.at("values").get<std::vector<double>>();
  Vector flat = Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
  Network net(spec, std::move(flat));
  if (!net.all_finite()) throw IoError("checkpoint: non-finite parameter");
  return net;
}

inline void save_network(const Network& net, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << network_to_json(net).dump() << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

inline Network load_network(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint " + path.string() + ": " + e.what());
  }
  return network_from_json(j);
}

}  // namespace dpo
