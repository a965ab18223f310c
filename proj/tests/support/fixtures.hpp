#pragma once

#include <string>

#include "ionlink/config.hpp"

namespace ionlink::test {

inline std::string source_path(const std::string& rel) { return std::string(IONLINK_SOURCE_DIR) + "/" + rel; }

inline const ScenarioConfig& shipped(const std::string& name) {
  static const ScenarioConfig c10 = load_config(source_path("configs/default_10km.toml"));
  static const ScenarioConfig c101 = load_config(source_path("configs/default_101km.toml"));
  return name == "default_101km" ? c101 : c10;
}

inline const ScenarioConfig& calibrated() { return shipped("default_10km"); }

}  // namespace ionlink::test
