#pragma once

// Checkpoint container shared by every network in the repo:
//
//   bytes 0..7   magic "CHFLCKPT"
//   bytes 8..15  header length H, u64 little-endian
//   H bytes      JSON header: {"schema_version", "kind", ..., "arrays": [{name, rows, cols}]}
//   payload      arrays in header order, f64 little-endian, column-major

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "chemflow/common.hpp"
#include "chemflow/diffnet.hpp"

namespace chemflow {

inline constexpr int kCheckpointSchemaVersion = 1;

struct Checkpoint {
  nlohmann::json header = nlohmann::json::object();
  std::vector<std::pair<std::string, Mat>> arrays;

  const Mat& array(const std::string& name) const;
  void add(std::string name, Mat m) { arrays.emplace_back(std::move(name), std::move(m)); }

  // Stores architecture under header["nets"][prefix] and parameters as "<prefix>/<param>".
  void add_net(const std::string& prefix, const diffnet::DenseNet& net);
  diffnet::DenseNet net(const std::string& prefix) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace chemflow
