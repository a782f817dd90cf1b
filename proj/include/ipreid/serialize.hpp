#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ipreid/common.hpp"

namespace ipreid {

// Single-file archive: a JSON meta block plus ordered named blobs of raw
// little-endian doubles. Identical content always produces identical bytes.
struct Archive {
  static constexpr std::uint32_t kFormatVersion = 1;

  nlohmann::json meta;
  std::vector<std::pair<std::string, std::vector<Scalar>>> blobs;

  void add_blob(const std::string& name, std::vector<Scalar> data) {
    blobs.emplace_back(name, std::move(data));
  }
  bool has_blob(const std::string& name) const;
  const std::vector<Scalar>& blob(const std::string& name) const;

  void save(const std::filesystem::path& path) const;
  static Archive load(const std::filesystem::path& path);
};

}  // namespace ipreid
