#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "klg/tensor.hpp"

namespace klg {

// Versioned container of named flat tensors plus model metadata.
// On disk: JSON with a leading "KLG1" magic string.
struct Checkpoint {
  std::string kind;  // "base" or "klg"
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();
  std::map<std::string, Tensor> tensors;

  Tensor tensor(const std::string& name) const;
};

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace klg
