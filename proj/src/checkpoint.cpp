#include "klg/checkpoint.hpp"

#include <fstream>

#include "klg/errors.hpp"
#include "klg/io_util.hpp"

namespace klg {

using nlohmann::ordered_json;

Tensor Checkpoint::tensor(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) {
    throw ParseError("checkpoint is missing tensor \"" + name + "\"");
  }
  return it->second;
}

void write_checkpoint(const Checkpoint& ckpt,
                      const std::filesystem::path& path) {
  ordered_json j;
  j["magic"] = "KLG1";
  j["kind"] = ckpt.kind;
  j["meta"] = ckpt.meta;
  ordered_json tensors = ordered_json::object();
  for (const auto& [name, t] : ckpt.tensors) {
    ordered_json entry;
    entry["shape"] = t.shape();
    entry["data"] = t.data();
    tensors[name] = std::move(entry);
  }
  j["tensors"] = std::move(tensors);
  atomic_write_file(path, j.dump() + "\n");
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  ordered_json j = ordered_json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) {
    throw ParseError(path.string() + ": invalid JSON checkpoint");
  }
  if (!j.contains("magic") || j["magic"] != "KLG1") {
    throw ParseError(path.string() + ": missing KLG1 magic string");
  }
  Checkpoint ckpt;
  ckpt.kind = j.value("kind", "");
  ckpt.meta = j.value("meta", ordered_json::object());
  if (j.contains("tensors")) {
    for (const auto& [name, entry] : j["tensors"].items()) {
      std::vector<size_t> shape = entry["shape"].get<std::vector<size_t>>();
      std::vector<double> data = entry["data"].get<std::vector<double>>();
      ckpt.tensors[name] = Tensor::from(std::move(shape), std::move(data), true);
    }
  }
  return ckpt;
}

}  // namespace klg
