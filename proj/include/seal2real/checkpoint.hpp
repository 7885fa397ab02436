#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace seal2real {

/// Self-describing tensor container.
///
/// Layout: 8-byte magic "S2RCKPT\0", u32 format version, u64 header length,
/// a JSON header (`meta` object plus a tensor table of name / dtype / shape /
/// offset / nbytes) and the raw little-endian tensor blob. Tensors are kept
/// in name order, so equal contents serialize to identical bytes.
class Checkpoint {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;

  nlohmann::json meta = nlohmann::json::object();

  void put(const std::string& name, const torch::Tensor& tensor);
  bool has(const std::string& name) const { return tensors_.count(name) != 0; }
  /// Throws BadCheckpoint when absent.
  const torch::Tensor& get(const std::string& name) const;
  std::vector<std::string> names() const;

  /// Stores every parameter and buffer as `<prefix>.<name>`.
  void put_module(const std::string& prefix, const torch::nn::Module& module);
  /// Copies stored values into `module`; shapes must match exactly.
  void load_module(const std::string& prefix, torch::nn::Module& module) const;

  /// Adam moments of each parameter, in param-group order.
  void put_adam(const std::string& prefix, torch::optim::Adam& optimizer);
  void load_adam(const std::string& prefix, torch::optim::Adam& optimizer) const;

  std::string serialize() const;
  static Checkpoint deserialize(const std::string& bytes);

  /// Atomic: writes `<path>.tmp` then renames.
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  std::map<std::string, torch::Tensor> tensors_;
};

/// Writes `contents` to `path` through a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace seal2real
