#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

namespace seal2real {

/// Append-only training log: one JSON object per step
/// (step, phase, loss terms, timestep draws, RNG counter).
class StepLog {
 public:
  StepLog() = default;
  /// Appends to `path` as well as keeping records in memory.
  explicit StepLog(const std::filesystem::path& path);

  void append(const nlohmann::json& record);
  const std::vector<nlohmann::json>& records() const { return records_; }
  std::vector<std::string> phases() const;
  bool empty() const { return records_.empty(); }
  const nlohmann::json& back() const { return records_.back(); }

  static std::vector<nlohmann::json> read(const std::filesystem::path& path);

 private:
  std::vector<nlohmann::json> records_;
  std::filesystem::path path_;
};

}  // namespace seal2real
