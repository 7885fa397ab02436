#include "seal2real/step_log.hpp"

#include "seal2real/error.hpp"

namespace seal2real {

StepLog::StepLog(const std::filesystem::path& path) : path_(path) {}

void StepLog::append(const nlohmann::json& record) {
  records_.push_back(record);
  if (path_.empty()) return;
  std::ofstream out(path_, std::ios::app);
  require(static_cast<bool>(out), Errc::IoFailure, "cannot append to " + path_.string());
  out << record.dump() << '\n';
}

std::vector<std::string> StepLog::phases() const {
  std::vector<std::string> out;
  out.reserve(records_.size());
  for (const auto& r : records_) out.push_back(r.at("phase").get<std::string>());
  return out;
}

std::vector<nlohmann::json> StepLog::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), Errc::IoFailure, "cannot open " + path.string());
  std::vector<nlohmann::json> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(nlohmann::json::parse(line));
  return out;
}

}  // namespace seal2real
