#include "seal2real/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "seal2real/error.hpp"

namespace seal2real {

namespace {

constexpr char kMagic[8] = {'S', '2', 'R', 'C', 'K', 'P', 'T', '\0'};

std::string dtype_name(torch::Dtype d) {
  switch (d) {
    case torch::kFloat32: return "f32";
    case torch::kFloat64: return "f64";
    case torch::kInt64: return "i64";
    default: fail(Errc::BadCheckpoint, "unsupported tensor dtype");
  }
}

torch::Dtype dtype_from(const std::string& s) {
  if (s == "f32") return torch::kFloat32;
  if (s == "f64") return torch::kFloat64;
  if (s == "i64") return torch::kInt64;
  fail(Errc::BadCheckpoint, "unknown dtype tag '" + s + "'");
}

template <typename T>
void append_pod(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T read_pod(const std::string& in, std::size_t& pos) {
  require(pos + sizeof(T) <= in.size(), Errc::BadCheckpoint, "truncated checkpoint");
  T value;
  std::memcpy(&value, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

}  // namespace

void Checkpoint::put(const std::string& name, const torch::Tensor& tensor) {
  tensors_[name] = tensor.detach().to(torch::kCPU).contiguous().clone();
}

const torch::Tensor& Checkpoint::get(const std::string& name) const {
  auto it = tensors_.find(name);
  require(it != tensors_.end(), Errc::BadCheckpoint, "checkpoint has no tensor '" + name + "'");
  return it->second;
}

std::vector<std::string> Checkpoint::names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : tensors_) out.push_back(name);
  return out;
}

void Checkpoint::put_module(const std::string& prefix, const torch::nn::Module& module) {
  for (const auto& p : module.named_parameters()) put(prefix + "." + p.key(), p.value());
  for (const auto& b : module.named_buffers()) put(prefix + "." + b.key(), b.value());
}

void Checkpoint::load_module(const std::string& prefix, torch::nn::Module& module) const {
  torch::NoGradGuard guard;
  auto copy_in = [&](const std::string& key, torch::Tensor& dst) {
    const auto& src = get(prefix + "." + key);
    require(src.sizes() == dst.sizes(), Errc::BadCheckpoint, "shape mismatch for '" + prefix + "." + key + "'");
    dst.copy_(src);
  };
  for (auto& p : module.named_parameters()) copy_in(p.key(), p.value());
  for (auto& b : module.named_buffers()) copy_in(b.key(), b.value());
}

void Checkpoint::put_adam(const std::string& prefix, torch::optim::Adam& optimizer) {
  auto& state = optimizer.state();
  std::size_t index = 0;
  for (auto& group : optimizer.param_groups()) {
    for (auto& p : group.params()) {
      const std::string key = prefix + "." + std::to_string(index++);
      auto it = state.find(p.unsafeGetTensorImpl());
      if (it == state.end()) continue;
      auto& s = static_cast<torch::optim::AdamParamState&>(*it->second);
      put(key + ".step", torch::tensor(s.step(), torch::kInt64));
      put(key + ".exp_avg", s.exp_avg());
      put(key + ".exp_avg_sq", s.exp_avg_sq());
    }
  }
}

void Checkpoint::load_adam(const std::string& prefix, torch::optim::Adam& optimizer) const {
  auto& state = optimizer.state();
  state.clear();
  std::size_t index = 0;
  for (auto& group : optimizer.param_groups()) {
    for (auto& p : group.params()) {
      const std::string key = prefix + "." + std::to_string(index++);
      if (!has(key + ".step")) continue;
      auto s = std::make_unique<torch::optim::AdamParamState>();
      s->step(get(key + ".step").item<int64_t>());
      s->exp_avg(get(key + ".exp_avg").clone().to(p.scalar_type()));
      s->exp_avg_sq(get(key + ".exp_avg_sq").clone().to(p.scalar_type()));
      state[p.unsafeGetTensorImpl()] = std::move(s);
    }
  }
}

std::string Checkpoint::serialize() const {
  nlohmann::json table = nlohmann::json::array();
  std::string blob;
  for (const auto& [name, t] : tensors_) {
    const auto nbytes = static_cast<std::size_t>(t.numel() * t.element_size());
    table.push_back({{"name", name},
                     {"dtype", dtype_name(t.scalar_type())},
                     {"shape", t.sizes().vec()},
                     {"offset", blob.size()},
                     {"nbytes", nbytes}});
    blob.append(static_cast<const char*>(t.data_ptr()), nbytes);
  }
  const std::string header = nlohmann::json{{"meta", meta}, {"tensors", table}}.dump();
  std::string out(kMagic, sizeof kMagic);
  append_pod<std::uint32_t>(out, kFormatVersion);
  append_pod<std::uint64_t>(out, header.size());
  out += header;
  out += blob;
  return out;
}

Checkpoint Checkpoint::deserialize(const std::string& bytes) {
  require(bytes.size() >= sizeof kMagic && std::memcmp(bytes.data(), kMagic, sizeof kMagic) == 0, Errc::BadCheckpoint,
          "not a checkpoint (bad magic)");
  std::size_t pos = sizeof kMagic;
  const auto version = read_pod<std::uint32_t>(bytes, pos);
  require(version == kFormatVersion, Errc::BadCheckpoint, "unsupported checkpoint version " + std::to_string(version));
  const auto header_len = read_pod<std::uint64_t>(bytes, pos);
  require(pos + header_len <= bytes.size(), Errc::BadCheckpoint, "truncated checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(pos, header_len));
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::BadCheckpoint, std::string("corrupt header: ") + e.what());
  }
  pos += header_len;

  Checkpoint ckpt;
  ckpt.meta = header.at("meta");
  for (const auto& entry : header.at("tensors")) {
    const auto offset = entry.at("offset").get<std::size_t>();
    const auto nbytes = entry.at("nbytes").get<std::size_t>();
    require(pos + offset + nbytes <= bytes.size(), Errc::BadCheckpoint, "truncated tensor blob");
    auto shape = entry.at("shape").get<std::vector<int64_t>>();
    auto t = torch::empty(shape, dtype_from(entry.at("dtype").get<std::string>()));
    require(static_cast<std::size_t>(t.numel() * t.element_size()) == nbytes, Errc::BadCheckpoint, "tensor size mismatch");
    std::memcpy(t.data_ptr(), bytes.data() + pos + offset, nbytes);
    ckpt.tensors_[entry.at("name").get<std::string>()] = t;
  }
  return ckpt;
}

void Checkpoint::save(const std::filesystem::path& path) const { write_file_atomic(path, serialize()); }

Checkpoint Checkpoint::load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".tmp";
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), Errc::IoFailure, "cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    require(static_cast<bool>(out), Errc::IoFailure, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  require(!ec, Errc::IoFailure, "cannot rename " + tmp.string() + ": " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), Errc::IoFailure, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace seal2real
