#include "siammask/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "siammask/errors.hpp"

namespace siammask {

namespace {

constexpr char kMagic[8] = {'S', 'M', 'C', 'K', 'P', 'T', '\0', '\1'};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const SiamMaskModel& model, const nlohmann::json& extra) {
  nlohmann::json header;
  header["version"] = kCheckpointVersion;
  header["config"] = model.config();
  header["variant"] = to_string(model.variant());
  header["extra"] = extra;
  header["params"] = nlohmann::json::array();
  for (const auto& [name, v] : model.params().entries()) {
    const auto& t = v.value();
    header["params"].push_back({{"name", name}, {"shape", {t.c, t.h, t.w}}});
  }
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw ConfigError("cannot write checkpoint " + tmp.string());
    out.write(kMagic, sizeof kMagic);
    const std::uint64_t n = text.size();
    out.write(reinterpret_cast<const char*>(&n), sizeof n);
    out.write(text.data(), static_cast<std::streamsize>(n));
    for (const auto& [name, v] : model.params().entries()) {
      const auto& d = v.value().data;
      out.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(d.size() * sizeof(double)));
    }
    if (!out) throw ConfigError("short write to checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const std::optional<ModelConfig>& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw ConfigError(path.string() + ": not a checkpoint");
  std::uint64_t n = 0;
  in.read(reinterpret_cast<char*>(&n), sizeof n);
  if (!in || n > (1u << 26)) throw ConfigError(path.string() + ": corrupt header length");
  std::string text(n, '\0');
  in.read(text.data(), static_cast<std::streamsize>(n));
  if (!in) throw ConfigError(path.string() + ": truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": bad header: " + e.what());
  }
  if (header.value("version", -1) != kCheckpointVersion) {
    throw ConfigError(path.string() + ": unsupported checkpoint version " + header.value("version", nlohmann::json()).dump());
  }
  const ModelConfig config = header.at("config").get<ModelConfig>();
  if (expected && !(*expected == config)) {
    throw ConfigError(path.string() + ": model config differs from the requested one");
  }
  const Variant variant = variant_from_string(header.at("variant").get<std::string>());

  // The reference model fixes the expected names and shapes.
  const SiamMaskModel reference(config, variant, 0);
  const auto& ref = reference.params().entries();
  const auto& stored = header.at("params");
  if (stored.size() != ref.size()) throw ConfigError(path.string() + ": parameter count mismatch");
  ModelParams params;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const auto& t = ref[i].second.value();
    const auto shape = stored[i].at("shape").get<std::vector<int>>();
    if (stored[i].at("name").get<std::string>() != ref[i].first || shape != std::vector<int>{t.c, t.h, t.w}) {
      throw ConfigError(path.string() + ": parameter '" + ref[i].first + "' missing or reshaped");
    }
    nn::Tensor v(t.c, t.h, t.w);
    in.read(reinterpret_cast<char*>(v.data.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!in) throw ConfigError(path.string() + ": truncated payload at '" + ref[i].first + "'");
    params.add(ref[i].first, std::move(v));
  }
  return {SiamMaskModel(config, variant, std::move(params)), header.value("extra", nlohmann::json::object())};
}

}  // namespace siammask
