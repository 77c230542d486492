#include "techdet/checkpoint.hpp"

#include "binary_io.hpp"
#include "techdet/error.hpp"

namespace techdet {
namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

std::string encode_checkpoint(const FcnParameters& params) {
  const auto layout = parameter_layout(params.config);
  if (params.values.size() != layout.back().offset + layout.back().size)
    throw ConfigError("parameter count does not match the model config");
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& spec : layout)
    tensors.push_back({{"name", spec.name}, {"shape", spec.shape}});
  nlohmann::json meta = {
      {"config", params.config.to_json()},
      {"vocabulary", params.vocabulary.size() == 0
                         ? nlohmann::json(nullptr)
                         : params.vocabulary.to_json()},
      {"normalization",
       {{"mean", params.stats.mean}, {"std", params.stats.stddev}}},
      {"tensors", tensors},
      {"n_values", params.values.size()}};
  const std::string json = meta.dump();

  std::string out = "FCN1";
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint64_t>(out, json.size());
  out += json;
  out.reserve(out.size() + params.values.size() * sizeof(double));
  for (const double v : params.values) detail::put_le<double>(out, v);
  return out;
}

FcnParameters decode_checkpoint(std::string_view bytes, const std::string& context) {
  detail::ByteReader reader(bytes, context);
  if (reader.remaining() < 16 || reader.take(4) != "FCN1")
    throw FormatError(context + ": bad magic, expected FCN1");
  if (const auto version = reader.get<std::uint32_t>(); version != kCheckpointVersion)
    throw FormatError(context + ": unsupported checkpoint version " +
                      std::to_string(version));
  const auto json_size = reader.get<std::uint64_t>();
  if (json_size > reader.remaining()) throw FormatError(context + ": truncated file");
  FcnParameters params;
  std::size_t n_values = 0;
  try {
    const auto meta = nlohmann::json::parse(reader.take(json_size));
    params.config = FcnConfig::from_json(meta.at("config"));
    if (!meta.at("vocabulary").is_null())
      params.vocabulary = TechniqueVocabulary::from_json(meta.at("vocabulary"));
    const auto& norm = meta.at("normalization");
    params.stats.mean = norm.at("mean").get<std::vector<double>>();
    params.stats.stddev = norm.at("std").get<std::vector<double>>();
    n_values = meta.at("n_values").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(context + ": bad metadata: " + e.what());
  }
  const auto layout = parameter_layout(params.config);
  if (n_values != layout.back().offset + layout.back().size)
    throw FormatError(context + ": value count does not match the config");
  if (params.vocabulary.size() != 0 &&
      params.vocabulary.size() != params.config.n_classes)
    throw FormatError(context + ": vocabulary size does not match n_classes");
  if (reader.remaining() != n_values * sizeof(double))
    throw FormatError(context + ": truncated file");
  params.values.resize(n_values);
  for (double& v : params.values) v = reader.get<double>();
  return params;
}

void save_checkpoint(const FcnParameters& params, const std::filesystem::path& path) {
  detail::write_file(path, encode_checkpoint(params));
}

FcnParameters load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(detail::read_file(path), path.string());
}

}  // namespace techdet
