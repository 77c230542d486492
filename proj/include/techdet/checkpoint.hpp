#pragma once

#include <filesystem>
#include <string>

#include "techdet/fcn_model.hpp"

namespace techdet {

// Layout: "FCN1", u32 format version, u64 metadata length, UTF-8 JSON
// metadata (config, vocabulary, normalization stats, tensor table), then
// every parameter as a little-endian float64 in parameter_layout order.
void save_checkpoint(const FcnParameters& params, const std::filesystem::path& path);
FcnParameters load_checkpoint(const std::filesystem::path& path);

// In-memory forms of the same format.
std::string encode_checkpoint(const FcnParameters& params);
FcnParameters decode_checkpoint(std::string_view bytes,
                                const std::string& context = "checkpoint");

}  // namespace techdet
