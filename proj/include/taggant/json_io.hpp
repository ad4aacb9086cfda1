#pragma once

#include <filesystem>

#include <json.hpp>

#include "taggant/dsp.hpp"
#include "taggant/keygen.hpp"

namespace taggant {

using json = nlohmann::json;

void to_json(json& j, const SpectroConfig& c);
void from_json(const json& j, SpectroConfig& c);
void to_json(json& j, const KeyGenConfig& c);
void from_json(const json& j, KeyGenConfig& c);

json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const json& j);

}  // namespace taggant
