#include "taggant/json_io.hpp"

#include <fstream>
#include <stdexcept>

namespace taggant {

void to_json(json& j, const SpectroConfig& c) {
  j = json{{"sample_rate", c.sample_rate}, {"n_fft", c.n_fft}, {"hop", c.hop},   {"n_mels", c.n_mels},
           {"fmin", c.fmin},               {"fmax", c.fmax},   {"window", to_string(c.window)}};
}

void from_json(const json& j, SpectroConfig& c) {
  j.at("sample_rate").get_to(c.sample_rate);
  j.at("n_fft").get_to(c.n_fft);
  j.at("hop").get_to(c.hop);
  j.at("n_mels").get_to(c.n_mels);
  j.at("fmin").get_to(c.fmin);
  j.at("fmax").get_to(c.fmax);
  c.window = window_from_string(j.at("window").get<std::string>());
}

void to_json(json& j, const KeyGenConfig& c) {
  j = json{{"d", c.d},
           {"distribution", to_string(c.distribution)},
           {"interpolation", to_string(c.interpolation)},
           {"num_keys", c.num_keys},
           {"num_classes", c.num_classes},
           {"seed", c.seed},
           {"spectro", c.spectro},
           {"gl_iterations", c.gl_iterations},
           {"clip_samples", c.clip_samples},
           {"mel_peak", c.mel_peak}};
}

void from_json(const json& j, KeyGenConfig& c) {
  j.at("d").get_to(c.d);
  c.distribution = key_distribution_from_string(j.at("distribution").get<std::string>());
  c.interpolation = interpolation_from_string(j.at("interpolation").get<std::string>());
  j.at("num_keys").get_to(c.num_keys);
  j.at("num_classes").get_to(c.num_classes);
  j.at("seed").get_to(c.seed);
  j.at("spectro").get_to(c.spectro);
  j.at("gl_iterations").get_to(c.gl_iterations);
  j.at("clip_samples").get_to(c.clip_samples);
  j.at("mel_peak").get_to(c.mel_peak);
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace taggant
