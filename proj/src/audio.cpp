#include "taggant/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace taggant {

AudioClip::AudioClip(Eigen::VectorXf samples, int sample_rate)
    : samples_(std::move(samples)), sample_rate_(sample_rate) {
  if (sample_rate_ <= 0) throw std::invalid_argument("AudioClip: sample_rate must be positive");
  if (samples_.size() == 0) throw std::invalid_argument("AudioClip: empty waveform");
  for (Eigen::Index i = 0; i < samples_.size(); ++i) {
    const float s = samples_[i];
    if (!(s >= -1.0f && s <= 1.0f))
      throw std::invalid_argument("AudioClip: sample " + std::to_string(i) + " outside [-1, 1]");
  }
}

AudioClip AudioClip::clamped(const Eigen::Ref<const Eigen::VectorXd>& samples, int sample_rate) {
  Eigen::VectorXf s = samples.cwiseMax(-1.0).cwiseMin(1.0).cast<float>();
  return AudioClip(std::move(s), sample_rate);
}

AudioClip AudioClip::fitted(Eigen::Index length) const {
  if (length == size()) return *this;
  Eigen::VectorXf out = Eigen::VectorXf::Zero(length);
  const Eigen::Index n = std::min(length, size());
  out.head(n) = samples_.head(n);
  return AudioClip(std::move(out), sample_rate_);
}

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

template <typename T>
T read_le(const unsigned char* p) {
  T v{};
  std::memcpy(&v, p, sizeof(T));
  return v;
}

template <typename T>
void put_le(std::vector<unsigned char>& out, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

void put_tag(std::vector<unsigned char>& out, const char* tag) { out.insert(out.end(), tag, tag + 4); }

}  // namespace

WavData read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto fail = [&](const std::string& why) { throw std::runtime_error(path.string() + ": " + why); };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    fail("not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const auto size = read_le<std::uint32_t>(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) {
      // Truncated data chunks are common in streamed recordings; accept what is there.
      if (std::memcmp(chunk, "data", 4) != 0) fail("truncated chunk");
    }
    const std::size_t avail = std::min<std::size_t>(size, bytes.size() - body);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (avail < 16) fail("short fmt chunk");
      format = read_le<std::uint16_t>(chunk + 8);
      channels = read_le<std::uint16_t>(chunk + 10);
      rate = read_le<std::uint32_t>(chunk + 12);
      bits = read_le<std::uint16_t>(chunk + 22);
      if (format == kFormatExtensible && avail >= 26) format = read_le<std::uint16_t>(chunk + 32);
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_size = avail;
    }
    pos = body + size + (size & 1u);
  }
  if (channels == 0 || data == nullptr) fail("missing fmt or data chunk");
  if (channels != 1) fail("expected mono audio, got " + std::to_string(channels) + " channels");
  if (rate == 0) fail("zero sample rate");

  WavData out;
  out.sample_rate = int(rate);
  const std::size_t width = bits / 8;
  if (width == 0) fail("unsupported bit depth");
  const auto n = Eigen::Index(data_size / width);
  out.samples.resize(n);
  if (format == kFormatFloat && bits == 32) {
    out.encoding = WavEncoding::float32;
    for (Eigen::Index i = 0; i < n; ++i) out.samples[i] = read_le<float>(data + i * 4);
  } else if (format == kFormatPcm) {
    out.encoding = WavEncoding::pcm16;
    for (Eigen::Index i = 0; i < n; ++i) {
      const unsigned char* p = data + i * width;
      switch (bits) {
        case 8: out.samples[i] = (float(p[0]) - 128.0f) / 128.0f; break;
        case 16: out.samples[i] = float(read_le<std::int16_t>(p)) / 32768.0f; break;
        case 24: {
          std::int32_t v = std::int32_t(p[0]) | (std::int32_t(p[1]) << 8) | (std::int32_t(p[2]) << 16);
          if (v & 0x800000) v -= 0x1000000;
          out.samples[i] = float(double(v) / 8388608.0);
          break;
        }
        case 32: out.samples[i] = float(double(read_le<std::int32_t>(p)) / 2147483648.0); break;
        default: fail("unsupported PCM bit depth " + std::to_string(bits));
      }
    }
  } else {
    fail("unsupported WAV format tag " + std::to_string(format));
  }
  return out;
}

float quantize_pcm16(float x) {
  const double scaled = std::nearbyint(double(x) * 32768.0);
  return float(std::clamp(scaled, -32768.0, 32767.0) / 32768.0);
}

void write_wav(const std::filesystem::path& path, std::span<const float> samples, int sample_rate,
               WavEncoding encoding) {
  const std::uint16_t bits = encoding == WavEncoding::pcm16 ? 16 : 32;
  const std::uint16_t format = encoding == WavEncoding::pcm16 ? kFormatPcm : kFormatFloat;
  const std::uint32_t data_size = std::uint32_t(samples.size() * (bits / 8));
  std::vector<unsigned char> out;
  out.reserve(44 + data_size);
  put_tag(out, "RIFF");
  put_le<std::uint32_t>(out, 36 + data_size);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_le<std::uint32_t>(out, 16);
  put_le<std::uint16_t>(out, format);
  put_le<std::uint16_t>(out, 1);
  put_le<std::uint32_t>(out, std::uint32_t(sample_rate));
  put_le<std::uint32_t>(out, std::uint32_t(sample_rate) * (bits / 8));
  put_le<std::uint16_t>(out, bits / 8);
  put_le<std::uint16_t>(out, bits);
  put_tag(out, "data");
  put_le<std::uint32_t>(out, data_size);
  for (float s : samples) {
    if (encoding == WavEncoding::pcm16) {
      put_le<std::int16_t>(out, std::int16_t(std::lround(double(quantize_pcm16(s)) * 32768.0)));
    } else {
      put_le<float>(out, s);
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()), std::streamsize(out.size()));
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

AudioClip read_clip(const std::filesystem::path& path) {
  WavData w = read_wav(path);
  for (Eigen::Index i = 0; i < w.samples.size(); ++i) w.samples[i] = std::clamp(w.samples[i], -1.0f, 1.0f);
  return AudioClip(std::move(w.samples), w.sample_rate);
}

void write_clip(const std::filesystem::path& path, const AudioClip& clip) {
  write_wav(path, std::span<const float>(clip.samples().data(), std::size_t(clip.size())), clip.sample_rate(),
            WavEncoding::pcm16);
}

Eigen::VectorXf resample(const Eigen::VectorXf& x, int from_rate, int to_rate) {
  if (from_rate <= 0 || to_rate <= 0) throw std::invalid_argument("resample: rates must be positive");
  if (from_rate == to_rate) return x;
  const double ratio = double(to_rate) / from_rate;
  const double cutoff = std::min(1.0, ratio);
  constexpr int kHalfWidth = 16;
  const double support = kHalfWidth / cutoff;
  const auto out_len = Eigen::Index(std::ceil(double(x.size()) * ratio));
  Eigen::VectorXf out(out_len);
  for (Eigen::Index i = 0; i < out_len; ++i) {
    const double center = double(i) / ratio;
    const auto lo = Eigen::Index(std::max(0.0, std::ceil(center - support)));
    const auto hi = Eigen::Index(std::min(double(x.size() - 1), std::floor(center + support)));
    double acc = 0.0;
    for (Eigen::Index j = lo; j <= hi; ++j) {
      const double t = (double(j) - center) * cutoff;
      const double sinc = t == 0.0 ? 1.0 : std::sin(std::numbers::pi * t) / (std::numbers::pi * t);
      const double window = 0.5 + 0.5 * std::cos(std::numbers::pi * t / kHalfWidth);
      acc += x[j] * cutoff * sinc * window;
    }
    out[i] = float(std::clamp(acc, -1.0, 1.0));
  }
  return out;
}

std::string content_hash(std::span<const std::byte> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::byte b : bytes) {
    h ^= std::uint64_t(b);
    h *= 0x100000001b3ull;
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[std::size_t(i)] = kHex[h & 0xf];
    h >>= 4;
  }
  return s;
}

}  // namespace taggant
