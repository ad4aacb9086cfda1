#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

#include <Eigen/Dense>

namespace taggant {

/// Mono waveform with amplitudes in [-1, 1]. Samples are stored as float32,
/// the same precision the perturbation artifacts are exchanged in.
class AudioClip {
 public:
  AudioClip() = default;
  AudioClip(Eigen::VectorXf samples, int sample_rate);

  /// Builds a clip from double samples, clamping each into [-1, 1].
  static AudioClip clamped(const Eigen::Ref<const Eigen::VectorXd>& samples, int sample_rate);

  const Eigen::VectorXf& samples() const { return samples_; }
  int sample_rate() const { return sample_rate_; }
  Eigen::Index size() const { return samples_.size(); }
  bool empty() const { return samples_.size() == 0; }
  double duration_seconds() const { return double(size()) / sample_rate_; }

  Eigen::VectorXd as_double() const { return samples_.cast<double>(); }

  /// Trims or zero-pads to exactly `length` samples.
  AudioClip fitted(Eigen::Index length) const;

 private:
  Eigen::VectorXf samples_;
  int sample_rate_ = 0;
};

enum class WavEncoding { pcm16, float32 };

struct WavData {
  Eigen::VectorXf samples;
  int sample_rate = 0;
  WavEncoding encoding = WavEncoding::pcm16;
};

/// Reads a mono RIFF/WAVE file (PCM 8/16/24/32-bit or IEEE float32).
/// Throws std::runtime_error on anything unreadable or multi-channel.
WavData read_wav(const std::filesystem::path& path);

void write_wav(const std::filesystem::path& path, std::span<const float> samples, int sample_rate,
               WavEncoding encoding);

AudioClip read_clip(const std::filesystem::path& path);
void write_clip(const std::filesystem::path& path, const AudioClip& clip);

/// 16-bit quantization as performed by write_wav(pcm16) followed by read_wav.
float quantize_pcm16(float x);

/// Band-limited resampling with a Hann-windowed sinc kernel.
Eigen::VectorXf resample(const Eigen::VectorXf& x, int from_rate, int to_rate);

/// 64-bit FNV-1a over raw bytes, rendered as 16 hex digits.
std::string content_hash(std::span<const std::byte> bytes);

template <typename Derived>
std::string content_hash(const Eigen::DenseBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> dense = m;
  return content_hash(std::as_bytes(std::span<const Scalar>(dense.data(), std::size_t(dense.size()))));
}

inline std::string content_hash(const AudioClip& clip) { return content_hash(clip.samples()); }

}  // namespace taggant
