#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "taggant/audio.hpp"

namespace taggant {

enum class Window { hann, rectangular };

std::string to_string(Window w);
Window window_from_string(const std::string& s);

/// Short-time Fourier / mel front-end parameters. Frames are taken without
/// padding, so a clip of n samples yields floor((n - n_fft) / hop) + 1 frames.
struct SpectroConfig {
  int sample_rate = 16000;
  int n_fft = 400;
  int hop = 160;
  int n_mels = 128;
  double fmin = 0.0;
  double fmax = 8000.0;
  Window window = Window::hann;

  void validate() const;
  Eigen::Index n_bins() const { return n_fft / 2 + 1; }
  Eigen::Index n_frames(Eigen::Index length) const;
  /// Waveform length produced by the inverse transform of `frames` frames.
  Eigen::Index signal_length(Eigen::Index frames) const { return (frames - 1) * hop + n_fft; }

  bool operator==(const SpectroConfig&) const = default;
};

/// Non-negative n_mels x n_frames magnitudes together with the config that produced them.
struct MelMatrix {
  Eigen::MatrixXd values;
  SpectroConfig config;
};

/// Periodic window of length n_fft.
Eigen::VectorXd window_coefficients(const SpectroConfig& cfg);

/// One-sided STFT: (n_fft/2 + 1) x n_frames. Throws std::invalid_argument for
/// signals shorter than one window.
Eigen::MatrixXcd stft(const Eigen::Ref<const Eigen::VectorXd>& x, const SpectroConfig& cfg);
Eigen::MatrixXcd stft(const AudioClip& clip, const SpectroConfig& cfg);

/// Adjoint of stft() with respect to the real input signal. `grad` holds
/// dL/dRe + i dL/dIm for every coefficient; the result is dL/dx.
Eigen::VectorXd stft_adjoint(const Eigen::MatrixXcd& grad, Eigen::Index length, const SpectroConfig& cfg);

/// Least-squares overlap-add inverse (the Griffin-Lim estimator). Exact where
/// the squared-window sum is at least 1% of its peak; tapered at the edges.
Eigen::VectorXd istft(const Eigen::MatrixXcd& spectrum, const SpectroConfig& cfg);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Triangular HTK-scale filterbank with unit peaks, n_mels x n_bins.
Eigen::MatrixXd mel_filterbank(const SpectroConfig& cfg);

MelMatrix mel_spectrogram(const AudioClip& clip, const SpectroConfig& cfg);
MelMatrix mel_spectrogram(const Eigen::Ref<const Eigen::VectorXd>& x, const SpectroConfig& cfg);

/// Non-negative least-squares inverse of the filterbank, applied column-wise
/// (projected gradient from the clamped pseudo-inverse).
Eigen::MatrixXd mel_to_linear(const MelMatrix& mel);
Eigen::MatrixXd mel_to_linear(const Eigen::MatrixXd& mel, const Eigen::MatrixXd& filterbank);

/// Griffin-Lim phase retrieval from seeded uniform random phase. The result is
/// scaled down only when its peak exceeds 1.
AudioClip griffin_lim(const Eigen::MatrixXd& magnitude, const SpectroConfig& cfg, int iterations,
                      std::uint64_t seed);

/// || |stft(x)| - target || / || target ||.
double spectral_convergence(const Eigen::MatrixXd& target, const Eigen::Ref<const Eigen::VectorXd>& x,
                            const SpectroConfig& cfg);

enum class Interpolation { nearest, bilinear };

std::string to_string(Interpolation i);
Interpolation interpolation_from_string(const std::string& s);

namespace detail {

// Source coordinate of output cell i under the half-pixel (align_corners=false) mapping.
inline double source_coordinate(Eigen::Index i, Eigen::Index in, Eigen::Index out) {
  return (double(i) + 0.5) * double(in) / double(out) - 0.5;
}

inline Eigen::Index nearest_index(Eigen::Index i, Eigen::Index in, Eigen::Index out) {
  // Round half toward the lower index.
  const auto j = Eigen::Index(std::ceil(source_coordinate(i, in, out) - 0.5));
  return std::clamp<Eigen::Index>(j, 0, in - 1);
}

struct LinearTap {
  Eigen::Index lo, hi;
  double frac;
};

inline LinearTap linear_tap(Eigen::Index i, Eigen::Index in, Eigen::Index out) {
  const double s = std::clamp(source_coordinate(i, in, out), 0.0, double(in - 1));
  const auto lo = Eigen::Index(std::floor(s));
  return {lo, std::min(lo + 1, in - 1), s - double(lo)};
}

}  // namespace detail

/// Resamples a matrix onto an out_rows x out_cols grid. Both modes keep every
/// output inside [min(m), max(m)].
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> resize_matrix(
    const Eigen::MatrixBase<Derived>& m, Eigen::Index out_rows, Eigen::Index out_cols, Interpolation mode) {
  using Scalar = typename Derived::Scalar;
  if (m.size() == 0) throw std::invalid_argument("resize_matrix: empty matrix");
  if (out_rows < 1 || out_cols < 1) throw std::invalid_argument("resize_matrix: output shape must be positive");
  const Eigen::Index in_rows = m.rows(), in_cols = m.cols();
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> out(out_rows, out_cols);
  if (mode == Interpolation::nearest) {
    for (Eigen::Index c = 0; c < out_cols; ++c) {
      const Eigen::Index sc = detail::nearest_index(c, in_cols, out_cols);
      for (Eigen::Index r = 0; r < out_rows; ++r) out(r, c) = m(detail::nearest_index(r, in_rows, out_rows), sc);
    }
    return out;
  }
  for (Eigen::Index c = 0; c < out_cols; ++c) {
    const auto tc = detail::linear_tap(c, in_cols, out_cols);
    for (Eigen::Index r = 0; r < out_rows; ++r) {
      const auto tr = detail::linear_tap(r, in_rows, out_rows);
      const Scalar top = m(tr.lo, tc.lo) * Scalar(1 - tc.frac) + m(tr.lo, tc.hi) * Scalar(tc.frac);
      const Scalar bottom = m(tr.hi, tc.lo) * Scalar(1 - tc.frac) + m(tr.hi, tc.hi) * Scalar(tc.frac);
      out(r, c) = top * Scalar(1 - tr.frac) + bottom * Scalar(tr.frac);
    }
  }
  // Rounding can push a convex combination one ulp past its endpoints.
  const Scalar lo = m.minCoeff(), hi = m.maxCoeff();
  return out.cwiseMax(lo).cwiseMin(hi);
}

/// 10 log10(sum clean^2 / sum (perturbed - clean)^2). Identical inputs give +inf.
double snr_db(const AudioClip& clean, const AudioClip& perturbed);
double snr_db(const Eigen::Ref<const Eigen::VectorXd>& clean, const Eigen::Ref<const Eigen::VectorXd>& perturbed);

}  // namespace taggant
