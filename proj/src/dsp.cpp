#include "taggant/dsp.hpp"

#include <complex>
#include <numbers>
#include <random>
#include <vector>

#include <unsupported/Eigen/FFT>

namespace taggant {

namespace {

using Complex = std::complex<double>;

Eigen::FFT<double> half_spectrum_fft() {
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  return fft;
}

void require_shape(const Eigen::MatrixXcd& m, const SpectroConfig& cfg, const char* who) {
  if (m.rows() != cfg.n_bins())
    throw std::invalid_argument(std::string(who) + ": expected " + std::to_string(cfg.n_bins()) +
                                " frequency rows, got " + std::to_string(m.rows()));
  if (m.cols() < 1) throw std::invalid_argument(std::string(who) + ": no frames");
}

}  // namespace

std::string to_string(Window w) { return w == Window::hann ? "hann" : "rectangular"; }

Window window_from_string(const std::string& s) {
  if (s == "hann") return Window::hann;
  if (s == "rectangular") return Window::rectangular;
  throw std::invalid_argument("unknown window '" + s + "'");
}

std::string to_string(Interpolation i) { return i == Interpolation::nearest ? "nearest" : "bilinear"; }

Interpolation interpolation_from_string(const std::string& s) {
  if (s == "nearest") return Interpolation::nearest;
  if (s == "bilinear") return Interpolation::bilinear;
  throw std::invalid_argument("unknown interpolation '" + s + "'");
}

void SpectroConfig::validate() const {
  if (sample_rate <= 0) throw std::invalid_argument("SpectroConfig: sample_rate must be positive");
  if (n_fft < 2) throw std::invalid_argument("SpectroConfig: n_fft must be at least 2");
  if (hop <= 0 || hop > n_fft) throw std::invalid_argument("SpectroConfig: require 0 < hop <= n_fft");
  if (n_mels <= 0 || n_mels > n_bins()) throw std::invalid_argument("SpectroConfig: require 0 < n_mels <= n_fft/2 + 1");
  if (!(fmin >= 0.0 && fmin < fmax && fmax <= sample_rate / 2.0))
    throw std::invalid_argument("SpectroConfig: require 0 <= fmin < fmax <= sample_rate/2");
}

Eigen::Index SpectroConfig::n_frames(Eigen::Index length) const {
  if (length < n_fft) return 0;
  return (length - n_fft) / hop + 1;
}

Eigen::VectorXd window_coefficients(const SpectroConfig& cfg) {
  Eigen::VectorXd w(cfg.n_fft);
  for (int n = 0; n < cfg.n_fft; ++n)
    w[n] = cfg.window == Window::hann ? 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / cfg.n_fft) : 1.0;
  return w;
}

Eigen::MatrixXcd stft(const Eigen::Ref<const Eigen::VectorXd>& x, const SpectroConfig& cfg) {
  cfg.validate();
  const Eigen::Index frames = cfg.n_frames(x.size());
  if (frames < 1)
    throw std::invalid_argument("stft: signal of " + std::to_string(x.size()) + " samples is shorter than n_fft = " +
                                std::to_string(cfg.n_fft));
  const Eigen::VectorXd w = window_coefficients(cfg);
  auto fft = half_spectrum_fft();
  Eigen::MatrixXcd out(cfg.n_bins(), frames);
  std::vector<double> frame(std::size_t(cfg.n_fft));
  std::vector<Complex> spec;
  for (Eigen::Index t = 0; t < frames; ++t) {
    for (int n = 0; n < cfg.n_fft; ++n) frame[std::size_t(n)] = x[t * cfg.hop + n] * w[n];
    fft.fwd(spec, frame);
    for (Eigen::Index k = 0; k < cfg.n_bins(); ++k) out(k, t) = spec[std::size_t(k)];
  }
  return out;
}

Eigen::MatrixXcd stft(const AudioClip& clip, const SpectroConfig& cfg) { return stft(clip.as_double(), cfg); }

Eigen::VectorXd stft_adjoint(const Eigen::MatrixXcd& grad, Eigen::Index length, const SpectroConfig& cfg) {
  cfg.validate();
  require_shape(grad, cfg, "stft_adjoint");
  if (cfg.n_frames(length) != grad.cols()) throw std::invalid_argument("stft_adjoint: frame count does not match length");
  const Eigen::VectorXd w = window_coefficients(cfg);
  Eigen::FFT<double> fft;
  Eigen::VectorXd dx = Eigen::VectorXd::Zero(length);
  std::vector<Complex> full(std::size_t(cfg.n_fft)), time;
  for (Eigen::Index t = 0; t < grad.cols(); ++t) {
    std::fill(full.begin(), full.end(), Complex(0.0, 0.0));
    for (Eigen::Index k = 0; k < cfg.n_bins(); ++k) full[std::size_t(k)] = grad(k, t);
    // d frame[n] = Re sum_k G_k exp(+2 pi i k n / N); inv() carries a 1/N factor.
    fft.inv(time, full);
    for (int n = 0; n < cfg.n_fft; ++n) dx[t * cfg.hop + n] += w[n] * time[std::size_t(n)].real() * cfg.n_fft;
  }
  return dx;
}

Eigen::VectorXd istft(const Eigen::MatrixXcd& spectrum, const SpectroConfig& cfg) {
  cfg.validate();
  require_shape(spectrum, cfg, "istft");
  const Eigen::VectorXd w = window_coefficients(cfg);
  const Eigen::Index length = cfg.signal_length(spectrum.cols());
  Eigen::VectorXd x = Eigen::VectorXd::Zero(length);
  Eigen::VectorXd norm = Eigen::VectorXd::Zero(length);
  auto fft = half_spectrum_fft();
  std::vector<Complex> half(std::size_t(cfg.n_bins()));
  std::vector<double> frame;
  for (Eigen::Index t = 0; t < spectrum.cols(); ++t) {
    for (Eigen::Index k = 0; k < cfg.n_bins(); ++k) half[std::size_t(k)] = spectrum(k, t);
    fft.inv(frame, half, cfg.n_fft);
    for (int n = 0; n < cfg.n_fft; ++n) {
      x[t * cfg.hop + n] += w[n] * frame[std::size_t(n)];
      norm[t * cfg.hop + n] += w[n] * w[n];
    }
  }
  // Edge samples seen only by window tails are tapered instead of amplified.
  const double floor = 1e-2 * norm.maxCoeff();
  for (Eigen::Index i = 0; i < length; ++i) x[i] /= std::max(norm[i], floor);
  return x;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Eigen::MatrixXd mel_filterbank(const SpectroConfig& cfg) {
  cfg.validate();
  const double lo = hz_to_mel(cfg.fmin), hi = hz_to_mel(cfg.fmax);
  Eigen::VectorXd edges(cfg.n_mels + 2);
  for (int i = 0; i < cfg.n_mels + 2; ++i) edges[i] = mel_to_hz(lo + (hi - lo) * i / (cfg.n_mels + 1));
  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(cfg.n_mels, cfg.n_bins());
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    for (Eigen::Index k = 0; k < cfg.n_bins(); ++k) {
      const double f = double(k) * cfg.sample_rate / cfg.n_fft;
      const double rise = (f - left) / (center - left);
      const double fall = (right - f) / (right - center);
      fb(m, k) = std::max(0.0, std::min(rise, fall));
    }
  }
  return fb;
}

MelMatrix mel_spectrogram(const Eigen::Ref<const Eigen::VectorXd>& x, const SpectroConfig& cfg) {
  const Eigen::MatrixXd mag = stft(x, cfg).cwiseAbs();
  return MelMatrix{mel_filterbank(cfg) * mag, cfg};
}

MelMatrix mel_spectrogram(const AudioClip& clip, const SpectroConfig& cfg) {
  return mel_spectrogram(clip.as_double(), cfg);
}

Eigen::MatrixXd mel_to_linear(const MelMatrix& mel) {
  const SpectroConfig& cfg = mel.config;
  cfg.validate();
  if (mel.values.rows() != cfg.n_mels)
    throw std::invalid_argument("mel_to_linear: matrix has " + std::to_string(mel.values.rows()) +
                                " rows but config says n_mels = " + std::to_string(cfg.n_mels));
  return mel_to_linear(mel.values, mel_filterbank(cfg));
}

Eigen::MatrixXd mel_to_linear(const Eigen::MatrixXd& mel, const Eigen::MatrixXd& filterbank) {
  if (mel.rows() != filterbank.rows()) throw std::invalid_argument("mel_to_linear: filterbank/mel row mismatch");
  const Eigen::MatrixXd pinv = filterbank.completeOrthogonalDecomposition().pseudoInverse();
  Eigen::MatrixXd s = (pinv * mel).cwiseMax(0.0);
  // Projected gradient on ||F s - mel||^2 with s >= 0, started from the clamped pseudo-inverse.
  const double lipschitz = filterbank.operatorNorm();
  if (lipschitz == 0.0) return s;
  const double step = 1.0 / (lipschitz * lipschitz);
  const Eigen::MatrixXd gram = filterbank.transpose() * filterbank;
  const Eigen::MatrixXd rhs = filterbank.transpose() * mel;
  for (int it = 0; it < 300; ++it) s = (s - step * (gram * s - rhs)).cwiseMax(0.0);
  return s;
}

double spectral_convergence(const Eigen::MatrixXd& target, const Eigen::Ref<const Eigen::VectorXd>& x,
                            const SpectroConfig& cfg) {
  const Eigen::MatrixXd mag = stft(x, cfg).cwiseAbs();
  if (mag.rows() != target.rows() || mag.cols() != target.cols())
    throw std::invalid_argument("spectral_convergence: shape mismatch");
  const double denom = target.norm();
  return denom > 0.0 ? (mag - target).norm() / denom : mag.norm();
}

AudioClip griffin_lim(const Eigen::MatrixXd& magnitude, const SpectroConfig& cfg, int iterations, std::uint64_t seed) {
  cfg.validate();
  if (iterations < 0) throw std::invalid_argument("griffin_lim: iterations must be >= 0");
  if (magnitude.rows() != cfg.n_bins() || magnitude.cols() < 1)
    throw std::invalid_argument("griffin_lim: magnitude must have n_fft/2 + 1 rows");
  if ((magnitude.array() < 0.0).any()) throw std::invalid_argument("griffin_lim: negative magnitude");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  Eigen::MatrixXcd spec(magnitude.rows(), magnitude.cols());
  for (Eigen::Index c = 0; c < spec.cols(); ++c)
    for (Eigen::Index r = 0; r < spec.rows(); ++r) spec(r, c) = std::polar(magnitude(r, c), phase(rng));

  for (int it = 0; it < iterations; ++it) {
    const Eigen::MatrixXcd rebuilt = stft(istft(spec, cfg), cfg);
    for (Eigen::Index c = 0; c < spec.cols(); ++c) {
      for (Eigen::Index r = 0; r < spec.rows(); ++r) {
        const double a = std::abs(rebuilt(r, c));
        spec(r, c) = a > 0.0 ? magnitude(r, c) * (rebuilt(r, c) / a) : Complex(magnitude(r, c), 0.0);
      }
    }
  }
  Eigen::VectorXd x = istft(spec, cfg);
  const double peak = x.cwiseAbs().maxCoeff();
  if (peak > 1.0) x /= peak;
  return AudioClip::clamped(x, cfg.sample_rate);
}

double snr_db(const Eigen::Ref<const Eigen::VectorXd>& clean, const Eigen::Ref<const Eigen::VectorXd>& perturbed) {
  if (clean.size() != perturbed.size()) throw std::invalid_argument("snr_db: length mismatch");
  const double signal = clean.squaredNorm();
  if (signal <= 0.0) throw std::invalid_argument("snr_db: clean signal has zero energy");
  const double noise = (perturbed - clean).squaredNorm();
  if (noise == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(signal / noise);
}

double snr_db(const AudioClip& clean, const AudioClip& perturbed) {
  if (clean.sample_rate() != perturbed.sample_rate()) throw std::invalid_argument("snr_db: sample rate mismatch");
  return snr_db(clean.as_double(), perturbed.as_double());
}

}  // namespace taggant
