#include "taggant/desk_data.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>

namespace taggant {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

const std::array<std::string, DeskDataConfig::kNumClasses> kNames{
    "low_tone", "high_tone", "chirp_up", "chirp_down", "noise_burst",
    "rumble",   "clicks",    "tremolo",  "chord",      "vibrato"};

// Smooth attack/release gate over [onset, onset + length).
Eigen::ArrayXd envelope(Eigen::Index n, Eigen::Index onset, Eigen::Index length, Eigen::Index ramp) {
  Eigen::ArrayXd env = Eigen::ArrayXd::Zero(n);
  for (Eigen::Index i = 0; i < length && onset + i < n; ++i) {
    double g = 1.0;
    if (i < ramp) g = 0.5 - 0.5 * std::cos(std::numbers::pi * double(i) / double(ramp));
    if (length - 1 - i < ramp) g = std::min(g, 0.5 - 0.5 * std::cos(std::numbers::pi * double(length - 1 - i) / double(ramp)));
    env[onset + i] = g;
  }
  return env;
}

Eigen::ArrayXd one_pole_lowpass(const Eigen::ArrayXd& x, double a) {
  Eigen::ArrayXd y(x.size());
  double s = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) y[i] = s = a * s + (1.0 - a) * x[i];
  return y;
}

}  // namespace

void DeskDataConfig::validate() const {
  if (num_clips < 2 * kNumClasses) throw std::invalid_argument("DeskDataConfig: need at least two clips per class");
  if (sample_rate < 8000 || clip_samples < 1) throw std::invalid_argument("DeskDataConfig: bad audio format");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
    throw std::invalid_argument("DeskDataConfig: validation_fraction must be in (0, 1)");
}

const std::string& desk_class_name(int label) {
  if (label < 0 || label >= DeskDataConfig::kNumClasses) throw std::out_of_range("desk_class_name: bad label");
  return kNames[std::size_t(label)];
}

AudioClip desk_clip(int label, const DeskDataConfig& cfg, Rng& rng) {
  const Eigen::Index n = cfg.clip_samples;
  const double sr = cfg.sample_rate;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto range = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };

  const Eigen::Index length = Eigen::Index(range(0.35, 0.85) * double(n));
  const Eigen::Index onset = Eigen::Index(u(rng) * double(n - length));
  const Eigen::ArrayXd env = envelope(n, onset, length, Eigen::Index(0.02 * sr));
  const Eigen::ArrayXd t = Eigen::ArrayXd::LinSpaced(n, 0.0, double(n - 1)) / sr;
  const double phase0 = range(0.0, kTwoPi);
  Eigen::ArrayXd s = Eigen::ArrayXd::Zero(n);

  auto harmonic_tone = [&](const Eigen::ArrayXd& phase) {
    return (phase.sin() + 0.4 * (2.0 * phase).sin() + 0.15 * (3.0 * phase).sin()).eval();
  };

  switch (label) {
    case 0:
      s = harmonic_tone(kTwoPi * range(180.0, 360.0) * t + phase0);
      break;
    case 1:
      s = harmonic_tone(kTwoPi * range(900.0, 1600.0) * t + phase0);
      break;
    case 2:
    case 3: {
      double f0 = range(250.0, 600.0), f1 = range(1500.0, 3000.0);
      if (label == 3) std::swap(f0, f1);
      const double dur = double(length) / sr;
      const Eigen::ArrayXd tl = (t - double(onset) / sr).max(0.0).min(dur);
      s = (kTwoPi * (f0 * tl + 0.5 * (f1 - f0) / dur * tl.square()) + phase0).sin();
      break;
    }
    case 4:
      for (Eigen::Index i = 0; i < n; ++i) s[i] = gauss(rng);
      s *= 0.5;
      break;
    case 5: {
      Eigen::ArrayXd w(n);
      for (Eigen::Index i = 0; i < n; ++i) w[i] = gauss(rng);
      s = one_pole_lowpass(one_pole_lowpass(w, 0.97), 0.97);
      s /= std::max(1e-9, std::sqrt(s.square().mean()));
      s *= 0.5;
      break;
    }
    case 6: {
      const Eigen::Index period = Eigen::Index(sr / range(6.0, 18.0));
      const Eigen::Index width = Eigen::Index(0.003 * sr);
      for (Eigen::Index i = 0; i < n; ++i)
        if (i % period < width) s[i] = gauss(rng) * std::exp(-double(i % period) / double(width) * 2.0);
      s *= 1.5;
      break;
    }
    case 7: {
      const double rate = range(4.0, 12.0);
      s = (kTwoPi * range(400.0, 900.0) * t + phase0).sin() * (0.55 + 0.45 * (kTwoPi * rate * t).sin());
      break;
    }
    case 8: {
      const double f = range(250.0, 500.0);
      s = 0.6 * (kTwoPi * f * t + phase0).sin() + 0.6 * (kTwoPi * f * range(1.25, 1.5) * t).sin() +
          0.4 * (kTwoPi * f * 2.0 * t).sin();
      break;
    }
    case 9: {
      const double fc = range(500.0, 1100.0), dev = range(40.0, 120.0), rate = range(4.0, 8.0);
      s = (kTwoPi * fc * t + dev / rate * (kTwoPi * rate * t).sin() + phase0).sin();
      break;
    }
    default:
      throw std::out_of_range("desk_clip: bad label");
  }

  const double amplitude = range(0.15, 0.6);
  const double peak = std::max(1e-9, s.abs().maxCoeff());
  Eigen::ArrayXd x = amplitude * env * s / peak;

  // Background: coloured noise at a random level below the event.
  Eigen::ArrayXd bg(n);
  for (Eigen::Index i = 0; i < n; ++i) bg[i] = gauss(rng);
  bg = one_pole_lowpass(bg, range(0.0, 0.9));
  const double event_rms = std::sqrt(x.square().sum() / double(std::max<Eigen::Index>(1, length)));
  const double bg_rms = std::max(1e-9, std::sqrt(bg.square().mean()));
  x += bg * (event_rms * std::pow(10.0, -range(12.0, 30.0) / 20.0) / bg_rms);
  return AudioClip::clamped(x.matrix(), cfg.sample_rate);
}

LabeledDataset make_desk_dataset(const DeskDataConfig& cfg) {
  cfg.validate();
  std::vector<DatasetItem> items;
  items.reserve(std::size_t(cfg.num_clips));
  Rng split_rng(derive_seed(cfg.seed, "desk-split"));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<int> per_class(DeskDataConfig::kNumClasses, 0);
  for (int i = 0; i < cfg.num_clips; ++i) {
    const int label = i % DeskDataConfig::kNumClasses;
    const int n = per_class[std::size_t(label)]++;
    Rng rng(derive_seed(cfg.seed, "desk-clip", std::uint64_t(i)));
    char id[64];
    std::snprintf(id, sizeof id, "%s_%05d", kNames[std::size_t(label)].c_str(), n);
    // The first two clips of each class pin both splits to be non-empty.
    Split split = u(split_rng) < cfg.validation_fraction ? Split::validation : Split::train;
    if (n == 0) split = Split::train;
    if (n == 1) split = Split::validation;
    items.push_back({id, desk_clip(label, cfg, rng), label, split});
  }
  return LabeledDataset(std::move(items), DeskDataConfig::kNumClasses);
}

}  // namespace taggant
