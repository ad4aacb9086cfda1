#include "taggant/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "taggant/json_io.hpp"
#include "taggant/rng.hpp"

namespace taggant {

std::vector<ConvGeometry> ArchSpec::conv_geometry() const {
  std::vector<ConvGeometry> out;
  int c = 1, h = n_mels, w = n_frames;
  for (int ch : channels) {
    ConvGeometry g{c, ch, h, w, (h - 1) / 2 + 1, (w - 1) / 2 + 1};
    out.push_back(g);
    c = ch;
    h = g.out_h;
    w = g.out_w;
  }
  return out;
}

Eigen::Index ArchSpec::flat_size() const {
  const auto g = conv_geometry();
  return Eigen::Index(g.back().out_channels) * g.back().out_pixels();
}

std::vector<TensorSlot> ArchSpec::layout() const {
  if (n_mels < 1 || n_frames < 1 || num_classes < 2 || channels.empty() || hidden < 1)
    throw std::invalid_argument("ArchSpec: invalid architecture " + descriptor());
  std::vector<TensorSlot> slots;
  Eigen::Index off = 0;
  const auto add = [&](std::string name, std::vector<Eigen::Index> shape) {
    const Eigen::Index n = std::accumulate(shape.begin(), shape.end(), Eigen::Index(1), std::multiplies<>());
    slots.push_back(TensorSlot{std::move(name), std::move(shape), off, n});
    off += n;
  };
  const auto geometry = conv_geometry();
  for (std::size_t l = 0; l < geometry.size(); ++l) {
    add("conv" + std::to_string(l) + ".weight", {geometry[l].out_channels, geometry[l].patch_size()});
    add("conv" + std::to_string(l) + ".bias", {geometry[l].out_channels});
  }
  add("fc1.weight", {hidden, flat_size()});
  add("fc1.bias", {hidden});
  add("fc2.weight", {num_classes, hidden});
  add("fc2.bias", {num_classes});
  return slots;
}

Eigen::Index ArchSpec::parameter_count() const {
  const auto l = layout();
  return l.back().offset + l.back().size;
}

std::string ArchSpec::descriptor() const {
  std::ostringstream s;
  s << "cnn-silu/in=" << n_mels << "x" << n_frames << "/ch=";
  for (std::size_t i = 0; i < channels.size(); ++i) s << (i ? "," : "") << channels[i];
  s << "/hidden=" << hidden << "/classes=" << num_classes;
  return s.str();
}

FeatureExtractor::FeatureExtractor(const SpectroConfig& cfg, FeatureNorm norm)
    : cfg_(cfg), norm_(norm), filterbank_(mel_filterbank(cfg)) {
  if (!(norm_.std > 0.0)) throw std::invalid_argument("FeatureExtractor: feature std must be positive");
}

Eigen::MatrixXd FeatureExtractor::operator()(const Eigen::Ref<const Eigen::VectorXd>& x, Trace* trace) const {
  Trace local;
  Trace& t = trace ? *trace : local;
  t.length = x.size();
  t.spectrum = stft(x, cfg_);
  t.magnitude = t.spectrum.cwiseAbs();
  t.mel.noalias() = filterbank_ * t.magnitude;
  return ((t.mel.array() + kMelFloor).log() - norm_.mean) / norm_.std;
}

Eigen::VectorXd FeatureExtractor::backward(const Trace& t, const Eigen::MatrixXd& dfeatures) const {
  const Eigen::MatrixXd dmel = (dfeatures.array() / ((t.mel.array() + kMelFloor) * norm_.std)).matrix();
  const Eigen::MatrixXd dmag = filterbank_.transpose() * dmel;
  Eigen::MatrixXcd dspec(t.spectrum.rows(), t.spectrum.cols());
  for (Eigen::Index i = 0; i < dspec.size(); ++i) {
    const double a = t.magnitude.data()[i];
    dspec.data()[i] = a > 0.0 ? dmag.data()[i] * t.spectrum.data()[i] / a : std::complex<double>(0.0, 0.0);
  }
  return stft_adjoint(dspec, t.length, cfg_);
}

FeatureNorm estimate_feature_norm(const std::vector<Eigen::VectorXd>& clips, const SpectroConfig& cfg) {
  if (clips.empty()) throw std::invalid_argument("estimate_feature_norm: no clips");
  const FeatureExtractor raw(cfg, FeatureNorm{});
  double sum = 0.0, sq = 0.0;
  double n = 0.0;
  for (const auto& c : clips) {
    const Eigen::MatrixXd f = raw(c);
    sum += f.sum();
    sq += f.squaredNorm();
    n += double(f.size());
  }
  const double mean = sum / n;
  const double var = std::max(sq / n - mean * mean, 1e-12);
  return FeatureNorm{mean, std::sqrt(var)};
}

void ModelParams::validate() const {
  if (values.size() != arch.parameter_count())
    throw std::invalid_argument("ModelParams: " + std::to_string(values.size()) + " values for " +
                                arch.descriptor() + " which needs " + std::to_string(arch.parameter_count()));
  if (!values.allFinite()) throw std::invalid_argument("ModelParams: non-finite parameter");
  if (spectro.n_mels != arch.n_mels) throw std::invalid_argument("ModelParams: n_mels disagrees with architecture");
}

ArchSpec arch_for(const SpectroConfig& spectro, Eigen::Index clip_samples, int num_classes) {
  ArchSpec a;
  a.n_mels = spectro.n_mels;
  a.n_frames = int(spectro.n_frames(clip_samples));
  a.num_classes = num_classes;
  return a;
}

ModelParams init_params(const ArchSpec& arch, const SpectroConfig& spectro, FeatureNorm norm, std::uint64_t seed) {
  ModelParams p{arch, spectro, norm, Eigen::VectorXd::Zero(arch.parameter_count())};
  Rng rng(derive_seed(seed, "init"));
  for (const TensorSlot& s : arch.layout()) {
    if (s.shape.size() != 2) continue;
    const double fan_in = double(s.shape[1]);
    const bool head = s.name == "fc2.weight";
    const double bound = head ? 1.0 / std::sqrt(fan_in) : std::sqrt(6.0 / fan_in);
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index i = 0; i < s.size; ++i) p.values[s.offset + i] = u(rng);
  }
  p.validate();
  return p;
}

Eigen::VectorXd one_hot(int label, int num_classes) {
  if (label < 0 || label >= num_classes) throw std::invalid_argument("label out of range");
  Eigen::VectorXd y = Eigen::VectorXd::Zero(num_classes);
  y[label] = 1.0;
  return y;
}

Eigen::VectorXd logits(const ModelParams& params, const Eigen::Ref<const Eigen::VectorXd>& x) {
  const Eigen::MatrixXd f = params.extractor()(x);
  return network_forward<double>(params.arch, params.values, f);
}

Eigen::VectorXd logits(const ModelParams& params, const AudioClip& clip) { return logits(params, clip.as_double()); }

double loss(const ModelParams& params, const Eigen::Ref<const Eigen::VectorXd>& x, int label) {
  Eigen::VectorXd dl;
  return soft_cross_entropy<double>(logits(params, x), one_hot(label, params.arch.num_classes), dl);
}

SampleGradients sample_gradients(const ModelParams& params, const Eigen::Ref<const Eigen::VectorXd>& x,
                                 const Eigen::VectorXd& target, bool want_waveform) {
  const FeatureExtractor fx = params.extractor();
  FeatureExtractor::Trace trace;
  const Eigen::MatrixXd f = fx(x, &trace);
  Activations<double> act;
  const Eigen::VectorXd z = network_forward<double>(params.arch, params.values, f, &act);
  Eigen::VectorXd dz;
  SampleGradients out;
  out.loss = soft_cross_entropy<double>(z, target, dz);
  Eigen::MatrixXd dfeat;
  network_backward<double>(params.arch, params.values, act, dz, &out.params, want_waveform ? &dfeat : nullptr);
  if (want_waveform) out.waveform = fx.backward(trace, dfeat);
  if (!std::isfinite(out.loss) || !out.params.allFinite() || (want_waveform && !out.waveform.allFinite()))
    throw std::runtime_error("sample_gradients: non-finite gradient");
  return out;
}

Eigen::VectorXd per_sample_gradient(const ModelParams& params, const Eigen::Ref<const Eigen::VectorXd>& x, int label) {
  return sample_gradients(params, x, one_hot(label, params.arch.num_classes), false).params;
}

Eigen::VectorXd per_sample_gradient(const ModelParams& params, const AudioClip& clip, int label) {
  return per_sample_gradient(params, clip.as_double(), label);
}

Eigen::VectorXd waveform_gradient(const ModelParams& params, const Eigen::Ref<const Eigen::VectorXd>& x, int label) {
  return sample_gradients(params, x, one_hot(label, params.arch.num_classes), true).waveform;
}

Eigen::VectorXd mixed_waveform_gradient(const ModelParams& params, const Eigen::Ref<const Eigen::VectorXd>& x,
                                        int label, const Eigen::VectorXd& direction) {
  if (direction.size() != params.size()) throw std::invalid_argument("mixed_waveform_gradient: direction size mismatch");
  const FeatureExtractor fx = params.extractor();
  FeatureExtractor::Trace trace;
  const Eigen::MatrixXd f = fx(x, &trace);

  VecX<Dual> p(params.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = Dual(params.values[i], direction[i]);
  const MatX<Dual> fd = f.cast<Dual>();
  Activations<Dual> act;
  const VecX<Dual> z = network_forward<Dual>(params.arch, p, fd, &act);
  VecX<Dual> dz;
  soft_cross_entropy<Dual>(z, one_hot(label, params.arch.num_classes), dz);
  MatX<Dual> dfeat;
  network_backward<Dual>(params.arch, p, act, dz, nullptr, &dfeat);
  const Eigen::MatrixXd tangent = dfeat.unaryExpr([](const Dual& v) { return v.d; });
  Eigen::VectorXd out = fx.backward(trace, tangent);
  if (!out.allFinite()) throw std::runtime_error("mixed_waveform_gradient: non-finite gradient");
  return out;
}

std::vector<int> topk_indices(const Eigen::VectorXd& z, int k) {
  if (k < 1 || k > z.size()) throw std::invalid_argument("topk: k must be in [1, C]");
  std::vector<int> idx(std::size_t(z.size()));
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(),
                    [&](int a, int b) { return z[a] > z[b] || (z[a] == z[b] && a < b); });
  idx.resize(std::size_t(k));
  return idx;
}

std::vector<int> predict_topk(const ModelParams& params, const AudioClip& clip, int k) {
  return topk_indices(logits(params, clip), k);
}

namespace {

constexpr char kMagic[8] = {'T', 'G', 'N', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

nlohmann::json arch_json(const ArchSpec& a) {
  return {{"n_mels", a.n_mels},     {"n_frames", a.n_frames}, {"num_classes", a.num_classes},
          {"channels", a.channels}, {"hidden", a.hidden},     {"descriptor", a.descriptor()}};
}

ArchSpec arch_from_json(const nlohmann::json& j) {
  ArchSpec a;
  j.at("n_mels").get_to(a.n_mels);
  j.at("n_frames").get_to(a.n_frames);
  j.at("num_classes").get_to(a.num_classes);
  j.at("channels").get_to(a.channels);
  j.at("hidden").get_to(a.hidden);
  return a;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, const nlohmann::json& train_config) {
  params.validate();
  nlohmann::json header{{"arch", arch_json(params.arch)},
                        {"spectro", params.spectro},
                        {"norm", {{"mean", params.norm.mean}, {"std", params.norm.std}}},
                        {"train_config", train_config},
                        {"parameter_count", params.size()}};
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& s : params.arch.layout()) tensors.push_back({{"name", s.name}, {"shape", s.shape}, {"offset", s.offset}});
  header["tensors"] = tensors;
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t header_size = text.size(), count = std::uint64_t(params.size());
  out.write(kMagic, sizeof kMagic);
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&header_size), sizeof header_size);
  out.write(text.data(), std::streamsize(text.size()));
  out.write(reinterpret_cast<const char*>(&count), sizeof count);
  out.write(reinterpret_cast<const char*>(params.values.data()), std::streamsize(count * sizeof(double)));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::optional<ArchSpec>& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t header_size = 0, count = 0;
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw std::runtime_error(path.string() + ": not a checkpoint");
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  if (version != kCheckpointVersion)
    throw std::runtime_error(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  in.read(reinterpret_cast<char*>(&header_size), sizeof header_size);
  if (!in || header_size > (1u << 26)) throw std::runtime_error(path.string() + ": corrupt header");
  std::string text(header_size, '\0');
  in.read(text.data(), std::streamsize(header_size));
  const auto header = nlohmann::json::parse(text);
  Checkpoint ck;
  ck.params.arch = arch_from_json(header.at("arch"));
  if (expected && !(*expected == ck.params.arch))
    throw std::runtime_error(path.string() + ": architecture " + ck.params.arch.descriptor() + " does not match expected " +
                             expected->descriptor());
  ck.params.spectro = header.at("spectro").get<SpectroConfig>();
  ck.params.norm = FeatureNorm{header.at("norm").at("mean").get<double>(), header.at("norm").at("std").get<double>()};
  ck.train_config = header.at("train_config");
  in.read(reinterpret_cast<char*>(&count), sizeof count);
  if (!in || count != std::uint64_t(ck.params.arch.parameter_count()))
    throw std::runtime_error(path.string() + ": parameter count does not match architecture");
  ck.params.values.resize(Eigen::Index(count));
  in.read(reinterpret_cast<char*>(ck.params.values.data()), std::streamsize(count * sizeof(double)));
  if (!in) throw std::runtime_error(path.string() + ": truncated parameters");
  ck.params.validate();
  return ck;
}

}  // namespace taggant
