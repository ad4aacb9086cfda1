#include "taggant/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "taggant/json_io.hpp"

namespace taggant {

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be positive");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be positive");
  if (!(mixup_alpha >= 0.0)) throw std::invalid_argument("TrainConfig: mixup_alpha must be >= 0");
  if (time_mask < 0 || freq_mask < 0) throw std::invalid_argument("TrainConfig: mask widths must be >= 0");
  if (channels.empty() || hidden < 1) throw std::invalid_argument("TrainConfig: bad architecture");
  spectro.validate();
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},
          {"cosine_schedule", c.cosine_schedule},
          {"mixup_alpha", c.mixup_alpha},
          {"time_mask", c.time_mask},
          {"freq_mask", c.freq_mask},
          {"seed", c.seed},
          {"spectro", c.spectro},
          {"channels", c.channels},
          {"hidden", c.hidden}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.cosine_schedule = j.value("cosine_schedule", c.cosine_schedule);
  c.mixup_alpha = j.value("mixup_alpha", c.mixup_alpha);
  c.time_mask = j.value("time_mask", c.time_mask);
  c.freq_mask = j.value("freq_mask", c.freq_mask);
  c.seed = j.value("seed", c.seed);
  if (j.contains("spectro")) c.spectro = j.at("spectro").get<SpectroConfig>();
  c.channels = j.value("channels", c.channels);
  c.hidden = j.value("hidden", c.hidden);
  return c;
}

namespace {

double sample_beta(double alpha, Rng& rng) {
  std::gamma_distribution<double> g(alpha, 1.0);
  const double a = g(rng), b = g(rng);
  return a + b > 0.0 ? a / (a + b) : 0.5;
}

}  // namespace

Batch mixup_batch(const Batch& batch, double alpha, Rng& rng, std::optional<double> lambda) {
  const std::size_t n = batch.inputs.size();
  if (n < 2 || batch.targets.size() != n) throw std::invalid_argument("mixup_batch: need a batch of at least 2");
  if (!(alpha >= 0.0)) throw std::invalid_argument("mixup_batch: alpha must be >= 0");
  const double lam = lambda ? *lambda : (alpha > 0.0 ? sample_beta(alpha, rng) : 1.0);
  if (!(lam >= 0.0 && lam <= 1.0)) throw std::invalid_argument("mixup_batch: lambda outside [0, 1]");
  std::vector<std::size_t> partner(n);
  std::iota(partner.begin(), partner.end(), 0);
  std::shuffle(partner.begin(), partner.end(), rng);
  Batch out;
  out.inputs.reserve(n);
  out.targets.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (lam == 1.0) {
      out.inputs.push_back(batch.inputs[i]);
      out.targets.push_back(batch.targets[i]);
      continue;
    }
    out.inputs.push_back(lam * batch.inputs[i] + (1.0 - lam) * batch.inputs[partner[i]]);
    out.targets.push_back(lam * batch.targets[i] + (1.0 - lam) * batch.targets[partner[i]]);
  }
  return out;
}

void spec_masks(Eigen::MatrixXd& f, int time_width, int freq_width, Rng& rng) {
  if (time_width < 0 || freq_width < 0 || time_width > f.cols() || freq_width > f.rows())
    throw std::invalid_argument("spec_masks: mask width exceeds feature dimensions");
  if (time_width > 0) {
    std::uniform_int_distribution<Eigen::Index> start(0, f.cols() - time_width);
    f.middleCols(start(rng), time_width).setZero();
  }
  if (freq_width > 0) {
    std::uniform_int_distribution<Eigen::Index> start(0, f.rows() - freq_width);
    f.middleRows(start(rng), freq_width).setZero();
  }
}

MelMatrix spec_masks(const MelMatrix& features, int time_width, int freq_width, Rng& rng) {
  MelMatrix out = features;
  spec_masks(out.values, time_width, freq_width, rng);
  return out;
}

double accuracy(const ModelParams& params, const LabeledDataset& ds, Split split) {
  const FeatureExtractor fx = params.extractor();
  std::size_t correct = 0, total = 0;
  for (std::size_t i : ds.indices(split)) {
    const Eigen::VectorXd z = network_forward<double>(params.arch, params.values, fx(ds[i].clip.as_double()));
    correct += topk_indices(z, 1).front() == ds[i].label;
    ++total;
  }
  return total ? double(correct) / double(total) : 0.0;
}

TrainResult train(const LabeledDataset& ds, const TrainConfig& cfg, const TrainProgress& progress) {
  cfg.validate();
  const std::vector<std::size_t> train_idx = ds.indices(Split::train);
  if (train_idx.empty()) throw std::invalid_argument("train: empty training split");
  if (ds.sample_rate() != cfg.spectro.sample_rate)
    throw std::invalid_argument("train: dataset sample rate does not match the spectro config");

  ArchSpec arch = arch_for(cfg.spectro, ds[train_idx.front()].clip.size(), ds.num_classes());
  arch.channels = cfg.channels;
  arch.hidden = cfg.hidden;

  std::vector<Eigen::VectorXd> norm_clips;
  const std::size_t stride = std::max<std::size_t>(1, train_idx.size() / 256);
  for (std::size_t n = 0; n < train_idx.size(); n += stride) norm_clips.push_back(ds[train_idx[n]].clip.as_double());
  const FeatureNorm norm = estimate_feature_norm(norm_clips, cfg.spectro);

  TrainResult result;
  result.params = init_params(arch, cfg.spectro, norm, cfg.seed);
  ModelParams& p = result.params;
  const FeatureExtractor fx = p.extractor();

  Rng rng(derive_seed(cfg.seed, "train"));
  Eigen::VectorXd m = Eigen::VectorXd::Zero(p.size()), v = Eigen::VectorXd::Zero(p.size());
  const long steps_per_epoch = long((train_idx.size() + std::size_t(cfg.batch_size) - 1) / std::size_t(cfg.batch_size));
  const long total_steps = steps_per_epoch * cfg.epochs;
  long step = 0;
  std::vector<std::size_t> order = train_idx;
  Eigen::VectorXd grad(p.size()), sample_grad;
  Activations<double> act;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + std::size_t(cfg.batch_size));
      Batch batch;
      for (std::size_t n = start; n < end; ++n) {
        batch.inputs.push_back(ds[order[n]].clip.as_double());
        batch.targets.push_back(one_hot(ds[order[n]].label, ds.num_classes()));
      }
      if (cfg.mixup_alpha > 0.0 && batch.inputs.size() >= 2) batch = mixup_batch(batch, cfg.mixup_alpha, rng);

      grad.setZero();
      double batch_loss = 0.0;
      for (std::size_t b = 0; b < batch.inputs.size(); ++b) {
        Eigen::MatrixXd f = fx(batch.inputs[b]);
        spec_masks(f, std::min<int>(cfg.time_mask, int(f.cols())), std::min<int>(cfg.freq_mask, int(f.rows())), rng);
        const Eigen::VectorXd z = network_forward<double>(arch, p.values, f, &act);
        Eigen::VectorXd dz;
        batch_loss += soft_cross_entropy<double>(z, batch.targets[b], dz);
        network_backward<double>(arch, p.values, act, dz, &sample_grad, nullptr);
        grad += sample_grad;
      }
      const double scale = 1.0 / double(batch.inputs.size());
      grad *= scale;
      batch_loss *= scale;
      if (!std::isfinite(batch_loss) || !grad.allFinite())
        throw TrainingFailure("training diverged at epoch " + std::to_string(epoch) + " (non-finite loss)");
      epoch_loss += batch_loss * double(batch.inputs.size());

      ++step;
      const double lr = cfg.cosine_schedule
                            ? cfg.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * double(step - 1) / double(total_steps)))
                            : cfg.learning_rate;
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad.cwiseAbs2();
      const double c1 = 1.0 - std::pow(cfg.beta1, double(step));
      const double c2 = 1.0 - std::pow(cfg.beta2, double(step));
      p.values.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.adam_eps);
    }
    result.epoch_loss.push_back(epoch_loss / double(order.size()));
    if (progress) progress(epoch, result.epoch_loss.back());
  }
  if (!p.values.allFinite()) throw TrainingFailure("training produced non-finite parameters");
  result.validation_accuracy = accuracy(p, ds, Split::validation);
  return result;
}

}  // namespace taggant
