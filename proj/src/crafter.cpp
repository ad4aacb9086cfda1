#include "taggant/crafter.hpp"

#include <cmath>
#include <limits>
#include <set>

#include "taggant/rng.hpp"

namespace taggant {

void CraftConfig::validate() const {
  if (steps < 0) throw std::invalid_argument("CraftConfig: steps must be >= 0");
  if (!(step_size > 0.0)) throw std::invalid_argument("CraftConfig: step_size must be positive");
  if (!(clip_bound > 0.0)) throw std::invalid_argument("CraftConfig: clip_bound must be positive");
  if (restarts < 1) throw std::invalid_argument("CraftConfig: restarts must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("CraftConfig: batch_size must be >= 1");
}

nlohmann::json to_json(const CraftConfig& c) {
  return {{"steps", c.steps},   {"step_size", c.step_size}, {"clip_bound", c.clip_bound}, {"beta1", c.beta1},
          {"beta2", c.beta2},   {"adam_eps", c.adam_eps},   {"restarts", c.restarts},     {"batch_size", c.batch_size},
          {"seed", c.seed}};
}

CraftConfig craft_config_from_json(const nlohmann::json& j) {
  CraftConfig c;
  c.steps = j.value("steps", c.steps);
  c.step_size = j.value("step_size", c.step_size);
  c.clip_bound = j.value("clip_bound", c.clip_bound);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.restarts = j.value("restarts", c.restarts);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  return c;
}

nlohmann::json to_json(const AlignmentTrace& t) {
  return {{"loss", t.loss}, {"key_cosine", t.key_cosine}, {"restart", t.restart}, {"restart_loss", t.restart_loss}};
}

AlignmentTerms alignment_terms(const std::vector<Eigen::VectorXd>& key_grads,
                               const std::vector<Eigen::VectorXd>& poison_sums) {
  const std::size_t K = key_grads.size();
  if (K == 0 || poison_sums.size() != K) throw std::invalid_argument("alignment_loss: need one poison sum per key");
  AlignmentTerms out;
  out.cosine.resize(K);
  out.direction.resize(K);
  for (std::size_t i = 0; i < K; ++i) {
    const Eigen::VectorXd& g = key_grads[i];
    const Eigen::VectorXd& s = poison_sums[i];
    if (g.size() != s.size()) throw std::invalid_argument("alignment_loss: vector length mismatch");
    const double gn = g.norm();
    if (!(gn > 0.0)) throw std::invalid_argument("alignment_loss: key " + std::to_string(i) + " has a zero gradient");
    const double sn = s.norm();
    if (sn == 0.0) {
      out.cosine[i] = 0.0;
      out.direction[i] = Eigen::VectorXd::Zero(s.size());
      out.loss += 1.0;
      continue;
    }
    const double cos = g.dot(s) / (gn * sn);
    out.cosine[i] = cos;
    out.loss += 1.0 - cos;
    out.direction[i] = -(g / (gn * sn) - cos * s / (sn * sn)) / double(K);
  }
  out.loss /= double(K);
  return out;
}

double alignment_loss(const std::vector<Eigen::VectorXd>& key_grads, const std::vector<Eigen::VectorXd>& poison_sums) {
  return alignment_terms(key_grads, poison_sums).loss;
}

namespace {

struct Poison {
  std::size_t key;
  int label;
  Eigen::VectorXd x;
  Eigen::VectorXd lower, upper;  // feasible box for delta
};

struct Session {
  const ModelParams& surrogate;
  const std::vector<Poison>& poisons;
  const std::vector<Eigen::VectorXd>& key_grads;
  const CraftConfig& cfg;

  std::vector<Eigen::VectorXd> poison_sums(const std::vector<Eigen::VectorXd>& deltas) const {
    std::vector<Eigen::VectorXd> sums(key_grads.size(), Eigen::VectorXd::Zero(surrogate.size()));
    const auto chunk = std::size_t(cfg.batch_size);
    for (std::size_t start = 0; start < poisons.size(); start += chunk) {
      std::vector<Eigen::VectorXd> partial(key_grads.size(), Eigen::VectorXd::Zero(surrogate.size()));
      for (std::size_t j = start; j < std::min(poisons.size(), start + chunk); ++j) {
        const Poison& p = poisons[j];
        partial[p.key] += per_sample_gradient(surrogate, p.x + deltas[j], p.label);
      }
      for (std::size_t k = 0; k < sums.size(); ++k) sums[k] += partial[k];
    }
    return sums;
  }

  void project(std::vector<Eigen::VectorXd>& deltas) const {
    for (std::size_t j = 0; j < deltas.size(); ++j)
      deltas[j] = deltas[j].cwiseMax(poisons[j].lower).cwiseMin(poisons[j].upper);
  }
};

}  // namespace

CraftResult craft(const ModelParams& surrogate, const LabeledDataset& ds, const PoisonPlan& plan, const KeySet& keys,
                  const CraftConfig& cfg, const CraftProgress& progress) {
  cfg.validate();
  surrogate.validate();
  if (plan.partition.size() != keys.size())
    throw std::invalid_argument("craft: plan has " + std::to_string(plan.partition.size()) + " key partitions for " +
                                std::to_string(keys.size()) + " keys");
  CraftResult result;
  result.perturbations.bound = cfg.clip_bound;

  std::vector<Poison> poisons;
  std::set<std::string> seen;
  for (std::size_t k = 0; k < plan.partition.size(); ++k) {
    if (plan.partition[k].empty())
      result.warnings.push_back("key " + std::to_string(k) + " has no poisons; its alignment term stays at 1");
    for (const std::string& id : plan.partition[k]) {
      if (!seen.insert(id).second) throw std::invalid_argument("craft: poison '" + id + "' appears twice in the plan");
      const DatasetItem& item = ds[ds.index_of(id)];
      if (item.label != keys.keys[k].label)
        throw std::invalid_argument("craft: poison '" + id + "' label does not match key " + std::to_string(k));
      Poison p{k, item.label, item.clip.as_double(), {}, {}};
      p.lower = (-1.0 - p.x.array()).max(-cfg.clip_bound).matrix();
      p.upper = (1.0 - p.x.array()).min(cfg.clip_bound).matrix();
      poisons.push_back(std::move(p));
    }
  }

  std::vector<Eigen::VectorXd> key_grads;
  for (const Key& key : keys.keys) key_grads.push_back(per_sample_gradient(surrogate, key.clip, key.label));

  const Session session{surrogate, poisons, key_grads, cfg};
  double best_loss = std::numeric_limits<double>::infinity();
  std::vector<Eigen::VectorXd> best_deltas;

  for (int r = 0; r < cfg.restarts; ++r) {
    std::vector<Eigen::VectorXd> deltas;
    Rng rng(derive_seed(cfg.seed, "craft-restart", std::uint64_t(r)));
    std::uniform_real_distribution<double> jitter(-cfg.step_size, cfg.step_size);
    for (const Poison& p : poisons) {
      Eigen::VectorXd d = Eigen::VectorXd::Zero(p.x.size());
      if (r > 0)
        for (Eigen::Index i = 0; i < d.size(); ++i) d[i] = jitter(rng);
      deltas.push_back(std::move(d));
    }
    session.project(deltas);

    std::vector<Eigen::VectorXd> m(poisons.size()), v(poisons.size());
    for (std::size_t j = 0; j < poisons.size(); ++j) {
      m[j] = Eigen::VectorXd::Zero(poisons[j].x.size());
      v[j] = m[j];
    }
    std::vector<double> trace;
    double restart_best = std::numeric_limits<double>::infinity();
    std::vector<Eigen::VectorXd> restart_best_deltas;

    for (int step = 0; step <= cfg.steps; ++step) {
      const AlignmentTerms terms = alignment_terms(key_grads, session.poison_sums(deltas));
      if (!std::isfinite(terms.loss))
        throw CraftingFailure("non-finite alignment loss at restart " + std::to_string(r) + ", step " + std::to_string(step));
      trace.push_back(terms.loss);
      if (progress) progress(r, step, terms.loss);
      if (terms.loss < restart_best) {
        restart_best = terms.loss;
        restart_best_deltas = deltas;
      }
      if (step == cfg.steps) break;

      const double c1 = 1.0 - std::pow(cfg.beta1, double(step + 1));
      const double c2 = 1.0 - std::pow(cfg.beta2, double(step + 1));
      for (std::size_t j = 0; j < poisons.size(); ++j) {
        const Poison& p = poisons[j];
        const Eigen::VectorXd grad =
            mixed_waveform_gradient(surrogate, p.x + deltas[j], p.label, terms.direction[p.key]);
        const Eigen::ArrayXd sign = grad.array().sign();
        m[j] = cfg.beta1 * m[j].array() + (1.0 - cfg.beta1) * sign;
        v[j] = cfg.beta2 * v[j].array() + (1.0 - cfg.beta2) * sign.square();
        deltas[j].array() -= cfg.step_size * (m[j].array() / c1) / ((v[j].array() / c2).sqrt() + cfg.adam_eps);
      }
      session.project(deltas);
    }

    result.trace.restart_loss.push_back(restart_best);
    if (restart_best < best_loss) {
      best_loss = restart_best;
      best_deltas = std::move(restart_best_deltas);
      result.trace.loss = std::move(trace);
      result.trace.restart = r;
    }
  }

  result.trace.key_cosine = alignment_terms(key_grads, session.poison_sums(best_deltas)).cosine;
  // Poisons were collected in partition order.
  std::size_t j = 0;
  for (const auto& ids : plan.partition)
    for (const std::string& id : ids) result.perturbations.deltas[id] = best_deltas[j++];
  return result;
}

}  // namespace taggant
