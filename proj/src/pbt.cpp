#include "rte/pbt.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <thread>

#include "rte/eval.hpp"

namespace rte {

void PbtConfig::validate() const {
  if (population < 1) throw std::invalid_argument("pbt: population must be >= 1");
  if (interval_epochs < 1) throw std::invalid_argument("pbt: interval_epochs must be >= 1");
  if (!(resample_probability >= 0.0 && resample_probability <= 1.0))
    throw std::invalid_argument("pbt: resample_probability must lie in [0, 1]");
  if (!(perturb_lo > 0.0 && perturb_hi >= perturb_lo)) throw std::invalid_argument("pbt: perturbation bounds must be positive and ordered");
  if (!(exploit_quantile >= 0.0 && exploit_quantile <= 0.5)) throw std::invalid_argument("pbt: exploit_quantile must lie in [0, 0.5]");
  for (const Range* r : {&lr, &weight_decay, &q, &lambda_jsd, &lambda_ecr})
    if (!(r->lo <= r->hi)) throw std::invalid_argument("pbt: empty sampling range");
  if (!(lr.lo > 0.0)) throw std::invalid_argument("pbt: lr range must be positive");
  if (q.lo < 0.0 || q.hi > 1.0) throw std::invalid_argument("pbt: q range must lie in [0, 1]");
  if (weight_decay.lo < 0.0 || lambda_jsd.lo < 0.0 || lambda_ecr.lo < 0.0)
    throw std::invalid_argument("pbt: weight decay and loss weights must be nonnegative");
  if (n_star_min < 1 || n_star_max < n_star_min) throw std::invalid_argument("pbt: N* range must satisfy 1 <= min <= max");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
    throw std::invalid_argument("pbt: validation_fraction must lie in (0, 1)");
  if (threads < 0) throw std::invalid_argument("pbt: threads must be >= 0");
}

bool PbtConfig::in_range(const Hyperparams& h) const {
  return lr.contains(h.lr) && weight_decay.contains(h.weight_decay) && q.contains(h.q) &&
         lambda_jsd.contains(h.lambda_jsd) && lambda_ecr.contains(h.lambda_ecr) && h.n_star >= n_star_min &&
         h.n_star <= n_star_max;
}

namespace {

nlohmann::json range_json(const Range& r) { return {r.lo, r.hi}; }
Range range_from(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

}  // namespace

nlohmann::json to_json(const PbtConfig& c) {
  return {{"population", c.population},
          {"interval_epochs", c.interval_epochs},
          {"resample_probability", c.resample_probability},
          {"perturb", {c.perturb_lo, c.perturb_hi}},
          {"exploit_quantile", c.exploit_quantile},
          {"lr", range_json(c.lr)},
          {"weight_decay", range_json(c.weight_decay)},
          {"q", range_json(c.q)},
          {"lambda_jsd", range_json(c.lambda_jsd)},
          {"lambda_ecr", range_json(c.lambda_ecr)},
          {"n_star", {c.n_star_min, c.n_star_max}},
          {"validation_fraction", c.validation_fraction},
          {"threads", c.threads},
          {"mode", c.mode == PbtMode::barrier ? "barrier" : "asynchronous"},
          {"seed", c.seed}};
}

PbtConfig pbt_config_from_json(const nlohmann::json& j) {
  PbtConfig c;
  c.population = j.at("population");
  c.interval_epochs = j.at("interval_epochs");
  c.resample_probability = j.at("resample_probability");
  c.perturb_lo = j.at("perturb").at(0);
  c.perturb_hi = j.at("perturb").at(1);
  c.exploit_quantile = j.at("exploit_quantile");
  c.lr = range_from(j.at("lr"));
  c.weight_decay = range_from(j.at("weight_decay"));
  c.q = range_from(j.at("q"));
  c.lambda_jsd = range_from(j.at("lambda_jsd"));
  c.lambda_ecr = range_from(j.at("lambda_ecr"));
  c.n_star_min = j.at("n_star").at(0);
  c.n_star_max = j.at("n_star").at(1);
  c.validation_fraction = j.at("validation_fraction");
  c.threads = j.at("threads");
  c.mode = j.at("mode") == "asynchronous" ? PbtMode::asynchronous : PbtMode::barrier;
  c.seed = j.at("seed");
  c.validate();
  return c;
}

Hyperparams sample_hyperparams(const PbtConfig& cfg, Rng& rng) {
  Hyperparams h;
  h.lr = rng.uniform(cfg.lr.lo, cfg.lr.hi);
  h.weight_decay = rng.uniform(cfg.weight_decay.lo, cfg.weight_decay.hi);
  h.q = rng.uniform(cfg.q.lo, cfg.q.hi);
  h.lambda_jsd = rng.uniform(cfg.lambda_jsd.lo, cfg.lambda_jsd.hi);
  h.lambda_ecr = rng.uniform(cfg.lambda_ecr.lo, cfg.lambda_ecr.hi);
  h.n_star = static_cast<int>(rng.integer(cfg.n_star_min, cfg.n_star_max));
  return h;
}

Hyperparams explore(const Hyperparams& h, const PbtConfig& cfg, Rng& rng, ExploreTrace* trace) {
  Hyperparams out = h;
  std::size_t slot = 0;
  auto real = [&](double& v, const Range& r) {
    const bool resample = rng.bernoulli(cfg.resample_probability);
    if (resample)
      v = rng.uniform(r.lo, r.hi);
    else
      v = r.clamp(v * rng.uniform(cfg.perturb_lo, cfg.perturb_hi));
    if (trace) trace->resampled[slot] = resample;
    ++slot;
  };
  real(out.lr, cfg.lr);
  real(out.weight_decay, cfg.weight_decay);
  real(out.q, cfg.q);
  real(out.lambda_jsd, cfg.lambda_jsd);
  real(out.lambda_ecr, cfg.lambda_ecr);
  const bool resample = rng.bernoulli(cfg.resample_probability);
  if (resample)
    out.n_star = static_cast<int>(rng.integer(cfg.n_star_min, cfg.n_star_max));
  else
    out.n_star = std::clamp(h.n_star + (rng.bernoulli(0.5) ? 1 : -1), cfg.n_star_min, cfg.n_star_max);
  if (trace) trace->resampled[slot] = resample;
  return out;
}

std::vector<std::optional<std::size_t>> exploit(std::span<const std::optional<double>> fitness, double quantile, Rng& rng) {
  std::vector<std::optional<std::size_t>> donors(fitness.size());
  std::vector<std::size_t> alive;
  for (std::size_t i = 0; i < fitness.size(); ++i)
    if (fitness[i]) alive.push_back(i);
  const auto k = static_cast<std::size_t>(std::floor(quantile * static_cast<double>(alive.size()) + 1e-9));
  if (k == 0) return donors;
  std::stable_sort(alive.begin(), alive.end(), [&](std::size_t a, std::size_t b) { return *fitness[a] > *fitness[b]; });
  const std::vector<std::size_t> top(alive.begin(), alive.begin() + static_cast<std::ptrdiff_t>(k));
  const double floor = *fitness[top.back()];
  for (std::size_t r = alive.size() - k; r < alive.size(); ++r) {
    const std::size_t i = alive[r];
    if (*fitness[i] < floor) donors[i] = top[rng.below(top.size())];
  }
  return donors;
}

std::vector<PbtMember> sample_initial_population(const PbtConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::vector<PbtMember> members(static_cast<std::size_t>(cfg.population));
  for (int i = 0; i < cfg.population; ++i) {
    auto rng = Rng::stream(seed, 0x9B7, i);
    members[static_cast<std::size_t>(i)].id = i;
    members[static_cast<std::size_t>(i)].hyperparams = sample_hyperparams(cfg, rng);
  }
  return members;
}

namespace {

template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn fn) {
  const auto workers = std::min<std::size_t>(n, static_cast<std::size_t>(threads));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  for (auto& t : pool) t.join();
}

TrainConfig member_config(const TrainConfig& base, const Hyperparams& h, int id) {
  TrainConfig cfg = base;
  apply_hyperparams(cfg, h);
  cfg.seed = mix_key(base.seed, static_cast<std::uint64_t>(id));
  cfg.checkpoint_interval = 0;
  return cfg;
}

double validation_fitness(const ModelState& model, const LabeledDataset& validation) {
  return accuracy(predict_probabilities(model.arch, model.teacher, validation.features), validation.noisy_labels);
}

}  // namespace

PbtResult run_pbt(const TrainConfig& base, const PbtConfig& cfg, const LabeledDataset& data) {
  cfg.validate();
  base.validate();
  const auto split = split_dataset(data, cfg.validation_fraction, cfg.seed);
  const LabeledDataset& train = split.train;
  const LabeledDataset& validation = split.test;

  PbtResult result;
  result.members = sample_initial_population(cfg, cfg.seed);
  auto& members = result.members;
  const std::size_t n = members.size();
  std::vector<std::unique_ptr<Trainer>> workers(n);
  for (std::size_t i = 0; i < n; ++i)
    workers[i] = std::make_unique<Trainer>(train, member_config(base, members[i].hyperparams, members[i].id));

  const int threads = cfg.threads > 0 ? cfg.threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  const int rounds = (base.epochs + cfg.interval_epochs - 1) / cfg.interval_epochs;

  auto train_interval = [&](std::size_t i, int round) {
    auto& m = members[i];
    if (m.dead) return;
    try {
      const int first = round * cfg.interval_epochs;
      const int count = std::min(cfg.interval_epochs, base.epochs - first);
      for (int e = 0; e < count; ++e) m.schedule.push_back({first + e, m.hyperparams});
      workers[i]->run_epochs(count);
      m.fitness.push_back(validation_fitness(workers[i]->model(), validation));
      m.checkpoint = std::make_shared<const Checkpoint>(workers[i]->checkpoint());
    } catch (const std::exception& e) {
      m.dead = true;
      m.error = e.what();
    }
  };

  auto inherit = [&](std::size_t i, const Hyperparams& donor_h, std::shared_ptr<const Checkpoint> donor_ckpt, int round) {
    auto& m = members[i];
    auto rng = Rng::stream(cfg.seed, 0xE7B, round, m.id);
    m.hyperparams = explore(donor_h, cfg, rng);
    m.checkpoint = std::move(donor_ckpt);
    workers[i] = std::make_unique<Trainer>(train, member_config(base, m.hyperparams, m.id), *m.checkpoint);
  };

  if (cfg.mode == PbtMode::barrier) {
    for (int round = 0; round < rounds; ++round) {
      parallel_for(n, threads, [&](std::size_t i) { train_interval(i, round); });
      if (round == 0) {
        std::vector<double> first;
        for (const auto& m : members)
          if (!m.dead) first.push_back(m.fitness.front());
        result.initial_median_fitness = median(first);
      }
      if (round + 1 == rounds) break;
      std::vector<std::optional<double>> fitness(n);
      for (std::size_t i = 0; i < n; ++i)
        if (!members[i].dead) fitness[i] = members[i].fitness.back();
      auto rng = Rng::stream(cfg.seed, 0xE4A, round);
      const auto donors = exploit(fitness, cfg.exploit_quantile, rng);
      for (std::size_t i = 0; i < n; ++i) {
        members[i].inherited_from.push_back(donors[i] ? members[*donors[i]].id : -1);
        if (donors[i]) inherit(i, members[*donors[i]].hyperparams, members[*donors[i]].checkpoint, round);
      }
    }
  } else {
    std::mutex mu;
    std::vector<std::optional<double>> published(n);
    std::vector<Hyperparams> published_h(n);
    std::vector<std::shared_ptr<const Checkpoint>> published_ckpt(n);
    std::vector<double> first_round;
    parallel_for(n, threads, [&](std::size_t i) {
      for (int round = 0; round < rounds && !members[i].dead; ++round) {
        train_interval(i, round);
        std::lock_guard lock(mu);
        if (members[i].dead) {
          published[i].reset();
          break;
        }
        published[i] = members[i].fitness.back();
        published_h[i] = members[i].hyperparams;
        published_ckpt[i] = members[i].checkpoint;
        if (round == 0) first_round.push_back(members[i].fitness.front());
        if (round + 1 == rounds) break;
        auto rng = Rng::stream(cfg.seed, 0xE4A, round, i);
        const auto donors = exploit(published, cfg.exploit_quantile, rng);
        members[i].inherited_from.push_back(donors[i] ? members[*donors[i]].id : -1);
        if (donors[i]) inherit(i, published_h[*donors[i]], published_ckpt[*donors[i]], round);
      }
    });
    result.initial_median_fitness = median(first_round);
  }

  for (std::size_t i = 0; i < n; ++i) {
    const auto& m = members[i];
    if (m.dead || m.fitness.empty()) continue;
    if (result.best < 0 || m.fitness.back() > result.best_fitness) {
      result.best = m.id;
      result.best_fitness = m.fitness.back();
    }
  }
  if (result.best < 0) throw std::runtime_error("pbt: every member failed (" + members.front().error + ")");
  result.best_model = workers[static_cast<std::size_t>(result.best)]->model();
  return result;
}

void write_schedule_csv(std::ostream& os, const std::vector<PbtMember>& members) {
  os << "epoch,member,lr,wd,q,lambda_jsd,lambda_ecr,n_star\n";
  char buf[256];
  int last = 0;
  for (const auto& m : members)
    for (const auto& e : m.schedule) last = std::max(last, e.epoch);
  for (int epoch = 0; epoch <= last; ++epoch)
    for (const auto& m : members)
      for (const auto& e : m.schedule) {
        if (e.epoch != epoch) continue;
        const auto& h = e.hyperparams;
        std::snprintf(buf, sizeof buf, "%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%d\n", e.epoch, m.id, h.lr, h.weight_decay, h.q,
                      h.lambda_jsd, h.lambda_ecr, h.n_star);
        os << buf;
      }
}

void write_fitness_csv(std::ostream& os, const std::vector<PbtMember>& members) {
  os << "round,member,fitness,donor\n";
  char buf[128];
  for (const auto& m : members)
    for (std::size_t r = 0; r < m.fitness.size(); ++r) {
      const int donor = r < m.inherited_from.size() ? m.inherited_from[r] : -1;
      std::snprintf(buf, sizeof buf, "%zu,%d,%.17g,%d\n", r, m.id, m.fitness[r], donor);
      os << buf;
    }
}

}  // namespace rte
