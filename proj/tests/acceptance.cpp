// Acceptance runner: one PASS/FAIL line per criterion.
//
//   rte_acceptance [--only 1,6,8] [--threads N]

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "rte/augment.hpp"
#include "rte/eval.hpp"
#include "rte/experiment.hpp"
#include "rte/gradcheck.hpp"
#include "rte/loss.hpp"
#include "rte/noise.hpp"
#include "rte/objective.hpp"
#include "rte/pbt.hpp"
#include "rte/synthetic.hpp"
#include "rte/trainer.hpp"

using namespace rte;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    notes.push_back((ok ? "ok   " : "FAIL ") + what);
  }
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

int g_threads = 1;

template <typename Fn>
void parallel_for(std::size_t n, Fn fn) {
  const auto workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, g_threads)));
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

MatrixR random_distribution(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  MatrixR m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = 0.05 + rng.uniform();
    m.row(i) /= m.row(i).sum();
  }
  return m;
}

LabeledDataset balanced(int classes, std::size_t per_class) {
  std::vector<int> labels;
  for (std::size_t i = 0; i < per_class * static_cast<std::size_t>(classes); ++i)
    labels.push_back(static_cast<int>(i % static_cast<std::size_t>(classes)));
  MatrixR x = MatrixR::Zero(static_cast<Eigen::Index>(labels.size()), 1);
  return LabeledDataset::clean(flat_shape(1), classes, std::move(x), std::move(labels));
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

// ---------------------------------------------------------------------------
// Toy protocol shared by criteria 5-9

constexpr int kToyClasses = 10;
constexpr std::size_t kToyTrain = 5000;
constexpr std::size_t kToyTest = 2000;
constexpr double kToyMargin = 3.0;
constexpr double kToyNoise = 0.8;
const std::vector<std::uint64_t> kSeeds{1, 2, 3};

struct ToyData {
  LabeledDataset clean;
  LabeledDataset noisy;
  LabeledDataset test;
};

ToyData toy_data(std::uint64_t seed) {
  SyntheticSpec s;
  s.classes = kToyClasses;
  s.samples = kToyTrain + kToyTest;
  s.shape = flat_shape(32);
  s.margin = kToyMargin;
  s.seed = seed;
  const auto all = generate_synthetic(s);
  std::vector<std::size_t> a(kToyTrain), b(kToyTest);
  std::iota(a.begin(), a.end(), 0);
  std::iota(b.begin(), b.end(), kToyTrain);
  ToyData d;
  d.clean = all.subset(a);
  d.test = all.subset(b);
  NoiseSpec ns;
  ns.ratio = kToyNoise;
  ns.seed = 7 + seed;
  d.noisy = apply_noise(d.clean, ns);
  return d;
}

struct Variant {
  std::string name;
  bool clean_labels = false;
  bool rte = true;
  double lambda_jsd = 2.0;
  double lambda_ecr = 100.0;
  int n_star = 4;
  bool use_ema = true;
};

Variant ce_variant(bool clean) {
  Variant v;
  v.name = clean ? "ce_clean" : "ce";
  v.clean_labels = clean;
  v.rte = false;
  return v;
}

Variant rte_variant(int n_star = 4) {
  Variant v;
  v.name = "rte_n" + std::to_string(n_star);
  v.n_star = n_star;
  return v;
}

TrainConfig toy_config(const Variant& v, std::uint64_t seed) {
  TrainConfig c;
  c.arch.input = flat_shape(32);
  c.arch.hidden = {128};
  c.arch.classes = kToyClasses;
  c.batch_size = 128;
  c.epochs = 100;
  c.base_lr = 0.1;
  c.weight_decay = 1e-3;
  c.ema_decay = 0.99;
  c.seed = seed;
  c.augment.jitter_scale = 1.5;
  c.augment.mask_scale = 0.5;
  c.augment.weak_jitter = 0.2;
  if (!v.rte) {
    c.q_schedule.kind = QScheduleKind::constant;
    c.q_schedule.q = 0.0;
    c.loss.lambda_jsd = 0.0;
    c.loss.lambda_ecr = 0.0;
  } else {
    c.loss.lambda_jsd = v.lambda_jsd;
    c.loss.lambda_ecr = v.lambda_ecr;
    c.loss.n_star = v.n_star;
    c.loss.use_ema = v.use_ema;
  }
  return c;
}

struct ToyRun {
  double accuracy = 0.0;  // teacher, clean test labels
  double seconds = 0.0;
  double clean_median = 0.0;
  double corrupt_median = 0.0;
};

class ToyLab {
 public:
  /// Trains every missing (variant, seed) pair.
  void ensure(const std::vector<Variant>& variants) {
    std::vector<std::pair<Variant, std::uint64_t>> todo;
    {
      std::lock_guard lock(mu_);
      for (const auto& v : variants)
        for (auto s : kSeeds)
          if (!runs_.contains({v.name, s})) todo.emplace_back(v, s);
    }
    parallel_for(todo.size(), [&](std::size_t i) {
      const auto& [v, seed] = todo[i];
      const auto r = train_one(v, seed);
      std::lock_guard lock(mu_);
      runs_[{v.name, seed}] = r;
      std::printf("  [toy] %-12s seed %llu  acc %.4f  (%.1fs)\n", v.name.c_str(), static_cast<unsigned long long>(seed),
                  r.accuracy, r.seconds);
      std::fflush(stdout);
    });
  }

  const ToyRun& run(const std::string& name, std::uint64_t seed) const { return runs_.at({name, seed}); }

  double median_accuracy(const std::string& name) const {
    std::vector<double> a;
    for (auto s : kSeeds) a.push_back(run(name, s).accuracy);
    return median(a);
  }

  std::string accuracies(const std::string& name) const {
    std::string out;
    for (auto s : kSeeds) out += fmt("%s%.4f", out.empty() ? "" : "/", run(name, s).accuracy);
    return out;
  }

 private:
  static ToyRun train_one(const Variant& v, std::uint64_t seed) {
    const auto t0 = Clock::now();
    const auto data = toy_data(seed);
    const auto cfg = toy_config(v, seed);
    const auto& train_set = v.clean_labels ? data.clean : data.noisy;
    Trainer t(train_set, cfg);
    t.run();
    ToyRun r;
    r.accuracy = accuracy(t.model(), data.test);
    const double q = cfg.q_schedule.value(t.total_steps(), t.total_steps());
    const auto split = loss_split_histogram(t.model(), train_set, q);
    r.clean_median = split.clean.median;
    r.corrupt_median = split.corrupt.median;
    r.seconds = seconds_since(t0);
    return r;
  }

  std::mutex mu_;
  std::map<std::pair<std::string, std::uint64_t>, ToyRun> runs_;
};

ToyLab g_lab;

// ---------------------------------------------------------------------------
// Criteria

Outcome gradient_fidelity() {
  Outcome o;
  const auto t0 = Clock::now();
  auto rng = Rng::stream(2024, 1);
  double gce_err = 0.0, jsd_err = 0.0, ecr_err = 0.0, total_err = 0.0, analytic_err = 0.0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const double q = rng.uniform(0.05, 1.0);
    {
      Graph<Real> g;
      auto f = g.parameter(random_distribution(5, 4, rng), "f");
      std::vector<int> y(5);
      for (auto& l : y) l = static_cast<int>(rng.below(4));
      gce_err = std::max(gce_err, check_gradients(g, mean(gce_loss(f, y, q))).max_relative_error);
    }
    {
      Graph<Real> g;
      auto a = g.parameter(random_distribution(3, 4, rng), "a");
      auto b = g.parameter(random_distribution(3, 4, rng), "b");
      auto c = g.parameter(random_distribution(3, 4, rng), "c");
      jsd_err = std::max(jsd_err, check_gradients(g, mean(jsd_loss(a, b, c))).max_relative_error);
    }
    {
      Graph<Real> g;
      auto t = g.input(random_distribution(3, 4, rng));
      std::vector<Var<Real>> students;
      for (int k = 0; k < 3; ++k) students.push_back(g.parameter(random_distribution(3, 4, rng), "s"));
      ecr_err = std::max(ecr_err, check_gradients(g, ecr_loss<Real>(t, students)).max_relative_error);
    }
    {
      SyntheticSpec spec;
      spec.classes = 3;
      spec.samples = 12;
      spec.shape = flat_shape(6);
      spec.margin = 1.0;
      spec.seed = s;
      NoiseSpec noise;
      noise.ratio = 0.5;
      noise.seed = s;
      const auto data = apply_noise(generate_synthetic(spec), noise);
      ArchSpec arch;
      arch.input = spec.shape;
      arch.hidden = {5};
      arch.classes = 3;
      arch.dropout = 0.1;
      auto model = init_model(arch, s);
      auto prng = Rng::stream(s, 77);
      for (auto& p : model.teacher)
        for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] += 0.1 * prng.normal();
      LossConfig cfg;
      cfg.q = q;
      cfg.n_star = 1 + static_cast<int>(s % 4);
      cfg.lambda_jsd = 2.0;
      cfg.lambda_ecr = 3.0;
      Augmenter aug(AugmentSpec{}, spec.shape);
      const auto in = make_rte_inputs(data, iota(4), {}, cfg, aug, s, 0);
      Graph<Real> g;
      auto t = rte_total(g, in, model, cfg, s);
      GradCheckOptions opt;
      opt.name_prefix = "student";
      total_err = std::max(total_err, check_gradients(g, t.total, opt).max_relative_error);
    }
    {
      Graph<Real> g;
      auto f = g.parameter(random_distribution(1, 4, rng), "f");
      const int y = static_cast<int>(rng.below(4));
      g.backward(sum(gce_loss(f, {y}, q)));
      analytic_err = std::max(analytic_err, std::abs(f.grad()(0, y) + std::pow(f.value()(0, y), q - 1.0)));
    }
  }
  o.check(gce_err <= 1e-4, fmt("GCE head max rel. error %.2e <= 1e-4", gce_err));
  o.check(ecr_err <= 1e-4, fmt("ECR head max rel. error %.2e <= 1e-4", ecr_err));
  o.check(jsd_err <= 1e-4, fmt("JSD head max rel. error %.2e <= 1e-4", jsd_err));
  o.check(total_err <= 1e-4, fmt("full objective max rel. error %.2e <= 1e-4", total_err));
  o.check(analytic_err <= 1e-6, fmt("GCE analytic -f^(q-1) max abs. error %.2e <= 1e-6", analytic_err));
  const double elapsed = seconds_since(t0);
  o.check(elapsed < 60.0, fmt("runtime %.1fs < 60s", elapsed));
  return o;
}

Outcome noise_model() {
  Outcome o;
  double worst = 0.0;
  auto rng = Rng::stream(5, 5);
  auto row_error = [](const TransitionMatrix& f) {
    double e = 0.0;
    for (Eigen::Index j = 0; j < f.f.rows(); ++j) {
      e = std::max(e, std::abs(f.f.row(j).sum() - 1.0));
      if (f.f.row(j).minCoeff() < 0.0) e = 1.0;
    }
    return e;
  };
  for (int trial = 0; trial < 200; ++trial) {
    const int m = 2 + static_cast<int>(rng.below(9));
    IntensityVector p;
    p.p.resize(m);
    for (int j = 0; j < m; ++j) p.p[j] = rng.uniform();
    worst = std::max(worst, row_error(build_transition(p, build_symmetric_confusion(m))));
    worst = std::max(worst, row_error(build_legacy_inclusive_transition(p)));
    IntensityVector p10;
    p10.p.resize(10);
    for (int j = 0; j < 10; ++j) p10.p[j] = rng.uniform();
    worst = std::max(worst, row_error(build_transition(p10, build_pairflip_confusion())));
    worst = std::max(worst, row_error(build_transition(p10, build_resnet_confusion())));
  }
  o.check(worst <= 1e-9, fmt("800 constructed F row-stochastic, max |row sum - 1| %.1e", worst));

  const auto ds = balanced(10, 5000);
  NoiseSpec spec;
  spec.ratio = 0.8;
  spec.seed = 80;
  const double exclusive = effective_noise_ratio(apply_noise(ds, spec));
  o.check(std::abs(exclusive - 0.80) <= 0.01, fmt("symmetric p=0.8 effective ratio %.4f (0.80 +- 0.01)", exclusive));
  spec.legacy_inclusive = true;
  const double legacy = effective_noise_ratio(apply_noise(ds, spec));
  o.check(std::abs(legacy - 0.72) <= 0.01, fmt("legacy-inclusive effective ratio %.4f (0.72 +- 0.01)", legacy));

  const auto f = build_transition(IntensityVector::uniform(10, 0.6), build_resnet_confusion());
  const auto expected = expected_label_counts(f, std::vector<std::size_t>(10, 5000));
  const double expected_correct = expected.diagonal().sum() / 50000.0;
  o.check(std::abs(expected_correct - 0.40) <= 1e-12, fmt("confusion structure p=0.6 expected correct %.12f", expected_correct));
  NoiseSpec table;
  table.structure = NoiseStructure::resnet_confusion;
  table.ratio = 0.6;
  table.seed = 2024;
  const double sampled = class_statistics(apply_noise(ds, table)).total.correct_fraction;
  o.check(std::abs(sampled - 0.40) <= 0.005, fmt("confusion structure p=0.6 sampled correct %.4f (0.40 +- 0.005)", sampled));
  return o;
}

Outcome loss_limits() {
  Outcome o;
  auto rng = Rng::stream(3, 3);
  double ce_gap = 0.0, mae_gap = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const int c = 2 + static_cast<int>(rng.below(9));
    const MatrixR p = random_distribution(1, c, rng);
    const VectorR f = p.row(0).transpose();
    const int y = static_cast<int>(rng.below(static_cast<std::size_t>(c)));
    ce_gap = std::max(ce_gap, std::abs(gce_loss(f, y, 1e-4) - (-std::log(f[y]))));
    mae_gap = std::max(mae_gap, std::abs(gce_loss(f, y, 1.0) - (1.0 - f[y])));
  }
  o.check(ce_gap <= 1e-3, fmt("q=1e-4 vs cross-entropy max gap %.2e <= 1e-3", ce_gap));
  o.check(mae_gap == 0.0, fmt("q=1 vs 1-f_j max gap %.1e (exact)", mae_gap));
  return o;
}

Outcome schedules() {
  Outcome o;
  const std::uint64_t K = 13000;
  const double lr0 = cosine_lr(0, K, 0.03), lrK = cosine_lr(K, K, 0.03);
  o.check(lr0 == 0.03, fmt("cosine_lr(0) = %.6f", lr0));
  o.check(std::abs(lrK - 0.005853) <= 1e-6, fmt("cosine_lr(K) = %.7f (0.005853 +- 1e-6)", lrK));
  double peak = 0.0;
  std::uint64_t arg = 0;
  for (std::uint64_t k = 0; k <= K; ++k)
    if (q_schedule(k, K) > peak) {
      peak = q_schedule(k, K);
      arg = k;
    }
  o.check(std::abs(peak - 0.6) <= 1e-9 && arg == 8000, fmt("q peak %.6f at k/K = %llu/13000", peak, static_cast<unsigned long long>(arg)));
  const double terminal = q_schedule(K, K);
  o.check(std::abs(terminal - 0.333) <= 1e-3, fmt("q terminal %.4f (0.333 +- 1e-3)", terminal));
  return o;
}

Outcome pbt_contract() {
  Outcome o;
  PbtConfig cfg;
  std::array<int, 6> counts{};
  const int calls = 10000;
  bool in_range = true;
  for (int i = 0; i < calls; ++i) {
    auto rng = Rng::stream(55, i);
    auto h = sample_hyperparams(cfg, rng);
    ExploreTrace trace;
    in_range = in_range && cfg.in_range(explore(h, cfg, rng, &trace));
    for (std::size_t k = 0; k < 6; ++k) counts[k] += trace.resampled[k];
  }
  for (std::size_t k = 0; k < 6; ++k) {
    const double f = counts[k] / double(calls);
    o.check(std::abs(f - 0.25) <= 0.02, fmt("%s resample frequency %.4f (0.25 +- 0.02)", kHyperparamNames[k], f));
  }
  o.check(in_range, "10^4 explored hyperparameters inside their ranges");

  const auto data = toy_data(1);
  TrainConfig base = toy_config(rte_variant(), 1);
  base.epochs = 8;
  cfg.population = 8;
  cfg.interval_epochs = 2;
  cfg.threads = g_threads;
  cfg.seed = 8;
  const auto t0 = Clock::now();
  const auto r = run_pbt(base, cfg, data.noisy);
  bool trajectories = true;
  for (const auto& m : r.members)
    for (const auto& e : m.schedule) trajectories = trajectories && cfg.in_range(e.hyperparams);
  o.check(trajectories, "population-8 trajectories inside their ranges");
  o.check(r.best_fitness > r.initial_median_fitness,
          fmt("best final fitness %.4f > initial median %.4f (%.0fs)", r.best_fitness, r.initial_median_fitness,
              seconds_since(t0)));
  return o;
}

Outcome noise_robustness() {
  Outcome o;
  const auto t0 = Clock::now();
  g_lab.ensure({ce_variant(true), ce_variant(false), rte_variant(4)});
  const double elapsed = seconds_since(t0);
  const double clean = g_lab.median_accuracy("ce_clean");
  const double ce = g_lab.median_accuracy("ce");
  const double rte = g_lab.median_accuracy("rte_n4");
  o.check(clean >= 0.95, fmt("clean CE-only median accuracy %.4f >= 0.95 [%s]", clean, g_lab.accuracies("ce_clean").c_str()));
  o.check(rte - ce >= 0.10, fmt("RTE %.4f - CE %.4f = %.4f >= 0.10 [RTE %s, CE %s]", rte, ce, rte - ce,
                                g_lab.accuracies("rte_n4").c_str(), g_lab.accuracies("ce").c_str()));
  o.check(elapsed <= 900.0, fmt("runtime %.0fs <= 900s", elapsed));
  return o;
}

Outcome loss_separation() {
  Outcome o;
  g_lab.ensure({rte_variant(4)});
  for (auto s : kSeeds) {
    const auto& r = g_lab.run("rte_n4", s);
    o.check(r.corrupt_median > r.clean_median, fmt("seed %llu corrupt median %.4f > clean median %.4f",
                                                   static_cast<unsigned long long>(s), r.corrupt_median, r.clean_median));
  }
  return o;
}

Outcome ablation_ordering() {
  Outcome o;
  Variant no_jsd = rte_variant(4);
  no_jsd.name = "no_jsd";
  no_jsd.lambda_jsd = 0.0;
  Variant no_ecr = rte_variant(4);
  no_ecr.name = "no_ecr";
  no_ecr.lambda_ecr = 0.0;
  Variant no_ema = rte_variant(2);
  no_ema.name = "rte_n2_no_ema";
  no_ema.use_ema = false;
  g_lab.ensure({rte_variant(4), no_jsd, no_ecr, rte_variant(2), no_ema});
  const double full = g_lab.median_accuracy("rte_n4");
  const double nj = g_lab.median_accuracy("no_jsd");
  const double ne = g_lab.median_accuracy("no_ecr");
  const double ema = g_lab.median_accuracy("rte_n2");
  const double plain = g_lab.median_accuracy("rte_n2_no_ema");
  o.check(full >= nj, fmt("full %.4f >= no-JSD %.4f [%s vs %s]", full, nj, g_lab.accuracies("rte_n4").c_str(),
                          g_lab.accuracies("no_jsd").c_str()));
  o.check(nj >= ne, fmt("no-JSD %.4f >= no-ECR %.4f [no-ECR %s]", nj, ne, g_lab.accuracies("no_ecr").c_str()));
  o.check(plain < ema, fmt("N*=2 no-EMA %.4f < N*=2 EMA %.4f [%s vs %s]", plain, ema,
                           g_lab.accuracies("rte_n2_no_ema").c_str(), g_lab.accuracies("rte_n2").c_str()));
  return o;
}

Outcome n_star_monotonicity() {
  Outcome o;
  g_lab.ensure({rte_variant(1), rte_variant(2), rte_variant(4), rte_variant(8)});
  double last = -1.0;
  int last_n = 0;
  for (int n : {1, 2, 4, 8}) {
    const auto name = "rte_n" + std::to_string(n);
    const double a = g_lab.median_accuracy(name);
    if (last_n > 0)
      o.check(a >= last - 0.01, fmt("N*=%d %.4f >= N*=%d %.4f - 0.01 [%s]", n, a, last_n, last, g_lab.accuracies(name).c_str()));
    else
      o.notes.push_back(fmt("     N*=1 %.4f [%s]", a, g_lab.accuracies(name).c_str()));
    last = a;
    last_n = n;
  }
  return o;
}

Outcome evaluation_harness() {
  Outcome o;
  std::vector<int> y(1000);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<int>(i % 2);
  MatrixR p(1000, 2);
  p.col(0).setConstant(0.9);
  p.col(1).setConstant(0.1);
  const double ece = calibration(p, y, 15).ece;
  o.check(std::abs(ece - 0.4) <= 1e-12, fmt("constant 0.9 confidence at 50%% accuracy: ECE %.12f", ece));

  SyntheticSpec spec;
  spec.classes = 3;
  spec.samples = 300;
  spec.shape = flat_shape(6);
  const auto data = generate_synthetic(spec);
  const auto all_zero = LabeledDataset::clean(data.shape, 3, data.features, std::vector<int>(300, 0));
  ArchSpec a;
  a.input = data.shape;
  a.hidden = {};
  a.classes = 3;
  auto m = init_model(a, 0);
  m.teacher[0].setZero();
  m.teacher[1].setZero();
  m.teacher[1](0, 0) = 5.0;
  const double mce = mean_corruption_error(a, m.teacher, all_zero).mce;
  o.check(mce == 0.0, fmt("perfect robust classifier mCE %.4f", mce));

  const auto names = default_corruption_suite().names();
  std::size_t overlap = 0;
  for (const auto& n : augmentation_primitive_names()) overlap += std::count(names.begin(), names.end(), n);
  o.check(overlap == 0, fmt("corruption suite (%zu) and augmentation registry (%zu) intersection size %zu", names.size(),
                            augmentation_primitive_names().size(), overlap));
  return o;
}

Outcome reproducibility() {
  Outcome o;
  const auto root = fs::temp_directory_path() / "rte_acceptance_repro";
  fs::remove_all(root);
  ExperimentConfig cfg;
  cfg.name = "repro";
  cfg.data.synthetic.classes = 4;
  cfg.data.synthetic.samples = 512;
  cfg.data.synthetic.shape = flat_shape(8);
  cfg.data.synthetic.margin = 3.0;
  cfg.data.test_samples = 256;
  cfg.noise.ratio = 0.5;
  cfg.train.batch_size = 32;
  cfg.train.epochs = 3;
  cfg.train.loss.n_star = 2;
  cfg.eval.mce = false;
  cfg.sync_shapes();
  run_experiment(cfg, root / "a");
  run_experiment(cfg, root / "b");
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
  };
  const auto ma = slurp(root / "a" / "metrics.csv");
  o.check(!ma.empty() && ma == slurp(root / "b" / "metrics.csv"), fmt("two runs, metrics CSV byte-identical (%zu bytes)", ma.size()));

  SyntheticSpec s;
  s.classes = 4;
  s.samples = 480;
  s.shape = flat_shape(8);
  NoiseSpec ns;
  ns.ratio = 0.5;
  const auto data = apply_noise(generate_synthetic(s), ns);
  TrainConfig t = cfg.train;
  t.epochs = 2;  // 30 steps
  Trainer full(data, t);
  full.run();
  Trainer first(data, t);
  first.run_steps(12);
  save_checkpoint(root / "mid.ckpt", first.checkpoint());
  Trainer resumed(data, t, load_checkpoint(root / "mid.ckpt"));
  const auto resumed_steps = resumed.total_steps() - resumed.step_index();
  resumed.run();
  bool same = full.model().student.size() == resumed.model().student.size();
  for (std::size_t i = 0; same && i < full.model().student.size(); ++i)
    same = full.model().student[i] == resumed.model().student[i] && full.model().teacher[i] == resumed.model().teacher[i] &&
           full.optimizer().velocity[i] == resumed.optimizer().velocity[i];
  o.check(same && resumed_steps >= 10,
          fmt("checkpoint resume bit-exact over %llu further steps", static_cast<unsigned long long>(resumed_steps)));
  fs::remove_all(root);
  return o;
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::vector<int> only;
  g_threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  app.add_option("--only", only, "criterion ids")->delimiter(',');
  app.add_option("--threads", g_threads, "worker threads for toy runs")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria{
      {1, "gradient fidelity", gradient_fidelity},
      {2, "noise-model exactness", noise_model},
      {3, "loss-limit equivalences", loss_limits},
      {4, "schedule checks", schedules},
      {5, "PBT contract", pbt_contract},
      {6, "end-to-end noise robustness", noise_robustness},
      {7, "loss-separation signature", loss_separation},
      {8, "ablation ordering", ablation_ordering},
      {9, "N* monotonicity", n_star_monotonicity},
      {10, "evaluation harness", evaluation_harness},
      {11, "reproducibility", reproducibility},
  };

  std::vector<std::string> summary;
  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    std::printf("criterion %d: %s\n", c.id, c.name);
    std::fflush(stdout);
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    for (const auto& n : o.notes) std::printf("  %s\n", n.c_str());
    const auto line = fmt("%s  criterion %2d: %s (%.1fs)", o.pass ? "PASS" : "FAIL", c.id, c.name, seconds_since(t0));
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    summary.push_back(line);
    failed += !o.pass;
  }
  std::printf("\nsummary\n");
  for (const auto& s : summary) std::printf("%s\n", s.c_str());
  return failed == 0 ? 0 : 1;
}
