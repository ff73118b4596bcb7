#include "rte/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include <Eigen/Core>

#include "rte/eval.hpp"

namespace fs = std::filesystem;

namespace rte {

fs::path default_output_root() {
  if (const char* env = std::getenv(kOutputRootVariable); env && *env) return env;
  return fs::current_path() / "runs";
}

fs::path run_directory(const fs::path& root, const ExperimentConfig& cfg) {
  return root / config_hash(cfg).substr(0, 16);
}

nlohmann::json Manifest::to_json() const {
  nlohmann::json t = nlohmann::json::array();
  for (const auto& s : timings) t.push_back({{"stage", s.stage}, {"seconds", s.seconds}, {"steps", s.steps}});
  return {{"name", name},        {"config_hash", config_hash}, {"config", config},
          {"seeds", seeds},      {"versions", versions},       {"dataset", dataset},
          {"artifacts", artifacts}, {"timings", t},            {"status", status},
          {"error", error},
          {"failure_policy", "artifacts written before a failing stage are kept; status records the failure"}};
}

Manifest Manifest::from_json(const nlohmann::json& j) {
  Manifest m;
  m.name = j.at("name");
  m.config_hash = j.at("config_hash");
  m.config = j.at("config");
  m.seeds = j.value("seeds", nlohmann::json::object());
  m.versions = j.value("versions", nlohmann::json::object());
  m.dataset = j.value("dataset", nlohmann::json::object());
  m.artifacts = j.value("artifacts", std::map<std::string, std::string>{});
  for (const auto& t : j.value("timings", nlohmann::json::array()))
    m.timings.push_back({t.at("stage"), t.at("seconds"), t.value("steps", std::uint64_t{0})});
  m.status = j.at("status");
  m.error = j.value("error", "");
  return m;
}

namespace {

using Clock = std::chrono::steady_clock;

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

template <typename Fn>
void write_text(const fs::path& path, Fn fn) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  fn(os);
}

nlohmann::json describe(const LabeledDataset& ds) {
  return {{"samples", ds.size()},
          {"classes", ds.classes},
          {"shape", {ds.shape.channels, ds.shape.height, ds.shape.width}},
          {"seed", ds.seed}};
}

nlohmann::json statistics_json(const LabeledDataset& ds) {
  const auto stats = class_statistics(ds);
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : stats.rows)
    rows.push_back({{"label", r.label}, {"samples", r.samples}, {"share", r.share}, {"correct", r.correct},
                    {"correct_fraction", r.correct_fraction}});
  return {{"rows", rows},
          {"total", {{"samples", stats.total.samples}, {"correct", stats.total.correct},
                     {"correct_fraction", stats.total.correct_fraction}}},
          {"effective_noise_ratio", effective_noise_ratio(ds)}};
}

std::vector<std::size_t> iota_indices(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> v(end - begin);
  std::iota(v.begin(), v.end(), begin);
  return v;
}

}  // namespace

Manifest run_experiment(const ExperimentConfig& config, const fs::path& run_dir, std::ostream* log) {
  ExperimentConfig cfg = config;
  cfg.validate();
  fs::create_directories(run_dir);

  Manifest m;
  m.name = cfg.name;
  m.config = to_json(cfg);
  m.config_hash = config_hash(cfg);
  m.seeds = {{"data", cfg.data.synthetic.seed}, {"noise", cfg.noise.seed}, {"train", cfg.train.seed},
             {"pbt", cfg.pbt.seed}, {"corruption", cfg.eval.corruption_seed}};
  m.versions = {{"rtelab", kLabVersion},
                {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                              std::to_string(EIGEN_MINOR_VERSION)},
                {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                      std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                      std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
                {"scalar", sizeof(Real) == 8 ? "f64" : "f32"}};
  write_text(run_dir / "config.ini", [&](std::ostream& os) { os << to_ini(cfg); });
  m.artifacts["config"] = "config.ini";

  const auto say = [&](const std::string& s) {
    if (log) *log << "[" << cfg.name << "] " << s << '\n';
  };
  const auto has = [&](const char* stage) {
    return std::find(cfg.stages.begin(), cfg.stages.end(), stage) != cfg.stages.end();
  };

  LabeledDataset train, test;
  ModelState model;
  bool trained = false;
  try {
    auto start = Clock::now();
    auto finish = [&](const std::string& stage, std::uint64_t steps = 0) {
      const double s = std::chrono::duration<double>(Clock::now() - start).count();
      m.timings.push_back({stage, s, steps});
      start = Clock::now();
    };

    if (cfg.data.source == "synthetic") {
      SyntheticSpec spec = cfg.data.synthetic;
      spec.samples += cfg.data.test_samples;
      const auto all = generate_synthetic(spec);
      const auto train_idx = iota_indices(0, cfg.data.synthetic.samples);
      const auto test_idx = iota_indices(cfg.data.synthetic.samples, spec.samples);
      train = all.subset(train_idx);
      test = all.subset(test_idx);
    } else {
      train = load_dataset(cfg.data.path);
      if (!cfg.data.test_path.empty()) test = load_dataset(cfg.data.test_path);
      cfg.data.synthetic.classes = train.classes;
      cfg.data.synthetic.shape = train.shape;
      cfg.sync_shapes();
    }
    if (has("generate")) {
      save_dataset(run_dir / "train_clean.bin", train);
      m.artifacts["train_clean"] = "train_clean.bin";
      if (!test.empty()) {
        save_dataset(run_dir / "test.bin", test);
        m.artifacts["test"] = "test.bin";
      }
      say("data: " + std::to_string(train.size()) + " training, " + std::to_string(test.size()) + " test samples");
      finish("generate");
    }
    m.dataset = {{"source", cfg.data.source}, {"train", describe(train)}, {"test", describe(test)}};

    if (has("corrupt")) {
      train = apply_noise(train, cfg.noise);
      save_dataset(run_dir / "train_noisy.bin", train);
      nlohmann::json sidecar = {{"noise", to_json(cfg.noise, train.classes)}, {"seed", cfg.noise.seed},
                                {"statistics", statistics_json(train)}};
      write_json(run_dir / "train_noisy.json", sidecar);
      m.artifacts["train_noisy"] = "train_noisy.bin";
      m.artifacts["train_noisy_sidecar"] = "train_noisy.json";
      m.dataset["effective_noise_ratio"] = effective_noise_ratio(train);
      say("corrupt: effective noise ratio " + std::to_string(effective_noise_ratio(train)));
      finish("corrupt");
    }

    if (has("train")) {
      Trainer t(train, cfg.train);
      if (cfg.train.checkpoint_interval > 0) {
        fs::create_directories(run_dir / "checkpoints");
        t.set_checkpoint_dir(run_dir / "checkpoints");
        m.artifacts["checkpoints"] = "checkpoints";
      }
      t.run();
      write_text(run_dir / "metrics.csv", [&](std::ostream& os) { write_metrics_csv(os, t.metrics()); });
      save_checkpoint(run_dir / "final.ckpt", t.checkpoint());
      m.artifacts["metrics"] = "metrics.csv";
      m.artifacts["checkpoint"] = "final.ckpt";
      model = t.model();
      trained = true;
      say("train: " + std::to_string(t.step_index()) + " steps");
      finish("train", t.step_index());
    }

    if (has("pbt")) {
      const auto result = run_pbt(cfg.train, cfg.pbt, train);
      write_text(run_dir / "schedule.csv", [&](std::ostream& os) { write_schedule_csv(os, result.members); });
      write_text(run_dir / "fitness.csv", [&](std::ostream& os) { write_fitness_csv(os, result.members); });
      const auto& best = result.members[static_cast<std::size_t>(result.best)];
      Checkpoint ckpt{result.best_model, {}, {{"pbt_member", best.id}, {"hyperparams", to_json(best.hyperparams)}}};
      ckpt.optimizer = init_optimizer(result.best_model, 0);
      save_checkpoint(run_dir / "final.ckpt", ckpt);
      nlohmann::json dead = nlohmann::json::array();
      for (const auto& mem : result.members)
        if (mem.dead) dead.push_back({{"member", mem.id}, {"error", mem.error}});
      write_json(run_dir / "pbt.json", {{"best_member", result.best},
                                        {"best_fitness", result.best_fitness},
                                        {"initial_median_fitness", result.initial_median_fitness},
                                        {"best_hyperparams", to_json(best.hyperparams)},
                                        {"dead", dead}});
      m.artifacts["schedule"] = "schedule.csv";
      m.artifacts["fitness"] = "fitness.csv";
      m.artifacts["pbt"] = "pbt.json";
      m.artifacts["checkpoint"] = "final.ckpt";
      model = result.best_model;
      trained = true;
      say("pbt: best member " + std::to_string(result.best) + " fitness " + std::to_string(result.best_fitness));
      finish("pbt");
    }

    if (has("eval") && trained) {
      if (test.empty()) throw std::runtime_error("eval stage needs a test set (data.test_path)");
      nlohmann::json report;
      report["accuracy"] = accuracy(model, test, WeightSource::teacher);
      report["accuracy_student"] = accuracy(model, test, WeightSource::student);
      if (cfg.eval.calibration) {
        const auto cal = calibration(model, test, cfg.eval.calibration_bins);
        report["calibration"] = to_json(cal);
        write_text(run_dir / "calibration.csv", [&](std::ostream& os) { write_calibration_csv(os, cal); });
        m.artifacts["calibration"] = "calibration.csv";
      }
      if (cfg.eval.loss_split) {
        const std::uint64_t total = train.size() / static_cast<std::size_t>(cfg.train.batch_size) *
                                    static_cast<std::uint64_t>(cfg.train.epochs);
        const double q = cfg.train.q_schedule.value(total, total);
        const auto split = loss_split_histogram(model, train, q, cfg.eval.histogram_bins);
        report["loss_split"] = to_json(split);
        write_text(run_dir / "loss_split.csv", [&](std::ostream& os) { write_loss_split_csv(os, split); });
        m.artifacts["loss_split"] = "loss_split.csv";
      }
      if (cfg.eval.mce) {
        const auto mce = mean_corruption_error(model.arch, model.teacher, test, default_corruption_suite(),
                                               cfg.eval.corruption_seed);
        report["mce"] = to_json(mce);
        write_text(run_dir / "mce.csv", [&](std::ostream& os) { write_mce_csv(os, mce); });
        m.artifacts["mce"] = "mce.csv";
      }
      write_json(run_dir / "eval.json", report);
      m.artifacts["eval"] = "eval.json";
      say("eval: accuracy " + std::to_string(report["accuracy"].get<double>()));
      finish("eval");
    }
    m.status = "complete";
    write_json(run_dir / "manifest.json", m.to_json());
  } catch (const std::exception& e) {
    m.status = "failed";
    m.error = e.what();
    write_json(run_dir / "manifest.json", m.to_json());
    throw;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Reports

std::vector<ReportRow> collect_report(std::span<const fs::path> runs) {
  if (runs.empty()) throw std::invalid_argument("report: no run directories given");
  std::vector<ReportRow> rows;
  for (const auto& dir : runs) {
    const auto read = [&](const char* file) {
      std::ifstream in(dir / file);
      if (!in) throw std::runtime_error(dir.string() + ": missing " + file);
      return nlohmann::json::parse(in);
    };
    const auto manifest = Manifest::from_json(read("manifest.json"));
    if (manifest.status != "complete") throw std::runtime_error(dir.string() + ": run did not complete");
    const auto eval = read("eval.json");
    ReportRow r;
    r.run = dir.filename().string();
    r.config = manifest.name + "@" + manifest.config_hash.substr(0, 8);
    r.accuracy = eval.at("accuracy");
    const double nan = std::numeric_limits<double>::quiet_NaN();
    r.mce = eval.contains("mce") ? eval["mce"]["mce"].get<double>() : nan;
    r.ece = eval.contains("calibration") ? eval["calibration"]["ece"].get<double>() : nan;
    r.l_q = r.jsd = r.ecr = r.total = nan;
    if (std::ifstream metrics(dir / "metrics.csv"); metrics) {
      std::string line, last;
      while (std::getline(metrics, line))
        if (!line.empty()) last = line;
      if (!last.empty() && last.rfind("step", 0) != 0) {
        std::stringstream ss(last);
        std::string cell;
        std::vector<double> v;
        while (std::getline(ss, cell, ',')) v.push_back(std::stod(cell));
        if (v.size() == 5) r.l_q = v[1], r.jsd = v[2], r.ecr = v[3], r.total = v[4];
      }
    }
    rows.push_back(r);
  }
  return rows;
}

namespace {

std::string cell(double v, int precision) {
  if (std::isnan(v)) return "-";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

}  // namespace

void write_report_csv(std::ostream& os, const std::vector<ReportRow>& rows) {
  os << "run,config,accuracy,mce,ece,L_q,JSD,ECR,total\n";
  char buf[512];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.run.c_str(), r.config.c_str(),
                  r.accuracy, r.mce, r.ece, r.l_q, r.jsd, r.ecr, r.total);
    os << buf;
  }
}

void write_report_text(std::ostream& os, const std::vector<ReportRow>& rows) {
  const std::vector<std::string> head{"run", "config", "acc %", "mCE %", "ECE", "L_q", "JSD", "ECR", "total"};
  std::vector<std::vector<std::string>> table{head};
  for (const auto& r : rows)
    table.push_back({r.run, r.config, cell(100.0 * r.accuracy, 2), cell(r.mce, 2), cell(r.ece, 4), cell(r.l_q, 4),
                     cell(r.jsd, 4), cell(r.ecr, 4), cell(r.total, 4)});
  std::vector<std::size_t> width(head.size(), 0);
  for (const auto& row : table)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  for (std::size_t i = 0; i < table.size(); ++i) {
    for (std::size_t c = 0; c < head.size(); ++c) {
      const bool left = c < 2;
      os << (c ? "  " : "") << (left ? std::left : std::right) << std::setw(static_cast<int>(width[c])) << table[i][c];
    }
    os << '\n';
    if (i == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w + 2;
      os << std::string(total - 2, '-') << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Ablation presets

std::vector<std::string> ablation_presets() { return {"table5", "table9", "table10"}; }

std::vector<std::pair<std::string, ExperimentConfig>> ablation_preset(const std::string& preset,
                                                                      const ExperimentConfig& base) {
  std::vector<std::pair<std::string, ExperimentConfig>> out;
  auto add = [&](const std::string& variant, auto&& edit) {
    ExperimentConfig c = base;
    c.name = base.name + "/" + variant;
    edit(c.train);
    c.validate();
    out.emplace_back(variant, std::move(c));
  };
  if (preset == "table5") {
    add("rte", [](TrainConfig&) {});
    add("no_ecr", [](TrainConfig& t) { t.loss.lambda_ecr = 0.0; });
    add("cce", [](TrainConfig& t) {
      t.q_schedule.kind = QScheduleKind::constant;
      t.q_schedule.q = 0.0;
      t.loss.q = 0.0;
    });
    add("no_jsd", [](TrainConfig& t) { t.loss.lambda_jsd = 0.0; });
    add("ecr_n2_no_ema", [](TrainConfig& t) {
      t.loss.n_star = 2;
      t.loss.use_ema = false;
    });
    add("ecr_n2_no_batch_sync", [](TrainConfig& t) {
      t.loss.n_star = 2;
      t.loss.batch_sync = false;
    });
    add("ecr_n2_batch_sync", [](TrainConfig& t) { t.loss.n_star = 2; });
    add("label_guessing_k2", [](TrainConfig& t) {
      t.loss.strategy = PseudoLabelStrategy::label_guessing;
      t.loss.k = 2;
    });
    for (int k : {2, 4, 6})
      add("anchoring_k" + std::to_string(k), [k](TrainConfig& t) {
        t.loss.strategy = PseudoLabelStrategy::augmentation_anchoring;
        t.loss.k = k;
        t.loss.use_ema = false;
      });
    add("anchoring_k2_ema", [](TrainConfig& t) {
      t.loss.strategy = PseudoLabelStrategy::augmentation_anchoring;
      t.loss.k = 2;
      t.loss.use_ema = true;
    });
    add("ecr_sharpened", [](TrainConfig& t) { t.loss.sharpen = true; });
  } else if (preset == "table9") {
    for (int n = 1; n <= 8; ++n)
      add("n_star_" + std::to_string(n), [n](TrainConfig& t) {
        t.batch_size = 128;
        t.loss.batch_sync = true;
        t.loss.n_star = n;
      });
  } else if (preset == "table10") {
    for (int b : {32, 64, 128, 256, 512, 1024})
      add("ecr_batch_" + std::to_string(b), [b](TrainConfig& t) {
        t.loss.n_star = 1;
        t.loss.batch_sync = false;
        t.ecr_batch_size = b;
      });
  } else {
    throw ConfigError({"ablate: unknown preset '" + preset + "' (table5|table9|table10)"});
  }
  return out;
}

}  // namespace rte
