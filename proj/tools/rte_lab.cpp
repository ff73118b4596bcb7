// rte_lab: command-line front end for the noisy-label lab.
//
//   rte_lab forge corrupt|stats|matrix ...
//   rte_lab generate ...
//   rte_lab train --config cfg.ini [--out dir]
//   rte_lab pbt --config cfg.ini [--population n] [--interval-epochs e]
//   rte_lab eval --checkpoint final.ckpt --dataset test.bin [--mce] [--calibration] [--loss-split]
//   rte_lab report RUN_DIR... [--csv file]
//   rte_lab ablate --preset table5 --config cfg.ini
//
// Exit status: 0 success, 1 configuration or usage error, 2 runtime failure.

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "rte/config.hpp"
#include "rte/eval.hpp"
#include "rte/experiment.hpp"
#include "rte/noise.hpp"
#include "rte/synthetic.hpp"
#include "rte/trainer.hpp"

namespace fs = std::filesystem;
using namespace rte;

namespace {

constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

/// Usage problems detected after parsing; mapped to exit status 1.
struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

void write_json_file(const fs::path& path, const nlohmann::json& j) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

template <typename Fn>
void write_file(const fs::path& path, Fn fn) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  fn(os);
}

fs::path sidecar_path(const fs::path& data) {
  fs::path p = data;
  return p.replace_extension(".json");
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
  return out;
}

void print_statistics(std::ostream& os, const LabeledDataset& ds) {
  const auto stats = class_statistics(ds);
  const bool cifar = ds.classes == 10;
  os << std::left << std::setw(12) << "label" << std::right << std::setw(9) << "samples" << std::setw(9) << "share"
     << std::setw(9) << "correct" << std::setw(10) << "correct%" << '\n';
  auto row = [&](const std::string& name, const ClassStatisticsRow& r) {
    os << std::left << std::setw(12) << name << std::right << std::setw(9) << r.samples << std::fixed
       << std::setprecision(2) << std::setw(8) << 100.0 * r.share << '%' << std::setw(9) << r.correct
       << std::setw(9) << 100.0 * r.correct_fraction << "%\n";
  };
  for (const auto& r : stats.rows)
    row(cifar ? cifar10_class_names()[static_cast<std::size_t>(r.label)] : std::to_string(r.label), r);
  row("TOTAL", stats.total);
  os << "effective noise ratio " << std::setprecision(4) << effective_noise_ratio(ds) << '\n';
}

fs::path resolve_out(const std::string& out, const ExperimentConfig& cfg) {
  return out.empty() ? run_directory(default_output_root(), cfg) : fs::path(out);
}

double checkpoint_q(const Checkpoint& c) {
  if (c.record.contains("hyperparams")) return hyperparams_from_json(c.record["hyperparams"]).q;
  if (c.record.contains("train_config")) {
    const auto tc = train_config_from_json(c.record["train_config"]);
    return tc.q_schedule.value(1, 1);
  }
  throw UsageError("checkpoint carries no q; pass --q");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robust temporal ensembling lab"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kLabVersion);

  // forge ---------------------------------------------------------------
  auto* forge = app.add_subcommand("forge", "label-noise tools");
  forge->require_subcommand(1);

  std::string c_in, c_out, c_structure = "symmetric", c_class_ratios;
  double c_ratio = 0.0;
  std::uint64_t c_seed = 0;
  bool c_legacy = false;
  auto* corrupt = forge->add_subcommand("corrupt", "corrupt the labels of a dataset");
  corrupt->add_option("--input,-i", c_in, "clean dataset")->required()->check(CLI::ExistingFile);
  corrupt->add_option("--output,-o", c_out, "noisy dataset (a .json sidecar is written next to it)")->required();
  corrupt->add_option("--structure", c_structure, "symmetric|pairflip|resnet-confusion");
  corrupt->add_option("--ratio", c_ratio, "noise intensity p")->required();
  corrupt->add_option("--class-ratios", c_class_ratios, "per-class intensities p_1,...,p_m");
  corrupt->add_option("--seed", c_seed, "sampling seed");
  corrupt->add_flag("--legacy-inclusive", c_legacy, "draw corrupted labels from all classes, the true one included");

  std::string s_in;
  auto* stats = forge->add_subcommand("stats", "per-label noise statistics");
  stats->add_option("--input,-i", s_in, "dataset")->required()->check(CLI::ExistingFile);

  std::string m_structure = "symmetric", m_class_ratios;
  double m_ratio = 0.0;
  int m_classes = 10;
  bool m_legacy = false;
  auto* matrix = forge->add_subcommand("matrix", "print a transition matrix");
  matrix->add_option("--structure", m_structure, "symmetric|pairflip|resnet-confusion");
  matrix->add_option("--ratio", m_ratio, "noise intensity p")->required();
  matrix->add_option("--class-ratios", m_class_ratios, "per-class intensities");
  matrix->add_option("--classes", m_classes, "number of classes");
  matrix->add_flag("--legacy-inclusive", m_legacy, "legacy-inclusive sampling");

  // generate ------------------------------------------------------------
  SyntheticSpec g_spec;
  std::string g_shape = "32", g_out;
  auto* generate = app.add_subcommand("generate", "synthetic Gaussian-mixture dataset");
  generate->add_option("--classes", g_spec.classes, "number of classes");
  generate->add_option("--samples", g_spec.samples, "number of samples");
  generate->add_option("--shape", g_shape, "d or CxHxW");
  generate->add_option("--margin", g_spec.margin, "half distance between class means, in noise standard deviations");
  generate->add_option("--seed", g_spec.seed, "seed");
  generate->add_option("--output,-o", g_out, "dataset path")->required();

  // train / pbt -----------------------------------------------------------
  std::string t_config, t_out;
  auto* train = app.add_subcommand("train", "run the configured pipeline");
  train->add_option("--config,-c", t_config, "experiment config (.ini)")->required()->check(CLI::ExistingFile);
  train->add_option("--out,-o", t_out, "run directory (default: content-addressed under $" +
                                           std::string(kOutputRootVariable) + ")");

  std::string p_config, p_out;
  std::optional<int> p_population, p_interval;
  auto* pbt = app.add_subcommand("pbt", "population based training");
  pbt->add_option("--config,-c", p_config, "experiment config (.ini)")->required()->check(CLI::ExistingFile);
  pbt->add_option("--population", p_population, "population size");
  pbt->add_option("--interval-epochs", p_interval, "epochs between exploit/explore rounds");
  pbt->add_option("--out,-o", p_out, "run directory");

  // eval ------------------------------------------------------------------
  std::string e_ckpt, e_data, e_out, e_source = "teacher";
  bool e_mce = false, e_cal = false, e_split = false;
  std::optional<double> e_q;
  int e_cal_bins = 15, e_hist_bins = 64;
  std::uint64_t e_seed = 0;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", e_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--dataset", e_data, "dataset file")->required()->check(CLI::ExistingFile);
  eval->add_flag("--mce", e_mce, "mean corruption error");
  eval->add_flag("--calibration", e_cal, "reliability bins and ECE");
  eval->add_flag("--loss-split", e_split, "clean/corrupt loss histograms");
  eval->add_option("--q", e_q, "q for the loss split (default: the checkpoint's final q)");
  eval->add_option("--calibration-bins", e_cal_bins, "reliability bins");
  eval->add_option("--histogram-bins", e_hist_bins, "loss histogram bins");
  eval->add_option("--corruption-seed", e_seed, "corruption seed");
  eval->add_option("--weights", e_source, "teacher|student")->check(CLI::IsMember({"teacher", "student"}));
  eval->add_option("--out,-o", e_out, "directory for eval.json and CSV tables");

  // report ----------------------------------------------------------------
  std::vector<std::string> r_runs;
  std::string r_csv;
  auto* report = app.add_subcommand("report", "compare completed runs");
  report->add_option("runs", r_runs, "run directories")->required();
  report->add_option("--csv", r_csv, "also write the table as CSV");

  // ablate ----------------------------------------------------------------
  std::string a_preset, a_config, a_root, a_csv;
  bool a_dry = false;
  auto* ablate = app.add_subcommand("ablate", "run an ablation preset");
  ablate->add_option("--preset", a_preset, "table5|table9|table10")->required();
  ablate->add_option("--config,-c", a_config, "base experiment config")->required()->check(CLI::ExistingFile);
  ablate->add_option("--root", a_root, "output root (default: $" + std::string(kOutputRootVariable) + ")");
  ablate->add_option("--csv", a_csv, "write the comparison table as CSV");
  ablate->add_flag("--dry-run", a_dry, "list the variants without running them");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  try {
    if (*corrupt) {
      const auto ds = load_dataset(c_in);
      NoiseSpec spec;
      spec.structure = parse_noise_structure(c_structure);
      spec.ratio = c_ratio;
      if (!c_class_ratios.empty()) spec.class_ratios = parse_list(c_class_ratios);
      spec.legacy_inclusive = c_legacy;
      spec.seed = c_seed;
      const auto noisy = apply_noise(ds, spec);
      save_dataset(c_out, noisy);
      write_json_file(sidecar_path(c_out), {{"noise", to_json(spec, ds.classes)},
                                            {"seed", c_seed},
                                            {"source", fs::path(c_in).filename().string()},
                                            {"effective_noise_ratio", effective_noise_ratio(noisy)}});
      print_statistics(std::cout, noisy);
    } else if (*stats) {
      print_statistics(std::cout, load_dataset(s_in));
    } else if (*matrix) {
      NoiseSpec spec;
      spec.structure = parse_noise_structure(m_structure);
      spec.ratio = m_ratio;
      if (!m_class_ratios.empty()) spec.class_ratios = parse_list(m_class_ratios);
      spec.legacy_inclusive = m_legacy;
      const auto f = spec.transition(m_classes);
      char buf[32];
      for (Eigen::Index i = 0; i < f.f.rows(); ++i) {
        for (Eigen::Index j = 0; j < f.f.cols(); ++j) {
          std::snprintf(buf, sizeof buf, "%s%.4f", j ? " " : "", f.f(i, j));
          std::cout << buf;
        }
        std::cout << '\n';
      }
    } else if (*generate) {
      g_spec.shape = parse_shape(g_shape);
      g_spec.validate();
      const auto ds = generate_synthetic(g_spec);
      save_dataset(g_out, ds);
      write_json_file(sidecar_path(g_out),
                      {{"synthetic", to_json(g_spec)},
                       {"nearest_mean_accuracy", nearest_mean_accuracy(synthetic_means(g_spec), ds)}});
      std::cout << "wrote " << ds.size() << " samples, " << ds.classes << " classes, shape " << format_shape(ds.shape)
                << " to " << g_out << '\n';
    } else if (*train) {
      auto cfg = load_config(t_config);
      if (std::find(cfg.stages.begin(), cfg.stages.end(), "train") == cfg.stages.end())
        throw UsageError("train: config stages do not include 'train'");
      const auto dir = resolve_out(t_out, cfg);
      run_experiment(cfg, dir, &std::cerr);
      std::cout << dir.string() << '\n';
    } else if (*pbt) {
      auto cfg = load_config(p_config);
      if (p_population) cfg.pbt.population = *p_population;
      if (p_interval) cfg.pbt.interval_epochs = *p_interval;
      for (auto& s : cfg.stages)
        if (s == "train") s = "pbt";
      if (std::find(cfg.stages.begin(), cfg.stages.end(), "pbt") == cfg.stages.end())
        throw UsageError("pbt: config stages include neither 'train' nor 'pbt'");
      cfg.validate();
      const auto dir = resolve_out(p_out, cfg);
      run_experiment(cfg, dir, &std::cerr);
      std::cout << dir.string() << '\n';
    } else if (*eval) {
      const auto ckpt = load_checkpoint(e_ckpt);
      const auto data = load_dataset(e_data);
      const auto& params = e_source == "teacher" ? ckpt.model.teacher : ckpt.model.student;
      const auto probs = predict_probabilities(ckpt.model.arch, params, data.features);
      nlohmann::json out;
      out["checkpoint"] = e_ckpt;
      out["dataset"] = e_data;
      out["weights"] = e_source;
      out["accuracy"] = accuracy(probs, data.true_labels);
      const fs::path dir = e_out.empty() ? fs::path{} : fs::path(e_out);
      if (!dir.empty()) fs::create_directories(dir);
      if (e_cal) {
        const auto cal = calibration(probs, data.true_labels, e_cal_bins);
        out["calibration"] = to_json(cal);
        if (!dir.empty()) write_file(dir / "calibration.csv", [&](std::ostream& os) { write_calibration_csv(os, cal); });
      }
      if (e_split) {
        const double q = e_q ? *e_q : checkpoint_q(ckpt);
        const auto split = loss_split_histogram(probs, data, q, e_hist_bins);
        out["loss_split"] = to_json(split);
        if (!dir.empty()) write_file(dir / "loss_split.csv", [&](std::ostream& os) { write_loss_split_csv(os, split); });
      }
      if (e_mce) {
        const auto mce = mean_corruption_error(ckpt.model.arch, params, data, default_corruption_suite(), e_seed);
        out["mce"] = to_json(mce);
        if (!dir.empty()) write_file(dir / "mce.csv", [&](std::ostream& os) { write_mce_csv(os, mce); });
      }
      if (!dir.empty()) write_json_file(dir / "eval.json", out);
      std::cout << out.dump(2) << '\n';
    } else if (*report) {
      std::vector<fs::path> runs(r_runs.begin(), r_runs.end());
      const auto rows = collect_report(runs);
      write_report_text(std::cout, rows);
      if (!r_csv.empty()) write_file(r_csv, [&](std::ostream& os) { write_report_csv(os, rows); });
    } else if (*ablate) {
      const auto base = load_config(a_config);
      const auto variants = ablation_preset(a_preset, base);
      const fs::path root = a_root.empty() ? default_output_root() : fs::path(a_root);
      std::vector<fs::path> runs;
      for (const auto& [variant, cfg] : variants) {
        const auto dir = run_directory(root, cfg);
        if (a_dry) {
          std::cout << std::left << std::setw(24) << variant << ' ' << dir.string() << '\n';
          continue;
        }
        run_experiment(cfg, dir, &std::cerr);
        runs.push_back(dir);
      }
      if (!a_dry) {
        const auto rows = collect_report(runs);
        write_report_text(std::cout, rows);
        if (!a_csv.empty()) write_file(a_csv, [&](std::ostream& os) { write_report_csv(os, rows); });
      }
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error:\n";
    for (const auto& p : e.problems()) std::cerr << "  " << p << '\n';
    return kConfigError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "failed: " << e.what() << '\n';
    return kRuntimeError;
  }
  return 0;
}
