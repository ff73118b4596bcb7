#include "rte/objective.hpp"

#include <stdexcept>

namespace rte {

namespace {

enum Term : std::uint64_t { kTaskView = 0, kTargetView = 1, kEcrView = 100, kJsdView = 200, kGuessView = 300 };

MatrixR gather_views(const LabeledDataset& data, const std::vector<std::size_t>& indices, std::uint64_t seed,
                     std::uint64_t step, std::uint64_t term, const std::function<VectorR(const VectorR&, Rng&)>& view) {
  MatrixR out(static_cast<Eigen::Index>(indices.size()), data.features.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    auto rng = Rng::stream(seed, step, indices[r], term);
    const VectorR x = data.features.row(static_cast<Eigen::Index>(indices[r])).transpose();
    out.row(static_cast<Eigen::Index>(r)) = view(x, rng).transpose();
  }
  return out;
}

Var<Real> target_probs(Graph<Real>& g, const ArchSpec& arch, const std::vector<Var<Real>>& params, const MatrixR& x,
                       const std::string& name) {
  Rng unused;
  return stop_gradient(softmax(build_logits(g, arch, params, g.input(x, name), Mode::eval, unused)));
}

Var<Real> mean_of(std::span<const Var<Real>> parts) {
  Var<Real> acc = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) acc = acc + parts[i];
  return affine(acc, Real(1) / static_cast<Real>(parts.size()));
}

}  // namespace

PseudoLabelStrategy parse_strategy(const std::string& name) {
  if (name == "ema_teacher") return PseudoLabelStrategy::ema_teacher;
  if (name == "label_guessing") return PseudoLabelStrategy::label_guessing;
  if (name == "augmentation_anchoring") return PseudoLabelStrategy::augmentation_anchoring;
  throw std::invalid_argument("unknown pseudo-label strategy '" + name +
                              "' (ema_teacher|label_guessing|augmentation_anchoring)");
}

std::string to_string(PseudoLabelStrategy s) {
  switch (s) {
    case PseudoLabelStrategy::ema_teacher: return "ema_teacher";
    case PseudoLabelStrategy::label_guessing: return "label_guessing";
    case PseudoLabelStrategy::augmentation_anchoring: return "augmentation_anchoring";
  }
  return "?";
}

void LossConfig::validate() const {
  validate_q(q);
  if (!(lambda_jsd >= 0.0) || !(lambda_ecr >= 0.0)) throw std::invalid_argument("loss weights must be nonnegative");
  if (n_star < 1) throw std::invalid_argument("N* must be at least 1");
  if (k < 1) throw std::invalid_argument("strategy view count k must be at least 1");
  if (!(temperature > 0.0)) throw std::invalid_argument("sharpening temperature must be positive");
}

nlohmann::json to_json(const LossConfig& c) {
  return {{"q", c.q},
          {"lambda_jsd", c.lambda_jsd},
          {"lambda_ecr", c.lambda_ecr},
          {"n_star", c.n_star},
          {"strategy", to_string(c.strategy)},
          {"k", c.k},
          {"sharpen", c.sharpen},
          {"temperature", c.temperature},
          {"use_ema", c.use_ema},
          {"batch_sync", c.batch_sync},
          {"ecr_norm", c.ecr_norm == EcrNorm::squared ? "squared" : "l2"},
          {"teacher_preprocess", c.teacher_preprocess == TeacherPreprocess::weak ? "weak" : "raw"}};
}

LossConfig loss_config_from_json(const nlohmann::json& j) {
  LossConfig c;
  c.q = j.value("q", c.q);
  c.lambda_jsd = j.value("lambda_jsd", c.lambda_jsd);
  c.lambda_ecr = j.value("lambda_ecr", c.lambda_ecr);
  c.n_star = j.value("n_star", c.n_star);
  c.strategy = parse_strategy(j.value("strategy", to_string(c.strategy)));
  c.k = j.value("k", c.k);
  c.sharpen = j.value("sharpen", c.sharpen);
  c.temperature = j.value("temperature", c.temperature);
  c.use_ema = j.value("use_ema", c.use_ema);
  c.batch_sync = j.value("batch_sync", c.batch_sync);
  c.ecr_norm = j.value("ecr_norm", std::string("squared")) == "l2" ? EcrNorm::l2 : EcrNorm::squared;
  c.teacher_preprocess = j.value("teacher_preprocess", std::string("weak")) == "raw" ? TeacherPreprocess::raw
                                                                                   : TeacherPreprocess::weak;
  c.validate();
  return c;
}

RteInputs make_rte_inputs(const LabeledDataset& data, std::vector<std::size_t> task_indices,
                          std::vector<std::size_t> ecr_indices, const LossConfig& cfg, const Augmenter& augmenter,
                          std::uint64_t seed, std::uint64_t step) {
  cfg.validate();
  if (task_indices.empty()) throw std::invalid_argument("empty task batch");
  RteInputs in;
  auto weak = [&](const VectorR& x, Rng& rng) { return augmenter.weak(x, rng); };
  auto strong = [&](const VectorR& x, Rng& rng) { return augmenter.strong(augmenter.weak(x, rng), rng); };

  in.task = gather_views(data, task_indices, seed, step, kTaskView, weak);
  for (std::size_t i : task_indices) in.labels.push_back(data.noisy_labels.at(i));
  in.task_indices = std::move(task_indices);
  if (ecr_indices.empty()) ecr_indices = in.task_indices;

  const bool need_ecr = cfg.lambda_ecr > 0.0;
  const bool need_jsd = cfg.lambda_jsd > 0.0;
  if (need_ecr || need_jsd) {
    if (cfg.teacher_preprocess == TeacherPreprocess::raw)
      in.target_input = data.rows(ecr_indices);
    else
      in.target_input = gather_views(data, ecr_indices, seed, step, kTargetView, weak);
  }
  if (need_ecr) {
    for (int t = 0; t < cfg.ecr_terms(); ++t)
      in.ecr_views.push_back(gather_views(data, ecr_indices, seed, step, kEcrView + static_cast<std::uint64_t>(t), strong));
    if (cfg.strategy == PseudoLabelStrategy::label_guessing)
      for (int t = 0; t < cfg.k; ++t)
        in.guess_views.push_back(gather_views(data, ecr_indices, seed, step, kGuessView + static_cast<std::uint64_t>(t), weak));
  }
  if (need_jsd)
    for (std::uint64_t t = 0; t < 2; ++t) in.jsd_views[t] = gather_views(data, ecr_indices, seed, step, kJsdView + t, strong);
  in.ecr_indices = std::move(ecr_indices);
  return in;
}

RteTerms rte_total(Graph<Real>& g, const RteInputs& in, const ModelState& model, const LossConfig& cfg,
                   std::uint64_t dropout_seed) {
  cfg.validate();
  const bool need_ecr = cfg.lambda_ecr > 0.0;
  const bool need_jsd = cfg.lambda_jsd > 0.0;
  if (need_ecr && static_cast<int>(in.ecr_views.size()) != cfg.ecr_terms())
    throw std::invalid_argument("ECR needs " + std::to_string(cfg.ecr_terms()) + " augmented views, got " +
                                std::to_string(in.ecr_views.size()));
  if (need_jsd && (in.jsd_views[0].rows() == 0 || in.jsd_views[1].rows() == 0))
    throw std::invalid_argument("JSD term needs two augmented views");

  RteTerms terms;
  terms.student = add_parameters(g, model.student, true, "student");
  terms.teacher = add_parameters(g, model.teacher, true, "teacher");

  // One student pass over [task; ecr views...; jsd views...].
  std::vector<const MatrixR*> blocks{&in.task};
  if (need_ecr)
    for (const auto& v : in.ecr_views) blocks.push_back(&v);
  if (need_jsd)
    for (const auto& v : in.jsd_views) blocks.push_back(&v);
  Eigen::Index rows = 0;
  for (const auto* b : blocks) rows += b->rows();
  MatrixR stacked(rows, in.task.cols());
  Eigen::Index at = 0;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> spans;
  for (const auto* b : blocks) {
    if (b->cols() != in.task.cols()) throw ShapeError("rte_total: augmented views differ in feature width");
    stacked.middleRows(at, b->rows()) = *b;
    spans.emplace_back(at, b->rows());
    at += b->rows();
  }
  auto dropout_rng = Rng::stream(dropout_seed, 0xD80F);
  Var<Real> probs = softmax(build_logits(g, model.arch, terms.student, g.input(std::move(stacked), "student_batch"),
                                         Mode::train, dropout_rng));
  std::size_t block = 0;
  auto next_block = [&] {
    const auto [b, n] = spans[block++];
    return slice_rows(probs, b, n);
  };

  terms.gce = mean(gce_loss(next_block(), in.labels, cfg.q));

  const auto zero = [&](const char* name) { return g.input(MatrixR::Zero(1, 1), name); };
  terms.ecr = zero("ecr_disabled");
  terms.jsd = zero("jsd_disabled");
  if (need_ecr || need_jsd) {
    const auto& source = cfg.use_ema ? terms.teacher : terms.student;
    Var<Real> orig = target_probs(g, model.arch, source, in.target_input, "target_input");
    if (need_ecr) {
      Var<Real> target = orig;
      switch (cfg.strategy) {
        case PseudoLabelStrategy::ema_teacher:
          if (cfg.sharpen) target = sharpen(orig, cfg.temperature);
          break;
        case PseudoLabelStrategy::label_guessing: {
          if (in.guess_views.size() != static_cast<std::size_t>(cfg.k))
            throw std::invalid_argument("label guessing needs k weak views");
          std::vector<Var<Real>> guesses;
          for (const auto& v : in.guess_views) guesses.push_back(target_probs(g, model.arch, terms.student, v, "guess_view"));
          target = sharpen(mean_of(guesses), cfg.temperature);
          break;
        }
        case PseudoLabelStrategy::augmentation_anchoring:
          target = sharpen(orig, cfg.temperature);
          break;
      }
      std::vector<Var<Real>> views;
      for (std::size_t t = 0; t < in.ecr_views.size(); ++t) views.push_back(next_block());
      terms.ecr = ecr_loss<Real>(target, views, cfg.ecr_norm);
    }
    if (need_jsd) {
      Var<Real> a1 = next_block();
      Var<Real> a2 = next_block();
      terms.jsd = mean(jsd_loss(orig, a1, a2));
    }
  }

  Var<Real> total = terms.gce;
  if (need_jsd) total = total + affine(terms.jsd, static_cast<Real>(cfg.lambda_jsd));
  if (need_ecr) total = total + affine(terms.ecr, static_cast<Real>(cfg.lambda_ecr));
  terms.total = total;
  return terms;
}

RteBreakdown breakdown(const RteTerms& t) {
  return {static_cast<double>(t.gce.scalar()), static_cast<double>(t.jsd.scalar()), static_cast<double>(t.ecr.scalar()),
          static_cast<double>(t.total.scalar())};
}

MatrixR pseudo_label_target(const LossConfig& cfg, const MatrixR& x, const ModelState& model, const Augmenter& augmenter,
                            Rng& rng) {
  cfg.validate();
  auto views = [&](int count) {
    std::vector<MatrixR> out;
    for (int v = 0; v < count; ++v) {
      MatrixR m(x.rows(), x.cols());
      for (Eigen::Index r = 0; r < x.rows(); ++r) m.row(r) = augmenter.weak(x.row(r).transpose(), rng).transpose();
      out.push_back(std::move(m));
    }
    return out;
  };
  auto prep = [&]() -> MatrixR { return cfg.teacher_preprocess == TeacherPreprocess::raw ? x : views(1).front(); };
  Graph<Real> g;
  const auto& params = (cfg.use_ema && cfg.strategy != PseudoLabelStrategy::label_guessing) ? model.teacher : model.student;
  auto vars = add_parameters(g, params, false, "target");
  switch (cfg.strategy) {
    case PseudoLabelStrategy::ema_teacher: {
      Var<Real> t = target_probs(g, model.arch, vars, prep(), "x");
      return (cfg.sharpen ? sharpen(t, cfg.temperature) : t).value();
    }
    case PseudoLabelStrategy::label_guessing: {
      std::vector<Var<Real>> guesses;
      for (const auto& v : views(cfg.k)) guesses.push_back(target_probs(g, model.arch, vars, v, "guess_view"));
      return sharpen(mean_of(guesses), cfg.temperature).value();
    }
    case PseudoLabelStrategy::augmentation_anchoring:
      return sharpen(target_probs(g, model.arch, vars, views(1).front(), "anchor"), cfg.temperature).value();
  }
  throw std::invalid_argument("unknown pseudo-label strategy");
}

}  // namespace rte
