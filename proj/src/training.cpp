#include "conki/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"

#include "conki/errors.hpp"
#include "conki/log.hpp"

namespace conki {

void TrainConfig::validate() const {
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
  if (stage1.epochs < 0 || stage2.epochs < 0 || stage1.warmup_epochs < 0) {
    throw ConfigError("epoch counts must be >= 0");
  }
  if (!(stage1.lr >= 0.0) || !(stage2.lr_encoders >= 0.0) || !(stage2.lr_other >= 0.0)) {
    throw ConfigError("learning rates must be >= 0");
  }
}

// ---------------------------------------------------------------- losses

double task_loss(std::span<const double> preds, std::span<const double> labels) {
  if (preds.empty()) throw InvalidInputError("task_loss: empty batch");
  if (preds.size() != labels.size()) throw InvalidInputError("task_loss: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) s += (preds[i] - labels[i]) * (preds[i] - labels[i]);
  return s / static_cast<double>(preds.size());
}

std::vector<double> task_loss_grad(std::span<const double> preds, std::span<const double> labels) {
  if (preds.empty()) throw InvalidInputError("task_loss: empty batch");
  if (preds.size() != labels.size()) throw InvalidInputError("task_loss: length mismatch");
  std::vector<double> g(preds.size());
  const double scale = 2.0 / static_cast<double>(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) g[i] = scale * (preds[i] - labels[i]);
  return g;
}

double total_loss(double task, double con, double lambda) { return task + lambda * con; }

// ---------------------------------------------------------------- freezing

GroupMask stage_trainable(int stage, bool train_text_backbone) {
  if (stage != 1 && stage != 2) throw ConfigError("stage must be 1 or 2");
  GroupMask m{};
  for (std::size_t g = 0; g < kNumParamGroups; ++g) {
    const auto group = static_cast<ParamGroup>(g);
    if (stage == 1) {
      m[g] = !is_backbone(group);
    } else {
      m[g] = !is_adapter(group) && (group != ParamGroup::BackboneText || train_text_backbone);
    }
  }
  return m;
}

std::size_t count_trainable_params(const ParamStore& params, int stage, bool train_text_backbone) {
  const GroupMask m = stage_trainable(stage, train_text_backbone);
  std::size_t n = 0;
  for (const auto& info : params.infos()) {
    if (mask_has(m, info.group)) n += info.size;
  }
  return n;
}

bool is_backbone_param(const ParamInfo& info) { return is_backbone(info.group); }
bool is_adapter_param(const ParamInfo& info) { return is_adapter(info.group); }

// ---------------------------------------------------------------- optimizer

AdamOptimizer::AdamOptimizer(std::size_t num_params) {
  state_.m.assign(num_params, 0.0);
  state_.v.assign(num_params, 0.0);
}

void AdamOptimizer::step(ParamStore& params, std::span<const double> grads,
                         const GroupMask& trainable, const std::array<double, kNumParamGroups>& lr,
                         double weight_decay) {
  ++state_.step;
  const double t = static_cast<double>(state_.step);
  const double c1 = 1.0 - std::pow(beta1, t);
  const double c2 = 1.0 - std::pow(beta2, t);
  auto values = params.values();
  for (const auto& info : params.infos()) {
    if (!mask_has(trainable, info.group)) continue;
    const double rate = lr[static_cast<std::size_t>(info.group)];
    for (std::size_t i = info.offset; i < info.offset + info.size; ++i) {
      const double g = grads[i];
      state_.m[i] = beta1 * state_.m[i] + (1.0 - beta1) * g;
      state_.v[i] = beta2 * state_.v[i] + (1.0 - beta2) * g * g;
      const double update = (state_.m[i] / c1) / (std::sqrt(state_.v[i] / c2) + eps);
      values[i] -= rate * (update + weight_decay * values[i]);
    }
  }
}

// ---------------------------------------------------------------- batch objective

StepSettings make_step_settings(int stage, const TrainConfig& cfg, const ModelConfig& model,
                                LabelRange range) {
  StepSettings s;
  s.stage = stage;
  s.trainable = stage_trainable(stage, cfg.stage2.train_text_backbone);
  // Stage 1 optimizes L_task only.
  s.contrastive = stage == 2 && cfg.contrastive;
  s.lambda = cfg.lambda;
  s.con.tau = cfg.tau;
  s.con.include_n1 = cfg.include_n1;
  s.con.use_pan = model.use_pan;
  s.con.use_specific = model.use_adapters;
  s.range = range;
  return s;
}

StepStats batch_objective(const ConkiModel& model, std::span<const MultimodalSample* const> batch,
                          const StepSettings& settings, std::vector<double>* grads) {
  const std::size_t b = batch.size();
  if (b == 0) throw InvalidInputError("empty batch");
  std::vector<SamplePass> passes;
  passes.reserve(b);
  std::vector<double> preds(b), labels(b);
  for (std::size_t i = 0; i < b; ++i) {
    passes.push_back(model.forward(*batch[i]));
    preds[i] = passes[i].prediction;
    labels[i] = batch[i]->label;
  }

  StepStats stats;
  stats.task = task_loss(preds, labels);
  const std::vector<double> d_pred = task_loss_grad(preds, labels);

  std::vector<std::array<Mat, kRepsPerSample>> d_reps;
  if (settings.contrastive) {
    const int batch_size = static_cast<int>(b);
    const PairPartition part = build_pairs(labels, settings.range);
    std::vector<Vec> reps(static_cast<std::size_t>(kKeysPerSample) * b);
    for (std::size_t i = 0; i < b; ++i) {
      for (int slot = 0; slot < kRepsPerSample; ++slot) {
        const Mat& r = passes[i].reps[static_cast<std::size_t>(slot)];
        if (r.size() == 0) continue;
        const RepKey key{static_cast<int>(i), static_cast<Knowledge>(slot / 3),
                         static_cast<Modality>(slot % 3)};
        reps[static_cast<std::size_t>(key_index(key, batch_size))] = r.row(0).transpose();
      }
    }
    std::vector<Vec> d_con;
    stats.con = contrastive_loss_grad(reps, part, settings.con, d_con);
    d_reps.resize(b);
    for (std::size_t i = 0; i < b; ++i) {
      for (int slot = 0; slot < kRepsPerSample; ++slot) {
        const RepKey key{static_cast<int>(i), static_cast<Knowledge>(slot / 3),
                         static_cast<Modality>(slot % 3)};
        const Vec& g = d_con[static_cast<std::size_t>(key_index(key, batch_size))];
        if (g.size() != 0) d_reps[i][static_cast<std::size_t>(slot)] = settings.lambda * g.transpose();
      }
    }
  }
  stats.total = total_loss(stats.task, stats.con, settings.contrastive ? settings.lambda : 0.0);
  if (!std::isfinite(stats.total)) {
    throw TrainingError("non-finite loss (task=" + std::to_string(stats.task) +
                        ", con=" + std::to_string(stats.con) + ")");
  }

  if (grads != nullptr) {
    grads->assign(model.params().size(), 0.0);
    GradSink sink(*grads, settings.trainable);
    for (std::size_t i = 0; i < b; ++i) {
      model.backward(passes[i], d_pred[i], settings.contrastive ? &d_reps[i] : nullptr, sink);
    }
  }
  return stats;
}

// ---------------------------------------------------------------- evaluation

std::vector<double> predict(const ConkiModel& model, std::span<const MultimodalSample> samples) {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(model.forward(s).prediction);
  return out;
}

MetricsReport evaluate(const ConkiModel& model, std::span<const MultimodalSample> samples,
                       LabelRange range) {
  const std::vector<double> preds = predict(model, samples);
  std::vector<double> labels;
  labels.reserve(samples.size());
  for (const auto& s : samples) labels.push_back(s.label);
  return compute_metrics(preds, labels, range);
}

double mean_task_loss(const ConkiModel& model, std::span<const MultimodalSample> samples) {
  const std::vector<double> preds = predict(model, samples);
  std::vector<double> labels;
  for (const auto& s : samples) labels.push_back(s.label);
  return task_loss(preds, labels);
}

std::string epoch_log_json(const EpochLog& e) {
  nlohmann::ordered_json j;
  j["stage"] = e.stage;
  j["epoch"] = e.epoch;
  j["train_loss"] = e.train_loss;
  j["train_task_loss"] = e.train_task_loss;
  j["train_con_loss"] = e.train_con_loss;
  j["val"] = e.has_val ? nlohmann::ordered_json::parse(metrics_json(e.val)) : nlohmann::ordered_json();
  return j.dump();
}

// ---------------------------------------------------------------- stage driver

namespace {

struct LoopOptions {
  int stage = 1;
  int epochs = 0;
  int warmup_epochs = 0;
  std::array<double, kNumParamGroups> lr{};
  bool track_test = false;
};

void write_log(const std::vector<std::string>& lines, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot write training log " + path.string());
  for (const auto& l : lines) os << l << '\n';
}

// Runs the epoch loop of one stage on `model`, leaving the best-validation parameters in place.
void run_stage(ConkiModel& model, const Dataset& data, const TrainConfig& cfg,
               const LoopOptions& opt, std::uint64_t config_hash, StageResult& result) {
  const StepSettings settings = make_step_settings(opt.stage, cfg, model.config(), data.meta.label_range);
  const auto& train = data.train;
  if (train.empty()) throw ConfigError("stage " + std::to_string(opt.stage) + ": empty train split");

  AdamOptimizer adam(model.params().size());
  std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(opt.stage));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t steps_per_epoch = (train.size() + batch - 1) / batch;
  const std::size_t warmup_steps = steps_per_epoch * static_cast<std::size_t>(opt.warmup_epochs);

  std::vector<double> best_values(model.params().values().begin(), model.params().values().end());
  AdamState best_optimizer = adam.state();
  double best_mae = std::numeric_limits<double>::infinity();
  result.best_epoch = 0;
  if (opt.track_test) result.test = evaluate(model, data.test, data.meta.label_range);

  std::vector<double> grads;
  std::vector<const MultimodalSample*> members;
  std::size_t global_step = 0;
  for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochLog log;
    log.stage = opt.stage;
    log.epoch = epoch;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      members.clear();
      for (std::size_t k = start; k < std::min(order.size(), start + batch); ++k) {
        members.push_back(&train[order[k]]);
      }
      StepStats st;
      try {
        st = batch_objective(model, members, settings, &grads);
      } catch (const TrainingError& e) {
        throw TrainingError("stage " + std::to_string(opt.stage) + " epoch " + std::to_string(epoch) +
                            " step " + std::to_string(global_step) + ": " + e.what());
      }
      const double scale = global_step < warmup_steps
                               ? static_cast<double>(global_step + 1) / static_cast<double>(warmup_steps)
                               : 1.0;
      std::array<double, kNumParamGroups> lr = opt.lr;
      for (double& r : lr) r *= scale;
      adam.step(model.params(), grads, settings.trainable, lr, cfg.weight_decay);
      ++global_step;

      const double w = static_cast<double>(members.size()) / static_cast<double>(train.size());
      log.train_loss += w * st.total;
      log.train_task_loss += w * st.task;
      log.train_con_loss += w * st.con;
      result.steps.push_back(st);
    }

    bool improved = false;
    if (!data.valid.empty()) {
      log.val = evaluate(model, data.valid, data.meta.label_range);
      log.has_val = true;
      improved = log.val.mae < best_mae;
      if (improved) best_mae = log.val.mae;
    } else {
      improved = true;  // without a validation split the last epoch is kept
    }
    if (improved) {
      result.best_epoch = epoch;
      const auto v = model.params().values();
      best_values.assign(v.begin(), v.end());
      best_optimizer = adam.state();
      if (opt.track_test && !data.test.empty()) {
        result.test = evaluate(model, data.test, data.meta.label_range);
      }
    }
    result.log.push_back(epoch_log_json(log));
    log_info("stage " + std::to_string(opt.stage) + " " + result.log.back());
  }
  result.final_train_task_loss = mean_task_loss(model, train);
  result.best_val_mae = best_mae;

  std::copy(best_values.begin(), best_values.end(), model.params().values().begin());
  result.checkpoint = make_checkpoint(model.params(), config_hash, cfg.checkpoint_dtype, &best_optimizer);
}

}  // namespace

StageResult pretrain_adapters(const Dataset& external, const ModelConfig& model_cfg,
                              const TrainConfig& cfg, std::uint64_t config_hash) {
  cfg.validate();
  if (!model_cfg.use_adapters) throw ConfigError("pretrain_adapters: the model has no adapters");
  if (external.train.empty()) throw ConfigError("pretrain_adapters: external train split is empty");
  StageResult result;
  result.model = std::make_unique<ConkiModel>(model_cfg, InputDims::from(external.meta));
  result.model->init(cfg.seed);
  result.initial_train_task_loss = mean_task_loss(*result.model, external.train);

  LoopOptions opt;
  opt.stage = 1;
  opt.epochs = cfg.stage1.epochs;
  opt.warmup_epochs = cfg.stage1.warmup_epochs;
  opt.lr.fill(cfg.stage1.lr);
  run_stage(*result.model, external, cfg, opt, config_hash, result);

  if (!cfg.checkpoint_dir.empty()) {
    const std::filesystem::path dir(cfg.checkpoint_dir);
    write_tensor_file(result.checkpoint, dir / "stage1.ckpt");
    write_log(result.log, dir / "stage1_log.jsonl");
  }
  return result;
}

StageResult finetune(const Dataset& target, const TensorFile* pretrained,
                     const ModelConfig& model_cfg, const TrainConfig& cfg,
                     std::uint64_t config_hash) {
  cfg.validate();
  if (target.train.empty()) throw ConfigError("finetune: target train split is empty");
  StageResult result;
  {
    ConkiModel untrained(model_cfg, InputDims::from(target.meta));
    untrained.init(cfg.seed);
    if (!target.test.empty()) {
      result.untrained_test = evaluate(untrained, target.test, target.meta.label_range);
    }
  }
  result.model = std::make_unique<ConkiModel>(model_cfg, InputDims::from(target.meta));
  result.model->init(cfg.seed);
  if (pretrained != nullptr) {
    if (model_cfg.use_adapters) load_params(*pretrained, result.model->params(), is_adapter_param);
    // Backbones the adapters were trained against, when the checkpoint carries them.
    bool has_backbones = true;
    for (const auto& info : result.model->params().infos()) {
      if (is_backbone_param(info) && pretrained->find(info.name) == nullptr) {
        has_backbones = false;
        break;
      }
    }
    if (has_backbones) load_params(*pretrained, result.model->params(), is_backbone_param);
  }
  result.initial_train_task_loss = mean_task_loss(*result.model, target.train);

  LoopOptions opt;
  opt.stage = 2;
  opt.epochs = cfg.stage2.epochs;
  opt.warmup_epochs = 0;
  for (std::size_t g = 0; g < kNumParamGroups; ++g) {
    opt.lr[g] = is_backbone(static_cast<ParamGroup>(g)) ? cfg.stage2.lr_encoders : cfg.stage2.lr_other;
  }
  opt.track_test = true;
  run_stage(*result.model, target, cfg, opt, config_hash, result);

  if (!cfg.checkpoint_dir.empty()) {
    const std::filesystem::path dir(cfg.checkpoint_dir);
    write_tensor_file(result.checkpoint, dir / "stage2.ckpt");
    write_log(result.log, dir / "stage2_log.jsonl");
  }
  return result;
}

// ---------------------------------------------------------------- ablation

AblationSwitches AblationSwitches::parse(std::string_view list) {
  AblationSwitches s;
  std::size_t pos = 0;
  while (pos <= list.size()) {
    const std::size_t comma = std::min(list.find(',', pos), list.size());
    std::string_view tok = list.substr(pos, comma - pos);
    while (!tok.empty() && tok.front() == ' ') tok.remove_prefix(1);
    while (!tok.empty() && tok.back() == ' ') tok.remove_suffix(1);
    if (tok == "c1" || tok == "no-external") {
      s.no_external = true;
    } else if (tok == "c2" || tok == "no-adapters") {
      s.no_adapters = true;
    } else if (tok == "c3" || tok == "no-pan") {
      s.no_pan = true;
    } else if (tok == "c4" || tok == "no-cl") {
      s.no_cl = true;
    } else if (tok == "n1" || tok == "no-n1") {
      s.no_n1 = true;
    } else if (!tok.empty() && tok != "none") {
      throw ConfigError("unknown ablation switch '" + std::string(tok) +
                        "' (expected c1, c2, c3, c4, n1)");
    }
    pos = comma + 1;
  }
  return s;
}

std::string AblationSwitches::to_string() const {
  std::string out;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += ',';
    out += name;
  };
  add(no_external, "c1");
  add(no_adapters, "c2");
  add(no_pan, "c3");
  add(no_cl, "c4");
  add(no_n1, "n1");
  return out.empty() ? "none" : out;
}

void AblationSwitches::validate() const {
  if (no_adapters && no_pan) {
    throw ConfigError("contradictory ablation: c2 (no adapters) with c3 (no pan-knowledge encoders)");
  }
}

void AblationSwitches::apply(ModelConfig& model, TrainConfig& train) const {
  validate();
  if (no_adapters) model.use_adapters = false;
  if (no_pan) model.use_pan = false;
  if (no_cl) train.contrastive = false;
  if (no_n1) train.include_n1 = false;
}

AblationResult ablate(const Dataset& target, const Dataset* external, ModelConfig model_cfg,
                      TrainConfig cfg, const AblationSwitches& switches, std::uint64_t config_hash) {
  switches.apply(model_cfg, cfg);
  const bool run_stage1 = !switches.no_external && model_cfg.use_adapters;
  if (run_stage1 && external == nullptr) {
    throw ConfigError("ablate: an external dataset is required unless c1 (no external) is set");
  }
  AblationResult out;
  TensorFile pretrained;
  if (run_stage1) {
    StageResult s1 = pretrain_adapters(*external, model_cfg, cfg, config_hash);
    pretrained = std::move(s1.checkpoint);
    out.log = std::move(s1.log);
  }
  StageResult s2 = finetune(target, run_stage1 ? &pretrained : nullptr, model_cfg, cfg, config_hash);
  out.test = s2.test;
  out.untrained_test = s2.untrained_test;
  out.param_count = s2.model->params().size();
  out.log.insert(out.log.end(), s2.log.begin(), s2.log.end());
  return out;
}

// ---------------------------------------------------------------- representations

void dump_representations(const ConkiModel& model, std::span<const MultimodalSample> samples,
                          LabelRange range, const std::filesystem::path& path,
                          std::uint64_t config_hash) {
  static constexpr const char* kSlotName[kRepsPerSample] = {"O_t", "O_v", "O_a", "A_t", "A_v", "A_a"};
  TensorFile file;
  file.config_hash = config_hash;
  for (const auto& s : samples) {
    const SamplePass pass = model.forward(s);
    file.records.push_back({s.sample_id + ".interval", DType::F64, {1},
                            {static_cast<double>(round_to_interval(s.label, range).value())}});
    for (int slot = 0; slot < kRepsPerSample; ++slot) {
      const Mat& r = pass.reps[static_cast<std::size_t>(slot)];
      if (r.size() == 0) continue;
      file.records.push_back({s.sample_id + "." + kSlotName[slot], DType::F64, {r.cols()},
                              std::vector<double>(r.data(), r.data() + r.size())});
    }
  }
  try {
    write_tensor_file(file, path);
  } catch (const CheckpointError& e) {
    throw Error(std::string("dump_representations: ") + e.what());
  }
}

}  // namespace conki
