#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "conki/checkpoint.hpp"
#include "conki/contrastive.hpp"
#include "conki/data.hpp"
#include "conki/metrics.hpp"
#include "conki/model.hpp"

namespace conki {

struct StageOneConfig {
  int epochs = 10;
  int warmup_epochs = 1;
  double lr = 1e-3;
};

struct StageTwoConfig {
  int epochs = 50;
  double lr_encoders = 1e-4;  // backbone.* groups
  double lr_other = 1e-3;     // fusion and head
  // The text backbone is a frozen stand-in in Stage 1; this controls whether Stage 2 tunes it.
  bool train_text_backbone = true;
};

struct TrainConfig {
  double lambda = 0.001;
  double tau = 0.07;
  int batch_size = 32;
  double weight_decay = 1e-3;
  std::uint64_t seed = 0;
  StageOneConfig stage1;
  StageTwoConfig stage2;
  bool contrastive = true;  // false removes L_con entirely
  bool include_n1 = true;   // false drops N1 pairs from the contrastive denominators
  std::string checkpoint_dir;
  DType checkpoint_dtype = DType::F64;

  void validate() const;
};

// ---------------------------------------------------------------- losses

/// Mean squared error over the batch.
double task_loss(std::span<const double> preds, std::span<const double> labels);
/// d task_loss / d preds = 2 (pred - label) / |B|.
std::vector<double> task_loss_grad(std::span<const double> preds, std::span<const double> labels);
/// task + lambda * con.
double total_loss(double task, double con, double lambda);

// ---------------------------------------------------------------- freezing

/// Groups updated in a stage. Stage 1 freezes every backbone; Stage 2 freezes every adapter
/// (and the text backbone when `train_text_backbone` is false).
GroupMask stage_trainable(int stage, bool train_text_backbone = true);
std::size_t count_trainable_params(const ParamStore& params, int stage,
                                   bool train_text_backbone = true);
bool is_backbone_param(const ParamInfo& info);
bool is_adapter_param(const ParamInfo& info);

// ---------------------------------------------------------------- optimizer

/// AdamW with per-group learning rates; frozen groups are never touched.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(std::size_t num_params);

  void step(ParamStore& params, std::span<const double> grads, const GroupMask& trainable,
            const std::array<double, kNumParamGroups>& lr, double weight_decay);

  const AdamState& state() const { return state_; }

  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

 private:
  AdamState state_;
};

// ---------------------------------------------------------------- batch objective

struct StepSettings {
  int stage = 1;
  GroupMask trainable{};
  bool contrastive = false;
  double lambda = 0.0;
  ContrastiveOptions con;
  LabelRange range;
};

StepSettings make_step_settings(int stage, const TrainConfig& cfg, const ModelConfig& model,
                                LabelRange range);

struct StepStats {
  double task = 0.0;
  double con = 0.0;
  double total = 0.0;
};

/// Loss and gradient of one batch. `grads` is resized to the parameter count and receives
/// dL/dparams for trainable groups (zeros elsewhere).
StepStats batch_objective(const ConkiModel& model, std::span<const MultimodalSample* const> batch,
                          const StepSettings& settings, std::vector<double>* grads);

// ---------------------------------------------------------------- evaluation

std::vector<double> predict(const ConkiModel& model, std::span<const MultimodalSample> samples);
MetricsReport evaluate(const ConkiModel& model, std::span<const MultimodalSample> samples,
                       LabelRange range);
double mean_task_loss(const ConkiModel& model, std::span<const MultimodalSample> samples);

// ---------------------------------------------------------------- stages

struct EpochLog {
  int stage = 1;
  int epoch = 0;
  double train_loss = 0.0;
  double train_task_loss = 0.0;
  double train_con_loss = 0.0;
  MetricsReport val;
  bool has_val = false;
};

std::string epoch_log_json(const EpochLog& e);

struct StageResult {
  std::unique_ptr<ConkiModel> model;  // parameters of the selected (best validation) epoch
  TensorFile checkpoint;
  std::vector<std::string> log;       // one JSON line per epoch
  std::vector<StepStats> steps;
  int best_epoch = 0;
  double best_val_mae = 0.0;
  MetricsReport test;                 // test metrics at the selected epoch (Stage 2)
  MetricsReport untrained_test;       // test metrics of the seed-initialized model (Stage 2)
  double initial_train_task_loss = 0.0;
  double final_train_task_loss = 0.0;
};

/// Stage 1: trains adapters, fusion and head on the external dataset with L_task only.
/// Backbones stay bit-identical to their initialization.
StageResult pretrain_adapters(const Dataset& external, const ModelConfig& model_cfg,
                              const TrainConfig& cfg, std::uint64_t config_hash = 0);

/// Stage 2: loads pretrained adapters (and the backbones they were trained against) from
/// `pretrained`, then trains everything except adapters with L_task + lambda L_con.
/// `pretrained == nullptr` skips the loading step (external-data ablation).
StageResult finetune(const Dataset& target, const TensorFile* pretrained,
                     const ModelConfig& model_cfg, const TrainConfig& cfg,
                     std::uint64_t config_hash = 0);

// ---------------------------------------------------------------- ablation

struct AblationSwitches {
  bool no_external = false;  // c1: skip Stage 1
  bool no_adapters = false;  // c2: drop A_m
  bool no_pan = false;       // c3: drop O_m
  bool no_cl = false;        // c4: lambda = 0 / no contrastive term
  bool no_n1 = false;        // n1: drop N1 from the contrastive denominators

  /// Comma-separated list of c1, c2, c3, c4, n1 (or the long names no-external, ...).
  static AblationSwitches parse(std::string_view list);
  std::string to_string() const;
  void validate() const;
  void apply(ModelConfig& model, TrainConfig& train) const;
};

struct AblationResult {
  MetricsReport test;
  MetricsReport untrained_test;
  std::size_t param_count = 0;
  std::vector<std::string> log;
};

AblationResult ablate(const Dataset& target, const Dataset* external, ModelConfig model_cfg,
                      TrainConfig cfg, const AblationSwitches& switches,
                      std::uint64_t config_hash = 0);

// ---------------------------------------------------------------- representations

/// Writes {sample_id.interval, sample_id.O_t ... sample_id.A_a} records to a tensor file.
void dump_representations(const ConkiModel& model, std::span<const MultimodalSample> samples,
                          LabelRange range, const std::filesystem::path& path,
                          std::uint64_t config_hash = 0);

}  // namespace conki
