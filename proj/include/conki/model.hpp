#pragma once

#include <array>
#include <cstdint>
#include <span>

#include "conki/adapters.hpp"
#include "conki/data.hpp"
#include "conki/encoders.hpp"
#include "conki/fusion.hpp"
#include "conki/tensor.hpp"

namespace conki {

/// Index of a representation inside one sample: knowledge-major, then modality.
enum class RepSlot : int { Ot = 0, Ov = 1, Oa = 2, At = 3, Av = 4, Aa = 5 };
inline constexpr int kRepsPerSample = 6;

struct ModelConfig {
  BackboneConfig text{4, 32, 4, 64, 16, 32, Pooling::FirstTokenTanh};
  BackboneConfig av{2, 32, 4, 64, 16, 32, Pooling::Mean};
  AdapterConfig text_adapter{{1, 3}, 16, 2, 32, 32};
  AdapterConfig av_adapter{{2}, 16, 2, 32, 32};
  FusionConfig fusion;
  int d_repr = 32;
  // Ablation wiring: drop the knowledge-specific (adapter) or pan-knowledge path.
  bool use_adapters = true;
  bool use_pan = true;

  void validate() const;
};

/// Input dimensions taken from the dataset.
struct InputDims {
  std::uint32_t vocab_size = 64;
  int d_v = 8;
  int d_a = 8;

  static InputDims from(const DatasetMetadata& m) { return {m.vocab_size, m.d_v, m.d_a}; }
};

struct SampleInput {
  std::span<const std::uint32_t> tokens;
  Mat vision;
  Mat audio;

  static SampleInput from(const MultimodalSample& s);
};

/// Forward state for one sample, sufficient for its backward pass.
struct SamplePass {
  std::array<EncoderPass, 3> backbone;  // t, v, a
  std::array<AdapterPass, 3> adapter;
  std::array<Mat, 3> inner_in, inner_pre, fused;
  FusionNetworkCache fusion;
  Mat joint;
  HeadCache head;
  std::array<Mat, kRepsPerSample> reps;  // each 1 x d_repr; O_* then A_*
  double prediction = 0.0;
};

struct SampleGrads {
  Mat vision;
  Mat audio;
};

/// The full model: three backbones, three adapters, inner fusion, fusion network, head.
/// Owns its parameters; forward/backward are const and safe to run concurrently.
class ConkiModel {
 public:
  ConkiModel(const ModelConfig& cfg, const InputDims& dims);
  ConkiModel(const ConkiModel&) = delete;
  ConkiModel& operator=(const ConkiModel&) = delete;

  /// Deterministic initialization; a tensor's values depend only on (seed, its name).
  void init(std::uint64_t seed);

  SamplePass forward(const SampleInput& in) const;
  SamplePass forward(const MultimodalSample& s) const { return forward(SampleInput::from(s)); }

  /// Backpropagates dL/dprediction and dL/dreps (either may be zero; `d_reps` may be null).
  /// Parameter gradients land in `grads` for active groups only. Input gradients are
  /// produced when `input_grads` is non-null.
  void backward(const SamplePass& pass, double d_prediction,
                const std::array<Mat, kRepsPerSample>* d_reps, GradSink& grads,
                SampleGrads* input_grads = nullptr) const;

  const ParamStore& params() const { return params_; }
  ParamStore& params() { return params_; }
  const ModelConfig& config() const { return cfg_; }
  const InputDims& dims() const { return dims_; }

  const InnerFusion& inner_fusion(int m) const { return inner_[static_cast<std::size_t>(m)]; }
  const FusionNetwork& fusion_network() const { return fusion_; }
  const RegressionHead& head() const { return head_; }
  const Adapter& adapter(int m) const { return adapters_[static_cast<std::size_t>(m)]; }

 private:
  ModelConfig cfg_;
  InputDims dims_;
  ParamStore params_;
  TextEncoder text_;
  ModalityEncoder vision_, audio_;
  std::array<Adapter, 3> adapters_;
  std::array<InnerFusion, 3> inner_;
  FusionNetwork fusion_;
  RegressionHead head_;
};

}  // namespace conki
