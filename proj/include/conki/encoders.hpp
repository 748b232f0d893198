#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "conki/layers.hpp"
#include "conki/tensor.hpp"

namespace conki {

enum class Pooling { FirstTokenTanh, Mean };

struct BackboneConfig {
  int num_layers = 2;
  int d_model = 32;
  int heads = 4;
  int ff_dim = 64;
  int max_len = 16;
  int d_repr = 32;
  Pooling pooling = Pooling::Mean;

  void validate(const std::string& what) const;
};

/// Embedding output followed by every layer output; L+1 entries of shape len x d_model.
using HiddenStack = std::vector<Mat>;

/// Everything a backbone forward keeps for its backward pass.
struct EncoderPass {
  Mat repr;  // 1 x d_repr
  HiddenStack hidden;
  Mat input;  // projected input (vision/audio) or token ids are kept separately
  std::vector<std::uint32_t> tokens;
  Mat emb_sum;
  LayerNormCache emb_ln;
  std::vector<TransformerCache> layers;
  Mat pooled_in;  // 1 x d_model
  Mat pooled;     // after the pooler nonlinearity (text only)
};

/// Frozen pretrained stand-in for the text modality: token + learned position embeddings,
/// embedding LayerNorm, L transformer layers, first-position pooler with tanh, and a
/// projection into the shared representation space.
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(ParamStore& store, const BackboneConfig& cfg, std::uint32_t vocab_size);

  void init(ParamStore& store, std::uint64_t seed) const;
  EncoderPass forward(const ParamStore& p, std::span<const std::uint32_t> tokens) const;
  /// `d_hidden` may be empty or hold L+1 entries (empty matrices count as zero).
  void backward(const ParamStore& p, const EncoderPass& pass, const Mat& d_repr,
                const std::vector<Mat>& d_hidden, GradSink& grads) const;

  const BackboneConfig& config() const { return cfg_; }
  ParamGroup group() const { return ParamGroup::BackboneText; }

 private:
  BackboneConfig cfg_;
  std::uint32_t vocab_ = 0;
  ParamRef tok_emb_, pos_emb_;
  LayerNorm emb_ln_;
  std::vector<TransformerLayer> layers_;
  Linear pooler_, proj_;
};

/// Randomly initialized encoder for a continuous feature sequence (vision or audio):
/// linear input projection plus sinusoidal positions, L transformer layers, mean pooling
/// over time, projection into the shared representation space.
class ModalityEncoder {
 public:
  ModalityEncoder() = default;
  ModalityEncoder(ParamStore& store, const BackboneConfig& cfg, int d_in, ParamGroup group);

  void init(ParamStore& store, std::uint64_t seed) const;
  EncoderPass forward(const ParamStore& p, const Mat& feats) const;
  /// Returns dL/dfeats.
  Mat backward(const ParamStore& p, const EncoderPass& pass, const Mat& d_repr,
               const std::vector<Mat>& d_hidden, GradSink& grads) const;

  const BackboneConfig& config() const { return cfg_; }
  ParamGroup group() const { return group_; }

 private:
  BackboneConfig cfg_;
  int d_in_ = 0;
  ParamGroup group_ = ParamGroup::BackboneVision;
  Linear in_proj_;
  Mat positions_;
  std::vector<TransformerLayer> layers_;
  Linear proj_;
};

}  // namespace conki
