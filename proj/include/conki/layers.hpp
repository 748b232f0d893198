#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "conki/tensor.hpp"

namespace conki {

/// RNG for one named parameter. Initial values depend only on (seed, name), so
/// adding or removing unrelated parameters never shifts another tensor's init.
std::mt19937_64 param_rng(std::uint64_t seed, std::string_view name);

double gelu(double x);
double gelu_grad(double x);

/// y = x W^T + b, with W stored out x in.
struct Linear {
  ParamRef weight;
  ParamRef bias;
  Eigen::Index in = 0;
  Eigen::Index out = 0;

  static Linear create(ParamStore& store, const std::string& name, ParamGroup group,
                       Eigen::Index in, Eigen::Index out);
  void init(ParamStore& store, std::uint64_t seed) const;

  Mat forward(const ParamStore& p, const Mat& x) const;
  /// Accumulates dW, db into `grads` (when the group is active) and writes dx if requested.
  void backward(const ParamStore& p, const Mat& x, const Mat& dy, GradSink& grads, Mat* dx) const;
};

struct LayerNormCache {
  Mat xhat;
  Vec inv_std;
};

/// Row-wise layer normalization with affine gain/offset.
struct LayerNorm {
  ParamRef gamma;
  ParamRef beta;
  Eigen::Index dim = 0;
  double eps = 1e-5;

  static LayerNorm create(ParamStore& store, const std::string& name, ParamGroup group,
                          Eigen::Index dim);
  void init(ParamStore& store) const;

  Mat forward(const ParamStore& p, const Mat& x, LayerNormCache& cache) const;
  Mat backward(const ParamStore& p, const LayerNormCache& cache, const Mat& dy,
               GradSink& grads) const;
};

struct AttentionCache {
  Mat q, k, v;
  std::vector<Mat> probs;  // one (len x len) matrix per head
  Mat ctx;
};

/// Multi-head scaled dot-product self-attention without masking.
struct SelfAttention {
  Linear q, k, v, o;
  int heads = 1;

  static SelfAttention create(ParamStore& store, const std::string& name, ParamGroup group,
                              Eigen::Index d_model, int heads);
  void init(ParamStore& store, std::uint64_t seed) const;

  Mat forward(const ParamStore& p, const Mat& x, AttentionCache& cache) const;
  Mat backward(const ParamStore& p, const Mat& x, const AttentionCache& cache, const Mat& dy,
               GradSink& grads) const;
};

struct TransformerCache {
  Mat x;
  AttentionCache attn;
  LayerNormCache ln1;
  Mat h1;
  Mat pre;  // first feed-forward projection, before GELU
  Mat act;
  LayerNormCache ln2;
};

/// Post-LN encoder layer: h = LN(x + MHA(x)); out = LN(h + FFN(h)), FFN with GELU.
struct TransformerLayer {
  SelfAttention attn;
  LayerNorm ln1;
  Linear ff1, ff2;
  LayerNorm ln2;

  static TransformerLayer create(ParamStore& store, const std::string& name, ParamGroup group,
                                 Eigen::Index d_model, int heads, Eigen::Index ff_dim);
  void init(ParamStore& store, std::uint64_t seed) const;

  Mat forward(const ParamStore& p, const Mat& x, TransformerCache& cache) const;
  /// Returns dL/dx.
  Mat backward(const ParamStore& p, const TransformerCache& cache, const Mat& dy,
               GradSink& grads) const;
};

/// Fixed sinusoidal positional encodings, len x dim.
Mat sinusoidal_positions(Eigen::Index len, Eigen::Index dim);

}  // namespace conki
