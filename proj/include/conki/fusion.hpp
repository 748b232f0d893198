#pragma once

#include <cstdint>
#include <string>

#include "conki/layers.hpp"
#include "conki/tensor.hpp"

namespace conki {

enum class Activation { ReLU, Identity };

struct FusionConfig {
  int d_fuse = 32;
  int d_joint = 32;
  int d_head = 32;
  Activation activation = Activation::ReLU;
};

/// F_m = act(W [O_m ; A_m] + b). With one knowledge path ablated the input is a single vector.
class InnerFusion {
 public:
  InnerFusion() = default;
  InnerFusion(ParamStore& store, const std::string& name, int in_dim, int d_fuse, Activation act);

  void init(ParamStore& store, std::uint64_t seed) const;
  /// `input` is 1 x in_dim. Returns F_m and stores the pre-activation in `pre`.
  Mat forward(const ParamStore& p, const Mat& input, Mat& pre) const;
  /// Returns dL/dinput.
  Mat backward(const ParamStore& p, const Mat& input, const Mat& pre, const Mat& d_out,
               GradSink& grads) const;

  int in_dim() const { return static_cast<int>(fc_.in); }
  const Linear& fc() const { return fc_; }

 private:
  Linear fc_;
  Activation act_ = Activation::ReLU;
};

struct FusionNetworkCache {
  Mat concat;  // 1 x 3 d_fuse
  Mat gate;    // sigmoid output
  Mat content;
};

/// Gated fusion over [F_t ; F_v ; F_a]: F = sigmoid(W1 C + b1) (x) (W2 C + b2).
class FusionNetwork {
 public:
  FusionNetwork() = default;
  FusionNetwork(ParamStore& store, int d_fuse, int d_joint);

  void init(ParamStore& store, std::uint64_t seed) const;
  Mat forward(const ParamStore& p, const Mat& f_t, const Mat& f_v, const Mat& f_a,
              FusionNetworkCache& cache) const;
  /// Returns dL/dC, split by the caller into the three modality slices.
  Mat backward(const ParamStore& p, const FusionNetworkCache& cache, const Mat& d_out,
               GradSink& grads) const;

  const Linear& gate() const { return gate_; }
  const Linear& content() const { return content_; }

 private:
  int d_fuse_ = 0;
  Linear gate_, content_;
};

struct HeadCache {
  Mat input;
  Mat pre;
  Mat hidden;
};

/// Two-layer MLP regression head with ReLU between the layers and a linear scalar output.
class RegressionHead {
 public:
  RegressionHead() = default;
  RegressionHead(ParamStore& store, int d_joint, int d_hidden);

  void init(ParamStore& store, std::uint64_t seed) const;
  double forward(const ParamStore& p, const Mat& joint, HeadCache& cache) const;
  Mat backward(const ParamStore& p, const HeadCache& cache, double d_out, GradSink& grads) const;

  const Linear& fc1() const { return fc1_; }
  const Linear& fc2() const { return fc2_; }

 private:
  Linear fc1_, fc2_;
};

}  // namespace conki
