#include "conki/fusion.hpp"

#include "conki/errors.hpp"

namespace conki {

namespace {

Mat relu(const Mat& x) { return x.cwiseMax(0.0); }

Mat relu_backward(const Mat& pre, const Mat& d) {
  return (pre.array() > 0.0).select(d, 0.0);
}

}  // namespace

// ---------------------------------------------------------------- InnerFusion

InnerFusion::InnerFusion(ParamStore& store, const std::string& name, int in_dim, int d_fuse,
                         Activation act)
    : act_(act) {
  if (in_dim < 1 || d_fuse < 1) throw ConfigError("inner fusion dims must be >= 1");
  fc_ = Linear::create(store, name, ParamGroup::Fusion, in_dim, d_fuse);
}

void InnerFusion::init(ParamStore& store, std::uint64_t seed) const { fc_.init(store, seed); }

Mat InnerFusion::forward(const ParamStore& p, const Mat& input, Mat& pre) const {
  if (input.rows() != 1 || input.cols() != fc_.in) {
    throw ShapeError("inner fusion expects a 1 x " + std::to_string(fc_.in) + " input, got " +
                     std::to_string(input.rows()) + " x " + std::to_string(input.cols()));
  }
  pre = fc_.forward(p, input);
  return act_ == Activation::ReLU ? relu(pre) : pre;
}

Mat InnerFusion::backward(const ParamStore& p, const Mat& input, const Mat& pre, const Mat& d_out,
                          GradSink& grads) const {
  const Mat d_pre = act_ == Activation::ReLU ? relu_backward(pre, d_out) : d_out;
  Mat d_in;
  fc_.backward(p, input, d_pre, grads, &d_in);
  return d_in;
}

// ---------------------------------------------------------------- FusionNetwork

FusionNetwork::FusionNetwork(ParamStore& store, int d_fuse, int d_joint) : d_fuse_(d_fuse) {
  if (d_fuse < 1 || d_joint < 1) throw ConfigError("fusion network dims must be >= 1");
  gate_ = Linear::create(store, "fusion.network.gate", ParamGroup::Fusion, 3 * d_fuse, d_joint);
  content_ = Linear::create(store, "fusion.network.content", ParamGroup::Fusion, 3 * d_fuse, d_joint);
}

void FusionNetwork::init(ParamStore& store, std::uint64_t seed) const {
  gate_.init(store, seed);
  content_.init(store, seed);
}

Mat FusionNetwork::forward(const ParamStore& p, const Mat& f_t, const Mat& f_v, const Mat& f_a,
                           FusionNetworkCache& cache) const {
  for (const Mat* f : {&f_t, &f_v, &f_a}) {
    if (f->rows() != 1 || f->cols() != d_fuse_) {
      throw ShapeError("fusion network expects three 1 x " + std::to_string(d_fuse_) + " inputs");
    }
  }
  cache.concat.resize(1, 3 * d_fuse_);
  cache.concat << f_t, f_v, f_a;
  const Mat z = gate_.forward(p, cache.concat);
  cache.gate = (1.0 + (-z.array()).exp()).inverse();
  cache.content = content_.forward(p, cache.concat);
  return cache.gate.cwiseProduct(cache.content);
}

Mat FusionNetwork::backward(const ParamStore& p, const FusionNetworkCache& cache, const Mat& d_out,
                            GradSink& grads) const {
  const Mat d_content = d_out.cwiseProduct(cache.gate);
  const Mat d_z = d_out.array() * cache.content.array() * cache.gate.array() *
                  (1.0 - cache.gate.array());
  Mat d_c1, d_c2;
  gate_.backward(p, cache.concat, d_z, grads, &d_c1);
  content_.backward(p, cache.concat, d_content, grads, &d_c2);
  return d_c1 + d_c2;
}

// ---------------------------------------------------------------- RegressionHead

RegressionHead::RegressionHead(ParamStore& store, int d_joint, int d_hidden) {
  if (d_joint < 1 || d_hidden < 1) throw ConfigError("head dims must be >= 1");
  fc1_ = Linear::create(store, "head.fc1", ParamGroup::Head, d_joint, d_hidden);
  fc2_ = Linear::create(store, "head.fc2", ParamGroup::Head, d_hidden, 1);
}

void RegressionHead::init(ParamStore& store, std::uint64_t seed) const {
  fc1_.init(store, seed);
  fc2_.init(store, seed);
}

double RegressionHead::forward(const ParamStore& p, const Mat& joint, HeadCache& cache) const {
  cache.input = joint;
  cache.pre = fc1_.forward(p, joint);
  cache.hidden = relu(cache.pre);
  return fc2_.forward(p, cache.hidden)(0, 0);
}

Mat RegressionHead::backward(const ParamStore& p, const HeadCache& cache, double d_out,
                             GradSink& grads) const {
  Mat d_y(1, 1);
  d_y(0, 0) = d_out;
  Mat d_hidden;
  fc2_.backward(p, cache.hidden, d_y, grads, &d_hidden);
  Mat d_in;
  fc1_.backward(p, cache.input, relu_backward(cache.pre, d_hidden), grads, &d_in);
  return d_in;
}

}  // namespace conki
