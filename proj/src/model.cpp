#include "conki/model.hpp"

#include "conki/errors.hpp"

namespace conki {

namespace {

constexpr ParamGroup kBackboneGroup[3] = {ParamGroup::BackboneText, ParamGroup::BackboneVision,
                                          ParamGroup::BackboneAudio};
constexpr ParamGroup kAdapterGroup[3] = {ParamGroup::AdapterText, ParamGroup::AdapterVision,
                                         ParamGroup::AdapterAudio};
constexpr const char* kModalityTag[3] = {"t", "v", "a"};

Mat to_mat(const FeatureMatrix& f) {
  Mat m(f.rows, f.cols);
  for (int r = 0; r < f.rows; ++r)
    for (int c = 0; c < f.cols; ++c) m(r, c) = static_cast<double>(f.at(r, c));
  return m;
}

}  // namespace

void ModelConfig::validate() const {
  if (!use_adapters && !use_pan) {
    throw ConfigError("ablating both the adapter and the pan-knowledge path leaves no representation");
  }
  if (d_repr < 1) throw ConfigError("d_repr must be >= 1");
  text.validate("text backbone");
  av.validate("vision/audio backbone");
  if (use_adapters) {
    text_adapter.validate(text.num_layers);
    av_adapter.validate(av.num_layers);
  }
}

SampleInput SampleInput::from(const MultimodalSample& s) {
  return SampleInput{s.text_tokens, to_mat(s.vision), to_mat(s.audio)};
}

ConkiModel::ConkiModel(const ModelConfig& cfg, const InputDims& dims) : cfg_(cfg), dims_(dims) {
  cfg_.validate();
  cfg_.text.d_repr = cfg_.d_repr;
  cfg_.av.d_repr = cfg_.d_repr;
  cfg_.text_adapter.d_repr = cfg_.d_repr;
  cfg_.av_adapter.d_repr = cfg_.d_repr;

  text_ = TextEncoder(params_, cfg_.text, dims.vocab_size);
  vision_ = ModalityEncoder(params_, cfg_.av, dims.d_v, ParamGroup::BackboneVision);
  audio_ = ModalityEncoder(params_, cfg_.av, dims.d_a, ParamGroup::BackboneAudio);
  if (cfg_.use_adapters) {
    adapters_[0] = Adapter(params_, cfg_.text_adapter, cfg_.text.d_model, cfg_.text.num_layers,
                           ParamGroup::AdapterText);
    adapters_[1] = Adapter(params_, cfg_.av_adapter, cfg_.av.d_model, cfg_.av.num_layers,
                           ParamGroup::AdapterVision);
    adapters_[2] = Adapter(params_, cfg_.av_adapter, cfg_.av.d_model, cfg_.av.num_layers,
                           ParamGroup::AdapterAudio);
  }
  const int paths = (cfg_.use_adapters ? 1 : 0) + (cfg_.use_pan ? 1 : 0);
  for (int m = 0; m < 3; ++m) {
    inner_[static_cast<std::size_t>(m)] =
        InnerFusion(params_, std::string("fusion.inner.") + kModalityTag[m], paths * cfg_.d_repr,
                    cfg_.fusion.d_fuse, cfg_.fusion.activation);
  }
  fusion_ = FusionNetwork(params_, cfg_.fusion.d_fuse, cfg_.fusion.d_joint);
  head_ = RegressionHead(params_, cfg_.fusion.d_joint, cfg_.fusion.d_head);
}

void ConkiModel::init(std::uint64_t seed) {
  text_.init(params_, seed);
  vision_.init(params_, seed);
  audio_.init(params_, seed);
  if (cfg_.use_adapters) {
    for (const auto& a : adapters_) a.init(params_, seed);
  }
  for (const auto& f : inner_) f.init(params_, seed);
  fusion_.init(params_, seed);
  head_.init(params_, seed);
}

SamplePass ConkiModel::forward(const SampleInput& in) const {
  if (in.vision.cols() != dims_.d_v || in.audio.cols() != dims_.d_a) {
    throw ShapeError("sample feature widths do not match the model's input dims");
  }
  SamplePass pass;
  pass.backbone[0] = text_.forward(params_, in.tokens);
  pass.backbone[1] = vision_.forward(params_, in.vision);
  pass.backbone[2] = audio_.forward(params_, in.audio);
  for (std::size_t m = 0; m < 3; ++m) {
    pass.reps[m] = pass.backbone[m].repr;
    if (cfg_.use_adapters) {
      pass.adapter[m] = adapters_[m].forward(params_, pass.backbone[m].hidden);
      pass.reps[m + 3] = pass.adapter[m].repr;
    }
    Mat& x = pass.inner_in[m];
    if (cfg_.use_pan && cfg_.use_adapters) {
      x.resize(1, 2 * cfg_.d_repr);
      x << pass.reps[m], pass.reps[m + 3];
    } else {
      x = cfg_.use_pan ? pass.reps[m] : pass.reps[m + 3];
    }
    pass.fused[m] = inner_[m].forward(params_, x, pass.inner_pre[m]);
  }
  pass.joint = fusion_.forward(params_, pass.fused[0], pass.fused[1], pass.fused[2], pass.fusion);
  pass.prediction = head_.forward(params_, pass.joint, pass.head);
  return pass;
}

void ConkiModel::backward(const SamplePass& pass, double d_prediction,
                          const std::array<Mat, kRepsPerSample>* d_reps, GradSink& grads,
                          SampleGrads* input_grads) const {
  const int d_fuse = cfg_.fusion.d_fuse;
  const Mat d_joint = head_.backward(params_, pass.head, d_prediction, grads);
  const Mat d_concat = fusion_.backward(params_, pass.fusion, d_joint, grads);

  for (std::size_t m = 0; m < 3; ++m) {
    const Mat d_in = inner_[m].backward(params_, pass.inner_in[m], pass.inner_pre[m],
                                        d_concat.middleCols(static_cast<Eigen::Index>(m) * d_fuse, d_fuse),
                                        grads);
    Mat d_pan = Mat::Zero(1, cfg_.d_repr);
    Mat d_specific = Mat::Zero(1, cfg_.d_repr);
    if (cfg_.use_pan && cfg_.use_adapters) {
      d_pan = d_in.leftCols(cfg_.d_repr);
      d_specific = d_in.rightCols(cfg_.d_repr);
    } else if (cfg_.use_pan) {
      d_pan = d_in;
    } else {
      d_specific = d_in;
    }
    if (d_reps != nullptr) {
      if ((*d_reps)[m].size() != 0) d_pan += (*d_reps)[m];
      if (cfg_.use_adapters && (*d_reps)[m + 3].size() != 0) d_specific += (*d_reps)[m + 3];
    }

    const bool want_input = input_grads != nullptr && m > 0;
    const bool backbone_needed = grads.wants(kBackboneGroup[m]) || want_input;
    std::vector<Mat> d_hidden;
    if (cfg_.use_adapters && (grads.wants(kAdapterGroup[m]) || backbone_needed)) {
      d_hidden = adapters_[m].backward(params_, pass.adapter[m], d_specific,
                                       pass.backbone[m].hidden.size(), grads);
    }
    if (!backbone_needed) continue;
    if (m == 0) {
      text_.backward(params_, pass.backbone[0], d_pan, d_hidden, grads);
    } else {
      const ModalityEncoder& enc = m == 1 ? vision_ : audio_;
      Mat d_x = enc.backward(params_, pass.backbone[m], d_pan, d_hidden, grads);
      if (input_grads != nullptr) (m == 1 ? input_grads->vision : input_grads->audio) = std::move(d_x);
    }
  }
}

}  // namespace conki
