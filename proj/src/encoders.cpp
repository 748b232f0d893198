#include "conki/encoders.hpp"

#include <cmath>

#include "conki/errors.hpp"

namespace conki {

void BackboneConfig::validate(const std::string& what) const {
  if (num_layers < 1) throw ConfigError(what + ": num_layers must be >= 1");
  if (d_model < 1 || heads < 1 || d_model % heads != 0) {
    throw ConfigError(what + ": d_model must be a positive multiple of heads");
  }
  if (ff_dim < 1 || max_len < 1 || d_repr < 1) {
    throw ConfigError(what + ": ff_dim, max_len and d_repr must be >= 1");
  }
}

namespace {

void add_hidden_grad(Mat& acc, const std::vector<Mat>& d_hidden, std::size_t idx) {
  if (idx < d_hidden.size() && d_hidden[idx].size() != 0) acc += d_hidden[idx];
}

// Runs the layer stack on hidden[0] (already in pass.hidden) and fills the rest.
void run_layers(const ParamStore& p, const std::vector<TransformerLayer>& layers, EncoderPass& pass) {
  pass.layers.resize(layers.size());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    pass.hidden.push_back(layers[l].forward(p, pass.hidden.back(), pass.layers[l]));
  }
}

// Backpropagates from the top hidden state to hidden[0]; returns dL/dhidden[0].
Mat backprop_layers(const ParamStore& p, const std::vector<TransformerLayer>& layers,
                    const EncoderPass& pass, Mat d_top, const std::vector<Mat>& d_hidden,
                    GradSink& grads) {
  Mat d = std::move(d_top);
  for (std::size_t l = layers.size(); l-- > 0;) {
    add_hidden_grad(d, d_hidden, l + 1);
    d = layers[l].backward(p, pass.layers[l], d, grads);
  }
  add_hidden_grad(d, d_hidden, 0);
  return d;
}

}  // namespace

// ---------------------------------------------------------------- TextEncoder

TextEncoder::TextEncoder(ParamStore& store, const BackboneConfig& cfg, std::uint32_t vocab_size)
    : cfg_(cfg), vocab_(vocab_size) {
  cfg.validate("text backbone");
  if (vocab_size < 1) throw ConfigError("text backbone: vocabulary must be non-empty");
  const auto g = ParamGroup::BackboneText;
  const std::string pre(group_name(g));
  tok_emb_ = store.add_matrix(pre + ".tok_emb", g, vocab_size, cfg.d_model);
  pos_emb_ = store.add_matrix(pre + ".pos_emb", g, cfg.max_len, cfg.d_model);
  emb_ln_ = LayerNorm::create(store, pre + ".emb_ln", g, cfg.d_model);
  for (int l = 0; l < cfg.num_layers; ++l) {
    layers_.push_back(TransformerLayer::create(store, pre + ".layer" + std::to_string(l), g,
                                               cfg.d_model, cfg.heads, cfg.ff_dim));
  }
  pooler_ = Linear::create(store, pre + ".pooler", g, cfg.d_model, cfg.d_model);
  proj_ = Linear::create(store, pre + ".proj", g, cfg.d_model, cfg.d_repr);
}

void TextEncoder::init(ParamStore& store, std::uint64_t seed) const {
  for (const ParamRef* ref : {&tok_emb_, &pos_emb_}) {
    auto rng = param_rng(seed, store.find_by_offset(ref->offset)->name);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto m = store.mat(*ref);
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = normal(rng);
  }
  emb_ln_.init(store);
  for (const auto& l : layers_) l.init(store, seed);
  pooler_.init(store, seed);
  proj_.init(store, seed);
}

EncoderPass TextEncoder::forward(const ParamStore& p, std::span<const std::uint32_t> tokens) const {
  if (tokens.empty()) throw LengthError("text sequence is empty");
  if (tokens.size() > static_cast<std::size_t>(cfg_.max_len)) {
    throw LengthError("text sequence of length " + std::to_string(tokens.size()) +
                      " exceeds max length " + std::to_string(cfg_.max_len));
  }
  const auto len = static_cast<Eigen::Index>(tokens.size());
  EncoderPass pass;
  pass.tokens.assign(tokens.begin(), tokens.end());
  pass.emb_sum.resize(len, cfg_.d_model);
  const auto tok = p.mat(tok_emb_);
  const auto pos = p.mat(pos_emb_);
  for (Eigen::Index i = 0; i < len; ++i) {
    const auto id = tokens[static_cast<std::size_t>(i)];
    if (id >= vocab_) {
      throw InvalidInputError("token id " + std::to_string(id) + " >= vocabulary size " +
                              std::to_string(vocab_));
    }
    pass.emb_sum.row(i) = tok.row(id) + pos.row(i);
  }
  pass.hidden.reserve(layers_.size() + 1);
  pass.hidden.push_back(emb_ln_.forward(p, pass.emb_sum, pass.emb_ln));
  run_layers(p, layers_, pass);

  pass.pooled_in = pass.hidden.back().topRows(1);
  pass.pooled = pooler_.forward(p, pass.pooled_in).array().tanh();
  pass.repr = proj_.forward(p, pass.pooled);
  return pass;
}

void TextEncoder::backward(const ParamStore& p, const EncoderPass& pass, const Mat& d_repr,
                           const std::vector<Mat>& d_hidden, GradSink& grads) const {
  Mat d_pooled;
  proj_.backward(p, pass.pooled, d_repr, grads, &d_pooled);
  const Mat d_pre = d_pooled.array() * (1.0 - pass.pooled.array().square());
  Mat d_first;
  pooler_.backward(p, pass.pooled_in, d_pre, grads, &d_first);

  Mat d_top = Mat::Zero(pass.hidden.back().rows(), cfg_.d_model);
  d_top.row(0) = d_first.row(0);
  const Mat d_h0 = backprop_layers(p, layers_, pass, std::move(d_top), d_hidden, grads);
  const Mat d_emb = emb_ln_.backward(p, pass.emb_ln, d_h0, grads);
  if (grads.wants(tok_emb_.group)) {
    auto g_tok = grads.mat(tok_emb_);
    auto g_pos = grads.mat(pos_emb_);
    for (Eigen::Index i = 0; i < d_emb.rows(); ++i) {
      g_tok.row(pass.tokens[static_cast<std::size_t>(i)]) += d_emb.row(i);
      g_pos.row(i) += d_emb.row(i);
    }
  }
}

// ---------------------------------------------------------------- ModalityEncoder

ModalityEncoder::ModalityEncoder(ParamStore& store, const BackboneConfig& cfg, int d_in,
                                 ParamGroup group)
    : cfg_(cfg), d_in_(d_in), group_(group) {
  cfg.validate(std::string(group_name(group)));
  if (d_in < 1) throw ConfigError(std::string(group_name(group)) + ": input dim must be >= 1");
  const std::string pre(group_name(group));
  in_proj_ = Linear::create(store, pre + ".in_proj", group, d_in, cfg.d_model);
  positions_ = sinusoidal_positions(cfg.max_len, cfg.d_model);
  for (int l = 0; l < cfg.num_layers; ++l) {
    layers_.push_back(TransformerLayer::create(store, pre + ".layer" + std::to_string(l), group,
                                               cfg.d_model, cfg.heads, cfg.ff_dim));
  }
  proj_ = Linear::create(store, pre + ".proj", group, cfg.d_model, cfg.d_repr);
}

void ModalityEncoder::init(ParamStore& store, std::uint64_t seed) const {
  in_proj_.init(store, seed);
  for (const auto& l : layers_) l.init(store, seed);
  proj_.init(store, seed);
}

EncoderPass ModalityEncoder::forward(const ParamStore& p, const Mat& feats) const {
  if (feats.rows() < 1) throw LengthError(std::string(group_name(group_)) + ": empty sequence");
  if (feats.rows() > cfg_.max_len) {
    throw LengthError(std::string(group_name(group_)) + ": sequence of length " +
                      std::to_string(feats.rows()) + " exceeds max length " +
                      std::to_string(cfg_.max_len));
  }
  if (!feats.allFinite()) throw InvalidInputError(std::string(group_name(group_)) + ": non-finite input");
  EncoderPass pass;
  pass.input = feats;
  pass.hidden.reserve(layers_.size() + 1);
  pass.hidden.push_back(in_proj_.forward(p, feats) + positions_.topRows(feats.rows()));
  run_layers(p, layers_, pass);
  pass.pooled_in = pass.hidden.back().colwise().mean();
  pass.repr = proj_.forward(p, pass.pooled_in);
  return pass;
}

Mat ModalityEncoder::backward(const ParamStore& p, const EncoderPass& pass, const Mat& d_repr,
                              const std::vector<Mat>& d_hidden, GradSink& grads) const {
  Mat d_pooled;
  proj_.backward(p, pass.pooled_in, d_repr, grads, &d_pooled);
  const auto len = pass.hidden.back().rows();
  Mat d_top = d_pooled.replicate(len, 1) / static_cast<double>(len);
  const Mat d_h0 = backprop_layers(p, layers_, pass, std::move(d_top), d_hidden, grads);
  Mat d_in;
  in_proj_.backward(p, pass.input, d_h0, grads, &d_in);
  return d_in;
}

}  // namespace conki
