#include "conki/adapters.hpp"

#include "conki/errors.hpp"

namespace conki {

void AdapterConfig::validate(int backbone_layers) const {
  if (insertion_points.empty()) throw ConfigError("adapter needs at least one insertion point");
  int prev = 0;
  for (int p : insertion_points) {
    if (p < 1 || p > backbone_layers) {
      throw ConfigError("adapter insertion point " + std::to_string(p) +
                        " outside backbone depth [1, " + std::to_string(backbone_layers) + "]");
    }
    if (p <= prev) throw ConfigError("adapter insertion points must be strictly increasing");
    prev = p;
  }
  if (d_adapter < 1 || heads < 1 || d_adapter % heads != 0) {
    throw ConfigError("adapter width must be a positive multiple of its head count");
  }
  if (ff_dim < 1 || d_repr < 1) throw ConfigError("adapter ff_dim and d_repr must be >= 1");
}

Adapter::Adapter(ParamStore& store, const AdapterConfig& cfg, int d_model, int backbone_layers,
                 ParamGroup group)
    : cfg_(cfg), d_model_(d_model), group_(group) {
  cfg.validate(backbone_layers);
  const std::string pre(group_name(group));
  for (std::size_t i = 0; i < cfg.insertion_points.size(); ++i) {
    const std::string name = pre + ".module" + std::to_string(i);
    const int in_dim = i == 0 ? d_model : 2 * d_model;
    AdapterModule m;
    m.down = Linear::create(store, name + ".down", group, in_dim, cfg.d_adapter);
    m.inner0 = TransformerLayer::create(store, name + ".inner0", group, cfg.d_adapter, cfg.heads,
                                        cfg.ff_dim);
    m.inner1 = TransformerLayer::create(store, name + ".inner1", group, cfg.d_adapter, cfg.heads,
                                        cfg.ff_dim);
    m.up = Linear::create(store, name + ".up", group, cfg.d_adapter, d_model);
    modules_.push_back(std::move(m));
  }
  out_proj_ = Linear::create(store, pre + ".out_proj", group, d_model, cfg.d_repr);
}

void Adapter::init(ParamStore& store, std::uint64_t seed) const {
  for (const auto& m : modules_) {
    m.down.init(store, seed);
    m.inner0.init(store, seed);
    m.inner1.init(store, seed);
    m.up.init(store, seed);
  }
  out_proj_.init(store, seed);
}

AdapterPass Adapter::forward(const ParamStore& p, const HiddenStack& hidden) const {
  const int depth = static_cast<int>(hidden.size()) - 1;
  if (cfg_.insertion_points.back() > depth) {
    throw ConfigError("adapter insertion point " + std::to_string(cfg_.insertion_points.back()) +
                      " exceeds backbone depth " + std::to_string(depth));
  }
  AdapterPass pass;
  pass.modules.resize(modules_.size());
  for (std::size_t i = 0; i < modules_.size(); ++i) {
    auto& c = pass.modules[i];
    const Mat& h = hidden[static_cast<std::size_t>(cfg_.insertion_points[i] - 1)];
    if (h.cols() != d_model_) throw ShapeError("adapter: hidden width does not match backbone");
    if (i == 0) {
      c.input = h;
    } else {
      c.input.resize(h.rows(), 2 * d_model_);
      c.input << h, pass.modules[i - 1].up_out;
    }
    const auto& m = modules_[i];
    c.down_out = m.down.forward(p, c.input);
    const Mat mid = m.inner0.forward(p, c.down_out, c.c0);
    c.inner_out = m.inner1.forward(p, mid, c.c1);
    c.up_out = m.up.forward(p, c.inner_out);
  }
  pass.pooled = pass.modules.back().up_out.colwise().mean();
  pass.repr = out_proj_.forward(p, pass.pooled);
  return pass;
}

std::vector<Mat> Adapter::backward(const ParamStore& p, const AdapterPass& pass, const Mat& d_repr,
                                   std::size_t num_hidden, GradSink& grads) const {
  std::vector<Mat> d_hidden(num_hidden);
  Mat d_pooled;
  out_proj_.backward(p, pass.pooled, d_repr, grads, &d_pooled);
  const auto len = pass.modules.back().up_out.rows();
  Mat d_up = d_pooled.replicate(len, 1) / static_cast<double>(len);

  for (std::size_t i = modules_.size(); i-- > 0;) {
    const auto& m = modules_[i];
    const auto& c = pass.modules[i];
    Mat d_inner;
    m.up.backward(p, c.inner_out, d_up, grads, &d_inner);
    Mat d = m.inner1.backward(p, c.c1, d_inner, grads);
    d = m.inner0.backward(p, c.c0, d, grads);
    Mat d_input;
    m.down.backward(p, c.input, d, grads, &d_input);

    auto& slot = d_hidden[static_cast<std::size_t>(cfg_.insertion_points[i] - 1)];
    if (slot.size() == 0) {
      slot = d_input.leftCols(d_model_);
    } else {
      slot += d_input.leftCols(d_model_);
    }
    if (i > 0) d_up = d_input.rightCols(d_model_);
  }
  return d_hidden;
}

}  // namespace conki
