#include "conki/layers.hpp"

#include <cmath>

#include "conki/errors.hpp"

namespace conki {

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

}  // namespace

std::mt19937_64 param_rng(std::uint64_t seed, std::string_view name) {
  const std::uint64_t h = fnv1a(name);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return std::mt19937_64(seq);
}

double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x)));
}

double gelu_grad(double x) {
  const double u = kGeluC * (x + 0.044715 * x * x * x);
  const double t = std::tanh(u);
  const double du = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

// ---------------------------------------------------------------- Linear

Linear Linear::create(ParamStore& store, const std::string& name, ParamGroup group,
                      Eigen::Index in, Eigen::Index out) {
  Linear l;
  l.in = in;
  l.out = out;
  l.weight = store.add_matrix(name + ".weight", group, out, in);
  l.bias = store.add_vector(name + ".bias", group, out);
  return l;
}

void Linear::init(ParamStore& store, std::uint64_t seed) const {
  const auto* info = store.find_by_offset(weight.offset);
  auto rng = param_rng(seed, info->name);
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  auto w = store.mat(weight);
  for (Eigen::Index r = 0; r < w.rows(); ++r)
    for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = dist(rng);
  store.mat(bias).setZero();
}

Mat Linear::forward(const ParamStore& p, const Mat& x) const {
  if (x.cols() != in) {
    throw ShapeError("linear layer expects " + std::to_string(in) + " input features, got " +
                     std::to_string(x.cols()));
  }
  Mat y = x * p.mat(weight).transpose();
  y.rowwise() += p.mat(bias).row(0);
  return y;
}

void Linear::backward(const ParamStore& p, const Mat& x, const Mat& dy, GradSink& grads,
                      Mat* dx) const {
  if (grads.wants(weight.group)) {
    grads.mat(weight).noalias() += dy.transpose() * x;
    grads.mat(bias).row(0) += dy.colwise().sum();
  }
  if (dx != nullptr) *dx = dy * p.mat(weight);
}

// ---------------------------------------------------------------- LayerNorm

LayerNorm LayerNorm::create(ParamStore& store, const std::string& name, ParamGroup group,
                            Eigen::Index dim) {
  LayerNorm ln;
  ln.dim = dim;
  ln.gamma = store.add_vector(name + ".gamma", group, dim);
  ln.beta = store.add_vector(name + ".beta", group, dim);
  return ln;
}

void LayerNorm::init(ParamStore& store) const {
  store.mat(gamma).setOnes();
  store.mat(beta).setZero();
}

Mat LayerNorm::forward(const ParamStore& p, const Mat& x, LayerNormCache& cache) const {
  const Eigen::Index n = x.rows();
  cache.xhat.resize(n, dim);
  cache.inv_std.resize(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    const double inv = 1.0 / std::sqrt(var + eps);
    cache.inv_std(r) = inv;
    cache.xhat.row(r) = (x.row(r).array() - mean) * inv;
  }
  Mat y = cache.xhat.array().rowwise() * p.mat(gamma).row(0).array();
  y.rowwise() += p.mat(beta).row(0);
  return y;
}

Mat LayerNorm::backward(const ParamStore& p, const LayerNormCache& cache, const Mat& dy,
                        GradSink& grads) const {
  if (grads.wants(gamma.group)) {
    grads.mat(gamma).row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
    grads.mat(beta).row(0) += dy.colwise().sum();
  }
  const Mat dxhat = dy.array().rowwise() * p.mat(gamma).row(0).array();
  const double inv_n = 1.0 / static_cast<double>(dim);
  Mat dx(dy.rows(), dim);
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double s1 = dxhat.row(r).sum();
    const double s2 = dxhat.row(r).dot(cache.xhat.row(r));
    dx.row(r) = cache.inv_std(r) *
                (dxhat.row(r).array() - inv_n * s1 - cache.xhat.row(r).array() * (inv_n * s2));
  }
  return dx;
}

// ---------------------------------------------------------------- SelfAttention

SelfAttention SelfAttention::create(ParamStore& store, const std::string& name, ParamGroup group,
                                    Eigen::Index d_model, int heads) {
  if (heads < 1 || d_model % heads != 0) {
    throw ConfigError("attention width " + std::to_string(d_model) +
                      " is not divisible by head count " + std::to_string(heads));
  }
  SelfAttention a;
  a.heads = heads;
  a.q = Linear::create(store, name + ".q", group, d_model, d_model);
  a.k = Linear::create(store, name + ".k", group, d_model, d_model);
  a.v = Linear::create(store, name + ".v", group, d_model, d_model);
  a.o = Linear::create(store, name + ".o", group, d_model, d_model);
  return a;
}

void SelfAttention::init(ParamStore& store, std::uint64_t seed) const {
  q.init(store, seed);
  k.init(store, seed);
  v.init(store, seed);
  o.init(store, seed);
}

Mat SelfAttention::forward(const ParamStore& p, const Mat& x, AttentionCache& cache) const {
  cache.q = q.forward(p, x);
  cache.k = k.forward(p, x);
  cache.v = v.forward(p, x);
  const Eigen::Index len = x.rows();
  const Eigen::Index dh = q.out / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  cache.probs.resize(static_cast<std::size_t>(heads));
  cache.ctx.resize(len, q.out);
  for (int h = 0; h < heads; ++h) {
    const Eigen::Index c0 = h * dh;
    Mat s = (cache.q.middleCols(c0, dh) * cache.k.middleCols(c0, dh).transpose()) * scale;
    for (Eigen::Index r = 0; r < len; ++r) {
      const double mx = s.row(r).maxCoeff();
      s.row(r) = (s.row(r).array() - mx).exp();
      s.row(r) /= s.row(r).sum();
    }
    cache.ctx.middleCols(c0, dh).noalias() = s * cache.v.middleCols(c0, dh);
    cache.probs[static_cast<std::size_t>(h)] = std::move(s);
  }
  return o.forward(p, cache.ctx);
}

Mat SelfAttention::backward(const ParamStore& p, const Mat& x, const AttentionCache& cache,
                            const Mat& dy, GradSink& grads) const {
  Mat dctx;
  o.backward(p, cache.ctx, dy, grads, &dctx);
  const Eigen::Index len = x.rows();
  const Eigen::Index dh = q.out / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Mat dq(len, q.out), dk(len, q.out), dv(len, q.out);
  for (int h = 0; h < heads; ++h) {
    const Eigen::Index c0 = h * dh;
    const Mat& prob = cache.probs[static_cast<std::size_t>(h)];
    const Mat dp = dctx.middleCols(c0, dh) * cache.v.middleCols(c0, dh).transpose();
    dv.middleCols(c0, dh).noalias() = prob.transpose() * dctx.middleCols(c0, dh);
    Mat ds(len, len);
    for (Eigen::Index r = 0; r < len; ++r) {
      const double dot = prob.row(r).dot(dp.row(r));
      ds.row(r) = prob.row(r).array() * (dp.row(r).array() - dot) * scale;
    }
    dq.middleCols(c0, dh).noalias() = ds * cache.k.middleCols(c0, dh);
    dk.middleCols(c0, dh).noalias() = ds.transpose() * cache.q.middleCols(c0, dh);
  }
  Mat dx, tmp;
  q.backward(p, x, dq, grads, &dx);
  k.backward(p, x, dk, grads, &tmp);
  dx += tmp;
  v.backward(p, x, dv, grads, &tmp);
  dx += tmp;
  return dx;
}

// ---------------------------------------------------------------- TransformerLayer

TransformerLayer TransformerLayer::create(ParamStore& store, const std::string& name,
                                          ParamGroup group, Eigen::Index d_model, int heads,
                                          Eigen::Index ff_dim) {
  TransformerLayer t;
  t.attn = SelfAttention::create(store, name + ".attn", group, d_model, heads);
  t.ln1 = LayerNorm::create(store, name + ".ln1", group, d_model);
  t.ff1 = Linear::create(store, name + ".ff1", group, d_model, ff_dim);
  t.ff2 = Linear::create(store, name + ".ff2", group, ff_dim, d_model);
  t.ln2 = LayerNorm::create(store, name + ".ln2", group, d_model);
  return t;
}

void TransformerLayer::init(ParamStore& store, std::uint64_t seed) const {
  attn.init(store, seed);
  ln1.init(store);
  ff1.init(store, seed);
  ff2.init(store, seed);
  ln2.init(store);
}

Mat TransformerLayer::forward(const ParamStore& p, const Mat& x, TransformerCache& cache) const {
  cache.x = x;
  Mat s1 = x + attn.forward(p, x, cache.attn);
  cache.h1 = ln1.forward(p, s1, cache.ln1);
  cache.pre = ff1.forward(p, cache.h1);
  cache.act = cache.pre.unaryExpr([](double v) { return gelu(v); });
  Mat s2 = cache.h1 + ff2.forward(p, cache.act);
  return ln2.forward(p, s2, cache.ln2);
}

Mat TransformerLayer::backward(const ParamStore& p, const TransformerCache& cache, const Mat& dy,
                               GradSink& grads) const {
  const Mat ds2 = ln2.backward(p, cache.ln2, dy, grads);
  Mat dact;
  ff2.backward(p, cache.act, ds2, grads, &dact);
  const Mat dpre =
      dact.array() * cache.pre.unaryExpr([](double v) { return gelu_grad(v); }).array();
  Mat dh1;
  ff1.backward(p, cache.h1, dpre, grads, &dh1);
  dh1 += ds2;
  const Mat ds1 = ln1.backward(p, cache.ln1, dh1, grads);
  return ds1 + attn.backward(p, cache.x, cache.attn, ds1, grads);
}

Mat sinusoidal_positions(Eigen::Index len, Eigen::Index dim) {
  Mat pe(len, dim);
  for (Eigen::Index pos = 0; pos < len; ++pos) {
    for (Eigen::Index i = 0; i < dim; ++i) {
      const double rate =
          std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      pe(pos, i) = (i % 2 == 0) ? std::sin(pos * rate) : std::cos(pos * rate);
    }
  }
  return pe;
}

}  // namespace conki
