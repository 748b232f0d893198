#include <numeric>
#include <random>

#include "doctest.h"
#include "gradcheck.hpp"

#include "conki/errors.hpp"
#include "conki/model.hpp"
#include "conki/training.hpp"

using namespace conki;
using testutil::random_mat;

namespace {

MultimodalSample make_sample(std::uint64_t seed, int l_t = 12, int l_v = 10, int l_a = 9) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::uint32_t> tok(0, 63);
  std::normal_distribution<float> n(0.0F, 1.0F);
  MultimodalSample s;
  s.sample_id = "s" + std::to_string(seed);
  for (int i = 0; i < l_t; ++i) s.text_tokens.push_back(tok(rng));
  s.vision = {l_v, 8, {}};
  s.audio = {l_a, 8, {}};
  for (int i = 0; i < l_v * 8; ++i) s.vision.data.push_back(n(rng));
  for (int i = 0; i < l_a * 8; ++i) s.audio.data.push_back(n(rng));
  s.label = std::uniform_real_distribution<double>(-3.0, 3.0)(rng);
  return s;
}

}  // namespace

TEST_CASE("text encoder: hidden stack, pooling and input checks") {
  ParamStore store;
  BackboneConfig cfg{4, 32, 4, 64, 16, 32, Pooling::FirstTokenTanh};
  const TextEncoder enc(store, cfg, 64);
  enc.init(store, 1);
  const std::vector<std::uint32_t> tokens{3, 5, 7, 11, 13};
  const EncoderPass pass = enc.forward(store, tokens);
  CHECK(pass.hidden.size() == 5);
  for (const Mat& h : pass.hidden) {
    CHECK(h.rows() == 5);
    CHECK(h.cols() == 32);
  }
  CHECK(pass.repr.rows() == 1);
  CHECK(pass.repr.cols() == 32);

  std::vector<std::uint32_t> swapped{5, 3, 7, 11, 13};
  CHECK((enc.forward(store, swapped).repr - pass.repr).norm() > 1e-6);

  CHECK_THROWS_AS(enc.forward(store, std::vector<std::uint32_t>(17, 1)), LengthError);
  CHECK_THROWS_AS(enc.forward(store, std::vector<std::uint32_t>{}), LengthError);
  CHECK_THROWS_AS(enc.forward(store, std::vector<std::uint32_t>{64}), InvalidInputError);
}

TEST_CASE("modality encoder: hidden stack and input checks") {
  ParamStore store;
  BackboneConfig cfg{2, 32, 4, 64, 16, 32, Pooling::Mean};
  const ModalityEncoder enc(store, cfg, 8, ParamGroup::BackboneVision);
  enc.init(store, 1);
  std::mt19937_64 rng(3);
  const Mat x = random_mat(10, 8, rng);
  const EncoderPass pass = enc.forward(store, x);
  CHECK(pass.hidden.size() == 3);
  CHECK(pass.repr.cols() == 32);

  Mat reversed = x.colwise().reverse();
  CHECK((enc.forward(store, reversed).repr - pass.repr).norm() > 1e-6);

  CHECK_THROWS_AS(enc.forward(store, Mat(0, 8)), LengthError);
  CHECK_THROWS_AS(enc.forward(store, Mat::Zero(17, 8)), LengthError);
  Mat bad = x;
  bad(2, 3) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(enc.forward(store, bad), InvalidInputError);
  CHECK_THROWS_AS(enc.forward(store, Mat::Zero(4, 7)), ShapeError);
}

TEST_CASE("adapter config validation") {
  AdapterConfig a;
  a.insertion_points = {1, 5};
  CHECK_THROWS_AS(a.validate(4), ConfigError);
  a.insertion_points = {0};
  CHECK_THROWS_AS(a.validate(4), ConfigError);
  a.insertion_points = {3, 2};
  CHECK_THROWS_AS(a.validate(4), ConfigError);
  a.insertion_points = {};
  CHECK_THROWS_AS(a.validate(4), ConfigError);
  a.insertion_points = {1, 4};
  CHECK_NOTHROW(a.validate(4));
}

TEST_CASE("adapter reads exactly its insertion points") {
  ParamStore store;
  AdapterConfig cfg{{1, 3}, 16, 2, 32, 32};
  const Adapter adapter(store, cfg, 32, 4, ParamGroup::AdapterText);
  adapter.init(store, 4);
  std::mt19937_64 rng(5);
  HiddenStack h;
  for (int i = 0; i < 5; ++i) h.push_back(random_mat(6, 32, rng));
  const Mat base = adapter.forward(store, h).repr;
  CHECK(base.cols() == 32);

  for (int idx = 0; idx < 5; ++idx) {
    HiddenStack z = h;
    z[static_cast<std::size_t>(idx)].setZero();
    const double diff = (adapter.forward(store, z).repr - base).norm();
    // Module 1 reads H[0] (entering layer 1); module 2 reads H[2] (entering layer 3).
    if (idx == 0 || idx == 2) {
      CHECK(diff > 1e-6);
    } else {
      CHECK(diff == 0.0);
    }
  }

  HiddenStack short_stack(h.begin(), h.begin() + 2);
  CHECK_THROWS(adapter.forward(store, short_stack));

  store.mat(adapter.out_proj().weight).setZero();
  store.mat(adapter.out_proj().bias).setZero();
  CHECK(adapter.forward(store, h).repr.norm() == 0.0);
}

TEST_CASE("adapter gradients (parameters and hidden states)") {
  ParamStore store;
  AdapterConfig cfg{{1, 3}, 16, 2, 32, 32};
  const Adapter adapter(store, cfg, 32, 4, ParamGroup::AdapterText);
  adapter.init(store, 6);
  std::mt19937_64 rng(7);
  for (double& v : store.values()) v += 0.1 * std::normal_distribution<double>(0.0, 1.0)(rng);
  HiddenStack h;
  for (int i = 0; i < 5; ++i) h.push_back(random_mat(6, 32, rng));
  const Mat dr = random_mat(1, 32, rng);
  auto loss = [&] { return (adapter.forward(store, h).repr.array() * dr.array()).sum(); };

  std::vector<double> grads(store.size(), 0.0);
  GradSink sink(grads, testutil::all_groups());
  const AdapterPass pass = adapter.forward(store, h);
  const std::vector<Mat> dh = adapter.backward(store, pass, dr, h.size(), sink);
  REQUIRE(dh.size() == 5);

  std::vector<double*> pool;
  std::vector<double> analytic;
  testutil::param_pool(store, grads, [](ParamGroup) { return true; }, pool, analytic);
  CHECK(testutil::check_coords(pool, analytic, loss, 20, 8) < 1e-4);

  std::vector<double*> hpool;
  std::vector<double> hanalytic;
  for (int idx : {0, 2}) {
    Mat& m = h[static_cast<std::size_t>(idx)];
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      hpool.push_back(m.data() + i);
      hanalytic.push_back(dh[static_cast<std::size_t>(idx)].data()[i]);
    }
  }
  CHECK(testutil::check_coords(hpool, hanalytic, loss, 20, 9) < 1e-4);
}

TEST_CASE("fusion network, inner fusion and head gradients") {
  ParamStore store;
  const InnerFusion inner(store, "fusion.inner.t", 64, 32, Activation::ReLU);
  const FusionNetwork net(store, 32, 32);
  const RegressionHead head(store, 32, 32);
  inner.init(store, 1);
  net.init(store, 1);
  head.init(store, 1);
  std::mt19937_64 rng(2);
  for (double& v : store.values()) v += 0.1 * std::normal_distribution<double>(0.0, 1.0)(rng);
  Mat x = random_mat(1, 64, rng);
  Mat fv = random_mat(1, 32, rng);
  Mat fa = random_mat(1, 32, rng);

  auto loss = [&] {
    Mat pre;
    const Mat ft = inner.forward(store, x, pre);
    FusionNetworkCache fc;
    const Mat joint = net.forward(store, ft, fv, fa, fc);
    HeadCache hc;
    return head.forward(store, joint, hc);
  };

  Mat pre;
  const Mat ft = inner.forward(store, x, pre);
  FusionNetworkCache fc;
  const Mat joint = net.forward(store, ft, fv, fa, fc);
  HeadCache hc;
  head.forward(store, joint, hc);
  std::vector<double> grads(store.size(), 0.0);
  GradSink sink(grads, testutil::all_groups());
  const Mat d_joint = head.backward(store, hc, 1.0, sink);
  const Mat d_c = net.backward(store, fc, d_joint, sink);
  REQUIRE(d_c.cols() == 96);
  const Mat dx = inner.backward(store, x, pre, d_c.leftCols(32), sink);

  std::vector<double*> pool;
  std::vector<double> analytic;
  testutil::param_pool(store, grads, [](ParamGroup) { return true; }, pool, analytic);
  CHECK(testutil::check_coords(pool, analytic, loss, 20, 3) < 1e-4);

  // Fusion-network parameters alone, so the check is not dominated by the head.
  std::vector<double*> fpool;
  std::vector<double> fanalytic;
  auto values = store.values();
  for (const auto& info : store.infos()) {
    if (info.name.rfind("fusion.network", 0) != 0) continue;
    for (std::size_t i = info.offset; i < info.offset + info.size; ++i) {
      fpool.push_back(&values[i]);
      fanalytic.push_back(grads[i]);
    }
  }
  CHECK(testutil::check_coords(fpool, fanalytic, loss, 20, 4) < 1e-4);

  std::vector<double*> ipool;
  std::vector<double> ianalytic;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    ipool.push_back(x.data() + i);
    ianalytic.push_back(dx.data()[i]);
  }
  for (Eigen::Index i = 0; i < fv.size(); ++i) {
    ipool.push_back(fv.data() + i);
    ianalytic.push_back(d_c(0, 32 + i));
  }
  CHECK(testutil::check_coords(ipool, ianalytic, loss, 20, 5) < 1e-4);
}

TEST_CASE("fusion gate lies in (0, 1)") {
  ParamStore store;
  const FusionNetwork net(store, 4, 4);
  net.init(store, 1);
  std::mt19937_64 rng(1);
  FusionNetworkCache fc;
  net.forward(store, random_mat(1, 4, rng, 5.0), random_mat(1, 4, rng, 5.0),
              random_mat(1, 4, rng, 5.0), fc);
  CHECK((fc.gate.array() > 0.0).all());
  CHECK((fc.gate.array() < 1.0).all());
}

TEST_CASE("end-to-end prediction gradient") {
  ModelConfig cfg;
  ConkiModel model(cfg, InputDims{64, 8, 8});
  model.init(3);
  MultimodalSample s = make_sample(4);
  SampleInput in = SampleInput::from(s);
  std::mt19937_64 rng(5);
  std::array<Mat, kRepsPerSample> d_reps;
  for (auto& d : d_reps) d = random_mat(1, 32, rng, 0.1);

  // L = y_hat + sum_k <d_reps[k], rep_k>
  auto loss = [&] {
    const SamplePass p = model.forward(in);
    double l = p.prediction;
    for (int k = 0; k < kRepsPerSample; ++k) {
      l += (p.reps[static_cast<std::size_t>(k)].array() * d_reps[static_cast<std::size_t>(k)].array()).sum();
    }
    return l;
  };

  const SamplePass pass = model.forward(in);
  std::vector<double> grads(model.params().size(), 0.0);
  GradSink sink(grads, testutil::all_groups());
  SampleGrads ig;
  model.backward(pass, 1.0, &d_reps, sink, &ig);

  for (std::size_t g = 0; g < kNumParamGroups; ++g) {
    std::vector<double*> pool;
    std::vector<double> analytic;
    testutil::param_pool(model.params(), grads,
                         [&](ParamGroup x) { return static_cast<std::size_t>(x) == g; }, pool,
                         analytic);
    // Keep coordinates that the sample can reach (unused token rows have zero gradient).
    std::vector<double*> live;
    std::vector<double> live_analytic;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (analytic[i] != 0.0) {
        live.push_back(pool[i]);
        live_analytic.push_back(analytic[i]);
      }
    }
    REQUIRE(!live.empty());
    CAPTURE(g);
    CHECK(testutil::check_coords(live, live_analytic, loss, 20, 10 + g) < 1e-3);
  }

  std::vector<double*> xpool;
  std::vector<double> xanalytic;
  for (Eigen::Index i = 0; i < in.vision.size(); ++i) {
    xpool.push_back(in.vision.data() + i);
    xanalytic.push_back(ig.vision.data()[i]);
  }
  for (Eigen::Index i = 0; i < in.audio.size(); ++i) {
    xpool.push_back(in.audio.data() + i);
    xanalytic.push_back(ig.audio.data()[i]);
  }
  CHECK(testutil::check_coords(xpool, xanalytic, loss, 20, 30) < 1e-3);
}

TEST_CASE("ablated wiring changes shapes as expected") {
  ModelConfig full;
  ModelConfig no_adapters = full;
  no_adapters.use_adapters = false;
  ModelConfig no_pan = full;
  no_pan.use_pan = false;
  const InputDims dims{64, 8, 8};
  ConkiModel a(full, dims), b(no_adapters, dims), c(no_pan, dims);
  CHECK(b.params().size() < a.params().size());
  CHECK(a.inner_fusion(0).in_dim() == 64);
  CHECK(b.inner_fusion(0).in_dim() == 32);
  CHECK(c.inner_fusion(0).in_dim() == 32);
  CHECK(b.params().group_size(ParamGroup::AdapterText) == 0);

  b.init(1);
  const SamplePass p = b.forward(make_sample(1));
  CHECK(p.reps[3].size() == 0);
  CHECK(std::isfinite(p.prediction));

  ModelConfig neither = full;
  neither.use_adapters = false;
  neither.use_pan = false;
  CHECK_THROWS_AS(ConkiModel(neither, dims), ConfigError);
}

TEST_CASE("trainable parameter counts follow the freeze rules") {
  ConkiModel model(ModelConfig{}, InputDims{64, 8, 8});
  const auto& p = model.params();
  std::size_t backbone = 0, adapter = 0;
  for (const auto& info : p.infos()) {
    if (is_backbone_param(info)) backbone += info.size;
    if (is_adapter_param(info)) adapter += info.size;
  }
  CHECK(backbone > 0);
  CHECK(adapter > 0);
  CHECK(count_trainable_params(p, 1) == p.size() - backbone);
  CHECK(count_trainable_params(p, 2) == p.size() - adapter);
  CHECK(count_trainable_params(p, 2, false) ==
        p.size() - adapter - p.group_size(ParamGroup::BackboneText));
}

TEST_CASE("a sample's outputs do not depend on what else is evaluated") {
  ConkiModel model(ModelConfig{}, InputDims{64, 8, 8});
  model.init(2);
  std::vector<MultimodalSample> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(make_sample(static_cast<std::uint64_t>(i), 5 + i, 4 + i, 3 + i));
  const std::vector<double> together = predict(model, batch);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    CHECK(together[i] == model.forward(batch[i]).prediction);
  }
}

TEST_CASE("initialization is a function of the seed") {
  ConkiModel a(ModelConfig{}, InputDims{64, 8, 8});
  ConkiModel b(ModelConfig{}, InputDims{64, 8, 8});
  a.init(9);
  b.init(9);
  CHECK(std::equal(a.params().values().begin(), a.params().values().end(),
                   b.params().values().begin()));
  b.init(10);
  CHECK_FALSE(std::equal(a.params().values().begin(), a.params().values().end(),
                         b.params().values().begin()));
}
