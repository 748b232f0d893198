#pragma once

#include <cstdint>
#include <vector>

#include "conki/encoders.hpp"
#include "conki/layers.hpp"
#include "conki/tensor.hpp"

namespace conki {

struct AdapterConfig {
  // Module i reads the hidden state entering backbone layer insertion_points[i] (1-based).
  std::vector<int> insertion_points{1};
  int d_adapter = 16;
  int heads = 2;
  int ff_dim = 32;
  int d_repr = 32;

  /// Checks the insertion points against the depth of the backbone the adapter reads.
  void validate(int backbone_layers) const;
};

struct AdapterModule {
  Linear down;
  TransformerLayer inner0, inner1;
  Linear up;
};

struct AdapterModuleCache {
  Mat input;
  Mat down_out;
  TransformerCache c0, c1;
  Mat inner_out;
  Mat up_out;
};

struct AdapterPass {
  std::vector<AdapterModuleCache> modules;
  Mat pooled;  // 1 x d_model
  Mat repr;    // 1 x d_repr, the knowledge-specific representation A_m
};

/// Knowledge-injection adapter plugged outside a backbone. Each module is a sandwich
/// (down-projection, two transformer layers, up-projection back to the backbone width);
/// module i > 0 consumes [hidden state ; previous module output] along the feature axis.
class Adapter {
 public:
  Adapter() = default;
  Adapter(ParamStore& store, const AdapterConfig& cfg, int d_model, int backbone_layers,
          ParamGroup group);

  void init(ParamStore& store, std::uint64_t seed) const;
  AdapterPass forward(const ParamStore& p, const HiddenStack& hidden) const;
  /// Returns dL/dhidden with one entry per hidden state; unused entries are empty.
  std::vector<Mat> backward(const ParamStore& p, const AdapterPass& pass, const Mat& d_repr,
                            std::size_t num_hidden, GradSink& grads) const;

  const AdapterConfig& config() const { return cfg_; }
  ParamGroup group() const { return group_; }
  const Linear& out_proj() const { return out_proj_; }

 private:
  AdapterConfig cfg_;
  int d_model_ = 0;
  ParamGroup group_ = ParamGroup::AdapterText;
  std::vector<AdapterModule> modules_;
  Linear out_proj_;
};

}  // namespace conki
