#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace conki {

// Activations are row-major (sequence position x feature).
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;
using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;
using VecMap = Eigen::Map<Vec>;
using ConstVecMap = Eigen::Map<const Vec>;

/// Parameter groups. Freezing rules are expressed per group.
enum class ParamGroup : std::uint8_t {
  BackboneText,
  BackboneVision,
  BackboneAudio,
  AdapterText,
  AdapterVision,
  AdapterAudio,
  Fusion,
  Head,
};
inline constexpr std::size_t kNumParamGroups = 8;

std::string_view group_name(ParamGroup g);
bool is_backbone(ParamGroup g);
bool is_adapter(ParamGroup g);

/// Handle to one named tensor inside a ParamStore. Vectors use rows == 1.
struct ParamRef {
  std::size_t offset = 0;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  ParamGroup group = ParamGroup::Fusion;

  std::size_t size() const { return static_cast<std::size_t>(rows * cols); }
};

struct ParamInfo {
  std::string name;
  ParamGroup group;
  std::vector<std::int64_t> shape;
  std::size_t offset;
  std::size_t size;
};

/// Flat storage for every named parameter of a model.
class ParamStore {
 public:
  ParamRef add_matrix(std::string name, ParamGroup group, Eigen::Index rows, Eigen::Index cols);
  ParamRef add_vector(std::string name, ParamGroup group, Eigen::Index n);

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  std::size_t size() const { return values_.size(); }

  const std::vector<ParamInfo>& infos() const { return infos_; }
  const ParamInfo* find(std::string_view name) const;
  const ParamInfo* find_by_offset(std::size_t offset) const;
  std::span<const double> view(const ParamInfo& info) const {
    return std::span<const double>(values_).subspan(info.offset, info.size);
  }
  std::span<double> view(const ParamInfo& info) {
    return std::span<double>(values_).subspan(info.offset, info.size);
  }

  ConstMatMap mat(const ParamRef& r) const { return {values_.data() + r.offset, r.rows, r.cols}; }
  MatMap mat(const ParamRef& r) { return {values_.data() + r.offset, r.rows, r.cols}; }
  ConstVecMap vec(const ParamRef& r) const {
    return {values_.data() + r.offset, static_cast<Eigen::Index>(r.size())};
  }

  /// Scalar count of parameters in a group.
  std::size_t group_size(ParamGroup g) const;

 private:
  ParamRef add(std::string name, ParamGroup group, std::vector<std::int64_t> shape,
               Eigen::Index rows, Eigen::Index cols);

  std::vector<ParamInfo> infos_;
  std::unordered_map<std::string, std::size_t> index_;
  std::unordered_map<std::size_t, std::size_t> by_offset_;
  std::vector<double> values_;
};

/// Group mask used for freeze rules and gradient accumulation.
using GroupMask = std::array<bool, kNumParamGroups>;

inline bool mask_has(const GroupMask& m, ParamGroup g) { return m[static_cast<std::size_t>(g)]; }

/// Destination for parameter gradients. Groups outside the mask are skipped.
class GradSink {
 public:
  GradSink(std::span<double> buffer, GroupMask active) : buf_(buffer), active_(active) {}

  bool wants(ParamGroup g) const { return mask_has(active_, g); }
  MatMap mat(const ParamRef& r) { return {buf_.data() + r.offset, r.rows, r.cols}; }
  VecMap vec(const ParamRef& r) {
    return {buf_.data() + r.offset, static_cast<Eigen::Index>(r.size())};
  }

 private:
  std::span<double> buf_;
  GroupMask active_;
};

}  // namespace conki
