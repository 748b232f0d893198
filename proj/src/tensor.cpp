#include "conki/tensor.hpp"

#include "conki/errors.hpp"

namespace conki {

std::string_view group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::BackboneText: return "backbone.text";
    case ParamGroup::BackboneVision: return "backbone.vision";
    case ParamGroup::BackboneAudio: return "backbone.audio";
    case ParamGroup::AdapterText: return "adapter.t";
    case ParamGroup::AdapterVision: return "adapter.v";
    case ParamGroup::AdapterAudio: return "adapter.a";
    case ParamGroup::Fusion: return "fusion";
    case ParamGroup::Head: return "head";
  }
  return "?";
}

bool is_backbone(ParamGroup g) {
  return g == ParamGroup::BackboneText || g == ParamGroup::BackboneVision ||
         g == ParamGroup::BackboneAudio;
}

bool is_adapter(ParamGroup g) {
  return g == ParamGroup::AdapterText || g == ParamGroup::AdapterVision ||
         g == ParamGroup::AdapterAudio;
}

ParamRef ParamStore::add(std::string name, ParamGroup group, std::vector<std::int64_t> shape,
                         Eigen::Index rows, Eigen::Index cols) {
  if (rows <= 0 || cols <= 0) throw ShapeError("parameter '" + name + "' has an empty shape");
  // Names carry their group as prefix so that checkpoint subsets can be selected by name.
  const std::string_view prefix = group_name(group);
  if (name.compare(0, prefix.size(), prefix) != 0 || name.size() <= prefix.size() ||
      name[prefix.size()] != '.') {
    throw ConfigError("parameter '" + name + "' is not under its group prefix '" +
                      std::string(prefix) + "'");
  }
  if (index_.contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  ParamRef ref{values_.size(), rows, cols, group};
  index_.emplace(name, infos_.size());
  by_offset_.emplace(ref.offset, infos_.size());
  infos_.push_back(ParamInfo{std::move(name), group, std::move(shape), ref.offset, ref.size()});
  values_.resize(values_.size() + ref.size(), 0.0);
  return ref;
}

ParamRef ParamStore::add_matrix(std::string name, ParamGroup group, Eigen::Index rows,
                                Eigen::Index cols) {
  return add(std::move(name), group, {rows, cols}, rows, cols);
}

ParamRef ParamStore::add_vector(std::string name, ParamGroup group, Eigen::Index n) {
  return add(std::move(name), group, {n}, 1, n);
}

const ParamInfo* ParamStore::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : &infos_[it->second];
}

const ParamInfo* ParamStore::find_by_offset(std::size_t offset) const {
  auto it = by_offset_.find(offset);
  return it == by_offset_.end() ? nullptr : &infos_[it->second];
}

std::size_t ParamStore::group_size(ParamGroup g) const {
  std::size_t n = 0;
  for (const auto& info : infos_) {
    if (info.group == g) n += info.size;
  }
  return n;
}

}  // namespace conki
