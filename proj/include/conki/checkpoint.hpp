#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "conki/tensor.hpp"

namespace conki {

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

struct TensorRecord {
  std::string name;
  DType dtype = DType::F64;
  std::vector<std::int64_t> shape;
  std::vector<double> values;  // F32 records hold float-representable values

  bool operator==(const TensorRecord&) const = default;
};

/// Tensor container shared by checkpoints and representation dumps:
///   "CONKITNS" | u32 version | u64 config hash | u64 record count |
///   records { u32 name length | utf-8 name | u8 dtype | u32 ndim | i64 dims[ndim] | payload }
/// All integers and payloads little-endian.
struct TensorFile {
  static constexpr std::uint32_t kVersion = 1;

  std::uint32_t version = kVersion;
  std::uint64_t config_hash = 0;
  std::vector<TensorRecord> records;

  const TensorRecord* find(std::string_view name) const;
  bool operator==(const TensorFile&) const = default;
};

void write_tensor_file(const TensorFile& file, const std::filesystem::path& path);
TensorFile read_tensor_file(const std::filesystem::path& path);

struct AdamState {
  std::uint64_t step = 0;
  std::vector<double> m;
  std::vector<double> v;
};

/// Snapshot every parameter (and optionally optimizer moments) into a container.
TensorFile make_checkpoint(const ParamStore& params, std::uint64_t config_hash,
                           DType dtype = DType::F64, const AdamState* optimizer = nullptr);

/// Copies records selected by `select` into `params`. Every selected parameter must be
/// present with a matching shape; otherwise CheckpointError. Returns the count loaded.
std::size_t load_params(const TensorFile& file, ParamStore& params,
                        const std::function<bool(const ParamInfo&)>& select);

/// FNV-1a over the raw bytes of the selected parameter values.
std::uint64_t params_checksum(const ParamStore& params,
                              const std::function<bool(const ParamInfo&)>& select);

}  // namespace conki
