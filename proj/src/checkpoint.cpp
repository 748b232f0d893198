#include "conki/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "conki/binio.hpp"
#include "conki/errors.hpp"

namespace conki {

namespace {

constexpr char kMagic[8] = {'C', 'O', 'N', 'K', 'I', 'T', 'N', 'S'};
constexpr std::uint32_t kMaxNameLength = 1U << 16;
constexpr std::uint32_t kMaxRank = 8;

std::size_t element_count(const std::vector<std::int64_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

}  // namespace

const TensorRecord* TensorFile::find(std::string_view name) const {
  for (const auto& r : records) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

void write_tensor_file(const TensorFile& file, const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open " + path.string() + " for writing");
  os.write(kMagic, sizeof(kMagic));
  binio::write_pod(os, file.version);
  binio::write_pod(os, file.config_hash);
  binio::write_pod(os, static_cast<std::uint64_t>(file.records.size()));
  for (const auto& r : file.records) {
    if (element_count(r.shape) != r.values.size()) {
      throw CheckpointError("record '" + r.name + "': shape does not match value count");
    }
    binio::write_pod(os, static_cast<std::uint32_t>(r.name.size()));
    os.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    binio::write_pod(os, static_cast<std::uint8_t>(r.dtype));
    binio::write_pod(os, static_cast<std::uint32_t>(r.shape.size()));
    for (auto d : r.shape) binio::write_pod(os, d);
    if (r.dtype == DType::F64) {
      binio::write_span(os, std::span<const double>(r.values));
    } else {
      std::vector<float> f(r.values.begin(), r.values.end());
      binio::write_span(os, std::span<const float>(f));
    }
  }
  if (!os) throw CheckpointError("write failed for " + path.string());
}

TensorFile read_tensor_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open " + path.string());
  auto fail = [&](const std::string& what) -> CheckpointError {
    return CheckpointError(path.string() + ": " + what);
  };
  char magic[8];
  is.read(magic, sizeof(magic));
  if (is.gcount() != sizeof(magic) || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw fail("not a conki tensor file");
  }
  TensorFile file;
  std::uint64_t count = 0;
  if (!binio::read_pod(is, file.version) || !binio::read_pod(is, file.config_hash) ||
      !binio::read_pod(is, count)) {
    throw fail("truncated header");
  }
  if (file.version != TensorFile::kVersion) {
    throw fail("unsupported format version " + std::to_string(file.version));
  }
  for (std::uint64_t i = 0; i < count; ++i) {
    TensorRecord r;
    std::uint32_t name_len = 0, ndim = 0;
    std::uint8_t dtype = 0;
    if (!binio::read_pod(is, name_len) || name_len > kMaxNameLength) throw fail("bad record name");
    r.name.resize(name_len);
    is.read(r.name.data(), name_len);
    if (static_cast<std::uint32_t>(is.gcount()) != name_len) throw fail("truncated record name");
    if (!binio::read_pod(is, dtype) || dtype > 1) throw fail("record '" + r.name + "': bad dtype");
    r.dtype = static_cast<DType>(dtype);
    if (!binio::read_pod(is, ndim) || ndim > kMaxRank) throw fail("record '" + r.name + "': bad rank");
    r.shape.resize(ndim);
    for (auto& d : r.shape) {
      if (!binio::read_pod(is, d) || d < 0) throw fail("record '" + r.name + "': bad shape");
    }
    r.values.resize(element_count(r.shape));
    bool ok = true;
    if (r.dtype == DType::F64) {
      ok = binio::read_span(is, std::span<double>(r.values));
    } else {
      std::vector<float> f(r.values.size());
      ok = binio::read_span(is, std::span<float>(f));
      std::copy(f.begin(), f.end(), r.values.begin());
    }
    if (!ok) throw fail("record '" + r.name + "': truncated payload");
    file.records.push_back(std::move(r));
  }
  return file;
}

TensorFile make_checkpoint(const ParamStore& params, std::uint64_t config_hash, DType dtype,
                           const AdamState* optimizer) {
  TensorFile file;
  file.config_hash = config_hash;
  for (const auto& info : params.infos()) {
    const auto v = params.view(info);
    file.records.push_back({info.name, dtype, info.shape, {v.begin(), v.end()}});
  }
  if (optimizer != nullptr) {
    const auto n = static_cast<std::int64_t>(optimizer->m.size());
    file.records.push_back({"optimizer.step", DType::F64, {1}, {static_cast<double>(optimizer->step)}});
    file.records.push_back({"optimizer.m", DType::F64, {n}, optimizer->m});
    file.records.push_back({"optimizer.v", DType::F64, {n}, optimizer->v});
  }
  return file;
}

std::size_t load_params(const TensorFile& file, ParamStore& params,
                        const std::function<bool(const ParamInfo&)>& select) {
  std::size_t loaded = 0;
  for (const auto& info : params.infos()) {
    if (!select(info)) continue;
    const TensorRecord* r = file.find(info.name);
    if (r == nullptr) throw CheckpointError("checkpoint is missing parameter '" + info.name + "'");
    if (r->shape != info.shape) {
      std::string want, got;
      for (auto d : info.shape) want += std::to_string(d) + " ";
      for (auto d : r->shape) got += std::to_string(d) + " ";
      throw CheckpointError("parameter '" + info.name + "' shape mismatch: model [" + want +
                            "] vs checkpoint [" + got + "]");
    }
    auto dst = params.view(info);
    std::copy(r->values.begin(), r->values.end(), dst.begin());
    ++loaded;
  }
  return loaded;
}

std::uint64_t params_checksum(const ParamStore& params,
                              const std::function<bool(const ParamInfo&)>& select) {
  std::uint64_t h = 14695981039346656037ULL;
  for (const auto& info : params.infos()) {
    if (!select(info)) continue;
    for (double v : params.view(info)) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof(double));
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ULL;
      }
    }
  }
  return h;
}

}  // namespace conki
