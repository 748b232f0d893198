#include "conki/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <unordered_set>

#include "json.hpp"

#include "conki/binio.hpp"
#include "conki/errors.hpp"

namespace conki {

using nlohmann::json;

SentimentInterval round_to_interval(double y, LabelRange range) {
  if (!std::isfinite(y)) throw InvalidInputError("round_to_interval: non-finite score");
  const double clamped = std::clamp(y, range.min, range.max);
  // std::round rounds halfway cases away from zero.
  return SentimentInterval(static_cast<int>(std::round(clamped)));
}

std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    case Split::Test: return "test";
  }
  return "?";
}

const std::vector<MultimodalSample>& Dataset::split(Split s) const {
  switch (s) {
    case Split::Train: return train;
    case Split::Valid: return valid;
    case Split::Test: return test;
  }
  return train;
}

std::vector<MultimodalSample>& Dataset::split(Split s) {
  return const_cast<std::vector<MultimodalSample>&>(std::as_const(*this).split(s));
}

namespace {

constexpr Split kSplits[] = {Split::Train, Split::Valid, Split::Test};

void validate_sample(const MultimodalSample& s, const DatasetMetadata& meta) {
  auto fail = [&](const std::string& what) {
    throw InvalidInputError("sample '" + s.sample_id + "': " + what);
  };
  if (s.text_tokens.empty() || s.vision.rows < 1 || s.audio.rows < 1) fail("empty sequence");
  if (s.vision.cols != meta.d_v) fail("vision width differs from dataset d_v");
  if (s.audio.cols != meta.d_a) fail("audio width differs from dataset d_a");
  if (s.vision.data.size() != static_cast<std::size_t>(s.vision.rows) * s.vision.cols ||
      s.audio.data.size() != static_cast<std::size_t>(s.audio.rows) * s.audio.cols) {
    fail("feature buffer size does not match its shape");
  }
  for (auto t : s.text_tokens) {
    if (t >= meta.vocab_size) fail("token id " + std::to_string(t) + " >= vocabulary size");
  }
  auto finite = [](float v) { return std::isfinite(v); };
  if (!std::all_of(s.vision.data.begin(), s.vision.data.end(), finite) ||
      !std::all_of(s.audio.data.begin(), s.audio.data.end(), finite)) {
    fail("non-finite feature value");
  }
  if (!std::isfinite(s.label) || s.label < meta.label_range.min || s.label > meta.label_range.max) {
    fail("label outside the configured range");
  }
}

}  // namespace

void Dataset::validate() const {
  std::unordered_set<std::string> ids;
  for (Split sp : kSplits) {
    for (const auto& s : split(sp)) {
      validate_sample(s, meta);
      if (!ids.insert(s.sample_id).second) {
        throw FormatError("duplicate sample_id '" + s.sample_id + "'");
      }
    }
  }
}

// ---------------------------------------------------------------- generator

namespace {

struct ModalityProjection {
  std::vector<double> slope;
  std::vector<double> amplitude;
  std::vector<double> freq;
  std::vector<double> phase;
};

ModalityProjection make_projection(std::mt19937_64& rng, int dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> amp(0.5, 1.5);
  std::uniform_real_distribution<double> freq(0.2, 1.2);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * 3.14159265358979323846);
  ModalityProjection p;
  for (int j = 0; j < dim; ++j) {
    p.slope.push_back(normal(rng));
    p.amplitude.push_back(amp(rng));
    p.freq.push_back(freq(rng));
    p.phase.push_back(phase(rng));
  }
  return p;
}

FeatureMatrix render_features(const ModalityProjection& proj, int len, double latent,
                              double scale, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const int dim = static_cast<int>(proj.slope.size());
  FeatureMatrix m{len, dim, {}};
  m.data.reserve(static_cast<std::size_t>(len) * dim);
  const double z = latent / scale;
  for (int t = 0; t < len; ++t) {
    for (int j = 0; j < dim; ++j) {
      const double wave = proj.amplitude[j] * (1.0 + 0.25 * z) * std::sin(proj.freq[j] * t + proj.phase[j]);
      const double noise = sigma > 0.0 ? sigma * normal(rng) : 0.0;
      m.data.push_back(static_cast<float>(proj.slope[j] * z + wave + noise));
    }
  }
  return m;
}

}  // namespace

Dataset generate_synthetic_dataset(const GeneratorConfig& c) {
  if (c.n_train < 1 || c.n_valid < 1 || c.n_test < 1) throw ConfigError("split sizes must be positive");
  if (c.l_t < 1 || c.l_v < 1 || c.l_a < 1) throw ConfigError("sequence lengths must be positive");
  if (c.d_v < 1 || c.d_a < 1) throw ConfigError("feature dims must be positive");
  if (c.vocab_size < 2) throw ConfigError("vocabulary size must be >= 2");
  if (!(c.label_range.min < c.label_range.max)) throw ConfigError("empty label range");
  if (!(c.noise_sigma >= 0.0)) throw ConfigError("noise sigma must be >= 0");

  // Fixed structure: shared by every dataset generated with the same structure_seed.
  std::mt19937_64 structure(c.structure_seed);
  const ModalityProjection vision_proj = make_projection(structure, c.d_v);
  const ModalityProjection audio_proj = make_projection(structure, c.d_a);
  std::vector<std::uint32_t> codebook(static_cast<std::size_t>(c.vocab_size));
  std::iota(codebook.begin(), codebook.end(), 0U);
  std::shuffle(codebook.begin(), codebook.end(), structure);

  const double lo = c.label_range.min;
  const double width = c.label_range.max - c.label_range.min;
  const double scale = std::max(std::abs(lo), std::abs(c.label_range.max));
  const double bucket = width / c.vocab_size;

  Dataset ds;
  ds.meta.vocab_size = static_cast<std::uint32_t>(c.vocab_size);
  ds.meta.d_v = c.d_v;
  ds.meta.d_a = c.d_a;
  ds.meta.label_range = c.label_range;
  ds.meta.generator_seed = c.seed;

  std::mt19937_64 rng(c.seed);
  std::uniform_real_distribution<double> latent_dist(lo, c.label_range.max);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int counts[] = {c.n_train, c.n_valid, c.n_test};

  for (int si = 0; si < 3; ++si) {
    const Split sp = kSplits[si];
    auto& out = ds.split(sp);
    out.reserve(static_cast<std::size_t>(counts[si]));
    for (int n = 0; n < counts[si]; ++n) {
      const double s = latent_dist(rng);
      double view[3] = {s, s, s};
      if (!c.shared_motive) {
        for (double& v : view) v = s + normal(rng);
      }
      MultimodalSample sample;
      char id[64];
      std::snprintf(id, sizeof(id), "%s-%05d", std::string(split_name(sp)).c_str(), n);
      sample.sample_id = id;
      sample.label = s;

      sample.text_tokens.reserve(static_cast<std::size_t>(c.l_t));
      for (int p = 0; p < c.l_t; ++p) {
        // Position-dependent dither spreads the quantization cell across the sequence.
        const double dither = ((p + 0.5) / c.l_t - 0.5) * bucket;
        const double x = view[0] + dither + (c.noise_sigma > 0.0 ? c.noise_sigma * normal(rng) : 0.0);
        const int b = std::clamp(static_cast<int>(std::floor((x - lo) / bucket)), 0, c.vocab_size - 1);
        sample.text_tokens.push_back(codebook[static_cast<std::size_t>(b)]);
      }
      sample.vision = render_features(vision_proj, c.l_v, view[1], scale, c.noise_sigma, rng);
      sample.audio = render_features(audio_proj, c.l_a, view[2], scale, c.noise_sigma, rng);
      out.push_back(std::move(sample));
    }
  }
  return ds;
}

// ---------------------------------------------------------------- container I/O

namespace {

std::size_t record_bytes(std::size_t l_t, std::size_t l_v, std::size_t l_a, const DatasetMetadata& m) {
  return 4 * (l_t + l_v * static_cast<std::size_t>(m.d_v) + l_a * static_cast<std::size_t>(m.d_a));
}

}  // namespace

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  dataset.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw FormatError("cannot create dataset directory " + dir.string() + ": " + ec.message());

  json manifest;
  manifest["format"] = "conki-dataset";
  manifest["version"] = 1;
  manifest["vocab_size"] = dataset.meta.vocab_size;
  manifest["d_v"] = dataset.meta.d_v;
  manifest["d_a"] = dataset.meta.d_a;
  manifest["label_range"] = {dataset.meta.label_range.min, dataset.meta.label_range.max};
  manifest["generator_seed"] =
      dataset.meta.generator_seed ? json(*dataset.meta.generator_seed) : json(nullptr);

  for (Split sp : kSplits) {
    const std::string name(split_name(sp));
    const std::string file = name + ".bin";
    std::ofstream os(dir / file, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot write " + (dir / file).string());
    json records = json::array();
    std::uint64_t offset = 0;
    for (const auto& s : dataset.split(sp)) {
      records.push_back({{"sample_id", s.sample_id},
                         {"label", s.label},
                         {"l_t", s.text_tokens.size()},
                         {"l_v", s.vision.rows},
                         {"l_a", s.audio.rows},
                         {"offset", offset}});
      binio::write_span(os, std::span<const std::uint32_t>(s.text_tokens));
      binio::write_span(os, std::span<const float>(s.vision.data));
      binio::write_span(os, std::span<const float>(s.audio.data));
      offset += record_bytes(s.text_tokens.size(), static_cast<std::size_t>(s.vision.rows),
                             static_cast<std::size_t>(s.audio.rows), dataset.meta);
    }
    if (!os) throw FormatError("write failed for " + (dir / file).string());
    manifest["splits"][name] = {{"file", file}, {"records", std::move(records)}};
  }

  std::ofstream ms(dir / "manifest.json", std::ios::trunc);
  if (!ms) throw FormatError("cannot write " + (dir / "manifest.json").string());
  ms << manifest.dump(2) << '\n';
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream ms(manifest_path);
  if (!ms) throw FormatError("missing manifest: " + manifest_path.string());
  json manifest;
  try {
    manifest = json::parse(ms);
  } catch (const json::exception& e) {
    throw FormatError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }

  Dataset ds;
  try {
    if (manifest.at("format") != "conki-dataset") throw FormatError("not a conki dataset manifest");
    ds.meta.vocab_size = manifest.at("vocab_size").get<std::uint32_t>();
    ds.meta.d_v = manifest.at("d_v").get<int>();
    ds.meta.d_a = manifest.at("d_a").get<int>();
    ds.meta.label_range = {manifest.at("label_range").at(0).get<double>(),
                           manifest.at("label_range").at(1).get<double>()};
    if (!manifest.at("generator_seed").is_null()) {
      ds.meta.generator_seed = manifest.at("generator_seed").get<std::uint64_t>();
    }
    if (ds.meta.d_v < 1 || ds.meta.d_a < 1) throw FormatError("manifest declares empty feature dims");

    for (Split sp : kSplits) {
      const std::string name(split_name(sp));
      const json& entry = manifest.at("splits").at(name);
      const auto bin_path = dir / entry.at("file").get<std::string>();
      std::ifstream is(bin_path, std::ios::binary);
      if (!is) throw FormatError("missing tensor file " + bin_path.string());
      const auto file_size = std::filesystem::file_size(bin_path);

      std::uint64_t expected_offset = 0;
      auto& out = ds.split(sp);
      const json& records = entry.at("records");
      for (std::size_t i = 0; i < records.size(); ++i) {
        const json& rec = records[i];
        // A record's declared size has to end exactly where the next one starts.
        const std::uint64_t next =
            i + 1 < records.size() ? records[i + 1].at("offset").get<std::uint64_t>() : file_size;
        MultimodalSample s;
        s.sample_id = rec.at("sample_id").get<std::string>();
        s.label = rec.at("label").get<double>();
        const auto l_t = rec.at("l_t").get<std::size_t>();
        const int l_v = rec.at("l_v").get<int>();
        const int l_a = rec.at("l_a").get<int>();
        const auto offset = rec.at("offset").get<std::uint64_t>();
        if (l_t < 1 || l_v < 1 || l_a < 1) {
          throw FormatError("record '" + s.sample_id + "': sequence length must be >= 1");
        }
        const auto bytes = record_bytes(l_t, static_cast<std::size_t>(l_v),
                                        static_cast<std::size_t>(l_a), ds.meta);
        if (offset != expected_offset || offset + bytes != next || offset + bytes > file_size) {
          throw FormatError("record '" + s.sample_id + "': shape mismatch between manifest (l_t=" +
                            std::to_string(l_t) + ", l_v=" + std::to_string(l_v) + "x" +
                            std::to_string(ds.meta.d_v) + ", l_a=" + std::to_string(l_a) + "x" +
                            std::to_string(ds.meta.d_a) + ") and " + bin_path.string());
        }
        s.text_tokens.resize(l_t);
        s.vision = {l_v, ds.meta.d_v, std::vector<float>(static_cast<std::size_t>(l_v) * ds.meta.d_v)};
        s.audio = {l_a, ds.meta.d_a, std::vector<float>(static_cast<std::size_t>(l_a) * ds.meta.d_a)};
        is.seekg(static_cast<std::streamoff>(offset));
        if (!binio::read_span(is, std::span<std::uint32_t>(s.text_tokens)) ||
            !binio::read_span(is, std::span<float>(s.vision.data)) ||
            !binio::read_span(is, std::span<float>(s.audio.data))) {
          throw FormatError("record '" + s.sample_id + "': truncated tensor data");
        }
        expected_offset = offset + bytes;
        out.push_back(std::move(s));
      }
      if (expected_offset != file_size) {
        throw FormatError("split '" + name + "': shape mismatch, " + bin_path.string() + " holds " +
                          std::to_string(file_size) + " bytes but the manifest accounts for " +
                          std::to_string(expected_offset));
      }
    }
  } catch (const json::exception& e) {
    throw FormatError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  try {
    ds.validate();
  } catch (const InvalidInputError& e) {
    throw FormatError(std::string("invalid dataset record: ") + e.what());
  }
  return ds;
}

}  // namespace conki
