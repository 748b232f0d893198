#include "conki/config.hpp"

#include <fstream>

#include "conki/errors.hpp"

namespace conki {

using nlohmann::json;

namespace {

json backbone_json(const BackboneConfig& b) {
  return {{"num_layers", b.num_layers}, {"d_model", b.d_model}, {"heads", b.heads},
          {"ff_dim", b.ff_dim},         {"max_len", b.max_len}};
}

void backbone_from(const json& j, BackboneConfig& b) {
  b.num_layers = j.at("num_layers").get<int>();
  b.d_model = j.at("d_model").get<int>();
  b.heads = j.at("heads").get<int>();
  b.ff_dim = j.at("ff_dim").get<int>();
  b.max_len = j.at("max_len").get<int>();
}

json adapter_json(const AdapterConfig& a) {
  return {{"insertion_points", a.insertion_points}, {"d_adapter", a.d_adapter},
          {"heads", a.heads}, {"ff_dim", a.ff_dim}};
}

void adapter_from(const json& j, AdapterConfig& a) {
  a.insertion_points = j.at("insertion_points").get<std::vector<int>>();
  a.d_adapter = j.at("d_adapter").get<int>();
  a.heads = j.at("heads").get<int>();
  a.ff_dim = j.at("ff_dim").get<int>();
}

bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) {
    // Integers must stay integers; floats accept any number.
    return a.is_number_float() || !b.is_number_float();
  }
  return a.type() == b.type();
}

// Overlays `doc` on `base`, rejecting keys that `base` does not have.
void merge_checked(json& base, const json& doc, const std::string& path) {
  if (!doc.is_object()) throw ConfigError("config: '" + path + "' must be an object");
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("config: unknown key '" + key + "'");
    json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_checked(slot, it.value(), key);
    } else {
      if (!same_kind(slot, it.value())) {
        throw ConfigError("config: '" + key + "' expects " + std::string(slot.type_name()) +
                          ", got " + it.value().type_name());
      }
      slot = it.value();
    }
  }
}

}  // namespace

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

json RunConfig::to_json() const {
  const auto& g = generator;
  json gen = {{"n_train", g.n_train},
              {"n_valid", g.n_valid},
              {"n_test", g.n_test},
              {"l_t", g.l_t},
              {"l_v", g.l_v},
              {"l_a", g.l_a},
              {"d_v", g.d_v},
              {"d_a", g.d_a},
              {"vocab_size", g.vocab_size},
              {"label_min", g.label_range.min},
              {"label_max", g.label_range.max},
              {"noise_sigma", g.noise_sigma},
              {"shared_motive", g.shared_motive},
              {"seed", g.seed},
              {"structure_seed", g.structure_seed}};
  const auto& m = model;
  json mod = {{"d_repr", m.d_repr},
              {"text_backbone", backbone_json(m.text)},
              {"av_backbone", backbone_json(m.av)},
              {"text_adapter", adapter_json(m.text_adapter)},
              {"av_adapter", adapter_json(m.av_adapter)},
              {"fusion",
               {{"d_fuse", m.fusion.d_fuse},
                {"d_joint", m.fusion.d_joint},
                {"d_head", m.fusion.d_head},
                {"activation", m.fusion.activation == Activation::ReLU ? "relu" : "identity"}}}};
  const auto& t = training;
  json tr = {{"lambda", t.lambda},
             {"tau", t.tau},
             {"batch_size", t.batch_size},
             {"weight_decay", t.weight_decay},
             {"seed", t.seed},
             {"checkpoint_dtype", t.checkpoint_dtype == DType::F32 ? "f32" : "f64"},
             {"stage1",
              {{"epochs", t.stage1.epochs},
               {"warmup_epochs", t.stage1.warmup_epochs},
               {"lr", t.stage1.lr}}},
             {"stage2",
              {{"epochs", t.stage2.epochs},
               {"lr_encoders", t.stage2.lr_encoders},
               {"lr_other", t.stage2.lr_other},
               {"train_text_backbone", t.stage2.train_text_backbone}}}};
  return {{"generator", gen}, {"model", mod}, {"training", tr}, {"ablation", ablation}};
}

RunConfig RunConfig::from_json(const json& doc) {
  json merged = RunConfig().to_json();
  merge_checked(merged, doc, "");

  RunConfig c;
  try {
    const json& g = merged.at("generator");
    c.generator.n_train = g.at("n_train").get<int>();
    c.generator.n_valid = g.at("n_valid").get<int>();
    c.generator.n_test = g.at("n_test").get<int>();
    c.generator.l_t = g.at("l_t").get<int>();
    c.generator.l_v = g.at("l_v").get<int>();
    c.generator.l_a = g.at("l_a").get<int>();
    c.generator.d_v = g.at("d_v").get<int>();
    c.generator.d_a = g.at("d_a").get<int>();
    c.generator.vocab_size = g.at("vocab_size").get<int>();
    c.generator.label_range = {g.at("label_min").get<double>(), g.at("label_max").get<double>()};
    c.generator.noise_sigma = g.at("noise_sigma").get<double>();
    c.generator.shared_motive = g.at("shared_motive").get<bool>();
    c.generator.seed = g.at("seed").get<std::uint64_t>();
    c.generator.structure_seed = g.at("structure_seed").get<std::uint64_t>();

    const json& m = merged.at("model");
    c.model.d_repr = m.at("d_repr").get<int>();
    backbone_from(m.at("text_backbone"), c.model.text);
    backbone_from(m.at("av_backbone"), c.model.av);
    adapter_from(m.at("text_adapter"), c.model.text_adapter);
    adapter_from(m.at("av_adapter"), c.model.av_adapter);
    c.model.text.d_repr = c.model.av.d_repr = c.model.d_repr;
    c.model.text_adapter.d_repr = c.model.av_adapter.d_repr = c.model.d_repr;
    const json& f = m.at("fusion");
    c.model.fusion.d_fuse = f.at("d_fuse").get<int>();
    c.model.fusion.d_joint = f.at("d_joint").get<int>();
    c.model.fusion.d_head = f.at("d_head").get<int>();
    const auto act = f.at("activation").get<std::string>();
    if (act == "relu") {
      c.model.fusion.activation = Activation::ReLU;
    } else if (act == "identity") {
      c.model.fusion.activation = Activation::Identity;
    } else {
      throw ConfigError("config: model.fusion.activation must be relu or identity");
    }

    const json& t = merged.at("training");
    c.training.lambda = t.at("lambda").get<double>();
    c.training.tau = t.at("tau").get<double>();
    c.training.batch_size = t.at("batch_size").get<int>();
    c.training.weight_decay = t.at("weight_decay").get<double>();
    c.training.seed = t.at("seed").get<std::uint64_t>();
    const auto dtype = t.at("checkpoint_dtype").get<std::string>();
    if (dtype == "f32") {
      c.training.checkpoint_dtype = DType::F32;
    } else if (dtype == "f64") {
      c.training.checkpoint_dtype = DType::F64;
    } else {
      throw ConfigError("config: training.checkpoint_dtype must be f32 or f64");
    }
    c.training.stage1.epochs = t.at("stage1").at("epochs").get<int>();
    c.training.stage1.warmup_epochs = t.at("stage1").at("warmup_epochs").get<int>();
    c.training.stage1.lr = t.at("stage1").at("lr").get<double>();
    c.training.stage2.epochs = t.at("stage2").at("epochs").get<int>();
    c.training.stage2.lr_encoders = t.at("stage2").at("lr_encoders").get<double>();
    c.training.stage2.lr_other = t.at("stage2").at("lr_other").get<double>();
    c.training.stage2.train_text_backbone = t.at("stage2").at("train_text_backbone").get<bool>();
    c.ablation = merged.at("ablation").get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  json doc;
  try {
    doc = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(doc);
}

void RunConfig::set(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("--set expects key=value, got '" + std::string(assignment) + "'");
  }
  const std::string path(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json patch = json::object();
  json* cursor = &patch;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("--set: malformed key '" + path + "'");
    if (dot == std::string::npos) {
      (*cursor)[key] = value;
      break;
    }
    cursor = &(*cursor)[key];
    start = dot + 1;
  }
  json merged = to_json();
  merge_checked(merged, patch, "");
  *this = from_json(merged);
}

std::uint64_t RunConfig::hash() const { return fnv1a(to_json().dump()); }

void RunConfig::validate() const {
  model.validate();
  training.validate();
  AblationSwitches s = switches();
  s.validate();
  ModelConfig m = model;
  TrainConfig t = training;
  s.apply(m, t);
  m.validate();
}

}  // namespace conki
