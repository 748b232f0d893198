#include "conki/cli.hpp"

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"

#include "conki/config.hpp"
#include "conki/errors.hpp"
#include "conki/log.hpp"

namespace conki {

namespace {

struct UsageError : Error {
  using Error::Error;
};

struct Options {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string data;
  std::string external;
  std::string adapters;
  std::string model;
  std::string split = "test";
  std::optional<double> lambda;
  std::optional<double> tau;
  std::optional<int> epochs;
  std::optional<int> batch_size;
  std::string ablate;
  std::string labels;
};

enum class EpochTarget { None, Stage1, Stage2 };

RunConfig assemble(const Options& o, EpochTarget epochs) {
  RunConfig cfg = o.config.empty() ? RunConfig() : RunConfig::load(o.config);
  for (const auto& s : o.sets) cfg.set(s);
  if (o.seed) {
    cfg.generator.seed = *o.seed;
    cfg.training.seed = *o.seed;
  }
  if (o.lambda) cfg.training.lambda = *o.lambda;
  if (o.tau) cfg.training.tau = *o.tau;
  if (o.batch_size) cfg.training.batch_size = *o.batch_size;
  if (o.epochs) {
    if (epochs == EpochTarget::Stage1) cfg.training.stage1.epochs = *o.epochs;
    if (epochs == EpochTarget::Stage2) cfg.training.stage2.epochs = *o.epochs;
  }
  if (!o.ablate.empty()) cfg.ablation = o.ablate;
  cfg.validate();
  return cfg;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot write " + path.string());
  os << text;
}

void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  std::string text;
  for (const auto& l : lines) text += l + "\n";
  write_text(path, text);
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "valid") return Split::Valid;
  if (s == "test") return Split::Test;
  throw UsageError("--split must be train, valid or test");
}

// Model config with the ablation wiring applied.
ModelConfig effective_model(const RunConfig& cfg) {
  ModelConfig m = cfg.model;
  TrainConfig t = cfg.training;
  cfg.switches().apply(m, t);
  return m;
}

std::unique_ptr<ConkiModel> load_model(const RunConfig& cfg, const Dataset& data,
                                       const std::string& path) {
  const TensorFile file = read_tensor_file(path);
  if (file.config_hash != cfg.hash()) {
    log_warn("checkpoint " + path + " was written under a different config hash");
  }
  auto model = std::make_unique<ConkiModel>(effective_model(cfg), InputDims::from(data.meta));
  load_params(file, model->params(), [](const ParamInfo&) { return true; });
  return model;
}

void print_metrics(std::ostream& out, const MetricsReport& m) {
  out << metrics_json(m) << '\n' << metrics_table(m);
}

int run_gen_data(const Options& o, std::ostream& out) {
  const RunConfig cfg = assemble(o, EpochTarget::None);
  const Dataset ds = generate_synthetic_dataset(cfg.generator);
  save_dataset(ds, o.out);
  out << "wrote " << ds.train.size() << "/" << ds.valid.size() << "/" << ds.test.size()
      << " samples to " << o.out << '\n';
  return 0;
}

int run_pretrain(const Options& o, std::ostream& out) {
  RunConfig cfg = assemble(o, EpochTarget::Stage1);
  const Dataset external = load_dataset(o.external);
  ModelConfig model = effective_model(cfg);
  TrainConfig train = cfg.training;
  train.checkpoint_dir = o.out;
  const StageResult r = pretrain_adapters(external, model, train, cfg.hash());
  write_text(std::filesystem::path(o.out) / "config.json", cfg.to_json().dump(2) + "\n");
  out << "stage 1 best epoch " << r.best_epoch << " valid MAE " << r.best_val_mae << '\n'
      << "adapters: " << (std::filesystem::path(o.out) / "stage1.ckpt").string() << '\n';
  return 0;
}

int run_finetune(const Options& o, std::ostream& out) {
  RunConfig cfg = assemble(o, EpochTarget::Stage2);
  const AblationSwitches sw = cfg.switches();
  const bool needs_stage1 = !sw.no_external && !sw.no_adapters;
  if (needs_stage1 && o.adapters.empty()) {
    throw UsageError(
        "finetune needs --adapters FILE from a previous `conki pretrain` run "
        "(or --ablate c1 to skip adapter pretraining)");
  }
  const Dataset target = load_dataset(o.data);
  std::optional<TensorFile> pretrained;
  if (needs_stage1) {
    pretrained = read_tensor_file(o.adapters);
  } else if (!o.adapters.empty()) {
    log_warn("--adapters ignored under --ablate " + sw.to_string());
  }
  ModelConfig model = effective_model(cfg);
  TrainConfig train = cfg.training;
  sw.apply(model, train);
  train.checkpoint_dir = o.out;
  const StageResult r =
      finetune(target, pretrained ? &*pretrained : nullptr, model, train, cfg.hash());
  if (!o.out.empty()) {
    write_text(std::filesystem::path(o.out) / "config.json", cfg.to_json().dump(2) + "\n");
    write_text(std::filesystem::path(o.out) / "metrics.json", metrics_json(r.test) + "\n");
  }
  print_metrics(out, r.test);
  return 0;
}

int run_evaluate(const Options& o, std::ostream& out) {
  const RunConfig cfg = assemble(o, EpochTarget::None);
  const Dataset data = load_dataset(o.data);
  const auto model = load_model(cfg, data, o.model);
  print_metrics(out, evaluate(*model, data.split(parse_split(o.split)), data.meta.label_range));
  return 0;
}

int run_ablate(const Options& o, std::ostream& out) {
  const RunConfig cfg = assemble(o, EpochTarget::Stage2);
  const AblationSwitches sw = cfg.switches();
  const Dataset target = load_dataset(o.data);
  std::optional<Dataset> external;
  if (!o.external.empty()) external = load_dataset(o.external);
  if (!sw.no_external && !sw.no_adapters && !external) {
    throw UsageError("ablate needs --external DIR unless c1 (or c2) is among the switches");
  }
  const AblationResult r = ablate(target, external ? &*external : nullptr, cfg.model,
                                  cfg.training, sw, cfg.hash());
  if (!o.out.empty()) {
    const std::filesystem::path dir(o.out);
    write_text(dir / "config.json", cfg.to_json().dump(2) + "\n");
    write_text(dir / "metrics.json", metrics_json(r.test) + "\n");
    write_lines(dir / "log.jsonl", r.log);
  }
  out << "variant " << sw.to_string() << " (" << r.param_count << " parameters)\n";
  print_metrics(out, r.test);
  return 0;
}

int run_pair_debug(const Options& o, std::ostream& out) {
  std::vector<double> labels;
  std::stringstream ss(o.labels);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      labels.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw UsageError("--labels: '" + tok + "' is not a number");
    }
  }
  if (labels.empty()) throw UsageError("--labels needs at least one value");
  const RunConfig cfg = assemble(o, EpochTarget::None);
  const PairPartition part = build_pairs(labels, cfg.generator.label_range);
  out << pairing_matrix_text(part);
  out << "P1=" << part.p1.size() << " P2=" << part.p2.size() << " N1=" << part.n1.size()
      << " N2=" << part.n2.size() << " total=" << part.total() << '\n';
  return 0;
}

int run_dump_reps(const Options& o, std::ostream& out) {
  const RunConfig cfg = assemble(o, EpochTarget::None);
  const Dataset data = load_dataset(o.data);
  std::unique_ptr<ConkiModel> model;
  if (o.model.empty()) {
    model = std::make_unique<ConkiModel>(effective_model(cfg), InputDims::from(data.meta));
    model->init(cfg.training.seed);
  } else {
    model = load_model(cfg, data, o.model);
  }
  const auto& samples = data.split(parse_split(o.split));
  dump_representations(*model, samples, data.meta.label_range, o.out, cfg.hash());
  out << "wrote " << samples.size() << " records to " << o.out << '\n';
  return 0;
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"ConKI: knowledge-injected contrastive multimodal sentiment analysis"};
  app.name(args.empty() ? "conki" : args[0]);
  app.require_subcommand(1);
  Options o;

  auto config_flags = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--set", o.sets, "override one config leaf, e.g. training.tau=0.1");
    sub->add_option("--seed", o.seed, "seed for data generation, initialization and shuffling");
  };
  auto train_flags = [&](CLI::App* sub) {
    sub->add_option("--lambda", o.lambda, "contrastive loss weight");
    sub->add_option("--tau", o.tau, "contrastive temperature");
    sub->add_option("--epochs", o.epochs, "epochs of the stage being run");
    sub->add_option("--batch-size", o.batch_size, "batch size");
  };

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  config_flags(gen);
  gen->add_option("--out", o.out, "output directory")->required();

  auto* pre = app.add_subcommand("pretrain", "Stage 1: pretrain adapters on an external dataset");
  config_flags(pre);
  train_flags(pre);
  pre->add_option("--external", o.external, "external dataset directory")->required();
  pre->add_option("--out", o.out, "output directory for stage1.ckpt and the log")->required();
  pre->add_option("--ablate", o.ablate, "ablation switches (c1,c2,c3,c4,n1)");

  auto* fine = app.add_subcommand("finetune", "Stage 2: fine-tune on the target dataset");
  config_flags(fine);
  train_flags(fine);
  fine->add_option("--data", o.data, "target dataset directory")->required();
  fine->add_option("--adapters", o.adapters, "Stage 1 checkpoint");
  fine->add_option("--out", o.out, "output directory for stage2.ckpt, log and metrics");
  fine->add_option("--ablate", o.ablate, "ablation switches (c1,c2,c3,c4,n1)");

  auto* eval = app.add_subcommand("evaluate", "evaluate a checkpoint on one split");
  config_flags(eval);
  eval->add_option("--data", o.data, "dataset directory")->required();
  eval->add_option("--model", o.model, "model checkpoint")->required();
  eval->add_option("--split", o.split, "train, valid or test")->capture_default_str();
  eval->add_option("--ablate", o.ablate, "ablation switches the checkpoint was trained with");

  auto* abl = app.add_subcommand("ablate", "run one ablation variant end to end");
  config_flags(abl);
  train_flags(abl);
  abl->add_option("--data", o.data, "target dataset directory")->required();
  abl->add_option("--external", o.external, "external dataset directory");
  abl->add_option("--ablate", o.ablate, "ablation switches (c1,c2,c3,c4,n1)")->required();
  abl->add_option("--out", o.out, "output directory for config, metrics and log");

  auto* pairs = app.add_subcommand("pair-debug", "print the pairing matrix for a label batch");
  config_flags(pairs);
  pairs->add_option("--labels", o.labels, "comma-separated sentiment scores")->required();

  auto* dump = app.add_subcommand("dump-reps", "write the six representations per sample");
  config_flags(dump);
  dump->add_option("--data", o.data, "dataset directory")->required();
  dump->add_option("--model", o.model, "model checkpoint (fresh initialization if omitted)");
  dump->add_option("--split", o.split, "train, valid or test")->capture_default_str();
  dump->add_option("--out", o.out, "output tensor file")->required();
  dump->add_option("--ablate", o.ablate, "ablation switches the checkpoint was trained with");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return run_gen_data(o, out);
    if (pre->parsed()) return run_pretrain(o, out);
    if (fine->parsed()) return run_finetune(o, out);
    if (eval->parsed()) return run_evaluate(o, out);
    if (abl->parsed()) return run_ablate(o, out);
    if (pairs->parsed()) return run_pair_debug(o, out);
    if (dump->parsed()) return run_dump_reps(o, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

int cli_main(int argc, char** argv) {
  return cli_main(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}

}  // namespace conki
