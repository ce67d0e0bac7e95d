#include "coar_cli/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "coar/attention_export.hpp"
#include "coar/dataset.hpp"
#include "coar/evaluation.hpp"
#include "coar/synthetic.hpp"
#include "coar/tensor_io.hpp"
#include "coar/trainer.hpp"

namespace coar::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Thrown for anything the user can fix by changing flags or inputs.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  out << j.dump(2) << "\n";
  if (!out.flush()) throw std::runtime_error("write failed for " + path.string());
}

Dataset open_dataset(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) throw UsageError("no dataset at " + dir.string());
  try {
    return load_dataset(dir);
  } catch (const std::exception& e) {
    throw UsageError("cannot load dataset " + dir.string() + ": " + e.what());
  }
}

Checkpoint open_checkpoint(const fs::path& dir) {
  try {
    return load_checkpoint(dir);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

void check_compatible(const Model& model, const Dataset& d) {
  if (model.num_attributes() != d.num_attributes || model.backbone.image_size() != d.image_size ||
      model.backbone.in_channels() != d.channels) {
    std::ostringstream msg;
    msg << "checkpoint expects K=" << model.num_attributes() << ", " << model.backbone.image_size() << "px, "
        << model.backbone.in_channels() << " channels; dataset has K=" << d.num_attributes << ", " << d.image_size
        << "px, " << d.channels << " channels";
    throw UsageError(msg.str());
  }
  if (d.semantics.num_attributes() != model.prototypes.config.num_attributes) {
    throw UsageError("dataset semantics width does not match the prototype net");
  }
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// ---- synth ----

struct SynthArgs {
  SynthSpec spec;
  std::string mode = "one-hot";
  std::string out;
};

void add_synth(CLI::App& app, SynthArgs& a) {
  auto* cmd = app.add_subcommand("synth", "Generate a synthetic compositional-attribute dataset");
  cmd->add_option("--seen", a.spec.n_seen, "Seen classes")->capture_default_str();
  cmd->add_option("--unseen", a.spec.n_unseen, "Unseen classes")->capture_default_str();
  cmd->add_option("--K", a.spec.num_attributes, "Attributes")->capture_default_str();
  cmd->add_option("--per-class", a.spec.images_per_class, "Images per class")->capture_default_str();
  cmd->add_option("--image-size", a.spec.image_size, "Image side in pixels")->capture_default_str();
  cmd->add_option("--channels", a.spec.channels, "1 or 3")->capture_default_str();
  cmd->add_option("--noise", a.spec.noise_std, "Pixel noise std")->capture_default_str();
  cmd->add_option("--jitter", a.spec.semantics_jitter, "Class-semantics jitter")->capture_default_str();
  cmd->add_option("--test-fraction", a.spec.test_fraction, "Held-out share of seen-class images")->capture_default_str();
  cmd->add_option("--semantics-mode", a.mode, "one-hot | random | random-orthogonal")->capture_default_str();
  cmd->add_option("--seed", a.spec.seed, "Root seed")->capture_default_str();
  cmd->add_option("--out", a.out, "Output directory")->required();
}

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  Dataset d;
  AttributeSemanticsMode mode;
  try {
    mode = parse_semantics_mode(a.mode);
    d = generate_synthetic(a.spec);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (mode != AttributeSemanticsMode::OneHot) {
    d.semantics.mode = mode;
    d.semantics.attribute_semantics = make_attribute_semantics(d.num_attributes, mode, a.spec.seed);
    d.validate();
  }
  save_dataset(d, a.out);
  out << "classes " << d.num_classes << " (seen " << d.seen_classes.size() << ", unseen " << d.unseen_classes.size()
      << "), K " << d.num_attributes << ", samples " << d.samples.size() << " (train "
      << d.sample_indices(Split::Train, true).size() << ")\n";
  return kOk;
}

// ---- train ----

struct TrainArgs {
  std::string data;
  std::string out;
  std::string config;
  std::string resume;
  std::optional<int> stop_after;
  json flags = json::object();
  std::vector<std::pair<CLI::Option*, std::function<void()>>> setters;
};

template <typename T>
void flag_value(CLI::App* cmd, TrainArgs& a, const std::string& name, const std::string& key, const std::string& help,
                std::shared_ptr<T> slot) {
  CLI::Option* opt = cmd->add_option(name, *slot, help);
  a.setters.emplace_back(opt, [&a, key, slot] { a.flags[key] = *slot; });
}

void add_train(CLI::App& app, TrainArgs& a) {
  auto* cmd = app.add_subcommand("train", "Train a model on a dataset directory");
  cmd->add_option("--data", a.data, "Dataset directory");
  cmd->add_option("--out", a.out, "Run directory");
  cmd->add_option("--config", a.config, "JSON config file; flags take precedence");
  cmd->add_option("--resume", a.resume, "Checkpoint directory to continue from");
  cmd->add_option("--stop-after-epoch", a.stop_after, "Stop once this many epochs are complete");
  flag_value(cmd, a, "--epochs", "epochs", "Epochs", std::make_shared<int>());
  flag_value(cmd, a, "--episodes-per-epoch", "episodes_per_epoch", "0 = one pass over the seen training set",
             std::make_shared<int>());
  flag_value(cmd, a, "--n-way", "n_way", "Classes per episode", std::make_shared<int>());
  flag_value(cmd, a, "--k-shot", "k_shot", "Images per class per episode", std::make_shared<int>());
  flag_value(cmd, a, "--lr", "base_lr", "Initial learning rate", std::make_shared<double>());
  flag_value(cmd, a, "--momentum", "momentum", "SGD momentum", std::make_shared<double>());
  flag_value(cmd, a, "--weight-decay", "weight_decay", "Weight decay", std::make_shared<double>());
  flag_value(cmd, a, "--lr-decay-every", "lr_decay_every", "Epochs between decays", std::make_shared<int>());
  flag_value(cmd, a, "--lr-decay-factor", "lr_decay_factor", "Decay factor", std::make_shared<double>());
  flag_value(cmd, a, "--seed", "seed", "Root seed", std::make_shared<std::uint64_t>());
  flag_value(cmd, a, "--alpha", "alpha", "Cosine scale", std::make_shared<double>());
  flag_value(cmd, a, "--beta", "beta", "Prototype margin ratio", std::make_shared<double>());
  flag_value(cmd, a, "--tau", "tau", "Contrastive temperature", std::make_shared<double>());
  flag_value(cmd, a, "--t-hard", "t_hard", "Hard-example threshold", std::make_shared<double>());
  flag_value(cmd, a, "--lambda-attp", "lambda_attp", "Weight of the prototype loss", std::make_shared<double>());
  flag_value(cmd, a, "--lambda-attf", "lambda_attf", "Weight of the contrastive loss", std::make_shared<double>());
  flag_value(cmd, a, "--lambda-sem", "lambda_sem", "Weight of the semantic loss", std::make_shared<double>());
  flag_value(cmd, a, "--hidden-size", "hidden_size", "Prototype net width", std::make_shared<int>());
  flag_value(cmd, a, "--patch-size", "vit_patch_size", "Transformer patch side", std::make_shared<int>());
  flag_value(cmd, a, "--backbone", "backbone", "cnn | vit", std::make_shared<std::string>());
  flag_value(cmd, a, "--variant", "variant", "shared-branched | separate | fully-shared",
             std::make_shared<std::string>());

  auto t_peak = std::make_shared<std::string>();
  CLI::Option* tp = cmd->add_option("--t-peak", *t_peak, "Attention peak threshold, or 'auto'");
  a.setters.emplace_back(tp, [&a, t_peak] {
    if (*t_peak == "auto") {
      a.flags["t_peak"] = "auto";
      return;
    }
    try {
      std::size_t used = 0;
      const double v = std::stod(*t_peak, &used);
      if (used != t_peak->size()) throw std::invalid_argument("");
      a.flags["t_peak"] = v;
    } catch (const std::exception&) {
      throw UsageError("--t-peak expects a number or 'auto'");
    }
  });
  CLI::Option* nhs = cmd->add_flag("--no-hard-selection", "Use all positives and negatives in the contrastive loss");
  a.setters.emplace_back(nhs, [&a] { a.flags["hard_selection"] = false; });
  CLI::Option* ncn = cmd->add_flag("--no-class-norm", "Drop class normalisation from the prototype net");
  a.setters.emplace_back(ncn, [&a] { a.flags["class_norm"] = false; });
  CLI::Option* frz = cmd->add_flag("--freeze-backbone", "Only update the prototype net");
  a.setters.emplace_back(frz, [&a] { a.flags["freeze_backbone"] = true; });
}

int cmd_train(TrainArgs& a, std::ostream& out) {
  json merged = json::object();
  if (!a.config.empty()) {
    json file = read_json_file(a.config);
    if (!file.is_object()) throw UsageError("config file must hold a JSON object");
    // run-level keys live alongside the training keys
    if (file.contains("data")) {
      if (a.data.empty()) a.data = file["data"].get<std::string>();
      file.erase("data");
    }
    if (file.contains("out")) {
      if (a.out.empty()) a.out = file["out"].get<std::string>();
      file.erase("out");
    }
    merged = std::move(file);
  }
  for (auto& [opt, set] : a.setters) {
    if (opt->count() > 0) set();
  }
  merged.update(a.flags);
  if (a.data.empty()) throw UsageError("train needs --data (or \"data\" in the config)");
  if (a.out.empty()) throw UsageError("train needs --out (or \"out\" in the config)");

  TrainConfig config;
  try {
    config = train_config_from_json(merged);
    config.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const Dataset d = open_dataset(a.data);
  TrainOptions opts;
  opts.run_dir = fs::path(a.out);
  if (!a.resume.empty()) {
    if (!fs::exists(fs::path(a.resume) / "meta.json")) throw UsageError("no checkpoint at " + a.resume);
    opts.resume_from = fs::path(a.resume);
  }
  opts.stop_after_epoch = a.stop_after;
  const TrainState s = train(config, d, opts);
  out << "trained " << s.epoch << " epochs, " << s.step << " steps, t_peak " << s.t_peak;
  if (!s.history.empty()) out << ", final loss " << s.history.back().total;
  out << "\n";
  return kOk;
}

// ---- eval ----

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::string mode = "both";
  std::string out;
};

void add_eval(CLI::App& app, EvalArgs& a) {
  auto* cmd = app.add_subcommand("eval", "Score a checkpoint in ZSL and/or GZSL mode");
  cmd->add_option("--ckpt", a.ckpt, "Checkpoint directory")->required();
  cmd->add_option("--data", a.data, "Dataset directory")->required();
  cmd->add_option("--mode", a.mode, "zsl | gzsl | both")->capture_default_str();
  cmd->add_option("--out", a.out, "metrics.json path (default: <ckpt>/metrics.json)");
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  std::vector<EvalMode> modes;
  if (a.mode == "zsl" || a.mode == "both") modes.push_back(EvalMode::Zsl);
  if (a.mode == "gzsl" || a.mode == "both") modes.push_back(EvalMode::Gzsl);
  if (modes.empty()) throw UsageError("--mode must be zsl, gzsl or both");
  const Checkpoint ckpt = open_checkpoint(a.ckpt);
  const Dataset d = open_dataset(a.data);
  check_compatible(ckpt.model, d);

  const int threads = thread_count_from_env();
  json reports = json::array();
  out << std::fixed << std::setprecision(4);
  for (EvalMode m : modes) {
    const MetricsReport r = evaluate(ckpt.model, d, m, threads);
    reports.push_back(to_json(r));
    if (m == EvalMode::Zsl) {
      out << "ZSL   T1 " << r.t1 << "\n";
    } else {
      out << "GZSL  Acc_U " << r.acc_u << "  Acc_S " << r.acc_s << "  Acc_H " << r.acc_h << "\n";
    }
    for (const auto& w : r.warnings) out << "warning: " << w << "\n";
  }
  json metrics;
  metrics["checkpoint"] = fs::path(a.ckpt).lexically_normal().string();
  metrics["config_hash"] = hex64(fnv1a64(ckpt.train_config.dump()));
  metrics["reports"] = reports;
  const fs::path path = a.out.empty() ? fs::path(a.ckpt) / "metrics.json" : fs::path(a.out);
  write_json_file(path, metrics);
  return kOk;
}

// ---- export-attention ----

struct ExportArgs {
  std::string ckpt;
  std::string data;
  std::vector<int> images{0};
  std::string out;
};

void add_export(CLI::App& app, ExportArgs& a) {
  auto* cmd = app.add_subcommand("export-attention", "Write per-attribute attention maps as PNGs");
  cmd->add_option("--ckpt", a.ckpt, "Checkpoint directory")->required();
  cmd->add_option("--data", a.data, "Dataset directory")->required();
  cmd->add_option("--images", a.images, "Sample indices")->delimiter(',');
  cmd->add_option("--out", a.out, "Output directory")->required();
}

int cmd_export(const ExportArgs& a, std::ostream& out) {
  const Checkpoint ckpt = open_checkpoint(a.ckpt);
  const Dataset d = open_dataset(a.data);
  check_compatible(ckpt.model, d);
  for (int idx : a.images) {
    if (idx < 0 || idx >= static_cast<int>(d.samples.size())) {
      throw UsageError("image index " + std::to_string(idx) + " out of range (dataset has " +
                       std::to_string(d.samples.size()) + " samples)");
    }
  }
  fs::create_directories(a.out);
  for (int idx : a.images) {
    const Sample& s = d.samples[static_cast<std::size_t>(idx)];
    const AttentionMaps maps = render_attention(ckpt.model, s.image);
    char stem[32];
    std::snprintf(stem, sizeof stem, "image_%06d", idx);
    for (std::size_t j = 0; j < maps.channels.size(); ++j) {
      char name[64];
      std::snprintf(name, sizeof name, "%s_attr%02zu.png", stem, j);
      write_png_gray(fs::path(a.out) / name, maps.channels[j], maps.width, maps.height);
    }
    json sidecar;
    sidecar["image"] = idx;
    sidecar["label"] = s.label;
    sidecar["peaks"] = maps.peaks;
    write_json_file(fs::path(a.out) / (std::string(stem) + "_peaks.json"), sidecar);
  }
  out << "wrote attention maps for " << a.images.size() << " image(s) to " << a.out << "\n";
  return kOk;
}

}  // namespace

int thread_count_from_env() {
  const char* v = std::getenv("COAR_ZSL_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) return 1;
  return static_cast<int>(std::min(n, 256L));
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Zero-shot learning with contrastive attribute representations", "coar_zsl"};
  app.require_subcommand(1);
  SynthArgs synth;
  TrainArgs train_args;
  EvalArgs eval_args;
  ExportArgs export_args;
  add_synth(app, synth);
  add_train(app, train_args);
  add_eval(app, eval_args);
  add_export(app, export_args);

  std::vector<const char*> argv;
  for (const auto& s : args) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (app.got_subcommand("synth")) return cmd_synth(synth, out);
    if (app.got_subcommand("train")) return cmd_train(train_args, out);
    if (app.got_subcommand("eval")) return cmd_eval(eval_args, out);
    if (app.got_subcommand("export-attention")) return cmd_export(export_args, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "fatal: " << e.what() << "\n";
    return 1;
  }
  return kUsage;
}

}  // namespace coar::cli
