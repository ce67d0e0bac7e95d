#include "coar/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "coar/ops.hpp"
#include "coar/semantics.hpp"

namespace coar {

using nlohmann::json;

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("train config: " + msg); };
  if (epochs < 0) fail("epochs must be non-negative");
  if (episodes_per_epoch < 0) fail("episodes_per_epoch must be non-negative");
  if (n_way < 1 || k_shot < 1) fail("n_way and k_shot must be positive");
  if (!(base_lr >= 0.0)) fail("base_lr must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be non-negative");
  if (lr_decay_every < 1) fail("lr_decay_every must be positive");
  if (!(lr_decay_factor > 0.0)) fail("lr_decay_factor must be positive");
  if (t_peak_quantile && !(*t_peak_quantile >= 0.0 && *t_peak_quantile <= 1.0)) fail("t_peak_quantile must lie in [0, 1]");
  if (calibration_images < 1) fail("calibration_images must be positive");
  if (model.hidden_size < 1) fail("hidden_size must be positive");
  loss.validate();
}

json to_json(const TrainConfig& c) {
  json j = to_json(c.model);
  j["epochs"] = c.epochs;
  j["episodes_per_epoch"] = c.episodes_per_epoch;
  j["n_way"] = c.n_way;
  j["k_shot"] = c.k_shot;
  j["base_lr"] = c.base_lr;
  j["momentum"] = c.momentum;
  j["weight_decay"] = c.weight_decay;
  j["lr_decay_every"] = c.lr_decay_every;
  j["lr_decay_factor"] = c.lr_decay_factor;
  j["seed"] = c.seed;
  j["alpha"] = c.loss.alpha;
  j["beta"] = c.loss.beta;
  j["tau"] = c.loss.tau;
  if (c.t_peak_quantile) {
    j["t_peak"] = "auto";
    j["t_peak_quantile"] = *c.t_peak_quantile;
  } else {
    j["t_peak"] = c.loss.t_peak;
  }
  j["t_hard"] = c.loss.t_hard;
  j["lambda_attp"] = c.loss.lambda_attp;
  j["lambda_attf"] = c.loss.lambda_attf;
  j["lambda_sem"] = c.loss.lambda_sem;
  j["hard_selection"] = c.loss.hard_selection;
  j["calibration_images"] = c.calibration_images;
  j["freeze_backbone"] = c.freeze_backbone;
  return j;
}

TrainConfig train_config_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  TrainConfig c;
  static const std::set<std::string> known = {
      "epochs",       "episodes_per_epoch", "n_way",          "k_shot",          "base_lr",        "momentum",
      "weight_decay", "lr_decay_every",     "lr_decay_factor", "seed",           "alpha",          "beta",
      "tau",          "t_peak",             "t_peak_quantile", "t_hard",         "lambda_attp",    "lambda_attf",
      "lambda_sem",   "hard_selection",     "calibration_images", "freeze_backbone", "backbone",   "cnn_channels",
      "vit_patch_size", "vit_dim",          "vit_heads",      "vit_depth",       "vit_mlp_hidden", "hidden_size",
      "variant",      "class_norm"};
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw std::invalid_argument("unknown config key '" + key + "'");
  }
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    };
    get("epochs", c.epochs);
    get("episodes_per_epoch", c.episodes_per_epoch);
    get("n_way", c.n_way);
    get("k_shot", c.k_shot);
    get("base_lr", c.base_lr);
    get("momentum", c.momentum);
    get("weight_decay", c.weight_decay);
    get("lr_decay_every", c.lr_decay_every);
    get("lr_decay_factor", c.lr_decay_factor);
    get("seed", c.seed);
    get("alpha", c.loss.alpha);
    get("beta", c.loss.beta);
    get("tau", c.loss.tau);
    get("t_hard", c.loss.t_hard);
    get("lambda_attp", c.loss.lambda_attp);
    get("lambda_attf", c.loss.lambda_attf);
    get("lambda_sem", c.loss.lambda_sem);
    get("hard_selection", c.loss.hard_selection);
    get("calibration_images", c.calibration_images);
    get("freeze_backbone", c.freeze_backbone);
    if (j.contains("t_peak")) {
      const json& t = j.at("t_peak");
      if (t.is_string()) {
        if (t.get<std::string>() != "auto") throw std::invalid_argument("t_peak must be a number or \"auto\"");
        c.t_peak_quantile = j.value("t_peak_quantile", 0.9);
      } else {
        c.loss.t_peak = t.get<double>();
        c.t_peak_quantile.reset();
      }
    } else if (j.contains("t_peak_quantile")) {
      c.t_peak_quantile = j.at("t_peak_quantile").get<double>();
    }
    if (j.contains("backbone")) c.model.backbone = parse_backbone_kind(j.at("backbone").get<std::string>());
    get("cnn_channels", c.model.cnn.channels);
    get("vit_patch_size", c.model.vit.patch_size);
    get("vit_dim", c.model.vit.dim);
    get("vit_heads", c.model.vit.heads);
    get("vit_depth", c.model.vit.depth);
    get("vit_mlp_hidden", c.model.vit.mlp_hidden);
    get("hidden_size", c.model.hidden_size);
    if (j.contains("variant")) c.model.variant = parse_prototype_variant(j.at("variant").get<std::string>());
    get("class_norm", c.model.class_norm);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("bad config value: ") + e.what());
  }
  return c;
}

double lr_at(int epoch, const TrainConfig& config) {
  if (epoch < 0) throw std::invalid_argument("negative epoch");
  return config.base_lr * std::pow(config.lr_decay_factor, epoch / config.lr_decay_every);
}

int resolve_episodes_per_epoch(const TrainConfig& config, const Dataset& dataset) {
  if (config.episodes_per_epoch > 0) return config.episodes_per_epoch;
  const int n = static_cast<int>(dataset.sample_indices(Split::Train, true).size());
  const int batch = config.n_way * config.k_shot;
  return std::max(1, (n + batch - 1) / batch);
}

double calibrate_t_peak(const BackboneParams& backbone, const Dataset& dataset, std::span<const int> images,
                        double quantile) {
  std::vector<double> peaks;
  for (int idx : images) {
    const FeatureBundle fb = extract(backbone, dataset.samples.at(static_cast<std::size_t>(idx)).image);
    const Tensor channel_peaks = attention_peaks(fb.attention);
    peaks.insert(peaks.end(), channel_peaks.values().begin(), channel_peaks.values().end());
  }
  if (peaks.empty()) throw std::invalid_argument("t_peak calibration needs at least one image");
  std::sort(peaks.begin(), peaks.end());
  const auto n = static_cast<double>(peaks.size());
  const auto rank = static_cast<std::size_t>(std::clamp(std::ceil(quantile * n) - 1.0, 0.0, n - 1.0));
  return peaks[rank];
}

TrainState init_train_state(const TrainConfig& config, const Dataset& dataset) {
  config.validate();
  TrainState s;
  s.model = Model::init(config.model, dataset.num_attributes, dataset.image_size, dataset.channels, config.seed);
  for (const auto& p : s.model.params()) s.velocity.emplace(p.name, Tensor(p.value->shape(), 0.0));
  s.rng.seed(derive_seed(config.seed, "episodes"));
  s.t_peak = config.loss.t_peak;
  if (config.t_peak_quantile) {
    std::vector<int> pool = dataset.sample_indices(Split::Train, true);
    Rng pick(derive_seed(config.seed, "calibration"));
    std::shuffle(pool.begin(), pool.end(), pick);
    pool.resize(std::min(pool.size(), static_cast<std::size_t>(config.calibration_images)));
    s.t_peak = calibrate_t_peak(s.model.backbone, dataset, pool, *config.t_peak_quantile);
  }
  return s;
}

TrainState state_from_checkpoint(const Checkpoint& ckpt) {
  TrainState s;
  s.model = ckpt.model;
  for (const auto& p : s.model.params()) {
    auto it = ckpt.momentum.find(p.name);
    s.velocity.emplace(p.name, it != ckpt.momentum.end() ? it->second : Tensor(p.value->shape(), 0.0));
  }
  s.epoch = ckpt.epoch;
  s.step = ckpt.step;
  s.t_peak = ckpt.t_peak;
  s.rng = deserialize_rng(ckpt.rng_state);
  s.history = ckpt.history;
  return s;
}

Checkpoint checkpoint_from_state(const TrainState& state, const TrainConfig& config) {
  Checkpoint c;
  c.model = state.model;
  c.momentum = state.velocity;
  c.epoch = state.epoch;
  c.step = state.step;
  c.t_peak = state.t_peak;
  c.rng_state = serialize_rng(state.rng);
  c.train_config = to_json(config);
  c.history = state.history;
  return c;
}

BatchInputs make_batch_inputs(const Dataset& dataset, const EpisodeBatch& episode) {
  const int B = episode.size();
  const int K = dataset.num_attributes;
  std::vector<int> local(static_cast<std::size_t>(dataset.num_classes), -1);
  for (std::size_t i = 0; i < dataset.seen_classes.size(); ++i) {
    local[static_cast<std::size_t>(dataset.seen_classes[i])] = static_cast<int>(i);
  }
  BatchInputs in;
  for (int b = 0; b < B; ++b) {
    const int label = episode.labels[static_cast<std::size_t>(b)];
    const int l = local.at(static_cast<std::size_t>(label));
    if (l < 0) throw std::invalid_argument("episode contains an unseen class");
    in.labels.push_back(l);
    in.images.push_back(&dataset.samples.at(static_cast<std::size_t>(episode.sample_indices[static_cast<std::size_t>(b)])).image);
  }
  in.class_semantics = dataset.semantics.class_rows(dataset.seen_classes);
  in.attribute_semantics = dataset.semantics.attribute_semantics;
  const Tensor targets_all = semantic_targets(dataset.semantics, dataset.seen_classes);
  in.targets = Tensor({B, K});
  for (int b = 0; b < B; ++b) {
    const auto src = targets_all.row(episode.labels[static_cast<std::size_t>(b)]);
    std::copy(src.begin(), src.end(), in.targets.row(b).begin());
  }
  return in;
}

Objective build_objective(ag::ParamBinder& backbone, ag::ParamBinder& prototypes, const Model& model,
                          const BatchInputs& batch, const LossConfig& lc, double t_peak) {
  const int B = static_cast<int>(batch.images.size());
  if (B < 1) throw std::invalid_argument("empty batch");
  const int K = batch.attribute_semantics.rows();
  ag::Graph& g = backbone.graph();
  const auto protos = ag::forward_prototypes(prototypes, model.prototypes, g.constant(batch.class_semantics),
                                             g.constant(batch.attribute_semantics));

  std::vector<ag::Var> cfs, afs, readouts;
  std::vector<int> eligible_rows, eligible_attrs;
  for (int b = 0; b < B; ++b) {
    const ag::FeatureVars fv = ag::extract(backbone, model.backbone, *batch.images[static_cast<std::size_t>(b)]);
    cfs.push_back(fv.class_feature);
    afs.push_back(fv.attribute_features);
    readouts.push_back(ag::semantic_readout(fv.attention_softmax));
    const Tensor peaks = attention_peaks(fv.attention.value());
    for (int j = 0; j < K; ++j) {
      if (peaks[static_cast<std::size_t>(j)] >= t_peak) {
        eligible_rows.push_back(b * K + j);
        eligible_attrs.push_back(j);
      }
    }
  }

  Objective obj;
  ag::Var cls = ag::classification_loss(ag::concat_rows(cfs), protos.class_prototypes, batch.labels, lc.alpha);
  ag::Var sem = ag::semantic_loss(ag::concat_rows(readouts), batch.targets);
  obj.total = add(cls, ag::scale(sem, lc.lambda_sem));
  obj.parts.cls = cls.value()[0];
  obj.parts.sem = sem.value()[0];
  obj.eligible = static_cast<int>(eligible_rows.size());
  if (!eligible_rows.empty()) {
    ag::Var feats = ag::gather_rows(ag::concat_rows(afs), eligible_rows);
    ag::Var attp = ag::attribute_prototype_loss(feats, eligible_attrs, protos.attribute_prototypes, lc.beta);
    ag::Var attf = ag::attribute_feature_loss(feats, eligible_attrs, lc.t_hard, lc.tau, lc.hard_selection);
    obj.parts.attp = attp.value()[0];
    obj.parts.attf = attf.value()[0];
    obj.total = add(obj.total, add(ag::scale(attp, lc.lambda_attp), ag::scale(attf, lc.lambda_attf)));
  }
  return obj;
}

void sgd_momentum_update(Tensor& theta, Tensor& velocity, const Tensor& grad, double lr, double momentum,
                         double weight_decay) {
  if (theta.size() != velocity.size() || theta.size() != grad.size()) throw ShapeError("optimizer state size mismatch");
  for (std::size_t k = 0; k < theta.size(); ++k) {
    velocity[k] = momentum * velocity[k] + (grad[k] + weight_decay * theta[k]);
    theta[k] -= lr * velocity[k];
  }
}

namespace {

std::string describe(const LossParts& parts) {
  return "L_cls=" + std::to_string(parts.cls) + " L_attp=" + std::to_string(parts.attp) +
         " L_attf=" + std::to_string(parts.attf) + " L_sem=" + std::to_string(parts.sem);
}

}  // namespace

StepRecord train_step(TrainState& state, const Dataset& dataset, const EpisodeBatch& episode, const TrainConfig& config,
                      double lr) {
  const BatchInputs batch = make_batch_inputs(dataset, episode);
  ag::Graph g;
  ag::ParamBinder bind_backbone(g, !config.freeze_backbone);
  ag::ParamBinder bind_proto(g, true);
  const Objective obj = build_objective(bind_backbone, bind_proto, state.model, batch, config.loss, state.t_peak);
  const LossParts& parts = obj.parts;
  const double total_value = obj.total.value()[0];
  if (!std::isfinite(total_value)) {
    throw NumericalError("non-finite loss at step " + std::to_string(state.step) + ": " + describe(parts), parts);
  }
  g.backward(obj.total);

  const int backbone_params = [&] {
    ParamList l;
    state.model.backbone.collect(l);
    return static_cast<int>(l.size());
  }();
  ParamList params = state.model.params();
  for (int i = 0; i < static_cast<int>(params.size()); ++i) {
    const NamedParam& p = params[static_cast<std::size_t>(i)];
    const bool is_backbone = i < backbone_params;
    if (is_backbone && config.freeze_backbone) continue;
    const Tensor grad = (is_backbone ? bind_backbone : bind_proto).grad(*p.value);
    sgd_momentum_update(*p.value, state.velocity.at(p.name), grad, lr, config.momentum,
                        p.decay ? config.weight_decay : 0.0);
    if (!p.value->all_finite()) {
      throw NumericalError(
          "non-finite parameter " + p.name + " after step " + std::to_string(state.step) + ": " + describe(parts), parts);
    }
  }

  StepRecord r;
  r.step = state.step;
  r.epoch = state.epoch;
  r.cls = parts.cls;
  r.attp = parts.attp;
  r.attf = parts.attf;
  r.sem = parts.sem;
  r.total = total_value;
  r.lr = lr;
  r.eligible = obj.eligible;
  ++state.step;
  state.history.push_back(r);
  return r;
}

namespace {

void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  out << j.dump(2) << "\n";
  if (!out.flush()) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace

TrainState train(const TrainConfig& config, const Dataset& dataset, const TrainOptions& options) {
  config.validate();
  if (dataset.sample_indices(Split::Train, true).empty()) throw std::invalid_argument("dataset has no seen training samples");

  TrainState state = options.resume_from ? state_from_checkpoint(load_checkpoint(*options.resume_from))
                                         : init_train_state(config, dataset);
  const int per_epoch = resolve_episodes_per_epoch(config, dataset);

  std::ofstream log;
  if (options.run_dir) {
    std::filesystem::create_directories(*options.run_dir);
    write_json(*options.run_dir / "config.json", to_json(config));
    // rewrite the log from the checkpoint's history so a resumed run's log
    // matches an uninterrupted one
    log.open(*options.run_dir / "log.jsonl", std::ios::trunc);
    for (const auto& r : state.history) log << to_json(r).dump() << "\n";
    if (config.epochs == 0) save_checkpoint(checkpoint_from_state(state, config), *options.run_dir / "ckpt_epoch_0");
  }

  while (state.epoch < config.epochs) {
    if (options.stop_after_epoch && state.epoch >= *options.stop_after_epoch) break;
    const double lr = lr_at(state.epoch, config);
    for (int e = 0; e < per_epoch; ++e) {
      const EpisodeBatch episode = sample_episode(dataset, config.n_way, config.k_shot, state.rng);
      const StepRecord r = train_step(state, dataset, episode, config, lr);
      if (log.is_open()) {
        log << to_json(r).dump() << "\n";
        if (!log.flush()) throw std::runtime_error("failed to append to log.jsonl");
      }
      if (options.on_step) options.on_step(r);
    }
    ++state.epoch;
    if (options.run_dir) {
      save_checkpoint(checkpoint_from_state(state, config),
                      *options.run_dir / ("ckpt_epoch_" + std::to_string(state.epoch)));
    }
  }
  return state;
}

}  // namespace coar
