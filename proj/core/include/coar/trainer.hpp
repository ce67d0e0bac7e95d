#pragma once

// Episodic SGD with momentum over the full objective.
//
// Update rule per parameter: g += wd * theta (weights only), v = mu * v + g,
// theta -= lr * v, lr = base_lr * factor^floor(epoch / decay_every).

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coar/dataset.hpp"
#include "coar/episode.hpp"
#include "coar/losses.hpp"
#include "coar/model.hpp"

namespace coar {

struct TrainConfig {
  int epochs = 20;
  int episodes_per_epoch = 0;  // 0: ceil(seen training samples / batch)
  int n_way = 16;
  int k_shot = 2;
  double base_lr = 0.001;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int lr_decay_every = 10;
  double lr_decay_factor = 0.5;
  std::uint64_t seed = 1;
  LossConfig loss;
  /// When set, t_peak is replaced before training by this quantile of the
  /// raw attention peaks of the initial model over a warm-up sample.
  std::optional<double> t_peak_quantile = 0.9;
  int calibration_images = 64;
  bool freeze_backbone = false;
  ModelConfig model;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& config);
/// Missing keys keep their defaults; unknown keys throw std::invalid_argument.
TrainConfig train_config_from_json(const nlohmann::json& j);

double lr_at(int epoch, const TrainConfig& config);
int resolve_episodes_per_epoch(const TrainConfig& config, const Dataset& dataset);

/// Raised when the objective turns non-finite; what() lists the loss parts.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& msg, LossParts parts) : std::runtime_error(msg), parts(parts) {}
  LossParts parts;
};

struct TrainState {
  Model model;
  std::map<std::string, Tensor> velocity;
  int epoch = 0;
  long step = 0;
  double t_peak = 0.0;
  Rng rng;
  std::vector<StepRecord> history;
};

/// Fresh model and optimizer state, including t_peak calibration.
TrainState init_train_state(const TrainConfig& config, const Dataset& dataset);
TrainState state_from_checkpoint(const Checkpoint& ckpt);
Checkpoint checkpoint_from_state(const TrainState& state, const TrainConfig& config);

/// Quantile (nearest rank) of all raw per-channel attention maxima over
/// `images` evaluated with the current backbone.
double calibrate_t_peak(const BackboneParams& backbone, const Dataset& dataset, std::span<const int> images,
                        double quantile);

/// Everything the objective needs for one batch, detached from the Dataset.
struct BatchInputs {
  std::vector<const Tensor*> images;
  std::vector<int> labels;     // rows of class_semantics
  Tensor class_semantics;      // classes the prototype net sees (seen classes)
  Tensor attribute_semantics;  // K x K
  Tensor targets;              // B x K semantic-loss targets
};

BatchInputs make_batch_inputs(const Dataset& dataset, const EpisodeBatch& episode);

struct Objective {
  ag::Var total;
  LossParts parts;
  int eligible = 0;
};

/// Builds the weighted objective on the binders' graph. The binders may be
/// the same object; backbone parameters go through `backbone`, prototype net
/// parameters through `prototypes`.
Objective build_objective(ag::ParamBinder& backbone, ag::ParamBinder& prototypes, const Model& model,
                          const BatchInputs& batch, const LossConfig& loss, double t_peak);

/// g += weight_decay * theta; v = momentum * v + g; theta -= lr * v.
void sgd_momentum_update(Tensor& theta, Tensor& velocity, const Tensor& grad, double lr, double momentum,
                         double weight_decay);

/// One forward/backward/update on `episode`, at learning rate `lr`.
StepRecord train_step(TrainState& state, const Dataset& dataset, const EpisodeBatch& episode, const TrainConfig& config,
                      double lr);

struct TrainOptions {
  std::optional<std::filesystem::path> run_dir;  // nothing written when empty
  std::optional<std::filesystem::path> resume_from;
  /// Stop after this many completed epochs (for interrupted-run tests).
  std::optional<int> stop_after_epoch;
  std::function<void(const StepRecord&)> on_step;
};

/// Runs the remaining epochs. With a run dir: writes config.json, appends to
/// log.jsonl and writes ckpt_epoch_<n>/ after every epoch (ckpt_epoch_0 holds
/// the initial state).
TrainState train(const TrainConfig& config, const Dataset& dataset, const TrainOptions& options = {});

}  // namespace coar
