#pragma once

// Backbone + prototype network, and the on-disk checkpoint layout:
//
//   <dir>/params/<name>.coar     one tensor per trainable parameter
//   <dir>/momentum/<name>.coar   optimizer velocity, same names
//   <dir>/meta.json              model config, counters, rng state, history

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coar/backbone.hpp"
#include "coar/prototype_net.hpp"

namespace coar {

struct ModelConfig {
  BackboneKind backbone = BackboneKind::Cnn;
  CnnConfig cnn;
  VitConfig vit;
  int hidden_size = 256;
  PrototypeVariant variant = PrototypeVariant::SharedBranched;
  bool class_norm = true;
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct Model {
  ModelConfig config;
  BackboneParams backbone;
  PrototypeNetParams prototypes;
  std::uint64_t seed = 0;

  /// Backbone and prototype net draw from independent seed streams.
  static Model init(const ModelConfig& config, int num_attributes, int image_size, int channels, std::uint64_t seed);

  ParamList params();
  int num_attributes() const { return backbone.num_attributes(); }
};

/// One line of the training log.
struct StepRecord {
  long step = 0;
  int epoch = 0;
  double cls = 0.0;
  double attp = 0.0;
  double attf = 0.0;
  double sem = 0.0;
  double total = 0.0;
  double lr = 0.0;
  int eligible = 0;
};

nlohmann::json to_json(const StepRecord& r);
StepRecord step_record_from_json(const nlohmann::json& j);

struct Checkpoint {
  Model model;
  std::map<std::string, Tensor> momentum;
  int epoch = 0;  // completed epochs
  long step = 0;  // completed steps
  double t_peak = 0.0;
  std::string rng_state;
  nlohmann::json train_config;
  std::vector<StepRecord> history;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace coar
