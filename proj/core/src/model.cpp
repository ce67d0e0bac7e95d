#include "coar/model.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "coar/rng.hpp"
#include "coar/tensor_io.hpp"

namespace coar {

using nlohmann::json;

json to_json(const ModelConfig& c) {
  json j;
  j["backbone"] = to_string(c.backbone);
  j["cnn_channels"] = c.cnn.channels;
  j["vit_patch_size"] = c.vit.patch_size;
  j["vit_dim"] = c.vit.dim;
  j["vit_heads"] = c.vit.heads;
  j["vit_depth"] = c.vit.depth;
  j["vit_mlp_hidden"] = c.vit.mlp_hidden;
  j["hidden_size"] = c.hidden_size;
  j["variant"] = to_string(c.variant);
  j["class_norm"] = c.class_norm;
  return j;
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.backbone = parse_backbone_kind(j.at("backbone").get<std::string>());
  c.cnn.channels = j.at("cnn_channels").get<std::array<int, 4>>();
  c.vit.patch_size = j.at("vit_patch_size").get<int>();
  c.vit.dim = j.at("vit_dim").get<int>();
  c.vit.heads = j.at("vit_heads").get<int>();
  c.vit.depth = j.at("vit_depth").get<int>();
  c.vit.mlp_hidden = j.at("vit_mlp_hidden").get<int>();
  c.hidden_size = j.at("hidden_size").get<int>();
  c.variant = parse_prototype_variant(j.at("variant").get<std::string>());
  c.class_norm = j.at("class_norm").get<bool>();
  return c;
}

Model Model::init(const ModelConfig& config, int num_attributes, int image_size, int channels, std::uint64_t seed) {
  Model m;
  m.config = config;
  m.seed = seed;
  m.config.cnn.num_attributes = m.config.vit.num_attributes = num_attributes;
  m.config.cnn.image_size = m.config.vit.image_size = image_size;
  m.config.cnn.in_channels = m.config.vit.in_channels = channels;

  Rng backbone_rng(derive_seed(seed, "backbone-init"));
  m.backbone.kind = config.backbone;
  if (config.backbone == BackboneKind::Cnn) {
    m.backbone.cnn = CnnParams::init(m.config.cnn, backbone_rng);
  } else {
    m.backbone.vit = VitParams::init(m.config.vit, backbone_rng);
  }
  Rng proto_rng(derive_seed(seed, "prototype-init"));
  PrototypeNetConfig pc;
  pc.num_attributes = num_attributes;
  pc.hidden_size = config.hidden_size;
  pc.output_dim = m.backbone.feature_dim();
  pc.variant = config.variant;
  pc.class_norm = config.class_norm;
  m.prototypes = PrototypeNetParams::init(pc, proto_rng);
  return m;
}

ParamList Model::params() {
  ParamList list;
  backbone.collect(list);
  prototypes.collect(list);
  return list;
}

json to_json(const StepRecord& r) {
  return json{{"step", r.step}, {"epoch", r.epoch}, {"L_cls", r.cls},   {"L_attp", r.attp},       {"L_attf", r.attf},
              {"L_sem", r.sem}, {"total", r.total}, {"lr", r.lr},       {"eligible", r.eligible}};
}

StepRecord step_record_from_json(const json& j) {
  StepRecord r;
  r.step = j.at("step").get<long>();
  r.epoch = j.at("epoch").get<int>();
  r.cls = j.at("L_cls").get<double>();
  r.attp = j.at("L_attp").get<double>();
  r.attf = j.at("L_attf").get<double>();
  r.sem = j.at("L_sem").get<double>();
  r.total = j.at("total").get<double>();
  r.lr = j.at("lr").get<double>();
  r.eligible = j.value("eligible", 0);
  return r;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  out.flush();
  if (!out) throw CheckpointError("write failed for " + path.string());
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  // write next to the target and swap in, so a failed write never leaves a
  // half-populated checkpoint under the final name
  fs::path tmp = dir;
  tmp += ".partial";
  fs::remove_all(tmp);
  fs::create_directories(tmp / "params");
  fs::create_directories(tmp / "momentum");

  Model& model = const_cast<Model&>(ckpt.model);
  json names = json::array();
  for (const auto& p : model.params()) {
    write_tensor(tmp / "params" / (p.name + ".coar"), *p.value);
    names.push_back(p.name);
  }
  for (const auto& [name, v] : ckpt.momentum) write_tensor(tmp / "momentum" / (name + ".coar"), v);

  json meta;
  meta["format_version"] = 1;
  meta["model"] = to_json(model.config);
  meta["num_attributes"] = model.num_attributes();
  meta["image_size"] = model.backbone.image_size();
  meta["channels"] = model.backbone.in_channels();
  meta["hidden_size"] = model.config.hidden_size;
  meta["variant"] = to_string(model.config.variant);
  meta["init"] = kInitDescriptor;
  meta["seed"] = model.seed;
  meta["epoch"] = ckpt.epoch;
  meta["step"] = ckpt.step;
  meta["t_peak"] = ckpt.t_peak;
  meta["rng_state"] = ckpt.rng_state;
  meta["train_config"] = ckpt.train_config;
  meta["params"] = names;
  json history = json::array();
  for (const auto& r : ckpt.history) history.push_back(to_json(r));
  meta["history"] = std::move(history);
  write_text(tmp / "meta.json", meta.dump(2) + "\n");

  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const fs::path meta_path = dir / "meta.json";
  std::ifstream in(meta_path);
  if (!in) throw CheckpointError("no checkpoint at " + dir.string());
  json meta;
  try {
    meta = json::parse(in);
  } catch (const json::exception& e) {
    throw CheckpointError("unreadable " + meta_path.string() + ": " + e.what());
  }
  Checkpoint ckpt;
  try {
    const ModelConfig config = model_config_from_json(meta.at("model"));
    ckpt.model = Model::init(config, meta.at("num_attributes").get<int>(), meta.at("image_size").get<int>(),
                             meta.at("channels").get<int>(), meta.at("seed").get<std::uint64_t>());
    ckpt.epoch = meta.at("epoch").get<int>();
    ckpt.step = meta.at("step").get<long>();
    ckpt.t_peak = meta.at("t_peak").get<double>();
    ckpt.rng_state = meta.at("rng_state").get<std::string>();
    ckpt.train_config = meta.value("train_config", json::object());
    for (const auto& r : meta.at("history")) ckpt.history.push_back(step_record_from_json(r));
  } catch (const json::exception& e) {
    throw CheckpointError("bad checkpoint metadata in " + meta_path.string() + ": " + e.what());
  }

  for (auto& p : ckpt.model.params()) {
    Tensor t = read_tensor(dir / "params" / (p.name + ".coar"));
    if (t.shape() != p.value->shape()) {
      throw CheckpointError("parameter " + p.name + " has shape " + shape_string(t.shape()) + ", model expects " +
                            shape_string(p.value->shape()));
    }
    *p.value = std::move(t);
    const fs::path mom = dir / "momentum" / (p.name + ".coar");
    if (fs::exists(mom)) ckpt.momentum.emplace(p.name, read_tensor(mom));
  }
  return ckpt;
}

}  // namespace coar
