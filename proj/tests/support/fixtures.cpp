#include "fixtures.hpp"

#include <fstream>
#include <sstream>

#include "coar/synthetic.hpp"

namespace coar::fixture {

Dataset tiny_dataset(std::uint64_t seed) {
  SynthSpec spec;
  spec.n_seen = 4;
  spec.n_unseen = 2;
  spec.num_attributes = 6;
  spec.images_per_class = 8;
  spec.image_size = 24;
  spec.seed = seed;
  return generate_synthetic(spec);
}

TrainConfig tiny_config(int epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.episodes_per_epoch = 2;
  c.n_way = 4;
  c.k_shot = 2;
  c.base_lr = 0.01;
  c.lr_decay_every = 2;
  c.calibration_images = 8;
  c.model.cnn.channels = {4, 6, 8, 8};
  c.model.hidden_size = 16;
  return c;
}

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("coar_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace coar::fixture
