#include <benchmark/benchmark.h>

#include <random>

#include "coar/backbone.hpp"
#include "coar/episode.hpp"
#include "coar/ops.hpp"
#include "coar/prototype_net.hpp"
#include "coar/synthetic.hpp"
#include "coar/trainer.hpp"

namespace {

using namespace coar;

Tensor random_tensor(std::vector<int> shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = u(rng);
  return t;
}

// Args: side, input channels, output channels.
void BM_Conv3x3Forward(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const int cin = static_cast<int>(state.range(1));
  const int cout = static_cast<int>(state.range(2));
  const Tensor x = random_tensor({side, side, cin}, 1);
  const Tensor w = random_tensor({9 * cin, cout}, 2);
  const Tensor b = random_tensor({cout}, 3);
  for (auto _ : state) {
    ag::Graph g;
    benchmark::DoNotOptimize(ag::conv3x3(g.constant(x), g.constant(w), g.constant(b)).value().data());
  }
  state.SetItemsProcessed(state.iterations() * side * side * 9 * cin * cout);
}
BENCHMARK(BM_Conv3x3Forward)->Args({64, 3, 16})->Args({32, 16, 32})->Args({16, 32, 48})->Args({8, 48, 64});

void BM_Conv3x3ForwardBackward(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const int cin = static_cast<int>(state.range(1));
  const int cout = static_cast<int>(state.range(2));
  Tensor x = random_tensor({side, side, cin}, 1);
  Tensor w = random_tensor({9 * cin, cout}, 2);
  Tensor b = random_tensor({cout}, 3);
  for (auto _ : state) {
    ag::Graph g;
    ag::Var y = ag::sum(ag::conv3x3(g.external(x, true), g.external(w, true), g.external(b, true)));
    g.backward(y);
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(state.iterations() * side * side * 9 * cin * cout);
}
BENCHMARK(BM_Conv3x3ForwardBackward)->Args({64, 3, 16})->Args({32, 16, 32})->Args({8, 48, 64});

void BM_ExtractCnn(benchmark::State& state) {
  CnnConfig cfg;
  Rng rng(1);
  const CnnParams params = CnnParams::init(cfg, rng);
  const Tensor image = random_tensor({cfg.image_size, cfg.image_size, 3}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(extract_cnn(params, image).class_feature.data());
}
BENCHMARK(BM_ExtractCnn);

void BM_ExtractVit(benchmark::State& state) {
  VitConfig cfg;
  cfg.image_size = 64;
  Rng rng(1);
  const VitParams params = VitParams::init(cfg, rng);
  const Tensor image = random_tensor({64, 64, 3}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(extract_vit(params, image).class_feature.data());
}
BENCHMARK(BM_ExtractVit);

// Args: classes, hidden width.
void BM_PrototypeNetForward(benchmark::State& state) {
  PrototypeNetConfig cfg;
  cfg.num_attributes = 12;
  cfg.hidden_size = static_cast<int>(state.range(1));
  cfg.output_dim = 64;
  Rng rng(1);
  const PrototypeNetParams params = PrototypeNetParams::init(cfg, rng);
  const Tensor cs = random_tensor({static_cast<int>(state.range(0)), 12}, 5);
  Tensor eye({12, 12});
  for (int k = 0; k < 12; ++k) eye.at(k, k) = 1;
  for (auto _ : state) benchmark::DoNotOptimize(forward_prototypes(params, cs, eye).class_prototypes.data());
}
BENCHMARK(BM_PrototypeNetForward)->Args({25, 256})->Args({200, 256});

void BM_TrainStep(benchmark::State& state) {
  SynthSpec spec;
  spec.images_per_class = 10;
  const Dataset d = generate_synthetic(spec);
  TrainConfig c;
  c.calibration_images = 16;
  TrainState s = init_train_state(c, d);
  for (auto _ : state) {
    const EpisodeBatch e = sample_episode(d, c.n_way, c.k_shot, s.rng);
    benchmark::DoNotOptimize(train_step(s, d, e, c, 1e-4).total);
  }
  state.SetItemsProcessed(state.iterations() * c.n_way * c.k_shot);
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
