#include <gtest/gtest.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <tuple>

#include "coar/backbone.hpp"
#include "coar/evaluation.hpp"
#include "coar/synthetic.hpp"
#include "coar_cli/cli.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

namespace coar {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result cli(std::vector<std::string> args) {
  args.insert(args.begin(), "coar_zsl");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

json read_json(const fs::path& p) { return json::parse(fixture::read_file(p)); }

std::vector<std::uint8_t> read_png_gray(const fs::path& path, int& width, int& height) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) throw std::runtime_error(img.message);
  img.format = PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, px.data(), 0, nullptr)) throw std::runtime_error(img.message);
  width = static_cast<int>(img.width);
  height = static_cast<int>(img.height);
  return px;
}

// Half-pixel-centre bilinear sample of a gh x gw plane, edges clamped.
double bilinear(const std::vector<double>& plane, int gh, int gw, int H, int W, int y, int x) {
  auto coord = [](int o, int in, int out) {
    const double s = std::clamp((o + 0.5) * in / out - 0.5, 0.0, in - 1.0);
    const int lo = static_cast<int>(s);
    return std::tuple{lo, std::min(lo + 1, in - 1), s - lo};
  };
  const auto [y0, y1, ty] = coord(y, gh, H);
  const auto [x0, x1, tx] = coord(x, gw, W);
  auto at = [&](int a, int b) { return plane[static_cast<std::size_t>(a * gw + b)]; };
  return (1 - ty) * ((1 - tx) * at(y0, x0) + tx * at(y0, x1)) + ty * ((1 - tx) * at(y1, x0) + tx * at(y1, x1));
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fixture::scratch_dir("cli");
    save_dataset(fixture::tiny_dataset(), root_ / "data");
    json cfg = to_json(fixture::tiny_config(2));
    std::ofstream(root_ / "tiny.json") << cfg.dump(2);
    const Result r = cli({"train", "--data", (root_ / "data").string(), "--out", (root_ / "run").string(), "--config",
                          (root_ / "tiny.json").string()});
    ASSERT_EQ(r.code, 0) << r.err;
  }

  static fs::path root_;
};

fs::path CliTest::root_;

TEST_F(CliTest, SynthWritesManifestAndAllSamples) {
  const fs::path out = root_ / "synth_default";
  const Result r = cli({"synth", "--seen", "20", "--unseen", "5", "--K", "12", "--per-class", "30", "--seed", "1",
                        "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(out / "manifest.json"));
  int tensors = 0;
  for (const auto& e : fs::directory_iterator(out / "samples")) tensors += e.path().extension() == ".coar";
  EXPECT_EQ(tensors, 750);
  EXPECT_EQ(read_json(out / "manifest.json").at("samples").size(), 750u);
  EXPECT_NE(r.out.find("25"), std::string::npos);
}

TEST_F(CliTest, SynthIsDeterministic) {
  const std::vector<std::string> flags = {"--seen", "3", "--unseen", "2", "--K", "5", "--per-class", "3",
                                          "--image-size", "24", "--seed", "9"};
  auto with_out = [&](const fs::path& p) {
    std::vector<std::string> a = {"synth"};
    a.insert(a.end(), flags.begin(), flags.end());
    a.insert(a.end(), {"--out", p.string()});
    return a;
  };
  ASSERT_EQ(cli(with_out(root_ / "s1")).code, 0);
  ASSERT_EQ(cli(with_out(root_ / "s2")).code, 0);
  EXPECT_EQ(fixture::read_file(root_ / "s1" / "manifest.json"), fixture::read_file(root_ / "s2" / "manifest.json"));
  EXPECT_EQ(fixture::read_file(root_ / "s1" / "samples" / "000004.coar"),
            fixture::read_file(root_ / "s2" / "samples" / "000004.coar"));
}

TEST_F(CliTest, SynthRejectsExhaustedSubsets) {
  const Result r = cli({"synth", "--K", "2", "--seen", "20", "--out", (root_ / "bad").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(r.err.empty());
}

TEST_F(CliTest, TrainWritesCheckpointsAndLog) {
  for (int e = 1; e <= 2; ++e) EXPECT_TRUE(fs::exists(root_ / "run" / ("ckpt_epoch_" + std::to_string(e))));
  EXPECT_TRUE(fs::exists(root_ / "run" / "config.json"));
  std::ifstream log(root_ / "run" / "log.jsonl");
  int lines = 0;
  for (std::string l; std::getline(log, l);) {
    const json j = json::parse(l);
    EXPECT_TRUE(j.contains("L_cls") && j.contains("L_attp") && j.contains("L_attf") && j.contains("L_sem"));
    ++lines;
  }
  EXPECT_EQ(lines, 4);
}

TEST_F(CliTest, TrainFlagsOverrideConfigFile) {
  const fs::path run = root_ / "override";
  const Result r = cli({"train", "--data", (root_ / "data").string(), "--out", run.string(), "--config",
                        (root_ / "tiny.json").string(), "--epochs", "0", "--lambda-attp", "0", "--lambda-attf", "0",
                        "--lambda-sem", "0", "--no-hard-selection"});
  ASSERT_EQ(r.code, 0) << r.err;
  const json cfg = read_json(run / "config.json");
  EXPECT_EQ(cfg.at("epochs"), 0);
  EXPECT_EQ(cfg.at("lambda_attf"), 0.0);
  EXPECT_EQ(cfg.at("hard_selection"), false);
  EXPECT_EQ(cfg.at("hidden_size"), 16);
  EXPECT_TRUE(fs::exists(run / "ckpt_epoch_0"));
}

TEST_F(CliTest, TrainUsageErrors) {
  EXPECT_EQ(cli({"train", "--data", (root_ / "missing").string(), "--out", (root_ / "x").string()}).code, 2);
  std::ofstream(root_ / "unknown.json") << R"({"epochs": 1, "learning_rate": 0.1})";
  EXPECT_EQ(cli({"train", "--data", (root_ / "data").string(), "--out", (root_ / "x").string(), "--config",
                 (root_ / "unknown.json").string()})
                .code,
            2);
  EXPECT_EQ(cli({"train", "--data", (root_ / "data").string(), "--out", (root_ / "x").string(), "--t-peak", "often"}).code,
            2);
  EXPECT_EQ(cli({"frobnicate"}).code, 2);
  EXPECT_EQ(cli({"--help"}).code, 0);
}

TEST_F(CliTest, HugeLearningRateIsNumericalFailure) {
  const Result r = cli({"train", "--data", (root_ / "data").string(), "--out", (root_ / "diverge").string(), "--config",
                        (root_ / "tiny.json").string(), "--lr", "1e300", "--epochs", "3"});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("L_cls"), std::string::npos);
}

TEST_F(CliTest, EvalModes) {
  const fs::path ckpt = root_ / "run" / "ckpt_epoch_2";
  const std::string data = (root_ / "data").string();
  Result r = cli({"eval", "--ckpt", ckpt.string(), "--data", data, "--mode", "zsl"});
  ASSERT_EQ(r.code, 0) << r.err;
  json m = read_json(ckpt / "metrics.json");
  ASSERT_EQ(m.at("reports").size(), 1u);
  EXPECT_TRUE(m.at("reports")[0].contains("T1"));

  r = cli({"eval", "--ckpt", ckpt.string(), "--data", data, "--mode", "gzsl", "--out", (root_ / "g.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const json g = read_json(root_ / "g.json").at("reports")[0];
  const double u = g.at("Acc_U"), s = g.at("Acc_S"), h = g.at("Acc_H");
  EXPECT_NEAR(h, u + s > 0 ? 2 * u * s / (u + s) : 0.0, 1e-9);

  r = cli({"eval", "--ckpt", ckpt.string(), "--data", data, "--mode", "both", "--out", (root_ / "b.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const json both = read_json(root_ / "b.json").at("reports");
  ASSERT_EQ(both.size(), 2u);
  EXPECT_NE(r.out.find("T1"), std::string::npos);
  EXPECT_NE(r.out.find("Acc_H"), std::string::npos);

  // recompute T1 against unseen-only prototypes
  const Checkpoint c = load_checkpoint(ckpt);
  const Dataset d = load_dataset(root_ / "data");
  const Tensor cp = build_eval_prototypes(c.model.prototypes, d.semantics, d.unseen_classes);
  const std::vector<int> idx = d.sample_indices(Split::Test, false);
  std::vector<int> truth, pred;
  for (int i : idx) {
    const Sample& smp = d.samples[static_cast<std::size_t>(i)];
    const FeatureBundle fb = extract(c.model.backbone, smp.image);
    truth.push_back(smp.label);
    pred.push_back(d.unseen_classes[static_cast<std::size_t>(predict(fb.class_feature.values(), cp))]);
  }
  EXPECT_NEAR(both[0].at("T1").get<double>(), per_class_accuracy(truth, pred, d.unseen_classes), 1e-12);

  EXPECT_EQ(cli({"eval", "--ckpt", ckpt.string(), "--data", data, "--mode", "top5"}).code, 2);
  EXPECT_EQ(cli({"eval", "--ckpt", (root_ / "nope").string(), "--data", data}).code, 2);
}

TEST_F(CliTest, EvalRejectsIncompatibleDataset) {
  SynthSpec spec;
  spec.n_seen = 4;
  spec.n_unseen = 2;
  spec.num_attributes = 5;
  spec.images_per_class = 4;
  spec.image_size = 24;
  save_dataset(generate_synthetic(spec), root_ / "other");
  const Result r = cli({"eval", "--ckpt", (root_ / "run" / "ckpt_epoch_2").string(), "--data", (root_ / "other").string()});
  EXPECT_EQ(r.code, 2);
}

TEST_F(CliTest, ExportAttentionMatchesIndependentRender) {
  const fs::path ckpt = root_ / "run" / "ckpt_epoch_2";
  const fs::path out = root_ / "maps";
  const Result r = cli({"export-attention", "--ckpt", ckpt.string(), "--data", (root_ / "data").string(), "--images", "3",
                        "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  int pngs = 0, jsons = 0;
  for (const auto& e : fs::directory_iterator(out)) {
    pngs += e.path().extension() == ".png";
    jsons += e.path().extension() == ".json";
  }
  EXPECT_EQ(pngs, 6);
  EXPECT_EQ(jsons, 1);

  const Checkpoint c = load_checkpoint(ckpt);
  const Dataset d = load_dataset(root_ / "data");
  const Tensor am = extract(c.model.backbone, d.samples[3].image).attention;
  const int gh = am.dim(0), gw = am.dim(1), K = am.dim(2);
  const json side = read_json(out / "image_000003_peaks.json");
  EXPECT_EQ(side.at("label"), d.samples[3].label);
  for (int j = 0; j < K; ++j) {
    double peak = -1e300;
    for (int p = 0; p < gh * gw; ++p) peak = std::max(peak, am.at(p, j));
    EXPECT_NEAR(side.at("peaks")[static_cast<std::size_t>(j)].get<double>(), peak, 1e-12);

    const oracle::Vec soft = oracle::softmax_channel(am, j);
    std::vector<double> plane(24 * 24);
    for (int y = 0; y < 24; ++y) {
      for (int x = 0; x < 24; ++x) plane[static_cast<std::size_t>(y * 24 + x)] = bilinear(soft, gh, gw, 24, 24, y, x);
    }
    const auto [lo, hi] = std::minmax_element(plane.begin(), plane.end());
    char name[64];
    std::snprintf(name, sizeof name, "image_000003_attr%02d.png", j);
    int w = 0, h = 0;
    const auto px = read_png_gray(out / name, w, h);
    ASSERT_EQ(w, 24);
    ASSERT_EQ(h, 24);
    for (std::size_t p = 0; p < px.size(); ++p) {
      const double expect = *hi > *lo ? 255.0 * (plane[p] - *lo) / (*hi - *lo) : 0.0;
      EXPECT_NEAR(px[p], expect, 0.5 + 1e-6) << "attr " << j << " pixel " << p;
    }
  }
}

TEST_F(CliTest, ExportAttentionRejectsBadIndex) {
  const Result r = cli({"export-attention", "--ckpt", (root_ / "run" / "ckpt_epoch_2").string(), "--data",
                        (root_ / "data").string(), "--images", "100000", "--out", (root_ / "maps_bad").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("out of range"), std::string::npos);
}

}  // namespace
}  // namespace coar
