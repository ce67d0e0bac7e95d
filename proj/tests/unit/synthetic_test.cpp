#include <gtest/gtest.h>

#include <set>

#include "coar/synthetic.hpp"
#include "oracles.hpp"

namespace coar {
namespace {

std::set<int> active(const Dataset& d, int c) {
  std::set<int> s;
  for (int j = 0; j < d.num_attributes; ++j) {
    if (d.semantics.class_semantics.at(c, j) > 0) s.insert(j);
  }
  return s;
}

TEST(Synthetic, TinySpecCounts) {
  SynthSpec spec;
  spec.n_seen = 2;
  spec.n_unseen = 1;
  spec.num_attributes = 4;
  spec.images_per_class = 1;
  spec.noise_std = 0;
  spec.seed = 7;
  const Dataset d = generate_synthetic(spec);
  EXPECT_EQ(d.samples.size(), 3u);
  EXPECT_EQ(d.num_classes, 3);
  std::set<std::set<int>> rows;
  for (int c = 0; c < 3; ++c) rows.insert(active(d, c));
  EXPECT_EQ(rows.size(), 3u);
}

TEST(Synthetic, SameSeedIsBitIdentical) {
  SynthSpec spec;
  spec.n_seen = 2;
  spec.n_unseen = 1;
  spec.num_attributes = 4;
  spec.images_per_class = 3;
  spec.seed = 7;
  const Dataset a = generate_synthetic(spec);
  const Dataset b = generate_synthetic(spec);
  ASSERT_EQ(a.samples.size(), b.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    EXPECT_EQ(a.samples[i].image, b.samples[i].image);
    EXPECT_EQ(a.samples[i].label, b.samples[i].label);
  }
  EXPECT_EQ(a.semantics.class_semantics, b.semantics.class_semantics);
  spec.seed = 8;
  EXPECT_NE(generate_synthetic(spec).samples[0].image, a.samples[0].image);
}

// Decode every image of the reference dataset from pixels alone and compare
// the attribute set with the class semantics row.
TEST(Synthetic, GlyphDecoderRecoversClassSemantics) {
  SynthSpec spec;  // 20 seen, 5 unseen, K = 12, 30 per class, 64 px, noise 0.05, seed 1
  const Dataset d = generate_synthetic(spec);
  ASSERT_EQ(d.samples.size(), 750u);
  std::vector<std::vector<int>> cells_of_class(static_cast<std::size_t>(d.num_classes));
  for (const Sample& s : d.samples) {
    const std::vector<int> cells = oracle::decode_glyph_cells(s.image, d.num_attributes);
    std::set<int> decoded;
    for (int a : cells) {
      if (a >= 0) {
        EXPECT_TRUE(decoded.insert(a).second) << "attribute drawn twice";
      }
    }
    ASSERT_EQ(decoded, active(d, s.label)) << "label " << s.label;
    auto& ref = cells_of_class[static_cast<std::size_t>(s.label)];
    if (ref.empty()) ref = cells;
    EXPECT_EQ(ref, cells) << "glyph placement must be fixed per class";
  }
}

TEST(Synthetic, NoiselessRenderMatchesDecoder) {
  SynthSpec spec;
  spec.noise_std = 0;
  spec.images_per_class = 1;
  const Dataset d = generate_synthetic(spec);
  for (const Sample& s : d.samples) {
    const Tensor clean = render_class_image(*d.layout, s.label, d.image_size, d.channels);
    for (std::size_t i = 0; i < clean.size(); ++i) EXPECT_FLOAT_EQ(static_cast<float>(clean[i]), static_cast<float>(s.image[i]));
  }
}

TEST(Synthetic, UnseenSubsetsDifferFromSeen) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    SynthSpec spec;
    spec.images_per_class = 1;
    spec.num_attributes = 4 + static_cast<int>(seed % 6);
    spec.n_seen = 6;
    spec.n_unseen = 3;
    spec.image_size = 48;
    spec.seed = seed;
    const Dataset d = generate_synthetic(spec);
    std::set<std::set<int>> all;
    for (int c = 0; c < d.num_classes; ++c) {
      EXPECT_FALSE(active(d, c).empty());
      all.insert(active(d, c));
    }
    EXPECT_EQ(static_cast<int>(all.size()), d.num_classes);
  }
}

TEST(Synthetic, SplitsHoldOutSeenTestImages) {
  const Dataset d = generate_synthetic(SynthSpec{});
  EXPECT_EQ(d.sample_indices(Split::Train, true).size(), 20u * 24u);
  EXPECT_EQ(d.sample_indices(Split::Test, true).size(), 20u * 6u);
  EXPECT_EQ(d.sample_indices(Split::Test, false).size(), 5u * 30u);
  EXPECT_TRUE(d.sample_indices(Split::Train, false).empty());
}

TEST(Synthetic, PixelsAreInUnitRange) {
  SynthSpec spec;
  spec.images_per_class = 2;
  spec.noise_std = 0.5;
  for (const Sample& s : generate_synthetic(spec).samples) {
    for (double v : s.image.values()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Synthetic, RejectsImpossibleSpecs) {
  SynthSpec few;
  few.num_attributes = 2;
  EXPECT_THROW(generate_synthetic(few), SynthSpecError);
  SynthSpec exhausted;
  exhausted.num_attributes = 4;
  exhausted.n_seen = 14;
  exhausted.n_unseen = 2;  // 16 classes > 15 non-empty subsets
  EXPECT_THROW(generate_synthetic(exhausted), SynthSpecError);
  SynthSpec tiny;
  tiny.image_size = 16;  // 4x4 grid of 4 px cells
  EXPECT_THROW(generate_synthetic(tiny), SynthSpecError);
  SynthSpec one;
  one.n_seen = 1;
  one.n_unseen = 0;
  EXPECT_THROW(generate_synthetic(one), SynthSpecError);
}

}  // namespace
}  // namespace coar
