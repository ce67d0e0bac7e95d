#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "coar/semantics.hpp"

namespace coar {
namespace {

TEST(Semantics, ModeNamesRoundTrip) {
  for (auto m : {AttributeSemanticsMode::OneHot, AttributeSemanticsMode::Random, AttributeSemanticsMode::RandomOrthogonal}) {
    EXPECT_EQ(parse_semantics_mode(to_string(m)), m);
  }
  EXPECT_THROW(parse_semantics_mode("glove"), std::invalid_argument);
}

TEST(Semantics, OneHotIsIdentity) {
  const Tensor a = make_attribute_semantics(5, AttributeSemanticsMode::OneHot, 1);
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) EXPECT_EQ(a.at(i, j), i == j ? 1.0 : 0.0);
  }
}

TEST(Semantics, RandomOrthogonalRowsAreOrthonormal) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Tensor a = make_attribute_semantics(7, AttributeSemanticsMode::RandomOrthogonal, seed);
    for (int i = 0; i < 7; ++i) {
      for (int j = 0; j < 7; ++j) {
        double dot = 0;
        for (int c = 0; c < 7; ++c) dot += a.at(i, c) * a.at(j, c);
        EXPECT_NEAR(dot, i == j ? 1.0 : 0.0, 1e-10);
      }
    }
  }
}

TEST(Semantics, RandomIsSeedDeterministic) {
  const Tensor a = make_attribute_semantics(6, AttributeSemanticsMode::Random, 3);
  EXPECT_EQ(a, make_attribute_semantics(6, AttributeSemanticsMode::Random, 3));
  EXPECT_NE(a, make_attribute_semantics(6, AttributeSemanticsMode::Random, 4));
}

TEST(Semantics, ValidateCatchesBrokenTables) {
  SemanticsTable t;
  t.class_semantics = Tensor::matrix(2, 3, {1, 0, 0, 0, 1, 1});
  t.attribute_semantics = make_attribute_semantics(3, AttributeSemanticsMode::OneHot, 1);
  EXPECT_NO_THROW(t.validate());

  SemanticsTable negative = t;
  negative.class_semantics.at(0, 1) = -0.1;
  EXPECT_THROW(negative.validate(), std::invalid_argument);

  SemanticsTable zero_row = t;
  zero_row.class_semantics.at(0, 0) = 0;
  EXPECT_THROW(zero_row.validate(), std::invalid_argument);

  SemanticsTable wrong_basis = t;
  wrong_basis.attribute_semantics = Tensor({2, 2}, 1.0);
  EXPECT_THROW(wrong_basis.validate(), std::invalid_argument);

  SemanticsTable not_onehot = t;
  not_onehot.attribute_semantics.at(0, 1) = 0.5;
  EXPECT_THROW(not_onehot.validate(), std::invalid_argument);
}

TEST(Semantics, ClassRowsFollowRequestedOrder) {
  SemanticsTable t;
  t.class_semantics = Tensor::matrix(3, 2, {1, 0, 0, 1, 1, 1});
  t.attribute_semantics = make_attribute_semantics(2, AttributeSemanticsMode::OneHot, 1);
  const std::vector<int> order{2, 0};
  const Tensor r = t.class_rows(order);
  EXPECT_EQ(r, Tensor::matrix(2, 2, {1, 1, 1, 0}));
  const std::vector<int> bad{3};
  EXPECT_THROW(t.class_rows(bad), std::out_of_range);
}

TEST(Semantics, TargetsRescaleOverSeenClasses) {
  SemanticsTable t;
  t.class_semantics = Tensor::matrix(3, 2, {0.2, 1.0, 0.6, 1.0, 1.0, 0.5});
  t.attribute_semantics = make_attribute_semantics(2, AttributeSemanticsMode::OneHot, 1);
  const std::vector<int> seen{0, 1};
  const Tensor y = semantic_targets(t, seen);
  // column 0: seen range [0.2, 0.6]; class 2 (1.0) clamps to 1
  EXPECT_NEAR(y.at(0, 0), 0.0, 1e-12);
  EXPECT_NEAR(y.at(1, 0), 1.0, 1e-12);
  EXPECT_NEAR(y.at(2, 0), 1.0, 1e-12);
  // column 1 is constant over seen classes and keeps the clamped raw value
  EXPECT_NEAR(y.at(0, 1), 1.0, 1e-12);
  EXPECT_NEAR(y.at(2, 1), 0.5, 1e-12);
  for (double v : y.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

}  // namespace
}  // namespace coar
