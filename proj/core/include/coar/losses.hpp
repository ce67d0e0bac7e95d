#pragma once

// Training objectives.
//
//   cls   cross-entropy of softmax(alpha * cos(cf, cp_i)) per image, batch mean
//   attp  sum over eligible features of relu(d(af, ap_own) - beta * min_other d(af, ap))
//   attf  contrastive loss over hard positives / negatives, mean over anchors
//   sem   ||cs^e - cs^g||^2 per image, batch mean
//   L     cls + l_attp * attp + l_attf * attf + l_sem * sem
//
// Each loss has a value-level form (for tests and tooling) and a graph form
// used by the trainer. Value forms reject zero-norm vectors; the graph forms
// floor norms at 1e-12 so a dead feature cannot abort training.

#include <span>
#include <stdexcept>
#include <vector>

#include "coar/autograd.hpp"
#include "coar/tensor.hpp"

namespace coar {

struct LossConfig {
  double alpha = 25.0;
  double beta = 0.5;
  double tau = 0.4;
  double t_peak = 9.0;
  double t_hard = 0.8;
  double lambda_attp = 0.1;
  double lambda_attf = 1.0;
  double lambda_sem = 1.0;
  bool hard_selection = true;

  /// Throws std::invalid_argument on out-of-range values.
  void validate() const;
};

/// Raised when a cosine similarity is requested for an all-zero vector.
class ZeroNormError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct EligibleAttributeFeature {
  Tensor feature;  // C
  int attribute = 0;
  int source_image = 0;
  double peak = 0.0;
};

struct HardExamples {
  std::vector<int> positives;  // indices into the eligible list
  std::vector<int> negatives;
};

struct LossParts {
  double cls = 0.0;
  double attp = 0.0;
  double attf = 0.0;
  double sem = 0.0;
};

double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// softmax over classes of alpha * cos(cf, cp_i).
Tensor class_probabilities(const Tensor& cf, const Tensor& prototypes, double alpha);
double classification_loss(const Tensor& cf, const Tensor& prototypes, int label, double alpha);
/// Mean over the rows of `features` (B x C).
double classification_loss_batch(const Tensor& features, const Tensor& prototypes, std::span<const int> labels,
                                 double alpha);

/// Keeps every (image, attribute) pair whose raw attention maximum is >= t_peak.
/// attention[b] is H x W x K, attribute_features[b] is K x C.
std::vector<EligibleAttributeFeature> filter_by_peak(const std::vector<Tensor>& attention,
                                                     const std::vector<Tensor>& attribute_features, double t_peak);

double attribute_prototype_loss(const std::vector<EligibleAttributeFeature>& eligible, const Tensor& attribute_prototypes,
                                double beta);

/// With hard_selection off every same-attribute feature is a positive and
/// every other-attribute feature a negative.
HardExamples mine_hard_examples(const std::vector<EligibleAttributeFeature>& eligible, int anchor, double t_hard,
                                bool hard_selection = true);

/// Anchors without positives are skipped; 0 if no anchor contributes.
double attribute_feature_loss(const std::vector<EligibleAttributeFeature>& eligible, double t_hard, double tau,
                              bool hard_selection = true);

double semantic_loss(std::span<const double> predicted, std::span<const double> target);
/// Mean over rows of two B x K matrices.
double semantic_loss_batch(const Tensor& predicted, const Tensor& target);

double total_loss(const LossParts& parts, const LossConfig& config);

namespace ag {

/// Row-normalised a times row-normalised b, transposed: pairwise cosines.
Var cosine_matrix(Var a, Var b);

Var classification_loss(Var features, Var prototypes, std::span<const int> labels, double alpha);

/// features: N x C eligible attribute features, attributes[i] their indices.
Var attribute_prototype_loss(Var features, std::span<const int> attributes, Var attribute_prototypes, double beta);

/// Hard masks are chosen from the current cosine values and held fixed for
/// the backward pass.
Var attribute_feature_loss(Var features, std::span<const int> attributes, double t_hard, double tau,
                           bool hard_selection);

/// predicted: B x K readouts, target: B x K.
Var semantic_loss(Var predicted, const Tensor& target);

}  // namespace ag
}  // namespace coar
