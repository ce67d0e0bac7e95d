#include "coar/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "coar/ops.hpp"

namespace coar {
namespace {

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::span<const double> flat(const Tensor& t) { return t.values(); }

// Index of the largest entry of row `r` other than column `skip`, first on ties.
int best_other(std::span<const double> row, int skip) {
  int best = -1;
  for (int j = 0; j < static_cast<int>(row.size()); ++j) {
    if (j == skip) continue;
    if (best < 0 || row[static_cast<std::size_t>(j)] > row[static_cast<std::size_t>(best)]) best = j;
  }
  return best;
}

}  // namespace

void LossConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("loss config: " + msg); };
  if (!(alpha > 0.0)) fail("alpha must be positive");
  if (!(tau > 0.0)) fail("tau must be positive");
  if (!(t_hard > 0.0 && t_hard < 1.0)) fail("t_hard must lie in (0, 1)");
  if (!(beta >= 0.0)) fail("beta must be non-negative");
  if (!(lambda_attp >= 0.0 && lambda_attf >= 0.0 && lambda_sem >= 0.0)) fail("loss weights must be non-negative");
  if (!std::isfinite(t_peak)) fail("t_peak must be finite");
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine of vectors with different lengths");
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw ZeroNormError("cosine similarity of a zero-norm vector");
  return dot(a, b) / (na * nb);
}

Tensor class_probabilities(const Tensor& cf, const Tensor& prototypes, double alpha) {
  const int M = prototypes.rows();
  if (M < 1) throw ShapeError("no prototypes");
  if (static_cast<int>(cf.size()) != prototypes.cols()) throw ShapeError("feature and prototype widths differ");
  Tensor p({M});
  double hi = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < M; ++i) {
    p[static_cast<std::size_t>(i)] = alpha * cosine_similarity(flat(cf), prototypes.row(i));
    hi = std::max(hi, p[static_cast<std::size_t>(i)]);
  }
  double z = 0.0;
  for (double& v : p.values()) z += (v = std::exp(v - hi));
  for (double& v : p.values()) v /= z;
  return p;
}

double classification_loss(const Tensor& cf, const Tensor& prototypes, int label, double alpha) {
  if (label < 0 || label >= prototypes.rows()) throw std::out_of_range("label outside prototype set");
  const int M = prototypes.rows();
  std::vector<double> logits(static_cast<std::size_t>(M));
  double hi = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < M; ++i) {
    logits[static_cast<std::size_t>(i)] = alpha * cosine_similarity(flat(cf), prototypes.row(i));
    hi = std::max(hi, logits[static_cast<std::size_t>(i)]);
  }
  double z = 0.0;
  for (double l : logits) z += std::exp(l - hi);
  return hi + std::log(z) - logits[static_cast<std::size_t>(label)];
}

double classification_loss_batch(const Tensor& features, const Tensor& prototypes, std::span<const int> labels,
                                 double alpha) {
  const int B = features.rows();
  if (B != static_cast<int>(labels.size())) throw ShapeError("one label per feature row required");
  if (B == 0) return 0.0;
  double s = 0.0;
  for (int b = 0; b < B; ++b) {
    Tensor cf({features.cols()}, std::vector<double>(features.row(b).begin(), features.row(b).end()));
    s += classification_loss(cf, prototypes, labels[static_cast<std::size_t>(b)], alpha);
  }
  return s / B;
}

std::vector<EligibleAttributeFeature> filter_by_peak(const std::vector<Tensor>& attention,
                                                     const std::vector<Tensor>& attribute_features, double t_peak) {
  if (attention.size() != attribute_features.size()) throw ShapeError("attention and feature batches differ in size");
  std::vector<EligibleAttributeFeature> out;
  for (std::size_t b = 0; b < attention.size(); ++b) {
    const Tensor& am = attention[b];
    const Tensor& af = attribute_features[b];
    const int K = am.cols();
    if (af.rows() != K) throw ShapeError("attribute features need one row per attention channel");
    for (int j = 0; j < K; ++j) {
      double peak = -std::numeric_limits<double>::infinity();
      for (int p = 0; p < am.rows(); ++p) peak = std::max(peak, am.at(p, j));
      if (peak < t_peak) continue;
      EligibleAttributeFeature e;
      e.feature = Tensor({af.cols()}, std::vector<double>(af.row(j).begin(), af.row(j).end()));
      e.attribute = j;
      e.source_image = static_cast<int>(b);
      e.peak = peak;
      out.push_back(std::move(e));
    }
  }
  return out;
}

double attribute_prototype_loss(const std::vector<EligibleAttributeFeature>& eligible, const Tensor& attribute_prototypes,
                                double beta) {
  const int K = attribute_prototypes.rows();
  double total = 0.0;
  for (const auto& e : eligible) {
    if (e.attribute < 0 || e.attribute >= K) throw std::out_of_range("attribute index outside prototype set");
    if (K < 2) throw ShapeError("attribute prototype loss needs at least two prototypes");
    const double own = 1.0 - cosine_similarity(flat(e.feature), attribute_prototypes.row(e.attribute));
    double nearest = std::numeric_limits<double>::infinity();
    for (int j = 0; j < K; ++j) {
      if (j != e.attribute) nearest = std::min(nearest, 1.0 - cosine_similarity(flat(e.feature), attribute_prototypes.row(j)));
    }
    total += std::max(0.0, own - beta * nearest);
  }
  return total;
}

HardExamples mine_hard_examples(const std::vector<EligibleAttributeFeature>& eligible, int anchor, double t_hard,
                                bool hard_selection) {
  if (anchor < 0 || anchor >= static_cast<int>(eligible.size())) throw std::out_of_range("anchor outside eligible set");
  const auto& a = eligible[static_cast<std::size_t>(anchor)];
  HardExamples h;
  for (int i = 0; i < static_cast<int>(eligible.size()); ++i) {
    if (i == anchor) continue;
    const auto& e = eligible[static_cast<std::size_t>(i)];
    const double c = cosine_similarity(flat(a.feature), flat(e.feature));
    if (e.attribute == a.attribute) {
      if (!hard_selection || c < t_hard) h.positives.push_back(i);
    } else if (!hard_selection || c > 1.0 - t_hard) {
      h.negatives.push_back(i);
    }
  }
  return h;
}

double attribute_feature_loss(const std::vector<EligibleAttributeFeature>& eligible, double t_hard, double tau,
                              bool hard_selection) {
  if (!(tau > 0.0)) throw std::invalid_argument("tau must be positive");
  double total = 0.0;
  int anchors = 0;
  for (int i = 0; i < static_cast<int>(eligible.size()); ++i) {
    const HardExamples h = mine_hard_examples(eligible, i, t_hard, hard_selection);
    if (h.positives.empty()) continue;
    const auto& a = eligible[static_cast<std::size_t>(i)].feature;
    double pos = 0.0;
    double neg = 0.0;
    for (int u : h.positives) pos += std::exp(cosine_similarity(flat(a), flat(eligible[static_cast<std::size_t>(u)].feature)) / tau);
    for (int v : h.negatives) neg += std::exp(cosine_similarity(flat(a), flat(eligible[static_cast<std::size_t>(v)].feature)) / tau);
    total += -std::log(pos / (pos + neg));
    ++anchors;
  }
  return anchors ? total / anchors : 0.0;
}

double semantic_loss(std::span<const double> predicted, std::span<const double> target) {
  if (predicted.size() != target.size()) throw ShapeError("semantic vectors differ in length");
  double s = 0.0;
  for (std::size_t j = 0; j < predicted.size(); ++j) {
    const double d = predicted[j] - target[j];
    s += d * d;
  }
  return s;
}

double semantic_loss_batch(const Tensor& predicted, const Tensor& target) {
  if (predicted.shape() != target.shape()) throw ShapeError("semantic batches differ in shape");
  if (predicted.rows() == 0) return 0.0;
  double s = 0.0;
  for (int b = 0; b < predicted.rows(); ++b) s += semantic_loss(predicted.row(b), target.row(b));
  return s / predicted.rows();
}

double total_loss(const LossParts& parts, const LossConfig& config) {
  return parts.cls + config.lambda_attp * parts.attp + config.lambda_attf * parts.attf + config.lambda_sem * parts.sem;
}

namespace ag {

Var cosine_matrix(Var a, Var b) { return matmul_nt(normalize_rows(a), normalize_rows(b)); }

Var classification_loss(Var features, Var prototypes, std::span<const int> labels, double alpha) {
  return cross_entropy_rows(scale(cosine_matrix(features, prototypes), alpha), labels);
}

Var attribute_prototype_loss(Var features, std::span<const int> attributes, Var attribute_prototypes, double beta) {
  Graph& g = *features.graph;
  const int N = features.rows();
  if (static_cast<int>(attributes.size()) != N) throw ShapeError("one attribute index per eligible feature required");
  if (N == 0) return g.constant(Tensor({}, 0.0));
  const int K = attribute_prototypes.rows();
  if (K < 2) throw ShapeError("attribute prototype loss needs at least two prototypes");

  Var cos = cosine_matrix(features, attribute_prototypes);
  const Tensor& c = cos.value();
  // active[i] = index of the nearest other prototype, or -1 when the hinge is closed
  std::vector<int> active(static_cast<std::size_t>(N), -1);
  double total = 0.0;
  for (int i = 0; i < N; ++i) {
    const int own = attributes[static_cast<std::size_t>(i)];
    if (own < 0 || own >= K) throw std::out_of_range("attribute index outside prototype set");
    const int other = best_other(c.row(i), own);
    const double term = (1.0 - c.at(i, own)) - beta * (1.0 - c.at(i, other));
    if (term > 0.0) {
      total += term;
      active[static_cast<std::size_t>(i)] = other;
    }
  }
  std::vector<int> own(attributes.begin(), attributes.end());
  return g.record(Tensor({}, total), {cos}, [cos, active, own, beta](Graph& g, const Tensor& gy, const Tensor&) {
    Tensor& gc = g.grad_buffer(cos);
    for (std::size_t i = 0; i < active.size(); ++i) {
      if (active[i] < 0) continue;
      gc.at(static_cast<int>(i), own[i]) -= gy[0];
      gc.at(static_cast<int>(i), active[i]) += beta * gy[0];
    }
  });
}

Var attribute_feature_loss(Var features, std::span<const int> attributes, double t_hard, double tau,
                           bool hard_selection) {
  Graph& g = *features.graph;
  const int N = features.rows();
  if (static_cast<int>(attributes.size()) != N) throw ShapeError("one attribute index per eligible feature required");
  if (!(tau > 0.0)) throw std::invalid_argument("tau must be positive");
  if (N < 2) return g.constant(Tensor({}, 0.0));

  Var sim = cosine_matrix(features, features);
  const Tensor& s = sim.value();
  struct Anchor {
    int index;
    std::vector<int> pos, neg;
    double p, n;
  };
  std::vector<Anchor> anchors;
  double total = 0.0;
  for (int i = 0; i < N; ++i) {
    Anchor a{i, {}, {}, 0.0, 0.0};
    for (int k = 0; k < N; ++k) {
      if (k == i) continue;
      const double c = s.at(i, k);
      if (attributes[static_cast<std::size_t>(k)] == attributes[static_cast<std::size_t>(i)]) {
        if (!hard_selection || c < t_hard) {
          a.pos.push_back(k);
          a.p += std::exp(c / tau);
        }
      } else if (!hard_selection || c > 1.0 - t_hard) {
        a.neg.push_back(k);
        a.n += std::exp(c / tau);
      }
    }
    if (a.pos.empty()) continue;
    total += std::log(a.p + a.n) - std::log(a.p);
    anchors.push_back(std::move(a));
  }
  if (anchors.empty()) return g.constant(Tensor({}, 0.0));
  const double inv = 1.0 / static_cast<double>(anchors.size());
  return g.record(Tensor({}, total * inv), {sim}, [sim, anchors = std::move(anchors), inv, tau](Graph& g, const Tensor& gy,
                                                                                                   const Tensor&) {
    Tensor& gs = g.grad_buffer(sim);
    const Tensor& s = sim.value();
    const double w = gy[0] * inv / tau;
    for (const Anchor& a : anchors) {
      const double all = a.p + a.n;
      for (int u : a.pos) {
        const double e = std::exp(s.at(a.index, u) / tau);
        gs.at(a.index, u) += w * (e / all - e / a.p);
      }
      for (int v : a.neg) gs.at(a.index, v) += w * std::exp(s.at(a.index, v) / tau) / all;
    }
  });
}

Var semantic_loss(Var predicted, const Tensor& target) {
  if (predicted.rows() != target.rows() || predicted.cols() != target.cols()) {
    throw ShapeError("semantic prediction " + shape_string(predicted.shape()) + " vs target " +
                     shape_string(target.shape()));
  }
  Graph& g = *predicted.graph;
  Var diff = sub(reshape(predicted, {target.rows(), target.cols()}), g.constant(target.reshaped({target.rows(), target.cols()})));
  return scale(sum(square(diff)), 1.0 / target.rows());
}

}  // namespace ag
}  // namespace coar
