#pragma once

// ZSL / GZSL scoring by prototype swap. Accuracies are per-class top-1
// averaged uniformly over classes.

#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coar/dataset.hpp"
#include "coar/model.hpp"

namespace coar {

enum class EvalMode { Zsl, Gzsl };

std::string to_string(EvalMode mode);

struct MetricsReport {
  EvalMode mode = EvalMode::Zsl;
  double t1 = 0.0;     // ZSL
  double acc_u = 0.0;  // GZSL
  double acc_s = 0.0;
  double acc_h = 0.0;
  std::map<int, double> per_class;
  std::vector<std::string> warnings;
};

nlohmann::json to_json(const MetricsReport& report);

/// argmax_i cos(cf, cp_i), lowest index on ties. Throws ZeroNormError for a zero cf.
int predict(std::span<const double> cf, const Tensor& prototypes);

/// Class prototypes for exactly `classes`, in that order; class normalisation
/// runs over that set only.
Tensor build_eval_prototypes(const PrototypeNetParams& params, const SemanticsTable& semantics,
                             std::span<const int> classes);

double harmonic_mean(double acc_u, double acc_s);

/// Mean of per-class accuracies over `classes`. Classes with no samples are
/// skipped and reported in `warnings`.
double per_class_accuracy(std::span<const int> truth, std::span<const int> predicted, std::span<const int> classes,
                          std::map<int, double>* per_class = nullptr, std::vector<std::string>* warnings = nullptr);

/// Class features (cf) of the given samples; parallel over `threads` workers
/// with a fixed assignment so results do not depend on the thread count.
Tensor class_features(const Model& model, const Dataset& dataset, std::span<const int> samples, int threads = 1);

MetricsReport evaluate(const Model& model, const Dataset& dataset, EvalMode mode, int threads = 1);

}  // namespace coar
