#include "coar/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "coar/backbone.hpp"
#include "coar/losses.hpp"

namespace coar {

std::string to_string(EvalMode mode) { return mode == EvalMode::Zsl ? "zsl" : "gzsl"; }

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["mode"] = to_string(r.mode);
  if (r.mode == EvalMode::Zsl) {
    j["T1"] = r.t1;
  } else {
    j["Acc_U"] = r.acc_u;
    j["Acc_S"] = r.acc_s;
    j["Acc_H"] = r.acc_h;
  }
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [c, a] : r.per_class) per[std::to_string(c)] = a;
  j["per_class"] = per;
  j["warnings"] = r.warnings;
  return j;
}

int predict(std::span<const double> cf, const Tensor& prototypes) {
  if (prototypes.rows() < 1) throw std::invalid_argument("predict needs at least one prototype");
  int best = 0;
  double best_cos = cosine_similarity(cf, prototypes.row(0));
  for (int i = 1; i < prototypes.rows(); ++i) {
    const double c = cosine_similarity(cf, prototypes.row(i));
    if (c > best_cos) {
      best = i;
      best_cos = c;
    }
  }
  return best;
}

Tensor build_eval_prototypes(const PrototypeNetParams& params, const SemanticsTable& semantics,
                             std::span<const int> classes) {
  if (classes.empty()) throw std::invalid_argument("empty evaluation class set");
  for (int c : classes) {
    if (c < 0 || c >= semantics.num_classes()) throw std::out_of_range("class " + std::to_string(c) + " not in semantics");
  }
  ag::Graph g;
  ag::ParamBinder bind(g, false);
  return ag::class_prototypes(bind, params, g.constant(semantics.class_rows(classes))).value();
}

double harmonic_mean(double acc_u, double acc_s) {
  if (acc_u + acc_s == 0.0) return 0.0;
  return 2.0 * acc_u * acc_s / (acc_u + acc_s);
}

double per_class_accuracy(std::span<const int> truth, std::span<const int> predicted, std::span<const int> classes,
                          std::map<int, double>* per_class, std::vector<std::string>* warnings) {
  if (truth.size() != predicted.size()) throw std::invalid_argument("truth and predictions differ in length");
  double sum = 0.0;
  int counted = 0;
  for (int c : classes) {
    int total = 0;
    int hit = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (truth[i] != c) continue;
      ++total;
      hit += predicted[i] == c;
    }
    if (total == 0) {
      if (warnings) warnings->push_back("class " + std::to_string(c) + " has no test samples; excluded");
      continue;
    }
    const double acc = static_cast<double>(hit) / total;
    if (per_class) (*per_class)[c] = acc;
    sum += acc;
    ++counted;
  }
  return counted ? sum / counted : 0.0;
}

Tensor class_features(const Model& model, const Dataset& dataset, std::span<const int> samples, int threads) {
  const int n = static_cast<int>(samples.size());
  Tensor out({n, model.backbone.feature_dim()});
  auto work = [&](int worker, int workers) {
    for (int i = worker; i < n; i += workers) {
      const FeatureBundle fb = extract(model.backbone, dataset.samples.at(static_cast<std::size_t>(samples[static_cast<std::size_t>(i)])).image);
      std::copy(fb.class_feature.values().begin(), fb.class_feature.values().end(), out.row(i).begin());
    }
  };
  threads = std::clamp(threads, 1, std::max(1, n));
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
  }
  return out;
}

namespace {

std::vector<int> labels_of(const Dataset& d, std::span<const int> samples) {
  std::vector<int> out;
  for (int s : samples) out.push_back(d.samples.at(static_cast<std::size_t>(s)).label);
  return out;
}

std::vector<int> predict_all(const Tensor& features, const Tensor& prototypes, std::span<const int> classes) {
  std::vector<int> out;
  for (int i = 0; i < features.rows(); ++i) out.push_back(classes[static_cast<std::size_t>(predict(features.row(i), prototypes))]);
  return out;
}

}  // namespace

MetricsReport evaluate(const Model& model, const Dataset& dataset, EvalMode mode, int threads) {
  MetricsReport r;
  r.mode = mode;
  const std::vector<int> unseen_test = dataset.sample_indices(Split::Test, false);
  if (mode == EvalMode::Zsl) {
    if (dataset.unseen_classes.empty()) throw std::invalid_argument("ZSL evaluation needs unseen classes");
    const Tensor cp = build_eval_prototypes(model.prototypes, dataset.semantics, dataset.unseen_classes);
    const Tensor f = class_features(model, dataset, unseen_test, threads);
    const auto pred = predict_all(f, cp, dataset.unseen_classes);
    r.t1 = per_class_accuracy(labels_of(dataset, unseen_test), pred, dataset.unseen_classes, &r.per_class, &r.warnings);
    return r;
  }
  std::vector<int> all(static_cast<std::size_t>(dataset.num_classes));
  for (int c = 0; c < dataset.num_classes; ++c) all[static_cast<std::size_t>(c)] = c;
  const Tensor cp = build_eval_prototypes(model.prototypes, dataset.semantics, all);
  const std::vector<int> seen_test = dataset.sample_indices(Split::Test, true);
  const auto pred_u = predict_all(class_features(model, dataset, unseen_test, threads), cp, all);
  const auto pred_s = predict_all(class_features(model, dataset, seen_test, threads), cp, all);
  r.acc_u = per_class_accuracy(labels_of(dataset, unseen_test), pred_u, dataset.unseen_classes, &r.per_class, &r.warnings);
  r.acc_s = per_class_accuracy(labels_of(dataset, seen_test), pred_s, dataset.seen_classes, &r.per_class, &r.warnings);
  r.acc_h = harmonic_mean(r.acc_u, r.acc_s);
  return r;
}

}  // namespace coar
