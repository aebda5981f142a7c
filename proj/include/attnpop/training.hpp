#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "attnpop/data.hpp"
#include "attnpop/log.hpp"
#include "attnpop/model.hpp"

namespace attnpop {

// ---------------------------------------------------------------------------
// Loss and optimizer

/// max(s, 0) - s*y + log(1 + exp(-|s|)); finite for every finite logit.
inline double bce_loss(double logit, int label) {
  if (!std::isfinite(logit)) throw NumericError("bce_loss: non-finite logit");
  return detail::bce_from_logit(logit, static_cast<double>(label));
}

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::unordered_map<std::string, std::pair<Tensor, Tensor>> moments;  // name -> (m, v)
};

/// One bias-corrected Adam update. Frozen parameters are left untouched.
inline void adam_step(AdamState& state, std::span<Parameter* const> params, std::span<const Tensor> grads, double lr) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: one gradient per parameter required");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (grads[k].shape() != params[k]->value.shape()) {
      throw ShapeError("adam_step: gradient for " + params[k]->name + " has shape " + shape_string(grads[k].shape()) +
                       ", parameter has " + shape_string(params[k]->value.shape()));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    if (!p.trainable) continue;
    auto [it, _] = state.moments.try_emplace(p.name, Tensor::zeros(p.value.shape()), Tensor::zeros(p.value.shape()));
    auto& [m, v] = it->second;
    auto pv = p.value.mutable_values();
    for (std::size_t i = 0; i < pv.size(); ++i) {
      const double g = grads[k][i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      pv[i] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
    require_finite(p.value, p.name.c_str());
  }
}

// ---------------------------------------------------------------------------
// Evaluation

/// 1-based ranks; tied values share the mean of the ranks they span.
inline std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

inline double pearson(std::span<const double> a, std::span<const double> b) {
  const auto n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

/// Spearman correlation with average ranks for ties. A constant input yields 0
/// and a warning.
inline double spearman_rho(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw ArgumentError("spearman_rho: lengths differ (" + std::to_string(x.size()) + " vs " +
                        std::to_string(y.size()) + ")");
  }
  if (x.size() < 2) throw ArgumentError("spearman_rho needs at least 2 pairs");
  auto constant = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [&](double e) { return e == v.front(); });
  };
  if (constant(x) || constant(y)) {
    warn("spearman_rho: constant input, correlation undefined; reporting 0");
    return 0.0;
  }
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

struct EvalReport {
  double accuracy = 0.0;
  double spearman = 0.0;
  std::size_t n = 0;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

/// Accuracy at threshold probability > 0.5 and Spearman between the
/// probabilities and normalized view counts.
inline EvalReport evaluate_predictions(std::span<const double> probabilities, std::span<const int> labels,
                                       std::span<const double> normalized_viewcounts) {
  if (probabilities.empty()) throw ArgumentError("evaluate: empty split");
  if (probabilities.size() != labels.size() || labels.size() != normalized_viewcounts.size()) {
    throw ArgumentError("evaluate: mismatched lengths");
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += static_cast<std::size_t>((probabilities[i] > 0.5) == (labels[i] == 1));
  EvalReport r;
  r.n = labels.size();
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.n);
  r.spearman = r.n >= 2 ? spearman_rho(probabilities, normalized_viewcounts) : 0.0;
  return r;
}

inline ModelOutput predict_example(const PopularityModel& model, const Example& e) {
  const std::span<const Tensor> none;
  return model_predict(model, uses_video(model.modality()) ? std::span<const Tensor>(e.frames) : none,
                       uses_text(model.modality()) ? std::span<const Tensor>(e.words) : none);
}

inline std::vector<double> predict_probabilities(const PopularityModel& model, const Dataset& ds,
                                                 std::span<const std::size_t> indices) {
  std::vector<double> p;
  p.reserve(indices.size());
  for (auto i : indices) p.push_back(predict_example(model, ds.examples[i]).probability);
  return p;
}

inline EvalReport evaluate(const PopularityModel& model, const Dataset& ds, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ArgumentError("evaluate: empty split");
  const auto probs = predict_probabilities(model, ds, indices);
  std::vector<int> labels;
  std::vector<double> nv;
  for (auto i : indices) {
    labels.push_back(ds.examples[i].label);
    nv.push_back(ds.examples[i].normalized_viewcount);
  }
  return evaluate_predictions(probs, labels, nv);
}

inline EvalReport evaluate(const PopularityModel& model, const Dataset& ds, Split split) {
  return evaluate(model, ds, ds.indices(split));
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 50;
  std::size_t patience = 5;
  std::uint64_t seed = 0;
  bool check_gradients = false;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double val_spearman = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0.0;
};

struct BatchGradient {
  double loss = 0.0;
  std::vector<Tensor> grads;  // aligned with the parameter list passed in
};

inline Var example_loss(Tape& tape, const PopularityModel& model, const Example& e, ForwardMode mode) {
  const std::span<const Tensor> none;
  auto out = model_forward(tape, model, uses_video(model.modality()) ? std::span<const Tensor>(e.frames) : none,
                           uses_text(model.modality()) ? std::span<const Tensor>(e.words) : none, mode);
  return bce_with_logits(out.logit, static_cast<double>(e.label));
}

/// Mean loss over a batch and its gradient with respect to `params`.
inline BatchGradient batch_gradient(const PopularityModel& model, const Dataset& ds,
                                    std::span<const std::size_t> batch, std::span<Parameter* const> params,
                                    ForwardMode mode = {}) {
  if (batch.empty()) throw ArgumentError("empty batch");
  Tape tape;
  std::vector<Var> losses;
  losses.reserve(batch.size());
  for (auto i : batch) losses.push_back(example_loss(tape, model, ds.examples[i], mode));
  const auto total = scale(add_n(losses), 1.0 / static_cast<double>(batch.size()));
  const auto g = backward(tape, total);
  BatchGradient out;
  out.loss = total.value().item();
  out.grads.reserve(params.size());
  for (auto* p : params) out.grads.push_back(g.of(*p));
  return out;
}

/// Largest absolute difference between the batch gradient and the mean of
/// per-example gradients.
inline double batch_gradient_discrepancy(const PopularityModel& model, const Dataset& ds,
                                         std::span<const std::size_t> batch, std::span<Parameter* const> params) {
  const auto whole = batch_gradient(model, ds, batch, params);
  std::vector<Tensor> mean;
  for (const auto& g : whole.grads) mean.push_back(Tensor::zeros(g.shape()));
  for (auto i : batch) {
    const std::size_t one[] = {i};
    const auto single = batch_gradient(model, ds, one, params);
    for (std::size_t k = 0; k < mean.size(); ++k)
      for (std::size_t c = 0; c < mean[k].size(); ++c) mean[k][c] += single.grads[k][c] / static_cast<double>(batch.size());
  }
  double worst = 0.0;
  for (std::size_t k = 0; k < mean.size(); ++k)
    for (std::size_t c = 0; c < mean[k].size(); ++c) worst = std::max(worst, std::abs(mean[k][c] - whole.grads[k][c]));
  return worst;
}

inline std::vector<Tensor> snapshot(const PopularityModel& model) {
  std::vector<Tensor> out;
  for (const auto* p : model.parameters()) out.push_back(p->value);
  return out;
}

inline void restore(PopularityModel& model, const std::vector<Tensor>& values) {
  auto ps = model.parameters();
  for (std::size_t k = 0; k < ps.size(); ++k) ps[k]->value = values[k];
}

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch Adam with seeded shuffling. Keeps the parameters of the epoch with
/// the best validation accuracy and stops after `patience` epochs without
/// improvement.
inline TrainResult train(PopularityModel& model, const Dataset& ds, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
  const auto train_idx = ds.indices(Split::train);
  const auto val_idx = ds.indices(Split::val);
  if (train_idx.empty()) throw ArgumentError("train: empty training split");
  if (val_idx.empty()) throw ArgumentError("train: empty validation split");
  if (cfg.batch_size == 0) throw ArgumentError("train: batch_size must be at least 1");
  if (!(cfg.learning_rate >= 0.0)) throw ArgumentError("train: learning_rate must be nonnegative");

  auto params = model.trainable_parameters();
  AdamState adam;
  DropoutStream dropout_stream(cfg.seed);
  const ForwardMode mode{true, &dropout_stream};

  TrainResult result;
  auto best = snapshot(model);
  double best_acc = -1.0;
  std::size_t stale = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    auto order = train_idx;
    Rng shuffler{cfg.seed, epoch, 0x7a11ULL};
    shuffler.shuffle(order);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const auto len = std::min(cfg.batch_size, order.size() - start);
      const std::span<const std::size_t> batch(order.data() + start, len);
      if (cfg.check_gradients && start == 0) {
        const double gap = batch_gradient_discrepancy(model, ds, batch, params);
        if (gap > 1e-10) throw OracleError("batch gradient differs from mean per-example gradient by " + std::to_string(gap));
      }
      auto bg = batch_gradient(model, ds, batch, params, mode);
      loss_sum += bg.loss * static_cast<double>(len);
      if (!params.empty()) adam_step(adam, params, bg.grads, cfg.learning_rate);
    }

    const auto val = evaluate(model, ds, val_idx);
    EpochRecord rec{epoch, loss_sum / static_cast<double>(order.size()), val.accuracy, val.spearman};
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (val.accuracy > best_acc) {
      best_acc = val.accuracy;
      best = snapshot(model);
      result.best_epoch = epoch;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  restore(model, best);
  result.best_val_accuracy = best_acc;
  return result;
}

struct StagedResult {
  PopularityModel video;
  PopularityModel text;
  PopularityModel multimodal;
  TrainResult video_history;
  TrainResult text_history;
  TrainResult head_history;
};

/// Trains video-only and text-only models, then a fusion head over their
/// frozen branches (or fine-tunes everything when `fine_tune` is set).
inline StagedResult train_multimodal_staged(const Dataset& ds, ModelConfig base, const TrainConfig& cfg,
                                            bool fine_tune = false) {
  base.modality = Modality::video;
  auto video = PopularityModel::create(base);
  auto vh = train(video, ds, cfg);
  base.modality = Modality::text;
  base.seed = base.seed + 1;
  auto text = PopularityModel::create(base);
  auto th = train(text, ds, cfg);
  auto mm = assemble_multimodal(video, text, base.fusion_dim, base.seed + 1, fine_tune);
  auto hh = train(mm, ds, cfg);
  return {std::move(video), std::move(text), std::move(mm), std::move(vh), std::move(th), std::move(hh)};
}

// ---------------------------------------------------------------------------
// Randomized hyperparameter search

struct IntRange {
  std::int64_t lo = 0;
  std::int64_t hi = 0;
};

struct RealRange {
  double lo = 0.0;
  double hi = 0.0;
};

struct SearchSpace {
  IntRange embed_dim{32, 256};
  IntRange lstm_hidden{32, 128};
  IntRange attention_hidden{32, 128};
  IntRange fusion_dim{32, 128};
  RealRange dropout{0.0, 0.5};
  RealRange learning_rate{1e-4, 1e-2};  // sampled log-uniformly

  void validate() const {
    for (const auto* r : {&embed_dim, &lstm_hidden, &attention_hidden, &fusion_dim}) {
      if (r->lo < 1 || r->hi < r->lo) throw ArgumentError("search space: integer ranges must satisfy 1 <= lo <= hi");
    }
    if (dropout.lo < 0.0 || dropout.hi < dropout.lo || dropout.hi >= 1.0) {
      throw ArgumentError("search space: dropout range must satisfy 0 <= lo <= hi < 1");
    }
    if (learning_rate.lo <= 0.0 || learning_rate.hi < learning_rate.lo) {
      throw ArgumentError("search space: learning-rate range must satisfy 0 < lo <= hi");
    }
  }
};

struct TrialConfig {
  ModelConfig model;
  TrainConfig train;
};

/// Configuration for trial `trial`, reproducible from (space, seed, trial).
inline TrialConfig sample_trial(const SearchSpace& space, const ModelConfig& base_model, const TrainConfig& base_train,
                                std::uint64_t seed, std::size_t trial) {
  space.validate();
  Rng rng{seed, trial, 0x5ea4c4ULL};
  TrialConfig t{base_model, base_train};
  t.model.embed_dim = static_cast<std::size_t>(rng.range(space.embed_dim.lo, space.embed_dim.hi));
  t.model.lstm_hidden = static_cast<std::size_t>(rng.range(space.lstm_hidden.lo, space.lstm_hidden.hi));
  const auto attn = static_cast<std::size_t>(rng.range(space.attention_hidden.lo, space.attention_hidden.hi));
  t.model.video_attention_hidden = attn;
  t.model.text_attention_hidden = attn;
  t.model.fusion_dim = static_cast<std::size_t>(rng.range(space.fusion_dim.lo, space.fusion_dim.hi));
  const double drop = rng.uniform(space.dropout.lo, space.dropout.hi);
  t.model.frame_dropout = drop;
  t.model.text_dropout = drop;
  t.model.fusion_dropout = drop;
  const double u = rng.uniform();
  t.train.learning_rate =
      std::exp(std::log(space.learning_rate.lo) + u * (std::log(space.learning_rate.hi) - std::log(space.learning_rate.lo)));
  if (space.learning_rate.lo == space.learning_rate.hi) t.train.learning_rate = space.learning_rate.lo;
  return t;
}

struct TrialResult {
  std::size_t trial = 0;
  TrialConfig config;
  EvalReport validation;
};

/// Trains one model per sampled configuration and ranks by validation accuracy,
/// then validation Spearman, then trial index.
inline std::vector<TrialResult> random_search(const SearchSpace& space, std::size_t trials, std::uint64_t seed,
                                              const Dataset& ds, const ModelConfig& base_model,
                                              const TrainConfig& base_train) {
  if (trials < 1) throw ArgumentError("random_search: trials must be at least 1");
  space.validate();
  std::vector<TrialResult> results;
  for (std::size_t t = 0; t < trials; ++t) {
    auto cfg = sample_trial(space, base_model, base_train, seed, t);
    EvalReport val;
    if (cfg.model.modality == Modality::multimodal) {
      auto staged = train_multimodal_staged(ds, cfg.model, cfg.train);
      val = evaluate(staged.multimodal, ds, Split::val);
    } else {
      auto model = PopularityModel::create(cfg.model);
      train(model, ds, cfg.train);
      val = evaluate(model, ds, Split::val);
    }
    results.push_back({t, cfg, val});
  }
  std::stable_sort(results.begin(), results.end(), [](const TrialResult& a, const TrialResult& b) {
    if (a.validation.accuracy != b.validation.accuracy) return a.validation.accuracy > b.validation.accuracy;
    if (a.validation.spearman != b.validation.spearman) return a.validation.spearman > b.validation.spearman;
    return a.trial < b.trial;
  });
  return results;
}

}  // namespace attnpop
