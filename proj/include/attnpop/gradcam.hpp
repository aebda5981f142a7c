#pragma once

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "attnpop/model.hpp"

namespace attnpop {

// Grad-CAM on top of precomputed features.
//
// The pooled frame feature is the global average of the last convolutional
// activations, q_f = (1/K^2) sum_ij A_ij^f. Hence dS/dA_ij^f = (1/K^2) dS/dq_f
// for every cell, and the Grad-CAM channel weight
//   gamma_f = (1/K^2) sum_ij dS/dA_ij^f
// reduces to (1/K^2) dS/dq_f. The backbone never has to be run: the gradient
// with respect to the pooled features is enough to obtain gamma, and the
// activation map H = max(0, sum_f gamma_f A^f) uses the stored activations.

/// dS/dq for every frame, where S is the pre-sigmoid popular-class logit.
inline std::vector<Tensor> pooled_feature_gradients(const PopularityModel& model, const ModelInput& input) {
  if (!uses_video(model.modality())) throw UsageError("Grad-CAM needs a model with a video branch");
  Tape tape;
  const auto out = model_forward(tape, model, input, {}, true);
  const auto grads = backward(tape, out.logit);
  std::vector<Tensor> result;
  result.reserve(out.frame_inputs.size());
  for (auto v : out.frame_inputs) result.push_back(grads.of(v));
  return result;
}

inline Tensor pooled_feature_gradient(const PopularityModel& model, const ModelInput& input, std::size_t frame_index) {
  if (frame_index >= input.frames.size()) {
    throw ArgumentError("frame index " + std::to_string(frame_index) + " out of range for " +
                        std::to_string(input.frames.size()) + " frames");
  }
  return pooled_feature_gradients(model, input)[frame_index];
}

struct ChannelWeights {
  Tensor gamma;  // [F]
};

/// gamma_f = dS/dq_f / K^2.
inline ChannelWeights channel_weights(const Tensor& feature_grad, std::size_t k) {
  if (k < 1) throw ArgumentError("spatial size K must be at least 1");
  if (feature_grad.rank() != 1) throw ShapeError("feature gradient must be rank-1");
  const double cells = static_cast<double>(k * k);
  std::vector<double> g(feature_grad.size());
  for (std::size_t f = 0; f < g.size(); ++f) g[f] = feature_grad[f] / cells;
  return {Tensor::vector(std::move(g))};
}

/// dS/dA for an activation tensor [K x K x F] feeding a global average pool:
/// every cell of channel f receives dS/dq_f / K^2.
inline Tensor expand_pooled_gradient(const Tensor& feature_grad, std::size_t k) {
  if (k < 1) throw ArgumentError("spatial size K must be at least 1");
  const auto f_count = feature_grad.size();
  const double cells = static_cast<double>(k * k);
  std::vector<double> out(k * k * f_count);
  for (std::size_t cell = 0; cell < k * k; ++cell)
    for (std::size_t f = 0; f < f_count; ++f) out[cell * f_count + f] = feature_grad[f] / cells;
  return Tensor({k, k, f_count}, std::move(out));
}

/// Channel weights from a full spatial gradient [K x K x F], averaging over
/// the K x K grid. The sum runs in extended precision and is exact for
/// K^2 <= 2^(LDBL_MANT_DIG - 53) identical addends, so a uniformly expanded
/// gradient gives back exactly channel_weights(g, K).
inline ChannelWeights channel_weights_from_spatial(const Tensor& spatial_grad) {
  if (spatial_grad.rank() != 3 || spatial_grad.dim(0) != spatial_grad.dim(1)) {
    throw ShapeError("spatial gradient must be [K x K x F], got " + shape_string(spatial_grad.shape()));
  }
  const auto k = spatial_grad.dim(0);
  const auto f_count = spatial_grad.dim(2);
  std::vector<double> gamma(f_count);
  for (std::size_t f = 0; f < f_count; ++f) {
    long double total = 0.0L;
    for (std::size_t cell = 0; cell < k * k; ++cell) total += spatial_grad[cell * f_count + f];
    gamma[f] = static_cast<double>(total / static_cast<long double>(k * k));
  }
  return {Tensor::vector(std::move(gamma))};
}

/// H_ij = max(0, sum_f gamma_f A_ij^f) for activations A [K x K x F].
inline Tensor class_activation_map(const ChannelWeights& weights, const Tensor& activations) {
  if (activations.rank() != 3 || activations.dim(0) != activations.dim(1)) {
    throw ShapeError("activations must be [K x K x F], got " + shape_string(activations.shape()));
  }
  const auto k = activations.dim(0);
  const auto f_count = activations.dim(2);
  if (weights.gamma.size() != f_count) {
    throw ShapeError("channel weights have " + std::to_string(weights.gamma.size()) + " channels, activations have " +
                     std::to_string(f_count));
  }
  std::vector<double> raw(k * k);
  for (std::size_t cell = 0; cell < k * k; ++cell) {
    double s = 0.0;
    for (std::size_t f = 0; f < f_count; ++f) s += weights.gamma[f] * activations[cell * f_count + f];
    raw[cell] = s > 0.0 ? s : 0.0;
  }
  return Tensor::matrix(k, k, std::move(raw));
}

enum class HeatmapNormalization { frame, sequence };

inline HeatmapNormalization normalization_from_string(const std::string& s) {
  if (s == "frame") return HeatmapNormalization::frame;
  if (s == "sequence") return HeatmapNormalization::sequence;
  throw ArgumentError("unknown heatmap normalization '" + s + "' (expected frame or sequence)");
}

struct FrameHeatmap {
  Tensor raw;         // [K x K], >= 0
  Tensor normalized;  // [K x K], in [0, 1]
  double scale = 0.0;  // alpha_i / max(alpha)

  Tensor displayed() const {
    std::vector<double> v(normalized.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = normalized[i] * scale;
    return Tensor(normalized.shape(), std::move(v));
  }
};

struct SequenceVisualization {
  std::vector<FrameHeatmap> heatmaps;
  Tensor alpha;
};

inline std::size_t argmax_lowest(const Tensor& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

/// Normalizes each raw map to [0, 1] (by its own maximum, or by the maximum over
/// the whole sequence) and attaches scale alpha_i / max(alpha). Exactly one
/// frame, the first attaining max(alpha), has scale 1; later ties and ratios
/// that round up to 1 are held just below it.
inline SequenceVisualization scale_heatmaps(const std::vector<Tensor>& raw_maps, const Tensor& alpha,
                                            HeatmapNormalization mode = HeatmapNormalization::frame) {
  if (raw_maps.size() != alpha.size() || raw_maps.empty()) {
    throw ArgumentError("need one raw heatmap per attention weight, got " + std::to_string(raw_maps.size()) +
                        " maps for " + std::to_string(alpha.size()) + " weights");
  }
  double sequence_max = 0.0;
  for (const auto& m : raw_maps)
    for (double v : m.values()) sequence_max = std::max(sequence_max, v);

  const auto top = argmax_lowest(alpha);
  const double alpha_max = alpha[top];
  const double below_one = std::nextafter(1.0, 0.0);

  SequenceVisualization viz{{}, alpha};
  for (std::size_t i = 0; i < raw_maps.size(); ++i) {
    const auto& raw = raw_maps[i];
    double denom = sequence_max;
    if (mode == HeatmapNormalization::frame) {
      denom = 0.0;
      for (double v : raw.values()) denom = std::max(denom, v);
    }
    std::vector<double> norm(raw.size(), 0.0);
    if (denom > 0.0)
      for (std::size_t c = 0; c < norm.size(); ++c) norm[c] = std::clamp(raw[c] / denom, 0.0, 1.0);
    double scale = 1.0;
    if (i != top) scale = alpha_max > 0.0 ? std::min(alpha[i] / alpha_max, below_one) : 0.0;
    viz.heatmaps.push_back({raw, Tensor(raw.shape(), std::move(norm)), scale});
  }
  return viz;
}

struct TextAttentionReport {
  std::vector<std::string> tokens;
  Tensor beta;
  Tensor relative;  // beta / max(beta)
};

inline TextAttentionReport text_attention_report(const Tensor& beta, const std::vector<std::string>& tokens) {
  if (beta.size() != tokens.size() || tokens.empty()) {
    throw ArgumentError("need one token per attention weight, got " + std::to_string(tokens.size()) + " tokens for " +
                        std::to_string(beta.size()) + " weights");
  }
  const double mx = beta[argmax_lowest(beta)];
  std::vector<double> rel(beta.size());
  for (std::size_t i = 0; i < rel.size(); ++i) rel[i] = mx > 0.0 ? beta[i] / mx : 0.0;
  return {tokens, beta, Tensor::vector(std::move(rel))};
}

struct VisualizationResult {
  ModelOutput output;
  std::optional<SequenceVisualization> frames;
  std::optional<TextAttentionReport> text;
};

/// Full pipeline for one video: prediction, per-frame Grad-CAM heatmaps scaled
/// by attention, and the word attention report.
inline VisualizationResult visualize(const PopularityModel& model, const ModelInput& input,
                                     const std::vector<Tensor>& activations, const std::vector<std::string>& tokens,
                                     HeatmapNormalization mode = HeatmapNormalization::frame) {
  VisualizationResult result;
  result.output = model_predict(model, input);
  if (uses_video(model.modality())) {
    if (activations.size() != input.frames.size()) {
      throw ArgumentError("need convolutional activations for each of the " + std::to_string(input.frames.size()) +
                          " frames, got " + std::to_string(activations.size()));
    }
    const auto grads = pooled_feature_gradients(model, input);
    std::vector<Tensor> raw;
    raw.reserve(grads.size());
    for (std::size_t i = 0; i < grads.size(); ++i) {
      const auto weights = channel_weights(grads[i], activations[i].dim(0));
      raw.push_back(class_activation_map(weights, activations[i]));
    }
    result.frames = scale_heatmaps(raw, *result.output.alpha, mode);
  }
  if (result.output.beta) result.text = text_attention_report(*result.output.beta, tokens);
  return result;
}

}  // namespace attnpop
