#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attnpop/layers.hpp"

namespace attnpop {

enum class Modality { video, text, multimodal };

/// How a branch turns its sequence into one vector: learned attention, or the
/// non-attention baseline (mean of frame embeddings / last bi-LSTM states).
enum class Pooling { attention, baseline };

inline std::string to_string(Modality m) {
  switch (m) {
    case Modality::video: return "video";
    case Modality::text: return "text";
    case Modality::multimodal: return "multimodal";
  }
  return "?";
}

inline Modality modality_from_string(const std::string& s) {
  if (s == "video") return Modality::video;
  if (s == "text") return Modality::text;
  if (s == "multimodal") return Modality::multimodal;
  throw ArgumentError("unknown modality '" + s + "' (expected video, text or multimodal)");
}

inline std::string to_string(Pooling p) { return p == Pooling::attention ? "attention" : "baseline"; }

inline Pooling pooling_from_string(const std::string& s) {
  if (s == "attention") return Pooling::attention;
  if (s == "baseline") return Pooling::baseline;
  throw ArgumentError("unknown pooling '" + s + "' (expected attention or baseline)");
}

inline bool uses_video(Modality m) { return m != Modality::text; }
inline bool uses_text(Modality m) { return m != Modality::video; }

struct ModelConfig {
  Modality modality = Modality::video;
  Pooling pooling = Pooling::attention;
  std::size_t feature_dim = 2048;
  std::size_t word_dim = 300;
  std::size_t embed_dim = 256;
  std::size_t video_attention_hidden = 128;
  std::size_t text_attention_hidden = 128;
  std::size_t lstm_hidden = 128;
  std::size_t fusion_dim = 128;
  double frame_dropout = 0.0;
  double text_dropout = 0.0;
  double fusion_dropout = 0.0;
  std::uint64_t seed = 0;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct VideoBranch {
  DenseLayer projection;  // feature_dim -> embed_dim, relu
  AttentionBlock attention;

  std::size_t feature_dim() const { return projection.in_dim(); }
  std::size_t embed_dim() const { return projection.out_dim(); }
};

struct TextBranch {
  std::size_t word_dim = 0;
  BiLstm encoder;
  AttentionBlock attention;  // over 2 * lstm_hidden

  std::size_t output_dim() const { return 2 * encoder.hidden_dim(); }
};

struct FusionHead {
  DenseLayer hidden;  // concat_dim -> fusion_dim, relu
  DenseLayer output;  // fusion_dim -> 1
};

/// Train-time switches threaded through a forward pass.
struct ForwardMode {
  bool training = false;
  DropoutStream* dropout = nullptr;
};

struct VideoResult {
  Var embedding;
  Var alpha;
};

struct TextResult {
  Var embedding;
  std::optional<Var> beta;
};

inline VideoResult video_forward(Tape& tape, const VideoBranch& branch, std::span<const Var> frames, Pooling pooling,
                                 double dropout_rate = 0.0, ForwardMode mode = {}) {
  if (frames.empty()) throw ArgumentError("video input has no frames");
  std::vector<Var> embeddings;
  embeddings.reserve(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto& f = frames[i].value();
    if (f.rank() != 1 || f.size() != branch.feature_dim()) {
      throw ShapeError("frame " + std::to_string(i) + " has shape " + shape_string(f.shape()) + ", expected [" +
                       std::to_string(branch.feature_dim()) + "]");
    }
    auto q = dense_forward(tape, branch.projection, frames[i]);
    embeddings.push_back(dropout(tape, q, dropout_rate, mode.dropout, mode.training));
  }
  auto pooled = pooling == Pooling::attention ? attention_forward(tape, branch.attention, embeddings)
                                              : mean_pool(tape, embeddings);
  return {pooled.pooled, pooled.weights};
}

inline TextResult text_forward(Tape& tape, const TextBranch& branch, std::span<const Var> words, Pooling pooling,
                               double dropout_rate = 0.0, ForwardMode mode = {}) {
  if (words.empty()) throw ArgumentError("text input has no tokens");
  for (std::size_t t = 0; t < words.size(); ++t) {
    const auto& w = words[t].value();
    if (w.rank() != 1 || w.size() != branch.word_dim) {
      throw ShapeError("word " + std::to_string(t) + " has shape " + shape_string(w.shape()) + ", expected [" +
                       std::to_string(branch.word_dim) + "]");
    }
  }
  auto enc = bilstm_forward(tape, branch.encoder, words);
  if (pooling == Pooling::baseline) {
    auto last = concat({enc.forward_h.back(), enc.backward_h.front()});
    return {dropout(tape, last, dropout_rate, mode.dropout, mode.training), std::nullopt};
  }
  std::vector<Var> states;
  states.reserve(enc.states.size());
  for (auto s : enc.states) states.push_back(dropout(tape, s, dropout_rate, mode.dropout, mode.training));
  auto pooled = attention_forward(tape, branch.attention, states);
  return {pooled.pooled, pooled.weights};
}

/// Output of a forward pass, as values.
struct ModelOutput {
  double logit = 0.0;  // popular-class score, pre-sigmoid
  double probability = 0.5;
  std::optional<Tensor> alpha;
  std::optional<Tensor> beta;
  std::optional<Tensor> video_embedding;
  std::optional<Tensor> text_embedding;
  std::optional<Tensor> multimodal_embedding;
};

/// Output of a forward pass, as tape nodes.
struct TapedOutput {
  Var logit;
  Var fusion_hidden;
  std::optional<Var> alpha;
  std::optional<Var> beta;
  std::optional<Var> video_embedding;
  std::optional<Var> text_embedding;
  std::vector<Var> frame_inputs;
  std::vector<Var> word_inputs;

  ModelOutput values() const {
    ModelOutput out;
    out.logit = logit.value().item();
    out.probability = sigmoid(out.logit);
    if (alpha) out.alpha = alpha->value();
    if (beta) out.beta = beta->value();
    if (video_embedding) out.video_embedding = video_embedding->value();
    if (text_embedding) out.text_embedding = text_embedding->value();
    out.multimodal_embedding = fusion_hidden.value();
    return out;
  }
};

struct ModelInput {
  std::vector<Tensor> frames;  // N x [feature_dim]
  std::vector<Tensor> words;   // T x [word_dim]
};

class PopularityModel {
 public:
  static PopularityModel create(const ModelConfig& config) {
    check_dropout_rate(config.frame_dropout);
    check_dropout_rate(config.text_dropout);
    check_dropout_rate(config.fusion_dropout);
    Rng rng(config.seed);
    PopularityModel m;
    m.config_ = config;
    std::size_t concat_dim = 0;
    if (uses_video(config.modality)) {
      m.video_ = VideoBranch{
          DenseLayer::create("video.projection", config.feature_dim, config.embed_dim, Activation::relu, rng),
          AttentionBlock::create("video.attention", config.embed_dim, config.video_attention_hidden, rng)};
      concat_dim += config.embed_dim;
    }
    if (uses_text(config.modality)) {
      m.text_ = TextBranch{config.word_dim, BiLstm::create("text.bilstm", config.word_dim, config.lstm_hidden, rng),
                           AttentionBlock::create("text.attention", 2 * config.lstm_hidden, config.text_attention_hidden,
                                                   rng)};
      concat_dim += 2 * config.lstm_hidden;
    }
    m.head_ = FusionHead{DenseLayer::create("head.hidden", concat_dim, config.fusion_dim, Activation::relu, rng),
                         DenseLayer::create("head.output", config.fusion_dim, 1, Activation::identity, rng)};
    return m;
  }

  const ModelConfig& config() const noexcept { return config_; }
  Modality modality() const noexcept { return config_.modality; }

  const std::optional<VideoBranch>& video() const noexcept { return video_; }
  const std::optional<TextBranch>& text() const noexcept { return text_; }
  const FusionHead& head() const noexcept { return head_; }
  std::optional<VideoBranch>& video() noexcept { return video_; }
  std::optional<TextBranch>& text() noexcept { return text_; }
  FusionHead& head() noexcept { return head_; }

  /// Every parameter in a fixed order.
  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    auto dense = [&](DenseLayer& d) {
      out.push_back(&d.weight);
      out.push_back(&d.bias);
    };
    auto attn = [&](AttentionBlock& a) {
      out.insert(out.end(), {&a.w_u, &a.b_u, &a.w_a, &a.b_a});
    };
    auto cell = [&](LstmCell& c) {
      dense(c.input_gate);
      dense(c.forget_gate);
      dense(c.output_gate);
      dense(c.candidate);
    };
    if (video_) {
      dense(video_->projection);
      attn(video_->attention);
    }
    if (text_) {
      cell(text_->encoder.forward_cell);
      cell(text_->encoder.backward_cell);
      attn(text_->attention);
    }
    dense(head_.hidden);
    dense(head_.output);
    return out;
  }

  std::vector<const Parameter*> parameters() const {
    auto ps = const_cast<PopularityModel*>(this)->parameters();
    return {ps.begin(), ps.end()};
  }

  std::vector<Parameter*> trainable_parameters() {
    std::vector<Parameter*> out;
    for (auto* p : parameters())
      if (p->trainable) out.push_back(p);
    return out;
  }

  Parameter* find_parameter(const std::string& name) {
    for (auto* p : parameters())
      if (p->name == name) return p;
    return nullptr;
  }

  /// Freezes or unfreezes the video and text branches; the head stays trainable.
  void set_branches_trainable(bool trainable) {
    for (auto* p : parameters())
      if (p->name.rfind("head.", 0) != 0) p->trainable = trainable;
  }

 private:
  ModelConfig config_;
  std::optional<VideoBranch> video_;
  std::optional<TextBranch> text_;
  FusionHead head_;
};

/// Applies the fusion head to the embeddings the modality requires.
inline TapedOutput fuse_forward(Tape& tape, const PopularityModel& model, std::optional<Var> v, std::optional<Var> d,
                                ForwardMode mode = {}) {
  const auto m = model.modality();
  if (uses_video(m) != v.has_value()) {
    throw UsageError(std::string("modality ") + to_string(m) + (v ? " does not take" : " requires") +
                     " a video embedding");
  }
  if (uses_text(m) != d.has_value()) {
    throw UsageError(std::string("modality ") + to_string(m) + (d ? " does not take" : " requires") +
                     " a text embedding");
  }
  Var joint = v && d ? concat({*v, *d}) : v ? *v : *d;
  auto hidden = dense_forward(tape, model.head().hidden, joint);
  hidden = dropout(tape, hidden, model.config().fusion_dropout, mode.dropout, mode.training);
  auto logit = dense_forward(tape, model.head().output, hidden);
  TapedOutput out{.logit = logit, .fusion_hidden = hidden};
  out.video_embedding = v;
  out.text_embedding = d;
  return out;
}

inline ModelOutput fuse_predict(const PopularityModel& model, const std::optional<Tensor>& v,
                                const std::optional<Tensor>& d) {
  Tape tape;
  std::optional<Var> vv;
  std::optional<Var> dv;
  if (v) vv = tape.constant(*v);
  if (d) dv = tape.constant(*d);
  return fuse_forward(tape, model, vv, dv).values();
}

/// End-to-end forward on one tape. With `frames_require_grad` the frame
/// feature inputs are gradient-requiring leaves, so backward() reaches them.
inline TapedOutput model_forward(Tape& tape, const PopularityModel& model, std::span<const Tensor> frames,
                                 std::span<const Tensor> words, ForwardMode mode = {},
                                 bool frames_require_grad = false) {
  const auto& cfg = model.config();
  std::optional<Var> v;
  std::optional<Var> d;
  std::optional<Var> alpha;
  std::optional<Var> beta;
  std::vector<Var> frame_vars;
  std::vector<Var> word_vars;
  if (uses_video(cfg.modality)) {
    for (const auto& f : frames) frame_vars.push_back(tape.input(f, frames_require_grad));
    auto r = video_forward(tape, *model.video(), frame_vars, cfg.pooling, cfg.frame_dropout, mode);
    v = r.embedding;
    alpha = r.alpha;
  } else if (!frames.empty()) {
    throw UsageError("text-only model received frame features");
  }
  if (uses_text(cfg.modality)) {
    for (const auto& w : words) word_vars.push_back(tape.input(w, false));
    auto r = text_forward(tape, *model.text(), word_vars, cfg.pooling, cfg.text_dropout, mode);
    d = r.embedding;
    beta = r.beta;
  } else if (!words.empty()) {
    throw UsageError("video-only model received word vectors");
  }
  auto out = fuse_forward(tape, model, v, d, mode);
  out.alpha = alpha;
  out.beta = beta;
  out.frame_inputs = std::move(frame_vars);
  out.word_inputs = std::move(word_vars);
  return out;
}

inline TapedOutput model_forward(Tape& tape, const PopularityModel& model, const ModelInput& input,
                                 ForwardMode mode = {}, bool frames_require_grad = false) {
  return model_forward(tape, model, input.frames, input.words, mode, frames_require_grad);
}

/// Inference-mode prediction.
inline ModelOutput model_predict(const PopularityModel& model, std::span<const Tensor> frames,
                                 std::span<const Tensor> words) {
  Tape tape;
  return model_forward(tape, model, frames, words).values();
}

inline ModelOutput model_predict(const PopularityModel& model, const ModelInput& input) {
  return model_predict(model, input.frames, input.words);
}

/// Multimodal model assembled from separately trained unimodal models. The
/// branches are copied and frozen unless `fine_tune` is set; the head is fresh.
inline PopularityModel assemble_multimodal(const PopularityModel& video_model, const PopularityModel& text_model,
                                           std::size_t fusion_dim, std::uint64_t seed, bool fine_tune = false) {
  if (video_model.modality() != Modality::video) throw ArgumentError("video checkpoint is not a video-only model");
  if (text_model.modality() != Modality::text) throw ArgumentError("text checkpoint is not a text-only model");
  if (video_model.config().pooling != text_model.config().pooling) {
    throw ArgumentError("video and text checkpoints use different pooling");
  }
  ModelConfig cfg = video_model.config();
  const auto& tc = text_model.config();
  cfg.modality = Modality::multimodal;
  cfg.word_dim = tc.word_dim;
  cfg.lstm_hidden = tc.lstm_hidden;
  cfg.text_dropout = tc.text_dropout;
  cfg.text_attention_hidden = tc.text_attention_hidden;
  cfg.fusion_dim = fusion_dim;
  cfg.seed = seed;
  auto m = PopularityModel::create(cfg);
  m.video() = video_model.video();
  m.text() = text_model.text();
  m.set_branches_trainable(fine_tune);
  return m;
}

}  // namespace attnpop
