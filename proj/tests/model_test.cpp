#include <gtest/gtest.h>

#include <set>

#include "attnpop/model.hpp"
#include "reference_model.hpp"
#include "test_util.hpp"

namespace attnpop {
namespace {

using testing::random_tensor;

ModelConfig tiny(Modality m, std::uint64_t seed = 1) {
  ModelConfig c;
  c.modality = m;
  c.feature_dim = 5;
  c.word_dim = 4;
  c.embed_dim = 3;
  c.video_attention_hidden = 3;
  c.text_attention_hidden = 2;
  c.lstm_hidden = 3;
  c.fusion_dim = 4;
  c.seed = seed;
  return c;
}

std::vector<Tensor> random_seq(std::size_t n, std::size_t dim, Rng& rng) {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_tensor({dim}, rng));
  return out;
}

std::vector<Var> leaves(Tape& t, const std::vector<Tensor>& xs) {
  std::vector<Var> out;
  for (const auto& x : xs) out.push_back(t.constant(x));
  return out;
}

TEST(VideoForward, SingleFrame) {
  Rng rng(1);
  auto model = PopularityModel::create(tiny(Modality::video));
  const auto q = random_tensor({5}, rng);
  Tape t;
  auto r = video_forward(t, *model.video(), leaves(t, {q}), Pooling::attention);
  EXPECT_EQ(r.alpha.value(), Tensor::vector({1.0}));
  const auto& proj = model.video()->projection;
  Tape t2;
  EXPECT_EQ(r.embedding.value(), dense_forward(t2, proj, t2.constant(q)).value());
}

TEST(VideoForward, IdenticalFramesGiveUniformWeights) {
  Rng rng(2);
  auto model = PopularityModel::create(tiny(Modality::video));
  const auto q = random_tensor({5}, rng);
  Tape t;
  auto r = video_forward(t, *model.video(), leaves(t, {q, q, q, q}), Pooling::attention);
  for (double a : r.alpha.value().values()) EXPECT_NEAR(a, 0.25, 1e-15);
  Tape t2;
  const auto proj = dense_forward(t2, model.video()->projection, t2.constant(q)).value();
  EXPECT_LE(testing::max_abs_diff(r.embedding.value(), proj), 1e-15);
}

TEST(VideoForward, MatchesComposedReference) {
  Rng rng(3);
  auto model = PopularityModel::create(tiny(Modality::video, 9));
  const auto frames = random_seq(3, 5, rng);
  Tape t;
  auto r = video_forward(t, *model.video(), leaves(t, frames), Pooling::attention);

  Tape ref;
  std::vector<Var> qs;
  for (const auto& f : frames) qs.push_back(ref.constant(dense_forward(ref, model.video()->projection, ref.constant(f)).value()));
  auto want = attention_forward(ref, model.video()->attention, qs);
  EXPECT_LE(testing::max_abs_diff(r.alpha.value(), want.weights.value()), 1e-12);
  EXPECT_LE(testing::max_abs_diff(r.embedding.value(), want.pooled.value()), 1e-12);
}

TEST(VideoForward, WrongFeatureDimensionNamesFrame) {
  Rng rng(4);
  auto model = PopularityModel::create(tiny(Modality::video));
  auto frames = random_seq(3, 5, rng);
  frames[2] = random_tensor({6}, rng);
  Tape t;
  try {
    video_forward(t, *model.video(), leaves(t, frames), Pooling::attention);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("frame 2"), std::string::npos);
  }
}

TEST(VideoForward, BaselineUsesUniformMean) {
  Rng rng(5);
  auto model = PopularityModel::create(tiny(Modality::video));
  const auto frames = random_seq(4, 5, rng);
  Tape t;
  auto r = video_forward(t, *model.video(), leaves(t, frames), Pooling::baseline);
  for (double a : r.alpha.value().values()) EXPECT_EQ(a, 0.25);
}

TEST(TextForward, SingleToken) {
  Rng rng(6);
  auto model = PopularityModel::create(tiny(Modality::text));
  const auto w = random_tensor({4}, rng);
  Tape t;
  auto r = text_forward(t, *model.text(), leaves(t, {w}), Pooling::attention);
  ASSERT_TRUE(r.beta);
  EXPECT_EQ(r.beta->value(), Tensor::vector({1.0}));
  Tape t2;
  auto h = bilstm_forward(t2, model.text()->encoder, leaves(t2, {w}));
  EXPECT_EQ(r.embedding.value(), h.states[0].value());
}

// With shared directional weights and a repeated word, position t holds
// [f_t; f_{T+1-t}]. For T = 2 the two states are half-swaps of each other, so
// an attention layer that treats both halves alike scores them equally.
TEST(TextForward, RepeatedWordSymmetricWeightsGiveUniformBeta) {
  Rng rng(7);
  auto model = PopularityModel::create(tiny(Modality::text));
  auto& text = *model.text();
  text.encoder.backward_cell = text.encoder.forward_cell;
  auto& w_u = text.attention.w_u.value;
  const auto half = text.encoder.hidden_dim();
  for (std::size_t r = 0; r < w_u.dim(0); ++r)
    for (std::size_t c = 0; c < half; ++c) w_u.at(r, half + c) = w_u.at(r, c);
  const auto w = random_tensor({4}, rng);
  Tape t;
  auto r = text_forward(t, text, leaves(t, {w, w}), Pooling::attention);
  EXPECT_NEAR(r.beta->value()[0], 0.5, 1e-15);
  EXPECT_NEAR(r.beta->value()[1], 0.5, 1e-15);
}

TEST(TextForward, MatchesHandUnrolledReference) {
  Rng rng(8);
  auto model = PopularityModel::create(tiny(Modality::text, 4));
  const auto words = random_seq(3, 4, rng);
  Tape t;
  auto r = text_forward(t, *model.text(), leaves(t, words), Pooling::attention);

  // Independent scalar recurrence and attention.
  const auto& enc = model.text()->encoder;
  const auto hd = enc.hidden_dim();
  auto step = [&](const LstmCell& cell, const Tensor& x, std::vector<double>& h, std::vector<double>& c) {
    std::vector<double> xh(x.values().begin(), x.values().end());
    xh.insert(xh.end(), h.begin(), h.end());
    auto lin = [&](const DenseLayer& d, std::size_t j) {
      double s = d.bias.value[j];
      for (std::size_t k = 0; k < xh.size(); ++k) s += d.weight.value.at(j, k) * xh[k];
      return s;
    };
    for (std::size_t j = 0; j < hd; ++j) {
      const double i = 1 / (1 + std::exp(-lin(cell.input_gate, j)));
      const double f = 1 / (1 + std::exp(-lin(cell.forget_gate, j)));
      const double o = 1 / (1 + std::exp(-lin(cell.output_gate, j)));
      const double g = std::tanh(lin(cell.candidate, j));
      c[j] = f * c[j] + i * g;
      h[j] = o * std::tanh(c[j]);
    }
  };
  std::vector<std::vector<double>> states(3, std::vector<double>(2 * hd));
  std::vector<double> h(hd, 0.0), c(hd, 0.0);
  for (int i = 0; i < 3; ++i) {
    step(enc.forward_cell, words[i], h, c);
    std::copy(h.begin(), h.end(), states[i].begin());
  }
  h.assign(hd, 0.0);
  c.assign(hd, 0.0);
  for (int i = 2; i >= 0; --i) {
    step(enc.backward_cell, words[i], h, c);
    std::copy(h.begin(), h.end(), states[i].begin() + static_cast<long>(hd));
  }
  const auto& att = model.text()->attention;
  std::vector<double> scores(3);
  for (int i = 0; i < 3; ++i) {
    double a = att.b_a.value[0];
    for (std::size_t r = 0; r < att.hidden_dim(); ++r) {
      double u = att.b_u.value[r];
      for (std::size_t k = 0; k < 2 * hd; ++k) u += att.w_u.value.at(r, k) * states[i][k];
      a += att.w_a.value.at(0, r) * std::tanh(u);
    }
    scores[i] = a;
  }
  double z = 0;
  for (double s : scores) z += std::exp(s);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(r.beta->value()[i], std::exp(scores[i]) / z, 1e-12);
  for (std::size_t k = 0; k < 2 * hd; ++k) {
    double d = 0;
    for (int i = 0; i < 3; ++i) d += std::exp(scores[i]) / z * states[i][k];
    EXPECT_NEAR(r.embedding.value()[k], d, 1e-12);
  }
}

TEST(FusePredict, ZeroHeadGivesHalf) {
  auto model = PopularityModel::create(tiny(Modality::video));
  for (auto* p : model.parameters())
    if (p->name.rfind("head.", 0) == 0) p->value = Tensor::zeros(p->value.shape());
  const auto out = fuse_predict(model, Tensor::vector({1, 2, 3}), std::nullopt);
  EXPECT_EQ(out.logit, 0.0);
  EXPECT_EQ(out.probability, 0.5);
}

TEST(FusePredict, ModalityContractViolations) {
  auto video = PopularityModel::create(tiny(Modality::video));
  EXPECT_THROW(fuse_predict(video, Tensor::vector({1, 2, 3}), Tensor::zeros({6})), UsageError);
  EXPECT_THROW(fuse_predict(video, std::nullopt, std::nullopt), UsageError);
  auto mm = PopularityModel::create(tiny(Modality::multimodal));
  EXPECT_THROW(fuse_predict(mm, Tensor::vector({1, 2, 3}), std::nullopt), UsageError);
}

TEST(FusePredict, MatchesScalarReference) {
  Rng rng(10);
  auto model = PopularityModel::create(tiny(Modality::multimodal, 3));
  const auto v = random_tensor({3}, rng);
  const auto d = random_tensor({6}, rng);
  const auto out = fuse_predict(model, v, d);
  std::vector<double> x(v.values().begin(), v.values().end());
  x.insert(x.end(), d.values().begin(), d.values().end());
  const auto& h = model.head().hidden;
  const auto& o = model.head().output;
  double s = o.bias.value[0];
  for (std::size_t j = 0; j < h.out_dim(); ++j) {
    double a = h.bias.value[j];
    for (std::size_t k = 0; k < x.size(); ++k) a += h.weight.value.at(j, k) * x[k];
    s += o.weight.value.at(0, j) * std::max(a, 0.0);
  }
  EXPECT_NEAR(out.logit, s, 1e-12);
  EXPECT_NEAR(out.probability, 1 / (1 + std::exp(-s)), 1e-12);
}

TEST(ModelPredict, PresenceContracts) {
  Rng rng(11);
  const auto frames = random_seq(3, 5, rng);
  const auto words = random_seq(4, 4, rng);
  auto mm = PopularityModel::create(tiny(Modality::multimodal));
  const auto both = model_predict(mm, {frames, words});
  EXPECT_TRUE(both.alpha && both.beta && both.video_embedding && both.text_embedding);
  auto text = PopularityModel::create(tiny(Modality::text));
  const auto t = model_predict(text, {{}, words});
  EXPECT_FALSE(t.alpha);
  EXPECT_TRUE(t.beta);
  EXPECT_THROW(model_predict(text, {frames, words}), UsageError);
  EXPECT_EQ(t.probability, sigmoid(t.logit));
}

TEST(ModelPredict, DeterministicInInferenceMode) {
  Rng rng(12);
  ModelInput in{random_seq(3, 5, rng), random_seq(4, 4, rng)};
  auto c = tiny(Modality::multimodal);
  c.frame_dropout = c.text_dropout = c.fusion_dropout = 0.5;
  auto mm = PopularityModel::create(c);
  const auto a = model_predict(mm, in);
  const auto b = model_predict(mm, in);
  EXPECT_EQ(std::bit_cast<std::uint64_t>(a.logit), std::bit_cast<std::uint64_t>(b.logit));
}

TEST(ModelPredict, AttentionWeightsSumToOne) {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    auto mm = PopularityModel::create(tiny(Modality::multimodal, static_cast<std::uint64_t>(trial)));
    const auto out = model_predict(mm, {random_seq(1 + rng.below(6), 5, rng), random_seq(1 + rng.below(6), 4, rng)});
    double sa = 0, sb = 0;
    for (double x : out.alpha->values()) sa += x;
    for (double x : out.beta->values()) sb += x;
    EXPECT_NEAR(sa, 1.0, 1e-12);
    EXPECT_NEAR(sb, 1.0, 1e-12);
  }
}

TEST(ModelPredict, FrameOrderPermutesAlphaOnly) {
  Rng rng(14);
  auto model = PopularityModel::create(tiny(Modality::video, 5));
  const auto frames = random_seq(5, 5, rng);
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  std::vector<Tensor> shuffled;
  for (auto p : perm) shuffled.push_back(frames[p]);
  const auto a = model_predict(model, {frames, {}});
  const auto b = model_predict(model, {shuffled, {}});
  EXPECT_NEAR(a.logit, b.logit, 1e-14);
  for (std::size_t i = 0; i < perm.size(); ++i) EXPECT_NEAR(b.alpha->values()[i], a.alpha->values()[perm[i]], 1e-15);
}

ModelConfig desk(Modality m, Pooling pooling, std::uint64_t seed) {
  ModelConfig c = tiny(m, seed);
  c.pooling = pooling;
  c.feature_dim = 12;
  c.word_dim = 6;
  c.embed_dim = 8;
  c.video_attention_hidden = 4;
  c.text_attention_hidden = 4;
  c.lstm_hidden = 4;
  c.fusion_dim = 4;
  return c;
}

class ModalityGradient : public ::testing::TestWithParam<std::tuple<Modality, Pooling>> {};

// The oracle differentiates a quad-precision reimplementation, so rounding in
// the difference quotient stays far below the smallest gradients checked.
TEST_P(ModalityGradient, TrainingLossMatchesFiniteDifferences) {
  const auto [modality, pooling] = GetParam();
  Rng rng(15);
  auto model = PopularityModel::create(desk(modality, pooling, 21));
  const auto frames = random_seq(3, 12, rng);
  const auto words = random_seq(4, 6, rng);
  const std::vector<Tensor> none;
  for (double label : {0.0, 1.0}) {
    const auto r = testing::check_parameter_gradients(model, uses_video(modality) ? frames : none,
                                                      uses_text(modality) ? words : none, label);
    EXPECT_LT(r.max_relative_error, 1e-6)
        << r.worst << " analytic " << r.worst_analytic << " numeric " << r.worst_numeric;
  }
}

INSTANTIATE_TEST_SUITE_P(AllModalities, ModalityGradient,
                         ::testing::Combine(::testing::Values(Modality::video, Modality::text, Modality::multimodal),
                                            ::testing::Values(Pooling::attention, Pooling::baseline)),
                         [](const auto& info) {
                           return to_string(std::get<0>(info.param)) + "_" + to_string(std::get<1>(info.param));
                         });

TEST(ReferenceModel, AgreesWithEngineInDoublePrecision) {
  Rng rng(17);
  for (auto pooling : {Pooling::attention, Pooling::baseline}) {
    auto model = PopularityModel::create(desk(Modality::multimodal, pooling, 5));
    const auto frames = random_seq(3, 12, rng);
    const auto words = random_seq(4, 6, rng);
    testing::RefModel<double> ref(model);
    const double want = ref.logit(testing::to_ref<double>(frames), testing::to_ref<double>(words));
    EXPECT_NEAR(model_predict(model, {frames, words}).logit, want, 1e-12);
  }
}

// Perturbing b_a moves every score together, so its derivative is exactly zero.
TEST(ModalityGradientEdge, AttentionOffsetHasZeroGradient) {
  Rng rng(18);
  auto model = PopularityModel::create(desk(Modality::video, Pooling::attention, 2));
  Tape t;
  auto out = model_forward(t, model, random_seq(3, 12, rng), {});
  EXPECT_EQ(backward(t, out.logit).of(model.video()->attention.b_a)[0], 0.0);
}

TEST(Parameters, NamesAreUnique) {
  auto mm = PopularityModel::create(tiny(Modality::multimodal));
  std::set<std::string> names;
  for (const auto* p : mm.parameters()) EXPECT_TRUE(names.insert(p->name).second) << p->name;
}

TEST(Assemble, BranchesCopiedAndFrozen) {
  auto video = PopularityModel::create(tiny(Modality::video, 1));
  auto text = PopularityModel::create(tiny(Modality::text, 2));
  auto mm = assemble_multimodal(video, text, 4, 3);
  EXPECT_EQ(mm.modality(), Modality::multimodal);
  EXPECT_EQ(mm.video()->projection.weight.value, video.video()->projection.weight.value);
  EXPECT_EQ(mm.text()->attention.w_a.value, text.text()->attention.w_a.value);
  for (auto* p : mm.parameters()) EXPECT_EQ(p->trainable, p->name.rfind("head.", 0) == 0) << p->name;
  EXPECT_THROW(assemble_multimodal(text, video, 4, 3), ArgumentError);
}

TEST(Assemble, FrozenBranchesStillReceiveGradients) {
  Rng rng(16);
  auto mm = assemble_multimodal(PopularityModel::create(tiny(Modality::video, 1)),
                                PopularityModel::create(tiny(Modality::text, 2)), 4, 3);
  Tape t;
  auto out = model_forward(t, mm, {random_seq(3, 5, rng), random_seq(2, 4, rng)}, {}, true);
  const auto g = backward(t, out.logit);
  double norm = 0;
  const auto weight_grad = g.of(mm.video()->projection.weight);
  for (double x : weight_grad.values()) norm += x * x;
  EXPECT_GT(norm, 0.0);
  double in_norm = 0;
  const auto input_grad = g.of(out.frame_inputs[0]);
  for (double x : input_grad.values()) in_norm += x * x;
  EXPECT_GT(in_norm, 0.0);
}

}  // namespace
}  // namespace attnpop
