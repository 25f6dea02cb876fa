#include "doctest.h"

#include <numeric>

#include "crossalign/commands.hpp"
#include "crossalign/model.hpp"
#include "oracles.hpp"

using namespace crossalign;
using nn::Tensor;

namespace {

HiddenSequence<double> random_states(Rng& rng, std::size_t rows, std::size_t valid, std::size_t width) {
  HiddenSequence<double> s{Tensor<double>({rows, width}), valid};
  for (std::size_t r = 0; r < valid; ++r)
    for (auto& x : s.values.row(r)) x = rng.uniform(-1, 1);
  return s;
}

struct AttentionWeights {
  Tensor<double> u, v, b;
  AttentionParams<double> view() const { return {u, v, b}; }
};

AttentionWeights random_attention(Rng& rng, std::size_t heads, std::size_t chunk) {
  AttentionWeights w{oracle::random_matrix(rng, heads, chunk), oracle::random_matrix(rng, heads, chunk),
                     Tensor<double>({heads})};
  for (auto& x : w.b.flat()) x = rng.uniform(-1, 1);
  return w;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

}  // namespace

// ---------------------------------------------------------------------------
// encoders

TEST_CASE("bilstm encoders match the chained-cell oracle") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t D = 1 + rng.below(8), H = 1 + rng.below(4), T = 1 + rng.below(10);
    nn::ParameterSet<double> params;
    BiLstmEncoder<double> enc(params, "enc", D, H);
    oracle::randomize(params, rng);
    const std::size_t rows = T + rng.below(3);
    auto X = oracle::random_matrix(rng, rows, D);
    BiLstmCache<double> cache;
    const auto out = enc.forward(params, X, T, cache);
    const auto want = oracle::bilstm(params, "enc", X, T);
    CHECK(out.valid_len == T);
    CHECK(out.width() == 2 * H);
    CHECK(max_abs_diff(out.values, want) < 1e-12);
    for (std::size_t r = T; r < rows; ++r)
      for (double x : out.values.row(r)) CHECK(x == 0.0);
  }
}

TEST_CASE("single-position encoder pairs both directions on the same input") {
  Rng rng(2);
  nn::ParameterSet<double> params;
  BiLstmEncoder<double> enc(params, "speech_enc", 34, 3);
  oracle::randomize(params, rng);
  const auto X = oracle::random_matrix(rng, 1, 34);
  BiLstmCache<double> cache;
  const auto out = encode_speech(enc, params, X, 1, cache);
  const auto fwd = nn::lstm_forward(enc.forward_layer().cell_params(params), X, false);
  const auto bwd = nn::lstm_forward(enc.backward_layer().cell_params(params), X, false);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(out.values(0, k) == fwd(0, k));
    CHECK(out.values(0, 3 + k) == bwd(0, k));
  }
}

TEST_CASE("zero parameters give zero states") {
  nn::ParameterSet<double> params;
  BiLstmEncoder<double> enc(params, "text_enc", 5, 4);
  Rng rng(1);
  const auto X = oracle::random_matrix(rng, 4, 5);
  BiLstmCache<double> cache;
  TokenEmbeddingSequence<double> e{X, {"a", "b", "c", "d"}};
  const auto out = encode_text(enc, params, e, cache);
  for (double v : out.values.flat()) CHECK(v == 0.0);
}

TEST_CASE("encoder rejects empty input and wrong widths") {
  nn::ParameterSet<double> params;
  BiLstmEncoder<double> enc(params, "speech_enc", 34, 2);
  BiLstmCache<double> cache;
  Tensor<double> X({3, 34});
  CHECK_THROWS_AS(encode_speech(enc, params, X, 0, cache), ValidationError);
  Tensor<double> wrong({3, 33});
  CHECK_THROWS_AS(encode_speech(enc, params, wrong, 3, cache), ShapeError);
}

TEST_CASE("constant input with no recurrence follows the gate closed form") {
  // With W_h = 0 every step sees the same gates, so c_t = i g (1 + f + ... + f^(t-1)).
  nn::ParameterSet<double> params;
  BiLstmEncoder<double> enc(params, "text_enc", 3, 2);
  Rng rng(5);
  oracle::randomize(params, rng);
  params.value(params.index("text_enc.fwd.W_h")).zero();
  params.value(params.index("text_enc.bwd.W_h")).zero();
  Tensor<double> X({5, 3});
  for (std::size_t t = 0; t < 5; ++t) X(t, 0) = 0.3, X(t, 1) = -0.7, X(t, 2) = 0.2;
  BiLstmCache<double> cache;
  const auto out = enc.forward(params, X, 5, cache);
  const auto& Wx = params.value(params.index("text_enc.fwd.W_x"));
  const auto& b = params.value(params.index("text_enc.fwd.bias"));
  for (std::size_t k = 0; k < 2; ++k) {
    auto gate = [&](std::size_t block) {
      double s = b[block * 2 + k];
      for (std::size_t d = 0; d < 3; ++d) s += Wx(block * 2 + k, d) * X(0, d);
      return s;
    };
    const double i = oracle::sigmoid(gate(0)), f = oracle::sigmoid(gate(1));
    const double g = std::tanh(gate(2)), o = oracle::sigmoid(gate(3));
    double c = 0;
    for (std::size_t t = 0; t < 5; ++t) {
      c = f * c + i * g;
      CHECK(out.values(t, k) == doctest::Approx(o * std::tanh(c)).epsilon(1e-13));
    }
  }
  // The backward half at position t has seen 5 - t inputs, the forward half t + 1.
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t k = 0; k < 2; ++k) CHECK(out.values(t, k) != out.values(4 - t, 2 + k));
}

TEST_CASE("bidirectionality and reversal symmetry") {
  Rng rng(9);
  nn::ParameterSet<double> params;
  BiLstmEncoder<double> enc(params, "e", 4, 3);
  oracle::randomize(params, rng);
  auto X = oracle::random_matrix(rng, 6, 4);
  BiLstmCache<double> cache;
  const auto base = enc.forward(params, X, 6, cache);

  auto perturbed = X;
  perturbed(5, 0) += 0.5;
  const auto moved = enc.forward(params, perturbed, 6, cache);
  for (std::size_t k = 0; k < 3; ++k) CHECK(moved.values(0, k) == base.values(0, k));
  bool changed = false;
  for (std::size_t k = 3; k < 6; ++k) changed |= moved.values(0, k) != base.values(0, k);
  CHECK(changed);

  nn::ParameterSet<double> swapped;
  BiLstmEncoder<double> enc2(swapped, "e", 4, 3);
  for (const char* part : {".W_x", ".W_h", ".bias"}) {
    swapped.value(swapped.index(std::string("e.fwd") + part)) = params.value(params.index(std::string("e.bwd") + part));
    swapped.value(swapped.index(std::string("e.bwd") + part)) = params.value(params.index(std::string("e.fwd") + part));
  }
  Tensor<double> Xr({6, 4});
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t d = 0; d < 4; ++d) Xr(t, d) = X(5 - t, d);
  const auto rev = enc2.forward(swapped, Xr, 6, cache);
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(rev.values(t, k) == base.values(5 - t, 3 + k));
      CHECK(rev.values(t, 3 + k) == base.values(5 - t, k));
    }
}

// ---------------------------------------------------------------------------
// align

TEST_CASE("attend matches the direct oracle and masks padding") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t heads = 1 + rng.below(5), chunk = 1 + rng.below(6), D = heads * chunk;
    const std::size_t N = 1 + rng.below(8), M = 1 + rng.below(5);
    const auto S = random_states(rng, N + rng.below(3), N, D);
    const auto Hs = random_states(rng, M + rng.below(2), M, D);
    const auto w = random_attention(rng, heads, chunk);
    const auto got = attend(w.view(), S, Hs);
    const auto want = oracle::attend(w.u, w.v, w.b, S.values, N, Hs.values, M);
    for (std::size_t j = 0; j < M; ++j)
      for (std::size_t d = 0; d < D; ++d) CHECK(std::abs(got.aligned.values(j, d) - want.out(j, d)) < 1e-12);
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t j = 0; j < M; ++j) {
        double sum = 0;
        for (std::size_t i = 0; i < N; ++i) {
          CHECK(std::abs(got.map.at(h, j, i) - want.alpha[h][j][i]) < 1e-12);
          CHECK(got.map.at(h, j, i) >= 0.0);
          sum += got.map.at(h, j, i);
        }
        CHECK(std::abs(sum - 1.0) < 1e-6);
        for (std::size_t i = N; i < S.rows(); ++i) CHECK(got.map.at(h, j, i) == 0.0);
      }
    // Convexity per head chunk.
    for (std::size_t j = 0; j < M; ++j)
      for (std::size_t d = 0; d < D; ++d) {
        double lo = 1e300, hi = -1e300;
        for (std::size_t i = 0; i < N; ++i) lo = std::min(lo, S.values(i, d)), hi = std::max(hi, S.values(i, d));
        CHECK(got.aligned.values(j, d) >= lo - 1e-12);
        CHECK(got.aligned.values(j, d) <= hi + 1e-12);
      }
  }
}

TEST_CASE("attend with a single frame gives weight one") {
  Rng rng(3);
  const auto S = random_states(rng, 3, 1, 10);
  const auto Hs = random_states(rng, 4, 4, 10);
  const auto w = random_attention(rng, 5, 2);
  const auto r = attend(w.view(), S, Hs);
  for (std::size_t h = 0; h < 5; ++h)
    for (std::size_t j = 0; j < 4; ++j) CHECK(r.map.at(h, j, 0) == 1.0);
  for (std::size_t j = 0; j < 4; ++j)
    for (std::size_t d = 0; d < 10; ++d) CHECK(r.aligned.values(j, d) == S.values(0, d));
}

TEST_CASE("zero scoring vectors average the valid frames and agree with hard alignment") {
  Rng rng(4);
  const auto S = random_states(rng, 7, 5, 6);
  const auto Hs = random_states(rng, 2, 2, 6);
  AttentionWeights w{Tensor<double>({3, 2}), Tensor<double>({3, 2}), Tensor<double>({3}, 0.8)};
  const auto r = attend(w.view(), S, Hs);
  const std::vector<WordSpan> spans = {{1, 5}, {1, 5}};
  const auto hard = hard_align(S, spans, 2);
  for (std::size_t j = 0; j < 2; ++j)
    for (std::size_t d = 0; d < 6; ++d) {
      double mean = 0;
      for (std::size_t i = 0; i < 5; ++i) mean += S.values(i, d) / 5;
      CHECK(std::abs(r.aligned.values(j, d) - mean) < 1e-12);
      CHECK(std::abs(r.aligned.values(j, d) - hard.values(j, d)) < 1e-9);
    }
  for (std::size_t i = 0; i < 5; ++i) CHECK(r.map.at(1, 0, i) == doctest::Approx(0.2).epsilon(1e-14));
}

TEST_CASE("attend is covariant under word permutations") {
  Rng rng(8);
  const auto S = random_states(rng, 5, 5, 8);
  const auto Hs = random_states(rng, 3, 3, 8);
  const auto w = random_attention(rng, 2, 4);
  const std::vector<std::size_t> perm = {2, 0, 1};
  HiddenSequence<double> Hp{Tensor<double>({3, 8}), 3};
  for (std::size_t j = 0; j < 3; ++j)
    std::copy(Hs.values.row(perm[j]).begin(), Hs.values.row(perm[j]).end(), Hp.values.row(j).begin());
  const auto a = attend(w.view(), S, Hs);
  const auto b = attend(w.view(), S, Hp);
  for (std::size_t j = 0; j < 3; ++j) {
    for (std::size_t d = 0; d < 8; ++d) CHECK(b.aligned.values(j, d) == a.aligned.values(perm[j], d));
    for (std::size_t i = 0; i < 5; ++i) CHECK(b.map.at(1, j, i) == a.map.at(1, perm[j], i));
  }
}

TEST_CASE("attend rejects empty speech") {
  Rng rng(1);
  auto S = random_states(rng, 3, 0, 4);
  const auto Hs = random_states(rng, 2, 2, 4);
  const auto w = random_attention(rng, 2, 2);
  CHECK_THROWS_AS(attend(w.view(), S, Hs), ValidationError);
}

TEST_CASE("hard alignment means and span validation") {
  Rng rng(6);
  const auto S = random_states(rng, 6, 6, 4);
  const std::vector<WordSpan> spans = {{2, 2}, {3, 4}, {5, 6}};
  const auto r = hard_align(S, spans, 4);
  CHECK(r.rows() == 4);
  for (std::size_t d = 0; d < 4; ++d) {
    CHECK(r.values(0, d) == S.values(1, d));
    CHECK(r.values(1, d) == (S.values(2, d) + S.values(3, d)) / 2);
    CHECK(r.values(3, d) == 0.0);
  }
  for (const auto& bad : {std::vector<WordSpan>{{1, 2}, {4, 3}}, std::vector<WordSpan>{{1, 2}, {3, 7}},
                          std::vector<WordSpan>{{0, 2}}}) {
    try {
      hard_align(S, bad, 2);
      FAIL("expected a span error");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("word") != std::string::npos);
    }
  }
}

TEST_CASE("concat pooling") {
  Rng rng(10);
  const auto S = random_states(rng, 4, 3, 5);
  const auto Hs = random_states(rng, 2, 2, 5);
  const auto r = concat_pool(S, Hs);
  REQUIRE(r.values.size() == 10);
  for (std::size_t d = 0; d < 5; ++d) {
    CHECK(r.values[d] == std::max({S.values(0, d), S.values(1, d), S.values(2, d)}));
    CHECK(r.values[5 + d] == std::max(Hs.values(0, d), Hs.values(1, d)));
  }
  const auto one = concat_pool(random_states(rng, 1, 1, 2), random_states(rng, 1, 1, 2));
  CHECK(one.values.size() == 4);

  auto Sp = S;
  for (std::size_t d = 0; d < 5; ++d) std::swap(Sp.values(0, d), Sp.values(2, d));
  CHECK(concat_pool(Sp, Hs).values == r.values);
}

// ---------------------------------------------------------------------------
// fusion and the classifier head

TEST_CASE("fusion BiLSTM input layout and oracle") {
  Rng rng(12);
  nn::ParameterSet<double> params;
  BiLstmEncoder<double> fusion(params, "fusion", 8, 2);
  oracle::randomize(params, rng);
  const auto aligned = random_states(rng, 3, 3, 4);
  const auto text = random_states(rng, 3, 3, 4);
  BiLstmCache<double> cache;
  const auto out = fuse(fusion, params, aligned, text, cache);
  Tensor<double> X({3, 8});
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t d = 0; d < 4; ++d) X(j, d) = aligned.values(j, d), X(j, 4 + d) = text.values(j, d);
  CHECK(max_abs_diff(out.values, oracle::bilstm(params, "fusion", X, 3)) < 1e-12);

  const auto short_text = random_states(rng, 2, 2, 4);
  CHECK_THROWS_AS(fuse(fusion, params, aligned, short_text, cache), ValidationError);

  nn::ParameterSet<double> zero;
  BiLstmEncoder<double> zf(zero, "fusion", 8, 2);
  const auto zout = fuse(zf, zero, aligned, text, cache);
  for (double v : zout.values.flat()) CHECK(v == 0.0);
}

TEST_CASE("classifier head against a direct oracle") {
  Rng rng(13);
  nn::ParameterSet<double> params;
  ClassifierHead<double> head(params, 6);
  const auto fused = random_states(rng, 4, 3, 6);

  auto p0 = classify(head, params, fused);
  for (double p : p0.probs) CHECK(p == 0.25);

  oracle::randomize(params, rng, 1.0);
  const auto& W = params.value(0);
  const auto pred = classify(head, params, fused);
  std::vector<double> pooled(6, -1e300), z(4, 0.0);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t d = 0; d < 6; ++d) pooled[d] = std::max(pooled[d], fused.values(t, d));
  for (std::size_t c = 0; c < 4; ++c) {
    for (std::size_t d = 0; d < 6; ++d) z[c] += W(d, c) * pooled[d];
    z[c] = std::max(z[c], 0.0);
  }
  double zsum = 0;
  for (double v : z) zsum += std::exp(v);
  double total = 0;
  for (std::size_t c = 0; c < 4; ++c) {
    CHECK(std::abs(pred.probs[c] - std::exp(z[c]) / zsum) < 1e-10);
    CHECK(pred.probs[c] > 0.0);
    total += pred.probs[c];
  }
  CHECK(std::abs(total - 1.0) < 1e-9);

  auto permuted = fused;
  for (std::size_t d = 0; d < 6; ++d) std::swap(permuted.values(0, d), permuted.values(2, d));
  for (std::size_t d = 0; d < 6; ++d) permuted.values(3, d) = 50.0;  // padding
  CHECK(classify(head, params, permuted).probs == pred.probs);
}

TEST_CASE("loss values") {
  Prediction<double> uniform;
  uniform.logits = {0, 0, 0, 0};
  for (std::size_t c = 0; c < 4; ++c) CHECK(loss(uniform, c).value == doctest::Approx(1.386294).epsilon(1e-6));

  Prediction<double> skew;
  skew.logits = {std::log(0.7), std::log(0.1), std::log(0.1), std::log(0.1)};
  CHECK(loss(skew, 0).value == doctest::Approx(0.356675).epsilon(1e-6));

  Prediction<double> confident;
  confident.logits = {0, 60, 0, 0};
  CHECK(loss(confident, 1).value < 1e-20);
  CHECK(loss(confident, 1).value >= 0.0);
}

// ---------------------------------------------------------------------------
// full model

namespace {

struct Toy {
  Tensor<double> features;
  Tensor<double> embeddings;
  std::vector<WordSpan> spans;
  ExampleView<double> view(std::size_t label = 2) const {
    return {&features, features.rows(), &embeddings, embeddings.rows(), {}, spans, label, "toy"};
  }
};

Toy make_toy(Rng& rng, std::size_t frames, std::size_t words, std::size_t feature_dim, std::size_t embed_dim) {
  Toy t{oracle::random_matrix(rng, frames, feature_dim), oracle::random_matrix(rng, words, embed_dim), {}};
  const std::size_t per = frames / words;
  for (std::size_t j = 0; j < words; ++j) t.spans.push_back({j * per + 1, j + 1 == words ? frames : (j + 1) * per});
  return t;
}

ModelConfig small_config(Variant v) {
  ModelConfig c;
  c.variant = v;
  c.feature_dim = 34;
  c.embed_dim = 7;
  c.hidden = 4;
  c.heads = 2;
  return c;
}

const Variant kAllVariants[] = {Variant::kProposed, Variant::kHardAlign, Variant::kConcat, Variant::kSpeechOnly,
                                Variant::kTextOnly};

}  // namespace

TEST_CASE("variant names round trip") {
  for (Variant v : kAllVariants) CHECK(parse_variant(to_string(v)) == v);
  CHECK_THROWS_AS(parse_variant("lstm"), ValidationError);
}

TEST_CASE("parameter naming and shapes at default dimensions") {
  Model<float> m(ModelConfig{});
  const auto& p = m.params();
  CHECK(p.value(p.index("speech_enc.fwd.W_x")).shape() == std::vector<std::size_t>{400, 34});
  CHECK(p.value(p.index("text_enc.bwd.W_x")).shape() == std::vector<std::size_t>{400, 300});
  CHECK(p.value(p.index("fusion.fwd.W_x")).shape() == std::vector<std::size_t>{400, 400});
  CHECK(p.value(p.index("align.u")).shape() == std::vector<std::size_t>{5, 40});
  CHECK(p.value(p.index("head.W")).shape() == std::vector<std::size_t>{200, 4});
  CHECK(Model<float>(ModelConfig{.variant = Variant::kConcat}).params().value(0).rows() == 400);
  CHECK_THROWS_AS(Model<float>(ModelConfig{.hidden = 7, .heads = 5}), ValidationError);
}

TEST_CASE("initialization ranges") {
  Model<double> m(small_config(Variant::kProposed));
  Rng rng(1);
  m.init(rng);
  const auto& p = m.params();
  const auto& bias = p.value(p.index("speech_enc.fwd.bias"));
  for (std::size_t k = 0; k < 16; ++k) CHECK(bias[k] == (k >= 4 && k < 8 ? 1.0 : 0.0));
  const double k = 1 / std::sqrt(34.0);
  for (double x : p.value(p.index("speech_enc.fwd.W_x")).flat()) CHECK(std::abs(x) <= k);
}

TEST_CASE("zero network predicts uniformly for every variant") {
  Rng rng(2);
  const auto toy = make_toy(rng, 9, 3, 34, 7);
  for (Variant v : kAllVariants) {
    Model<double> m(small_config(v));
    const auto r = m.forward(toy.view());
    for (double p : r.prediction.probs) CHECK(p == 0.25);
    CHECK(r.loss.value == doctest::Approx(std::log(4.0)).epsilon(1e-15));
    CHECK(r.attention.has_value() == (v == Variant::kProposed));
  }
}

TEST_CASE("forward is deterministic and ignores padding exactly") {
  Rng rng(3);
  const auto toy = make_toy(rng, 10, 3, 34, 7);
  for (Variant v : kAllVariants) {
    Model<double> m(small_config(v));
    m.init(rng);
    const auto a = m.forward(toy.view());
    const auto b = m.forward(toy.view());
    CHECK(a.prediction.logits == b.prediction.logits);

    Toy padded = toy;
    padded.features = nn::pad_rows(toy.features, 14);
    padded.embeddings = nn::pad_rows(toy.embeddings, 5);
    for (std::size_t r = 10; r < 14; ++r)
      for (auto& x : padded.features.row(r)) x = 9.0;
    for (std::size_t r = 3; r < 5; ++r)
      for (auto& x : padded.embeddings.row(r)) x = -9.0;
    auto view = padded.view();
    view.frames = 10;
    view.words = 3;
    const auto c = m.forward(view);
    CHECK(c.prediction.logits == a.prediction.logits);
    CHECK(c.loss.value == a.loss.value);
    if (c.attention) {
      for (std::size_t h = 0; h < 2; ++h)
        for (std::size_t j = 0; j < 3; ++j)
          for (std::size_t i = 10; i < 14; ++i) CHECK(c.attention->at(h, j, i) == 0.0);
    }
  }
}

TEST_CASE("backward before forward is rejected") {
  Model<double> m(small_config(Variant::kProposed));
  ForwardCache<double> cache;
  CHECK_THROWS_AS(m.backward(cache), StateError);
}

TEST_CASE("model errors carry the utterance id") {
  Rng rng(4);
  auto toy = make_toy(rng, 6, 2, 34, 7);
  toy.spans.pop_back();
  Model<double> m(small_config(Variant::kHardAlign));
  try {
    m.forward(toy.view());
    FAIL("expected a span error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("toy") != std::string::npos);
  }
}

TEST_CASE("concat never calls attend") {
  Rng rng(5);
  const auto toy = make_toy(rng, 8, 2, 34, 7);
  Model<double> m(small_config(Variant::kConcat));
  m.init(rng);
  const auto before = attend_call_count();
  ForwardCache<double> cache;
  m.forward(toy.view(), cache);
  m.backward(cache);
  CHECK(attend_call_count() == before);

  Model<double> p(small_config(Variant::kProposed));
  p.forward(toy.view());
  CHECK(attend_call_count() == before + 1);
}

TEST_CASE("full-model gradients match central differences") {
  for (Variant v : kAllVariants) {
    for (bool frozen : {true, false}) {
      CAPTURE(to_string(v));
      CAPTURE(frozen);
      commands::GradcheckOptions options;
      options.variant = v;
      options.freeze_embeddings = frozen;
      options.seed = 1;
      const auto report = commands::gradcheck_report(options);
      for (const auto& e : report.entries) {
        CAPTURE(e.name);
        CHECK(e.nan_count == 0);
        CHECK(e.max_rel_error < 1e-4);
      }
    }
  }
}
