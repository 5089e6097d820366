#include <cmath>

#include "cmwm/model.hpp"
#include "cmwm/rng.hpp"
#include "doctest.h"

using namespace cmwm;

TEST_SUITE_BEGIN("model");

namespace {

struct Fixture {
  Vocab vocab;
  SentencePolicy policy;
  ModelConfig cfg;

  explicit Fixture(int extra = 0)
      : vocab(Vocab::build("alpha beta gamma delta echo fox . ! ? , golf hotel",
                           40)) {
    policy = SentencePolicy::from_vocab(vocab);
    cfg.vocab_size = vocab.size();
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.n_layers = 2 + extra;
    cfg.ff_dim = 32;
    cfg.max_seq_len = 48;
    cfg.watermark_bits = 4;
    cfg.watermark_slots = 2;
  }

  std::vector<TokenId> tokens(const std::string& text) const {
    return tokenize(text, vocab);
  }

  std::vector<BitVec> chunks(std::initializer_list<const char*> patterns) const {
    std::vector<BitVec> out;
    for (const char* p : patterns) {
      BitVec bits;
      for (const char* c = p; *c; ++c) bits.push_back(*c == '1' ? 1 : 0);
      out.push_back(std::move(bits));
    }
    return out;
  }
};

template <typename T>
bool tensors_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) return false;
  for (int64_t i = 0; i < a.numel(); ++i)
    if (!(a[i] == b[i])) return false;
  return true;
}

}  // namespace

TEST_CASE("embed_watermark linearity and determinism") {
  ParamStore<double> store(5);
  auto wproj = make_linear(store, "wproj", 4, 2 * 16);

  const BitVec bits = {1, 0, 1, 1};
  const BitVec comp = {0, 1, 0, 0};

  Graph<double> g;
  auto a = g.value(embed_watermark(g, bits, wproj, 2, 16));
  auto b = g.value(embed_watermark(g, comp, wproj, 2, 16));
  REQUIRE(a.same_shape(b));
  // zero bias at init: complementary bits negate the projection exactly
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(a[i] == -b[i]);

  Graph<double> g2;
  auto again = g2.value(embed_watermark(g2, bits, wproj, 2, 16));
  CHECK(tensors_equal(a, again));

  for (int64_t i = 0; i < wproj.w->value.numel(); ++i) wproj.w->value[i] = 0;
  Graph<double> g3;
  auto zero = g3.value(embed_watermark(g3, bits, wproj, 2, 16));
  for (int64_t i = 0; i < zero.numel(); ++i) CHECK(zero[i] == 0.0);

  Graph<double> g4;
  CHECK_THROWS(embed_watermark(g4, BitVec{1, 0}, wproj, 2, 16));
}

TEST_CASE("gated layer is the identity at zero gates (pre-norm)") {
  Fixture f;
  ParamStore<double> store(7);
  auto base = BaseModel<double>::build(store, f.cfg);
  auto model = WatermarkModel<double>::attach_gated(store, std::move(base), 1,
                                                    f.policy);
  SplitRng rng(3);
  Graph<double> g;
  auto x = g.input(Tensor<double>::randn({6, 16}, rng), false);
  ChunkAssignment assign;
  assign.chunk_of_position.assign(6, 0);
  auto out = model.gated_layer_forward(g, x, model.gated[0],
                                       f.chunks({"1011"}), assign);
  CHECK(tensors_equal(g.value(out), g.value(x)));
}

TEST_CASE("post-norm gated layer applies LayerNorm twice at zero gates") {
  Fixture f;
  f.cfg.d_model = 2;
  f.cfg.n_heads = 1;
  f.cfg.watermark_slots = 1;
  f.cfg.norm_mode = NormMode::post;
  ParamStore<double> store(9);
  auto base = BaseModel<double>::build(store, f.cfg);
  auto model = WatermarkModel<double>::attach_gated(store, std::move(base), 1,
                                                    f.policy);
  Graph<double> g;
  auto x = g.input(Tensor<double>::from({1, 2}, {3.0, 1.0}), false);
  ChunkAssignment assign;
  assign.chunk_of_position.assign(1, 0);
  auto out = model.gated_layer_forward(g, x, model.gated[0], f.chunks({"1011"}),
                                       assign);

  // independent oracle: plain layer norm applied twice to [3, 1]
  auto ln = [](double a, double b) {
    const double mean = (a + b) / 2;
    const double var =
        ((a - mean) * (a - mean) + (b - mean) * (b - mean)) / 2;
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    return std::pair<double, double>{(a - mean) * inv, (b - mean) * inv};
  };
  auto [y0, y1] = ln(3.0, 1.0);
  auto [z0, z1] = ln(y0, y1);
  CHECK(g.value(out).at(0, 0) == doctest::Approx(z0).epsilon(1e-12));
  CHECK(g.value(out).at(0, 1) == doctest::Approx(z1).epsilon(1e-12));
  // and it is not the identity in general
  CHECK(std::abs(g.value(out).at(0, 0) - 3.0) > 1e-3);
}

TEST_CASE("tanh gate contribution is bounded") {
  // strictly inside (-1,1) until float saturation, never beyond 1
  for (double a : {-15.0, -1.0, 0.0, 2.0, 15.0}) CHECK(std::abs(std::tanh(a)) < 1.0);
  for (double a : {-1e6, 1e6, 50.0}) CHECK(std::abs(std::tanh(a)) <= 1.0);
}

TEST_CASE("attach_gated_layers boundaries and parameter accounting") {
  Fixture f;
  ParamStore<double> store(11);
  auto base = BaseModel<double>::build(store, f.cfg);
  const int64_t base_count = store.count();
  CHECK(base_count == base_param_count(f.cfg));

  {
    ParamStore<double> s2(11);
    auto b2 = BaseModel<double>::build(s2, f.cfg);
    CHECK_THROWS(WatermarkModel<double>::attach_gated(s2, std::move(b2), 0, f.policy));
  }
  {
    ParamStore<double> s3(11);
    auto b3 = BaseModel<double>::build(s3, f.cfg);
    CHECK_THROWS(WatermarkModel<double>::attach_gated(s3, std::move(b3),
                                                      f.cfg.n_layers + 1, f.policy));
  }

  auto model = WatermarkModel<double>::attach_gated(store, std::move(base),
                                                    f.cfg.n_layers, f.policy);
  CHECK(model.gated.size() == static_cast<size_t>(f.cfg.n_layers));
  CHECK(store.count() - base_count ==
        f.cfg.n_layers * gated_layer_param_count(model.cfg));
  CHECK(store.count("base/") == base_count);
  // base is frozen, watermark layers trainable
  CHECK(store.count("base/", /*trainable_only=*/true) == 0);
  CHECK(store.count("wm/", /*trainable_only=*/true) ==
        f.cfg.n_layers * gated_layer_param_count(model.cfg));
}

TEST_CASE("identity at initialization: logits match the base bit-for-bit") {
  Fixture f;
  const auto toks = f.tokens("alpha beta gamma. delta echo!");
  REQUIRE(toks.size() >= 6);

  for (uint64_t seed : {1ull, 2ull, 3ull}) {
    ParamStore<double> base_store(seed);
    auto reference = BaseModel<double>::build(base_store, f.cfg);
    Graph<double> gb;
    const auto base_logits = gb.value(reference.forward_logits(gb, toks));

    {
      ParamStore<double> store(seed);
      auto base = BaseModel<double>::build(store, f.cfg);
      auto gatedm = WatermarkModel<double>::attach_gated(store, std::move(base),
                                                         2, f.policy);
      Graph<double> g;
      const auto logits =
          g.value(gatedm.forward_logits(g, toks, f.chunks({"1010", "0110"})));
      CHECK(tensors_equal(logits, base_logits));
    }
    {
      ParamStore<double> store(seed);
      auto base = BaseModel<double>::build(store, f.cfg);
      auto subm = WatermarkModel<double>::substitute_last(store, std::move(base),
                                                          f.policy);
      Graph<double> g;
      const auto logits =
          g.value(subm.forward_logits(g, toks, f.chunks({"1010", "0110"})));
      CHECK(tensors_equal(logits, base_logits));
    }
  }
}

TEST_CASE("substituted layer with copied weights reproduces the original layer") {
  Fixture f;
  ParamStore<double> store(13);
  auto base = BaseModel<double>::build(store, f.cfg);
  const DecoderLayerP<double> original = base.layers.back();
  auto model = WatermarkModel<double>::substitute_last(store, std::move(base),
                                                       f.policy);
  SplitRng rng(17);
  const Tensor<double> x = Tensor<double>::randn({5, 16}, rng);

  Graph<double> g1;
  auto ref = g1.value(decoder_layer_forward(g1, g1.input(x, false), original,
                                            f.cfg.n_heads, true));
  Graph<double> g2;
  ChunkAssignment assign;
  assign.chunk_of_position.assign(5, 0);
  auto got = g2.value(model.substituted_layer_forward(
      g2, g2.input(x, false), *model.sub, f.chunks({"1111"}), assign));
  CHECK(tensors_equal(ref, got));
}

TEST_CASE("substitution variant parameter bookkeeping and unfreeze contract") {
  Fixture f;
  ParamStore<double> store(15);
  auto base = BaseModel<double>::build(store, f.cfg);
  const int64_t base_count = store.count();
  auto model = WatermarkModel<double>::substitute_last(store, std::move(base),
                                                       f.policy);
  CHECK(store.count() - base_count == substituted_layer_param_count(model.cfg));
  CHECK_FALSE(store.get("base/lm_head")->trainable);
  store.set_trainable("base/lm_head", true);  // the scheduler's unfreeze event
  CHECK(store.get("base/lm_head")->trainable);
  CHECK(store.count("base/", true) == store.get("base/lm_head")->value.numel());
}

TEST_CASE("per-sentence keying: a later chunk cannot affect earlier logits") {
  Fixture f;
  ParamStore<double> store(21);
  auto base = BaseModel<double>::build(store, f.cfg);
  auto model = WatermarkModel<double>::substitute_last(store, std::move(base),
                                                       f.policy);
  // make the cross-attention matter: non-zero output projection
  SplitRng wr(5);
  auto* wo = store.get("wm/sub/xattn/wo");
  wo->value = Tensor<double>::randn(wo->value.shape(), wr, 0.3);

  const auto toks = f.tokens("alpha beta. gamma delta echo!");
  const auto spans = segment_ids(toks, f.policy);
  REQUIRE(spans.size() == 2);
  const int sentence2_start = spans[1].start_token;

  Graph<double> g1;
  auto a = g1.value(model.forward_logits(g1, toks, f.chunks({"1010", "0000"})));
  Graph<double> g2;
  auto b = g2.value(model.forward_logits(g2, toks, f.chunks({"1010", "1111"})));

  bool later_changed = false;
  for (int i = 0; i < a.dim(0); ++i)
    for (int j = 0; j < a.dim(1); ++j) {
      if (i < sentence2_start) {
        CHECK(a.at(i, j) == b.at(i, j));
      } else if (a.at(i, j) != b.at(i, j)) {
        later_changed = true;
      }
    }
  CHECK(later_changed);
}

TEST_CASE("forward rejects an empty token list") {
  Fixture f;
  ParamStore<double> store(23);
  auto base = BaseModel<double>::build(store, f.cfg);
  auto model = WatermarkModel<double>::attach_gated(store, std::move(base), 1,
                                                    f.policy);
  const auto toks = f.tokens("alpha beta gamma delta");
  Graph<double> g;
  CHECK_NOTHROW(model.forward_logits(g, toks, f.chunks({"1010"})));
  Graph<double> g2;
  CHECK_THROWS(model.forward_logits(g2, {}, f.chunks({"1010"})));
}

TEST_CASE("gradient flow respects the freeze boundary") {
  Fixture f;
  ParamStore<double> store(25);
  auto base = BaseModel<double>::build(store, f.cfg);
  auto model = WatermarkModel<double>::attach_gated(store, std::move(base), 2,
                                                    f.policy);
  const auto toks = f.tokens("alpha beta gamma. delta echo fox!");
  Graph<double> g;
  auto logits = model.forward_logits(g, toks, f.chunks({"1010", "0110"}));
  auto loss = g.cross_entropy_shifted(logits, toks, Vocab::kPad);
  g.backward(loss);
  g.flush_param_grads();

  for (auto* p : store.with_prefix("base/"))
    for (int64_t i = 0; i < p->grad.numel(); ++i) CHECK(p->grad[i] == 0.0);
  double wm_grad_norm = 0;
  for (auto* p : store.with_prefix("wm/"))
    for (int64_t i = 0; i < p->grad.numel(); ++i)
      wm_grad_norm += p->grad[i] * p->grad[i];
  CHECK(wm_grad_norm > 0.0);
}

TEST_CASE("generation is deterministic and respects max_tokens") {
  Fixture f;
  ParamStore<float> store(27);
  auto base = BaseModel<float>::build(store, f.cfg);
  auto model = WatermarkModel<float>::substitute_last(store, std::move(base),
                                                      f.policy);
  const auto prompt = f.tokens("alpha beta");
  const auto chunks = f.chunks({"1010", "0110", "1100"});

  auto g1 = model.generate(prompt, chunks, Sampling::temperature, 1.0, 10, 42);
  auto g2 = model.generate(prompt, chunks, Sampling::temperature, 1.0, 10, 42);
  CHECK(g1.tokens == g2.tokens);

  auto one = model.generate(prompt, chunks, Sampling::greedy, 0.0, 1, 1);
  CHECK(one.tokens.size() == prompt.size() + 2);  // BOS + prompt + 1 token
  CHECK(one.chunk_trace.size() == 1);

  CHECK_THROWS(model.generate(prompt, chunks, Sampling::greedy, 0.0, 0, 1));
  CHECK_THROWS(model.generate(prompt, chunks, Sampling::temperature, 0.0, 4, 1));
}

TEST_CASE("rigged model: terminator loop consumes chunks in order") {
  Fixture f;
  ParamStore<float> store(29);
  auto base = BaseModel<float>::build(store, f.cfg);
  // constant hidden state: ln_f gain 0, then a head that votes for '.'
  auto* gain = store.get("base/ln_f/g");
  for (int64_t i = 0; i < gain->value.numel(); ++i) gain->value[i] = 0.0f;
  auto* bias = store.get("base/ln_f/b");
  for (int64_t i = 0; i < bias->value.numel(); ++i) bias->value[i] = 1.0f;
  auto* head = store.get("base/lm_head");
  const TokenId dot = f.vocab.id_of(".");
  for (int64_t i = 0; i < head->value.numel(); ++i) head->value[i] = 0.0f;
  for (int i = 0; i < f.cfg.d_model; ++i) head->value.at(i, dot) = 1.0f;

  auto model = WatermarkModel<float>::substitute_last(store, std::move(base),
                                                      f.policy);
  const auto res = model.generate(f.tokens("alpha"),
                                  f.chunks({"1010", "0110", "1100", "0001"}),
                                  Sampling::greedy, 0.0, 3, 7);
  REQUIRE(res.chunk_trace.size() == 3);
  CHECK(res.chunk_trace[0] == 0);
  CHECK(res.chunk_trace[1] == 1);
  CHECK(res.chunk_trace[2] == 2);
  for (size_t i = static_cast<size_t>(res.prompt_length); i < res.tokens.size(); ++i)
    CHECK(res.tokens[i] == dot);

  // near-zero temperature converges to the greedy decode
  const auto greedy = model.generate(f.tokens("alpha beta"), f.chunks({"1010"}),
                                     Sampling::greedy, 0.0, 6, 3);
  const auto cold = model.generate(f.tokens("alpha beta"), f.chunks({"1010"}),
                                   Sampling::temperature, 0.01, 6, 3);
  CHECK(greedy.tokens == cold.tokens);
}

TEST_SUITE_END();
