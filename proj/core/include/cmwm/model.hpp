#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cmwm/codec.hpp"
#include "cmwm/graph.hpp"
#include "cmwm/param.hpp"
#include "cmwm/text.hpp"

namespace cmwm {

enum class Variant { gated, substitution };
enum class NormMode { pre, post };

struct ModelConfig {
  int vocab_size = 512;
  int d_model = 64;
  int n_heads = 4;
  int n_layers = 4;
  int ff_dim = 256;
  int max_seq_len = 128;
  int watermark_bits = 8;   // C, bits per sentence
  int watermark_slots = 4;  // k_w, cross-attention kv slots
  Variant variant = Variant::substitution;
  int gated_layer_count = 2;  // N, gated variant only
  NormMode norm_mode = NormMode::pre;

  void validate() const {
    if (vocab_size < 5) throw std::invalid_argument("config: vocab_size < 5");
    if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0)
      throw std::invalid_argument("config: d_model must divide by n_heads");
    if (watermark_bits < 1) throw std::invalid_argument("config: C >= 1");
    if (watermark_slots < 1) throw std::invalid_argument("config: k_w >= 1");
    if (n_layers < 1) throw std::invalid_argument("config: n_layers >= 1");
    if (gated_layer_count < 1 || gated_layer_count > n_layers)
      throw std::invalid_argument("config: need 1 <= N <= n_layers");
    if (ff_dim < 1 || max_seq_len < 2)
      throw std::invalid_argument("config: bad ff_dim/max_seq_len");
  }
};

// ---- parameter bundles ----

template <typename T>
struct LinearP {
  Parameter<T>* w = nullptr;
  Parameter<T>* b = nullptr;
};

template <typename T>
struct LayerNormP {
  Parameter<T>* gain = nullptr;
  Parameter<T>* bias = nullptr;
};

template <typename T>
struct AttnP {
  Parameter<T>*wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;

  typename Graph<T>::AttnWeights nodes(Graph<T>& g) const {
    return {g.param(*wq), g.param(*bq), g.param(*wk), g.param(*bk),
            g.param(*wv), g.param(*bv), g.param(*wo), g.param(*bo)};
  }
};

template <typename T>
struct FfnP {
  LinearP<T> fc1, fc2;
};

template <typename T>
struct DecoderLayerP {
  LayerNormP<T> ln1;
  AttnP<T> attn;
  LayerNormP<T> ln2;
  FfnP<T> ffn;
};

template <typename T>
LinearP<T> make_linear(ParamStore<T>& store, const std::string& prefix, int in,
                       int out, bool zero_w = false) {
  LinearP<T> l;
  l.w = store.create(prefix + "/w", {in, out},
                     zero_w ? Init::zeros : Init::normal);
  l.b = store.create(prefix + "/b", {out}, Init::zeros);
  return l;
}

template <typename T>
LayerNormP<T> make_layer_norm(ParamStore<T>& store, const std::string& prefix,
                              int d) {
  LayerNormP<T> ln;
  ln.gain = store.create(prefix + "/g", {d}, Init::ones);
  ln.bias = store.create(prefix + "/b", {d}, Init::zeros);
  return ln;
}

template <typename T>
AttnP<T> make_attention(ParamStore<T>& store, const std::string& prefix, int d,
                        bool zero_out_proj = false) {
  AttnP<T> a;
  a.wq = store.create(prefix + "/wq", {d, d});
  a.bq = store.create(prefix + "/bq", {d}, Init::zeros);
  a.wk = store.create(prefix + "/wk", {d, d});
  a.bk = store.create(prefix + "/bk", {d}, Init::zeros);
  a.wv = store.create(prefix + "/wv", {d, d});
  a.bv = store.create(prefix + "/bv", {d}, Init::zeros);
  a.wo = store.create(prefix + "/wo", {d, d},
                      zero_out_proj ? Init::zeros : Init::normal);
  a.bo = store.create(prefix + "/bo", {d}, Init::zeros);
  return a;
}

template <typename T>
FfnP<T> make_ffn(ParamStore<T>& store, const std::string& prefix, int d,
                 int ff) {
  FfnP<T> f;
  f.fc1 = make_linear(store, prefix + "/fc1", d, ff);
  f.fc2 = make_linear(store, prefix + "/fc2", ff, d);
  return f;
}

template <typename T>
DecoderLayerP<T> make_decoder_layer(ParamStore<T>& store,
                                    const std::string& prefix, int d, int ff) {
  DecoderLayerP<T> l;
  l.ln1 = make_layer_norm(store, prefix + "/ln1", d);
  l.attn = make_attention(store, prefix + "/attn", d);
  l.ln2 = make_layer_norm(store, prefix + "/ln2", d);
  l.ffn = make_ffn(store, prefix + "/ffn", d, ff);
  return l;
}

template <typename T>
typename Graph<T>::NodeId ffn_forward(Graph<T>& g, typename Graph<T>::NodeId x,
                                      const FfnP<T>& f) {
  auto h = g.gelu(g.linear(x, g.param(*f.fc1.w), g.param(*f.fc1.b)));
  return g.linear(h, g.param(*f.fc2.w), g.param(*f.fc2.b));
}

/// Pre-norm decoder block: x += attn(ln1(x)); x += ffn(ln2(x)).
template <typename T>
typename Graph<T>::NodeId decoder_layer_forward(Graph<T>& g,
                                                typename Graph<T>::NodeId x,
                                                const DecoderLayerP<T>& layer,
                                                int n_heads,
                                                bool causal = true) {
  auto normed = g.layer_norm(x, g.param(*layer.ln1.gain), g.param(*layer.ln1.bias));
  x = g.add(x, g.attention(normed, normed, layer.attn.nodes(g), n_heads, causal));
  auto normed2 = g.layer_norm(x, g.param(*layer.ln2.gain), g.param(*layer.ln2.bias));
  return g.add(x, ffn_forward(g, normed2, layer.ffn));
}

// ---- base decoder-only model ----

template <typename T>
struct BaseModel {
  ModelConfig cfg;
  Parameter<T>* tok_emb = nullptr;  // [V, d]
  Parameter<T>* pos_emb = nullptr;  // [max_seq_len, d]
  std::vector<DecoderLayerP<T>> layers;
  LayerNormP<T> ln_f;
  Parameter<T>* lm_head = nullptr;  // [d, V]

  static BaseModel build(ParamStore<T>& store, const ModelConfig& cfg) {
    cfg.validate();
    BaseModel m;
    m.cfg = cfg;
    m.tok_emb = store.create("base/tok_emb", {cfg.vocab_size, cfg.d_model});
    m.pos_emb = store.create("base/pos_emb", {cfg.max_seq_len, cfg.d_model});
    for (int i = 0; i < cfg.n_layers; ++i)
      m.layers.push_back(make_decoder_layer(store, "base/layer" + pad2(i),
                                            cfg.d_model, cfg.ff_dim));
    m.ln_f = make_layer_norm(store, "base/ln_f", cfg.d_model);
    m.lm_head = store.create("base/lm_head", {cfg.d_model, cfg.vocab_size});
    return m;
  }

  typename Graph<T>::NodeId embed(Graph<T>& g,
                                  const std::vector<TokenId>& tokens) const {
    if (tokens.empty()) throw std::invalid_argument("forward: empty token list");
    if (static_cast<int>(tokens.size()) > cfg.max_seq_len)
      throw std::invalid_argument("forward: sequence exceeds max_seq_len");
    auto tok = g.embedding_rows(g.param(*tok_emb), tokens);
    std::vector<int> positions(tokens.size());
    for (size_t i = 0; i < tokens.size(); ++i) positions[i] = static_cast<int>(i);
    auto pos = g.embedding_rows(g.param(*pos_emb), positions);
    return g.add(tok, pos);
  }

  typename Graph<T>::NodeId final_logits(Graph<T>& g,
                                         typename Graph<T>::NodeId x) const {
    auto h = g.layer_norm(x, g.param(*ln_f.gain), g.param(*ln_f.bias));
    return g.matmul(h, g.param(*lm_head));
  }

  typename Graph<T>::NodeId forward_logits(
      Graph<T>& g, const std::vector<TokenId>& tokens) const {
    auto x = embed(g, tokens);
    for (const auto& layer : layers)
      x = decoder_layer_forward(g, x, layer, cfg.n_heads, true);
    return final_logits(g, x);
  }

  static std::string pad2(int i) {
    return (i < 10 ? "0" : "") + std::to_string(i);
  }
};

// ---- watermark layers ----

/// Gated cross-attention watermark layer. Gates start at exactly zero, so
/// in pre-norm mode the layer is the identity map at initialization.
template <typename T>
struct GatedLayerP {
  Parameter<T>* alpha = nullptr;  // [1]
  Parameter<T>* beta = nullptr;   // [1]
  LinearP<T> wproj;               // C -> k_w * d
  LayerNormP<T> ln1, ln2;
  AttnP<T> xattn;
  FfnP<T> ffn;
};

template <typename T>
GatedLayerP<T> make_gated_layer(ParamStore<T>& store, const std::string& prefix,
                                const ModelConfig& cfg) {
  GatedLayerP<T> l;
  l.alpha = store.create(prefix + "/alpha", {1}, Init::zeros);
  l.beta = store.create(prefix + "/beta", {1}, Init::zeros);
  l.wproj = make_linear(store, prefix + "/wproj", cfg.watermark_bits,
                        cfg.watermark_slots * cfg.d_model);
  l.ln1 = make_layer_norm(store, prefix + "/ln1", cfg.d_model);
  l.ln2 = make_layer_norm(store, prefix + "/ln2", cfg.d_model);
  l.xattn = make_attention(store, prefix + "/xattn", cfg.d_model);
  l.ffn = make_ffn(store, prefix + "/ffn", cfg.d_model, cfg.ff_dim);
  return l;
}

/// Replacement for the last decoder layer: self-attention and feed-forward
/// weights are copied from the replaced layer, the added cross-attention
/// has a zero-initialized output projection so the layer reproduces the
/// original output exactly at initialization.
template <typename T>
struct SubstitutedLayerP {
  DecoderLayerP<T> body;  // copied self-attn + ffn (+ their norms)
  LayerNormP<T> ln_x;     // pre-norm for the cross-attention sublayer
  AttnP<T> xattn;         // fresh, zero-init output projection
  LinearP<T> wproj;       // C -> k_w * d
};

/// Watermark bits in {0,1} mapped to {-1,+1} then linearly projected into
/// k_w model-dimension slots.
template <typename T>
typename Graph<T>::NodeId embed_watermark(Graph<T>& g, const BitVec& bits,
                                          const LinearP<T>& wproj, int k_w,
                                          int d_model) {
  const int c = static_cast<int>(bits.size());
  if (wproj.w->value.dim(0) != c)
    throw std::invalid_argument("embed_watermark: bit count mismatch");
  Tensor<T> signs({1, c});
  for (int i = 0; i < c; ++i) signs[i] = bits[static_cast<size_t>(i)] ? T(1) : T(-1);
  auto flat = g.linear(g.constant(std::move(signs)), g.param(*wproj.w),
                       g.param(*wproj.b));
  return g.reshape(flat, {k_w, d_model});
}

// ---- watermarked model ----

/// Per-position watermark conditioning: position p attends to the chunk of
/// the sentence containing p. A contiguous run of positions with the same
/// chunk index is processed as one cross-attention call.
struct ChunkAssignment {
  std::vector<int> chunk_of_position;  // index into the chunk list

  static ChunkAssignment from_spans(const std::vector<SentenceSpan>& spans,
                                    size_t n_chunks, int n_positions) {
    ChunkAssignment a;
    a.chunk_of_position.assign(static_cast<size_t>(n_positions), 0);
    for (size_t s = 0; s < spans.size(); ++s)
      for (int p = spans[s].start_token; p < spans[s].end_token; ++p)
        a.chunk_of_position[static_cast<size_t>(p)] =
            static_cast<int>(s % n_chunks);
    return a;
  }

  /// The generation-time walk: every emitted sentence terminator advances
  /// the active chunk (cycling).
  static ChunkAssignment from_walk(const std::vector<TokenId>& tokens,
                                   const SentencePolicy& policy,
                                   size_t n_chunks) {
    ChunkAssignment a;
    size_t active = 0;
    for (TokenId t : tokens) {
      a.chunk_of_position.push_back(static_cast<int>(active % n_chunks));
      if (policy.is_terminator(t)) ++active;
    }
    return a;
  }

  std::vector<std::pair<int, int>> runs() const {  // (start, end) per run
    std::vector<std::pair<int, int>> out;
    const int n = static_cast<int>(chunk_of_position.size());
    int start = 0;
    for (int i = 1; i <= n; ++i) {
      if (i == n || chunk_of_position[static_cast<size_t>(i)] !=
                        chunk_of_position[static_cast<size_t>(start)]) {
        out.emplace_back(start, i);
        start = i;
      }
    }
    return out;
  }
};

enum class Sampling { greedy, temperature };

struct GenerationResult {
  std::vector<TokenId> tokens;      // prompt + generated
  int prompt_length = 0;
  std::vector<int> chunk_trace;     // active chunk index per generated token
};

template <typename T>
class WatermarkModel {
 public:
  ModelConfig cfg;
  BaseModel<T> base;
  std::vector<GatedLayerP<T>> gated;  // gated variant: before the last N layers
  std::optional<SubstitutedLayerP<T>> sub;
  SentencePolicy policy;

  /// Inserts one gated watermark layer before each of the last N decoder
  /// layers and freezes every base parameter.
  static WatermarkModel attach_gated(ParamStore<T>& store, BaseModel<T> base_model,
                                     int n_gated, SentencePolicy policy) {
    const ModelConfig& bc = base_model.cfg;
    if (n_gated < 1 || n_gated > bc.n_layers)
      throw std::invalid_argument("attach_gated_layers: N out of range");
    WatermarkModel m;
    m.cfg = bc;
    m.cfg.variant = Variant::gated;
    m.cfg.gated_layer_count = n_gated;
    m.base = std::move(base_model);
    m.policy = std::move(policy);
    for (int j = 0; j < n_gated; ++j)
      m.gated.push_back(
          make_gated_layer(store, "wm/gate" + BaseModel<T>::pad2(j), m.cfg));
    store.set_trainable("base/", false);
    return m;
  }

  /// Replaces the last decoder layer with a substituted layer (copied
  /// weights + fresh zero-init cross-attention) and freezes the base,
  /// including the output projection; the training scheduler unfreezes the
  /// projection at convergence.
  static WatermarkModel substitute_last(ParamStore<T>& store,
                                        BaseModel<T> base_model,
                                        SentencePolicy policy) {
    WatermarkModel m;
    m.cfg = base_model.cfg;
    m.cfg.variant = Variant::substitution;
    m.base = std::move(base_model);
    m.policy = std::move(policy);

    SubstitutedLayerP<T> s;
    s.body = make_decoder_layer(store, "wm/sub/body", m.cfg.d_model, m.cfg.ff_dim);
    const DecoderLayerP<T>& last = m.base.layers.back();
    copy_values(*last.ln1.gain, *s.body.ln1.gain);
    copy_values(*last.ln1.bias, *s.body.ln1.bias);
    copy_values(*last.ln2.gain, *s.body.ln2.gain);
    copy_values(*last.ln2.bias, *s.body.ln2.bias);
    copy_attn(last.attn, s.body.attn);
    copy_values(*last.ffn.fc1.w, *s.body.ffn.fc1.w);
    copy_values(*last.ffn.fc1.b, *s.body.ffn.fc1.b);
    copy_values(*last.ffn.fc2.w, *s.body.ffn.fc2.w);
    copy_values(*last.ffn.fc2.b, *s.body.ffn.fc2.b);
    s.ln_x = make_layer_norm(store, "wm/sub/ln_x", m.cfg.d_model);
    s.xattn = make_attention(store, "wm/sub/xattn", m.cfg.d_model,
                             /*zero_out_proj=*/true);
    s.wproj = make_linear(store, "wm/sub/wproj", m.cfg.watermark_bits,
                          m.cfg.watermark_slots * m.cfg.d_model);
    m.sub = s;
    store.set_trainable("base/", false);
    return m;
  }

  /// Teacher-forced forward; every position attends to the chunk of its
  /// containing sentence. Chunks cycle when there are more sentences.
  typename Graph<T>::NodeId forward_logits(
      Graph<T>& g, const std::vector<TokenId>& tokens,
      const std::vector<BitVec>& chunks) const {
    if (tokens.empty()) throw std::invalid_argument("forward: empty token list");
    const auto spans = segment_ids(tokens, policy);
    const auto assign = ChunkAssignment::from_spans(
        spans, chunks.size(), static_cast<int>(tokens.size()));
    return forward_logits_assigned(g, tokens, chunks, assign);
  }

  typename Graph<T>::NodeId forward_logits_assigned(
      Graph<T>& g, const std::vector<TokenId>& tokens,
      const std::vector<BitVec>& chunks, const ChunkAssignment& assign) const {
    if (chunks.empty()) throw std::invalid_argument("forward: no chunks");
    for (const auto& c : chunks)
      if (static_cast<int>(c.size()) != cfg.watermark_bits)
        throw std::invalid_argument("forward: chunk bit count mismatch");

    auto x = base.embed(g, tokens);
    const int first_gated = cfg.n_layers - static_cast<int>(gated.size());
    for (int i = 0; i < cfg.n_layers; ++i) {
      if (cfg.variant == Variant::gated && i >= first_gated) {
        const auto& gl = gated[static_cast<size_t>(i - first_gated)];
        x = gated_layer_forward(g, x, gl, chunks, assign);
      }
      if (cfg.variant == Variant::substitution && i == cfg.n_layers - 1) {
        x = substituted_layer_forward(g, x, *sub, chunks, assign);
      } else {
        x = decoder_layer_forward(g, x, base.layers[static_cast<size_t>(i)],
                                  cfg.n_heads, true);
      }
    }
    return base.final_logits(g, x);
  }

  typename Graph<T>::NodeId gated_layer_forward(
      Graph<T>& g, typename Graph<T>::NodeId x, const GatedLayerP<T>& layer,
      const std::vector<BitVec>& chunks, const ChunkAssignment& assign) const {
    auto ta = g.tanh_(g.param(*layer.alpha));
    auto tb = g.tanh_(g.param(*layer.beta));
    std::vector<typename Graph<T>::NodeId> w_emb(chunks.size(),
                                                 typename Graph<T>::NodeId(-1));
    auto emb_for = [&](int ci) {
      if (w_emb[static_cast<size_t>(ci)] < 0)
        w_emb[static_cast<size_t>(ci)] =
            embed_watermark(g, chunks[static_cast<size_t>(ci)], layer.wproj,
                            cfg.watermark_slots, cfg.d_model);
      return w_emb[static_cast<size_t>(ci)];
    };

    if (cfg.norm_mode == NormMode::pre) {
      auto q = g.layer_norm(x, g.param(*layer.ln1.gain), g.param(*layer.ln1.bias));
      auto att = sentence_cross_attention(g, q, layer.xattn, chunks, assign, emb_for);
      auto y = g.add(x, g.scale_by(att, ta));
      auto h = g.layer_norm(y, g.param(*layer.ln2.gain), g.param(*layer.ln2.bias));
      return g.add(y, g.scale_by(ffn_forward(g, h, layer.ffn), tb));
    }
    // post-norm (paper-literal form): the norms wrap the residual sums, so
    // the layer is not the identity at zero gates
    auto att = sentence_cross_attention(g, x, layer.xattn, chunks, assign, emb_for);
    auto y = g.layer_norm(g.add(x, g.scale_by(att, ta)),
                          g.param(*layer.ln1.gain), g.param(*layer.ln1.bias));
    return g.layer_norm(g.add(y, g.scale_by(ffn_forward(g, y, layer.ffn), tb)),
                        g.param(*layer.ln2.gain), g.param(*layer.ln2.bias));
  }

  typename Graph<T>::NodeId substituted_layer_forward(
      Graph<T>& g, typename Graph<T>::NodeId x, const SubstitutedLayerP<T>& s,
      const std::vector<BitVec>& chunks, const ChunkAssignment& assign) const {
    // self-attention sublayer (copied weights, same op order as the base)
    auto n1 = g.layer_norm(x, g.param(*s.body.ln1.gain), g.param(*s.body.ln1.bias));
    x = g.add(x, g.attention(n1, n1, s.body.attn.nodes(g), cfg.n_heads, true));
    // cross-attention to the watermark; zero-init wo makes this a no-op at init
    std::vector<typename Graph<T>::NodeId> w_emb(chunks.size(),
                                                 typename Graph<T>::NodeId(-1));
    auto emb_for = [&](int ci) {
      if (w_emb[static_cast<size_t>(ci)] < 0)
        w_emb[static_cast<size_t>(ci)] = embed_watermark(
            g, chunks[static_cast<size_t>(ci)], s.wproj, cfg.watermark_slots,
            cfg.d_model);
      return w_emb[static_cast<size_t>(ci)];
    };
    auto nx = g.layer_norm(x, g.param(*s.ln_x.gain), g.param(*s.ln_x.bias));
    x = g.add(x, sentence_cross_attention(g, nx, s.xattn, chunks, assign, emb_for));
    // feed-forward sublayer (copied weights)
    auto n2 = g.layer_norm(x, g.param(*s.body.ln2.gain), g.param(*s.body.ln2.bias));
    return g.add(x, ffn_forward(g, n2, s.body.ffn));
  }

  /// Autoregressive decode. The active chunk advances right after a
  /// sentence-terminator token is emitted; stops at EOS or max_tokens.
  GenerationResult generate(const std::vector<TokenId>& prompt,
                            const std::vector<BitVec>& chunks,
                            Sampling sampling, double temperature,
                            int max_tokens, uint64_t seed) const {
    if (max_tokens < 1) throw std::invalid_argument("generate: max_tokens >= 1");
    if (sampling == Sampling::temperature && temperature <= 0)
      throw std::invalid_argument("generate: temperature must be > 0");
    GenerationResult res;
    res.tokens.push_back(Vocab::kBos);
    for (TokenId t : prompt) res.tokens.push_back(t);
    res.prompt_length = static_cast<int>(res.tokens.size());
    SplitRng rng = SplitRng(seed).split("generate");

    size_t active = 0;  // sentence counter; emitted terminators advance it
    for (TokenId t : res.tokens)
      if (policy.is_terminator(t)) ++active;

    for (int step = 0; step < max_tokens; ++step) {
      if (static_cast<int>(res.tokens.size()) >= cfg.max_seq_len) break;
      const auto assign =
          ChunkAssignment::from_walk(res.tokens, policy, chunks.size());
      Graph<T> g;
      auto logits = forward_logits_assigned(g, res.tokens, chunks, assign);
      const Tensor<T>& lv = g.value(logits);
      const int last = lv.dim(0) - 1;
      const TokenId next = pick_token(lv.row(last), cfg.vocab_size, sampling,
                                      temperature, rng);
      res.chunk_trace.push_back(static_cast<int>(active % chunks.size()));
      res.tokens.push_back(next);
      if (policy.is_terminator(next)) ++active;
      if (next == Vocab::kEos) break;
    }
    return res;
  }

 private:
  static void copy_values(const Parameter<T>& from, Parameter<T>& to) {
    for (int64_t i = 0; i < from.value.numel(); ++i) to.value[i] = from.value[i];
  }

  static void copy_attn(const AttnP<T>& from, AttnP<T>& to) {
    copy_values(*from.wq, *to.wq);
    copy_values(*from.bq, *to.bq);
    copy_values(*from.wk, *to.wk);
    copy_values(*from.bk, *to.bk);
    copy_values(*from.wv, *to.wv);
    copy_values(*from.bv, *to.bv);
    copy_values(*from.wo, *to.wo);
    copy_values(*from.bo, *to.bo);
  }

  template <typename EmbFn>
  typename Graph<T>::NodeId sentence_cross_attention(
      Graph<T>& g, typename Graph<T>::NodeId q_source, const AttnP<T>& attn,
      const std::vector<BitVec>& chunks, const ChunkAssignment& assign,
      EmbFn&& emb_for) const {
    (void)chunks;
    const auto runs = assign.runs();
    const auto weights = attn.nodes(g);
    std::vector<typename Graph<T>::NodeId> parts;
    for (const auto& [start, end] : runs) {
      auto q = g.slice_rows(q_source, start, end - start);
      auto kv = emb_for(assign.chunk_of_position[static_cast<size_t>(start)]);
      parts.push_back(g.attention(q, kv, weights, cfg.n_heads, false));
    }
    return parts.size() == 1 ? parts[0] : g.concat_rows(parts);
  }

  static TokenId pick_token(const T* logits, int vocab, Sampling sampling,
                            double temperature, SplitRng& rng) {
    if (sampling == Sampling::greedy) {
      int best = 0;
      for (int j = 1; j < vocab; ++j)
        if (logits[j] > logits[best]) best = j;
      return best;
    }
    // temperature sampling over softmax(logits / t)
    std::vector<double> p(static_cast<size_t>(vocab));
    double best = -1e300;
    for (int j = 0; j < vocab; ++j)
      best = std::max(best, static_cast<double>(logits[j]) / temperature);
    double sum = 0;
    for (int j = 0; j < vocab; ++j) {
      p[static_cast<size_t>(j)] =
          std::exp(static_cast<double>(logits[j]) / temperature - best);
      sum += p[static_cast<size_t>(j)];
    }
    double r = rng.uniform() * sum;
    for (int j = 0; j < vocab; ++j) {
      r -= p[static_cast<size_t>(j)];
      if (r <= 0) return j;
    }
    return vocab - 1;
  }
};

/// Analytic parameter counts (bookkeeping checks).
inline int64_t base_param_count(const ModelConfig& c) {
  const int64_t d = c.d_model, v = c.vocab_size, ff = c.ff_dim;
  const int64_t attn = 4 * (d * d + d);
  const int64_t ffn = d * ff + ff + ff * d + d;
  const int64_t ln = 2 * d;
  const int64_t layer = attn + ffn + 2 * ln;
  return v * d + static_cast<int64_t>(c.max_seq_len) * d +
         c.n_layers * layer + ln + d * v;
}

inline int64_t gated_layer_param_count(const ModelConfig& c) {
  const int64_t d = c.d_model, ff = c.ff_dim;
  const int64_t attn = 4 * (d * d + d);
  const int64_t ffn = d * ff + ff + ff * d + d;
  const int64_t ln = 2 * d;
  const int64_t wproj = static_cast<int64_t>(c.watermark_bits) *
                            (c.watermark_slots * d) +
                        c.watermark_slots * d;
  return 2 + wproj + attn + ffn + 2 * ln;
}

inline int64_t substituted_layer_param_count(const ModelConfig& c) {
  const int64_t d = c.d_model, ff = c.ff_dim;
  const int64_t attn = 4 * (d * d + d);
  const int64_t ffn = d * ff + ff + ff * d + d;
  const int64_t ln = 2 * d;
  const int64_t wproj = static_cast<int64_t>(c.watermark_bits) *
                            (c.watermark_slots * d) +
                        c.watermark_slots * d;
  return (attn + ffn + 2 * ln) + ln + attn + wproj;
}

}  // namespace cmwm
