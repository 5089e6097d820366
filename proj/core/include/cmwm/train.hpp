#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "cmwm/attacks.hpp"
#include "cmwm/checkpoint.hpp"
#include "cmwm/extractor.hpp"
#include "cmwm/model.hpp"
#include "cmwm/optim.hpp"
#include "cmwm/text.hpp"

namespace cmwm {

struct TrainConfig {
  ModelConfig model;
  ExtractorConfig extractor;

  double tau = 1.0;
  bool hard = true;          // straight-through bridge
  double lambda_wm = 1.0;    // watermark-loss weight
  double sigma = 1.0;        // noise std; 0 disables augmentation
  double p_sent = 0.5;
  double p_word = 0.15;

  double lr = 3e-4;
  int batch = 16;
  int seq_len = 96;          // training window (plus BOS)
  int base_steps = 3000;     // language-model pretraining of the base
  int max_steps = 4000;      // joint steps
  int eval_interval = 200;
  int patience = 3;          // plateau evaluations before unfreeze
  double plateau_rel = 1e-3; // "improvement" means >0.1% better

  int harden_steps = 0;      // extractor-only fine-tuning on attacked text
  int harden_pool = 192;     // watermarked generations to harden against
  int harden_batch = 8;
  AttackConfig harden_attack = baseline_attack_config(0.1, 0);

  int holdout_every = 20;    // every Nth document is held out (0: none)
  std::string base_checkpoint;  // reuse a pretrained base instead of base_steps

  void validate() const {
    model.validate();
    extractor.validate();
    if (tau <= 0) throw std::invalid_argument("train: tau must be > 0");
    if (sigma < 0) throw std::invalid_argument("train: sigma must be >= 0");
    if (p_sent < 0 || p_sent > 1 || p_word < 0 || p_word > 1)
      throw std::invalid_argument("train: probabilities must be in [0,1]");
    if (lambda_wm < 0) throw std::invalid_argument("train: lambda_wm >= 0");
    if (lr <= 0) throw std::invalid_argument("train: lr must be > 0");
    if (batch < 1 || seq_len < 8 || seq_len + 1 > model.max_seq_len)
      throw std::invalid_argument("train: bad batch/seq_len");
  }
};

struct LossReport {
  double text_ce = 0;
  double watermark_bce = 0;
  double bit_accuracy = 0;
  int64_t step = 0;
  std::string phase;
};

/// Bernoulli-masked Gaussian noise on a [S,T,d] embedding tensor:
/// E + N(0,sigma^2) ⊙ Bern_S(p_sent) ⊙ Bern_{S,T}(p_word); a drawn mask of 1
/// means "perturb". The sentence mask broadcasts over tokens and dims, the
/// word mask over dims. sigma == 0 or p_sent == 0 returns E bit-exactly.
template <typename T>
Tensor<T> inject_noise(const Tensor<T>& e, double sigma, double p_sent,
                       double p_word, SplitRng& rng) {
  if (sigma < 0) throw std::invalid_argument("inject_noise: sigma >= 0");
  if (e.rank() != 3) throw std::invalid_argument("inject_noise: [S,T,d]");
  Tensor<T> out = e;
  if (sigma == 0) return out;
  const int s = e.dim(0), t = e.dim(1), d = e.dim(2);
  for (int i = 0; i < s; ++i) {
    const bool sentence_on = rng.bernoulli(p_sent);
    for (int j = 0; j < t; ++j) {
      const bool word_on = rng.bernoulli(p_word);
      if (!sentence_on || !word_on) continue;
      for (int c = 0; c < d; ++c)
        out.at(i, j, c) += static_cast<T>(sigma * rng.gaussian());
    }
  }
  return out;
}

/// Additive noise rows for one sentence span of the bridged sequence:
/// zeros unless the sentence mask fires, then per-token word masks.
template <typename T>
Tensor<T> span_noise(int rows, int d, double sigma, double p_sent,
                     double p_word, SplitRng& rng) {
  Tensor<T> noise({rows, d});
  if (sigma == 0) return noise;
  if (!rng.bernoulli(p_sent)) return noise;
  for (int j = 0; j < rows; ++j) {
    if (!rng.bernoulli(p_word)) continue;
    T* row = noise.row(j);
    for (int c = 0; c < d; ++c) row[c] = static_cast<T>(sigma * rng.gaussian());
  }
  return noise;
}

/// Substitution-variant phase control: phase 1 trains the new layer and the
/// extractor with the base frozen; once validation loss plateaus (no >0.1%
/// improvement for `patience` evaluations) the output projection unfreezes.
/// Inert for the gated variant.
class PhaseScheduler {
 public:
  PhaseScheduler(Variant variant, int patience, double plateau_rel = 1e-3)
      : variant_(variant), patience_(patience), plateau_rel_(plateau_rel) {}

  /// Returns true exactly once, at the transition into phase 2.
  bool observe(double validation_loss) {
    if (variant_ != Variant::substitution || phase_ == 2) return false;
    if (validation_loss < best_ * (1.0 - plateau_rel_)) {
      best_ = validation_loss;
      stale_ = 0;
      return false;
    }
    ++stale_;
    if (stale_ >= patience_) {
      phase_ = 2;
      return true;
    }
    return false;
  }

  int phase() const { return phase_; }

 private:
  Variant variant_;
  int patience_;
  double plateau_rel_;
  double best_ = std::numeric_limits<double>::infinity();
  int stale_ = 0;
  int phase_ = 1;
};

struct TrainAbort : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One joint training run: owns the parameter store, base model, watermark
/// variant, extractor, optimizer state and all RNG streams.
template <typename T>
class TrainingRun {
 public:
  TrainingRun(TrainConfig cfg, Vocab vocab, Corpus train, Corpus holdout,
              uint64_t seed)
      : cfg_(std::move(cfg)),
        vocab_(std::move(vocab)),
        train_(std::move(train)),
        holdout_(std::move(holdout)),
        seed_(seed),
        store_(seed),
        rng_(seed) {
    cfg_.validate();
    if (cfg_.model.vocab_size != vocab_.size())
      throw std::invalid_argument("train: config vocab_size != vocabulary");
    if (train_.num_documents() == 0)
      throw std::invalid_argument("train: empty corpus");
    policy_ = SentencePolicy::from_vocab(vocab_);
    base_ = BaseModel<T>::build(store_, cfg_.model);
  }

  using ReportFn = std::function<void(const LossReport&)>;

  /// Full pipeline: base pretraining (or checkpoint reuse), variant attach,
  /// joint optimization with the phase scheduler, optional hardening.
  void run(const ReportFn& on_report = nullptr_report()) {
    if (!cfg_.base_checkpoint.empty()) {
      const Checkpoint ckpt = load_checkpoint(cfg_.base_checkpoint);
      for (const auto& blob : ckpt.params) {
        if (blob.name.rfind("base/", 0) != 0) continue;
        Parameter<T>* p = store_.get(blob.name);
        if (p->value.shape() != blob.shape)
          throw std::runtime_error("base checkpoint: shape mismatch " + blob.name);
        for (size_t i = 0; i < blob.data.size(); ++i)
          p->value[static_cast<int64_t>(i)] = static_cast<T>(blob.data[i]);
      }
    } else {
      pretrain_base(on_report);
    }
    attach_variant();
    train_joint(on_report);
    if (cfg_.harden_steps > 0) {
      harden(cfg_.harden_attack, cfg_.harden_steps, on_report);
    }
  }

  void pretrain_base(const ReportFn& on_report) {
    Adam<T> opt({cfg_.lr, 0.9, 0.999, 1e-8});
    auto params = store_.all();
    for (int step = 0; step < cfg_.base_steps; ++step) {
      const auto batch = sample_batch("base", step, cfg_.batch);
      std::vector<double> ce(batch.size(), 0.0);
      std::vector<std::unique_ptr<Graph<T>>> graphs(batch.size());
#pragma omp parallel for schedule(dynamic)
      for (size_t i = 0; i < batch.size(); ++i) {
        graphs[i] = std::make_unique<Graph<T>>();
        Graph<T>& g = *graphs[i];
        auto logits = base_.forward_logits(g, batch[i]);
        auto loss = g.cross_entropy_shifted(logits, batch[i], Vocab::kPad);
        g.backward(loss, T(1) / static_cast<T>(batch.size()));
        ce[i] = static_cast<double>(g.scalar(loss));
      }
      double mean_ce = 0;
      for (size_t i = 0; i < batch.size(); ++i) {
        graphs[i]->flush_param_grads();
        mean_ce += ce[i] / static_cast<double>(batch.size());
      }
      if (!std::isfinite(mean_ce))
        throw TrainAbort("non-finite base loss at step " + std::to_string(step));
      opt.step(params);
      store_.zero_grads();
      if (on_report) {
        LossReport r;
        r.text_ce = mean_ce;
        r.step = step;
        r.phase = "base";
        on_report(r);
      }
    }
  }

  void attach_variant() {
    if (attached_) return;
    if (cfg_.model.variant == Variant::gated) {
      model_ = WatermarkModel<T>::attach_gated(store_, std::move(base_),
                                               cfg_.model.gated_layer_count,
                                               policy_);
    } else {
      model_ = WatermarkModel<T>::substitute_last(store_, std::move(base_), policy_);
    }
    extractor_ = Extractor<T>::build(store_, cfg_.extractor, cfg_.model,
                                     store_.get("base/tok_emb"));
    attached_ = true;
  }

  void train_joint(const ReportFn& on_report) {
    PhaseScheduler scheduler(cfg_.model.variant, cfg_.patience, cfg_.plateau_rel);
    Adam<T> opt({cfg_.lr, 0.9, 0.999, 1e-8});
    auto params = store_.all();
    for (int step = 0; step < cfg_.max_steps; ++step) {
      LossReport report = joint_step(step, opt, params);
      report.phase = scheduler.phase() == 1 ? "joint" : "joint2";
      if (on_report) on_report(report);
      if (cfg_.eval_interval > 0 && (step + 1) % cfg_.eval_interval == 0) {
        const double val = validation_loss();
        if (scheduler.observe(val)) {
          store_.set_trainable("base/lm_head", true);
          if (on_report) {
            LossReport ev;
            ev.step = step;
            ev.phase = "unfreeze(output_projection)";
            ev.text_ce = val;
            on_report(ev);
          }
        }
      }
    }
    phase_ = scheduler.phase();
  }

  /// One optimization step of: text CE + lambda * BCE through the bridge.
  LossReport joint_step(int step, Adam<T>& opt,
                        const std::vector<Parameter<T>*>& params) {
    const auto batch = sample_batch("joint", step, cfg_.batch);
    std::vector<std::unique_ptr<Graph<T>>> graphs(batch.size());
    std::vector<SeqStats> stats(batch.size());
#pragma omp parallel for schedule(dynamic)
    for (size_t i = 0; i < batch.size(); ++i) {
      graphs[i] = std::make_unique<Graph<T>>();
      stats[i] = sequence_loss(*graphs[i], batch[i],
                               rng_.split("chunks").split(step).split(i),
                               rng_.split("gumbel").split(step).split(i),
                               rng_.split("noise").split(step).split(i),
                               /*backward=*/true,
                               T(1) / static_cast<T>(batch.size()));
    }
    LossReport report;
    report.step = step;
    int64_t bits_total = 0, bits_correct = 0;
    for (size_t i = 0; i < batch.size(); ++i) {
      graphs[i]->flush_param_grads();
      report.text_ce += stats[i].ce / static_cast<double>(batch.size());
      report.watermark_bce += stats[i].bce / static_cast<double>(batch.size());
      bits_total += stats[i].bits_total;
      bits_correct += stats[i].bits_correct;
    }
    if (!std::isfinite(report.text_ce) || !std::isfinite(report.watermark_bce))
      throw TrainAbort("non-finite joint loss at step " + std::to_string(step));
    report.bit_accuracy =
        bits_total ? static_cast<double>(bits_correct) / bits_total : 0.0;
    opt.step(params);
    store_.zero_grads();
    return report;
  }

  double validation_loss() {
    const auto batch = sample_holdout_batch();
    std::vector<double> totals(batch.size(), 0.0);
#pragma omp parallel for schedule(dynamic)
    for (size_t i = 0; i < batch.size(); ++i) {
      Graph<T> g;
      // fixed streams keep the series comparable between evaluations
      SeqStats s = sequence_loss(g, batch[i],
                                 rng_.split("eval-chunks").split(i),
                                 rng_.split("eval-gumbel").split(i),
                                 rng_.split("eval-noise").split(i),
                                 /*backward=*/false, T(0));
      totals[i] = s.ce + cfg_.lambda_wm * s.bce;
    }
    double total = 0;
    for (double v : totals) total += v / static_cast<double>(batch.size());
    return total;
  }

  /// Extractor-only fine-tuning on attacked watermarked generations;
  /// embedder weights stay untouched.
  void harden(const AttackConfig& attack_cfg, int steps,
              const ReportFn& on_report) {
    attach_variant();
    NeighborTable neighbors =
        build_neighbor_table(store_.get("base/tok_emb")->value, attack_cfg.k_nn);
    AttackFn attack = make_attack(attack_cfg, cfg_.model.vocab_size, policy_,
                                  &neighbors, &vocab_);

    // freeze everything except the extractor
    std::vector<std::pair<Parameter<T>*, bool>> saved;
    for (auto* p : store_.all()) saved.emplace_back(p, p->trainable);
    store_.set_trainable("base/", false);
    store_.set_trainable("wm/", false);
    store_.set_trainable("extractor/", true);

    const auto pool = build_harden_pool(cfg_.harden_pool);
    Adam<T> opt({cfg_.lr, 0.9, 0.999, 1e-8});
    auto params = store_.with_prefix("extractor/");
    SplitRng hrng = rng_.split("harden");
    int skipped = 0;
    for (int step = 0; step < steps; ++step) {
      std::vector<const HardenSample*> batch;
      SplitRng srng = hrng.split(step);
      for (int b = 0; b < cfg_.harden_batch; ++b)
        batch.push_back(&pool[srng.below(pool.size())]);
      std::vector<std::unique_ptr<Graph<T>>> graphs(batch.size());
      std::vector<SeqStats> stats(batch.size());
#pragma omp parallel for schedule(dynamic)
      for (size_t i = 0; i < batch.size(); ++i) {
        SplitRng arng = hrng.split(step).split(i);
        std::vector<TokenId> attacked;
        try {
          attacked = attack(batch[i]->tokens, arng);
        } catch (const std::exception&) {
          attacked.clear();
        }
        if (attacked.empty()) continue;  // counted below
        graphs[i] = std::make_unique<Graph<T>>();
        stats[i] = extractor_loss_on_tokens(*graphs[i], attacked,
                                            batch[i]->chunks,
                                            T(1) / static_cast<T>(batch.size()));
      }
      double bce = 0;
      int used = 0;
      for (size_t i = 0; i < batch.size(); ++i) {
        if (!graphs[i]) {
          ++skipped;
          continue;
        }
        graphs[i]->flush_param_grads();
        bce += stats[i].bce;
        ++used;
      }
      if (used > 0) {
        opt.step(params);
        store_.zero_grads();
      }
      if (on_report) {
        LossReport r;
        r.step = step;
        r.phase = "harden";
        r.watermark_bce = used ? bce / used : 0.0;
        on_report(r);
      }
    }
    harden_skipped_ = skipped;
    for (auto& [p, trainable] : saved)
      if (p->name.rfind("extractor/", 0) != 0) p->trainable = trainable;
  }

  // ---- accessors ----

  TrainConfig& config() { return cfg_; }
  ParamStore<T>& store() { return store_; }
  const Vocab& vocab() const { return vocab_; }
  WatermarkModel<T>& model() { return model_; }
  Extractor<T>& extractor() { return extractor_; }
  BaseModel<T>& base() { return base_; }
  const SentencePolicy& policy() const { return policy_; }
  const Corpus& holdout() const { return holdout_; }
  const Corpus& train_corpus() const { return train_; }
  int phase() const { return phase_; }
  int harden_skipped() const { return harden_skipped_; }
  uint64_t seed() const { return seed_; }

  BundleConfig bundle_config() const {
    BundleConfig b;
    b.model = cfg_.model;
    b.extractor = cfg_.extractor;
    for (TokenId id = Vocab::kNumSpecials; id < vocab_.size(); ++id)
      b.vocab_tokens.push_back(vocab_.token_of(id));
    return b;
  }

  /// Random training windows, BOS-prefixed.
  std::vector<std::vector<TokenId>> sample_batch(const std::string& label,
                                                 int step, int count) {
    SplitRng rng = rng_.split(label).split("sample").split(step);
    return sample_windows(train_, rng, count);
  }

  std::vector<std::vector<TokenId>> sample_holdout_batch() {
    SplitRng rng = rng_.split("holdout-sample");
    const Corpus& src = holdout_.num_documents() ? holdout_ : train_;
    return sample_windows(src, rng, cfg_.batch);
  }

  struct SeqStats {
    double ce = 0, bce = 0;
    int64_t bits_total = 0, bits_correct = 0;
  };

  /// Builds the full joint loss for one sequence; optionally backpropagates.
  SeqStats sequence_loss(Graph<T>& g, const std::vector<TokenId>& tokens,
                         SplitRng chunk_rng, SplitRng gumbel_rng,
                         SplitRng noise_rng, bool backward, T grad_scale) {
    const auto spans = segment_ids(tokens, policy_);
    const auto chunks = random_chunks(spans.size(), chunk_rng);
    auto logits = model_.forward_logits(g, tokens, chunks);
    auto ce = g.cross_entropy_shifted(logits, tokens, Vocab::kPad);

    // bridge: sampled one-hots times the shared embedding table
    const int l = static_cast<int>(tokens.size());
    auto head = g.slice_rows(logits, 0, l - 1);
    auto onehot = g.gumbel_softmax(head, cfg_.tau, cfg_.hard, gumbel_rng);
    auto bridged = g.matmul(onehot, g.param(*store_.get("base/tok_emb")));

    SeqStats stats;
    auto bce = watermark_bce_on_bridged(g, bridged, spans, chunks, noise_rng,
                                        stats);
    stats.ce = static_cast<double>(g.scalar(ce));
    if (bce >= 0) {
      stats.bce = static_cast<double>(g.scalar(bce));
      auto total = g.add_scaled(ce, bce, T(1), static_cast<T>(cfg_.lambda_wm));
      if (backward) g.backward(total, grad_scale);
    } else if (backward) {
      g.backward(ce, grad_scale);
    }
    return stats;
  }

  /// Extractor BCE on real tokens (hardening / evaluation path).
  SeqStats extractor_loss_on_tokens(Graph<T>& g,
                                    const std::vector<TokenId>& tokens,
                                    const std::vector<BitVec>& chunks,
                                    T grad_scale) {
    const auto spans = segment_ids(tokens, policy_);
    SeqStats stats;
    std::vector<typename Graph<T>::NodeId> parts;
    std::vector<const BitVec*> targets;
    for (size_t s = 0; s < spans.size(); ++s) {
      const int len = spans[s].end_token - spans[s].start_token;
      if (len < 1) continue;
      std::vector<TokenId> sent(tokens.begin() + spans[s].start_token,
                                tokens.begin() + spans[s].end_token);
      if (static_cast<int>(sent.size()) > cfg_.model.max_seq_len)
        sent.resize(static_cast<size_t>(cfg_.model.max_seq_len));
      auto emb = g.embedding_rows(g.param(*store_.get("base/tok_emb")), sent);
      parts.push_back(extractor_.bit_logits_from_embeddings(g, emb));
      targets.push_back(&chunks[s % chunks.size()]);
    }
    if (parts.empty()) return stats;
    auto cat = parts.size() == 1 ? parts[0] : g.concat_rows(parts);
    Tensor<T> target_tensor({static_cast<int>(targets.size()),
                             cfg_.model.watermark_bits});
    for (size_t s = 0; s < targets.size(); ++s)
      for (int b = 0; b < cfg_.model.watermark_bits; ++b)
        target_tensor.at(static_cast<int>(s), b) =
            (*targets[s])[static_cast<size_t>(b)] ? T(1) : T(0);
    tally_bits(g.value(cat), target_tensor, stats);
    auto bce = g.bce_with_logits(cat, target_tensor);
    stats.bce = static_cast<double>(g.scalar(bce));
    if (grad_scale != T(0)) g.backward(bce, grad_scale);
    return stats;
  }

  std::vector<BitVec> random_chunks(size_t n, SplitRng& rng) const {
    std::vector<BitVec> chunks;
    for (size_t s = 0; s < std::max<size_t>(n, 1); ++s) {
      BitVec bits;
      for (int b = 0; b < cfg_.model.watermark_bits; ++b)
        bits.push_back(rng.bernoulli(0.5) ? 1 : 0);
      chunks.push_back(std::move(bits));
    }
    return chunks;
  }

  struct HardenSample {
    std::vector<TokenId> tokens;  // generated text, BOS stripped
    std::vector<BitVec> chunks;
  };

 private:
  static ReportFn nullptr_report() { return ReportFn(); }

  std::vector<std::vector<TokenId>> sample_windows(const Corpus& corpus,
                                                   SplitRng& rng, int count) {
    std::vector<std::vector<TokenId>> batch;
    int retries = 0;
    while (static_cast<int>(batch.size()) < count) {
      const auto& doc = corpus.document(rng.below(corpus.num_documents()));
      const int window = cfg_.seq_len;
      std::vector<TokenId> seq;
      seq.push_back(Vocab::kBos);
      if (static_cast<int>(doc.size()) <= window) {
        seq.insert(seq.end(), doc.begin(), doc.end());
      } else {
        const size_t start =
            rng.below(doc.size() - static_cast<size_t>(window) + 1);
        seq.insert(seq.end(), doc.begin() + static_cast<long>(start),
                   doc.begin() + static_cast<long>(start) + window);
      }
      if (seq.size() < 8 && retries++ < 64 * count) continue;
      if (seq.size() < 2)
        throw std::invalid_argument("train: corpus documents too short");
      batch.push_back(std::move(seq));
    }
    return batch;
  }

  /// BCE of extracted bits on the bridged (sampled-token) embeddings with
  /// optional Bernoulli-masked noise; returns -1 when no span has rows.
  typename Graph<T>::NodeId watermark_bce_on_bridged(
      Graph<T>& g, typename Graph<T>::NodeId bridged,
      const std::vector<SentenceSpan>& spans, const std::vector<BitVec>& chunks,
      SplitRng& noise_rng, SeqStats& stats) {
    std::vector<typename Graph<T>::NodeId> parts;
    std::vector<const BitVec*> targets;
    const int bridged_rows = g.value(bridged).dim(0);
    for (size_t s = 0; s < spans.size(); ++s) {
      // tokens [a,b) are predicted by bridge rows [max(a-1,0), b-1)
      const int lo = std::max(spans[s].start_token - 1, 0);
      const int hi = std::min(spans[s].end_token - 1, bridged_rows);
      if (hi <= lo) continue;
      auto rows = g.slice_rows(bridged, lo, hi - lo);
      if (cfg_.sigma > 0) {
        rows = g.add_const(rows, span_noise<T>(hi - lo, cfg_.model.d_model,
                                               cfg_.sigma, cfg_.p_sent,
                                               cfg_.p_word, noise_rng));
      }
      parts.push_back(extractor_.bit_logits_from_embeddings(g, rows));
      targets.push_back(&chunks[s % chunks.size()]);
    }
    if (parts.empty()) return typename Graph<T>::NodeId(-1);
    auto cat = parts.size() == 1 ? parts[0] : g.concat_rows(parts);
    Tensor<T> target_tensor({static_cast<int>(targets.size()),
                             cfg_.model.watermark_bits});
    for (size_t s = 0; s < targets.size(); ++s)
      for (int b = 0; b < cfg_.model.watermark_bits; ++b)
        target_tensor.at(static_cast<int>(s), b) =
            (*targets[s])[static_cast<size_t>(b)] ? T(1) : T(0);
    tally_bits(g.value(cat), target_tensor, stats);
    return g.bce_with_logits(cat, target_tensor);
  }

  void tally_bits(const Tensor<T>& bit_logits, const Tensor<T>& targets,
                  SeqStats& stats) const {
    for (int64_t i = 0; i < bit_logits.numel(); ++i) {
      const bool predicted = bit_logits[i] >= T(0);
      const bool expected = targets[i] >= T(0.5);
      ++stats.bits_total;
      if (predicted == expected) ++stats.bits_correct;
    }
  }

  std::vector<HardenSample> build_harden_pool(int pool_size) {
    SplitRng prng = rng_.split("harden-pool");
    std::vector<HardenSample> pool(static_cast<size_t>(pool_size));
#pragma omp parallel for schedule(dynamic)
    for (size_t i = 0; i < pool.size(); ++i) {
      SplitRng srng = rng_.split("harden-pool-item").split(i);
      HardenSample sample;
      sample.chunks = random_chunks(4, srng);
      const auto prompt = harden_prompt(srng);
      auto gen = model_.generate(prompt, sample.chunks, Sampling::temperature,
                                 1.0, 40, srng.next_u64());
      sample.tokens.assign(gen.tokens.begin() + 1, gen.tokens.end());
      pool[i] = std::move(sample);
    }
    (void)prng;
    return pool;
  }

  std::vector<TokenId> harden_prompt(SplitRng& rng) {
    const auto& doc = train_.document(rng.below(train_.num_documents()));
    if (doc.size() < 3) return {doc.begin(), doc.end()};
    const size_t start = rng.below(doc.size() - 2);
    return {doc[start], doc[start + 1]};
  }

  TrainConfig cfg_;
  Vocab vocab_;
  Corpus train_, holdout_;
  uint64_t seed_;
  ParamStore<T> store_;
  SplitRng rng_;
  SentencePolicy policy_;
  BaseModel<T> base_;
  WatermarkModel<T> model_;
  Extractor<T> extractor_;
  bool attached_ = false;
  int phase_ = 1;
  int harden_skipped_ = 0;
};

// ---- evaluation helpers (shared by the CLI and the acceptance suite) ----

struct AccuracyResult {
  double bit_accuracy = 0;
  int64_t bits_total = 0;
  int64_t bits_correct = 0;
  int sentences = 0;
};

/// Generates with known random chunks, optionally attacks the tokens, then
/// extracts and scores bits sentence-by-sentence (chunks cycle, matching the
/// generation-time walk).
template <typename T>
AccuracyResult measure_bit_accuracy(
    const WatermarkModel<T>& model, const Extractor<T>& extractor,
    const std::vector<std::vector<TokenId>>& prompts, int generations,
    int max_tokens, uint64_t seed, const AttackFn* attack = nullptr,
    uint64_t attack_seed = 0) {
  AccuracyResult result;
  std::vector<int64_t> totals(static_cast<size_t>(generations), 0);
  std::vector<int64_t> corrects(static_cast<size_t>(generations), 0);
  std::vector<int> sentence_counts(static_cast<size_t>(generations), 0);
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < generations; ++i) {
    SplitRng rng = SplitRng(seed).split("measure").split(static_cast<uint64_t>(i));
    std::vector<BitVec> chunks;
    for (int s = 0; s < 4; ++s) {
      BitVec bits;
      for (int b = 0; b < model.cfg.watermark_bits; ++b)
        bits.push_back(rng.bernoulli(0.5) ? 1 : 0);
      chunks.push_back(std::move(bits));
    }
    const auto& prompt = prompts[static_cast<size_t>(i) % prompts.size()];
    auto gen = model.generate(prompt, chunks, Sampling::temperature, 1.0,
                              max_tokens, rng.next_u64());
    std::vector<TokenId> tokens(gen.tokens.begin() + 1, gen.tokens.end());
    if (attack) {
      SplitRng arng = SplitRng(attack_seed).split("attack").split(
          static_cast<uint64_t>(i));
      tokens = (*attack)(tokens, arng);
    }
    if (tokens.empty()) continue;
    const auto extraction =
        extractor.extract_from_tokens(tokens, model.policy, nullptr);
    for (size_t s = 0; s < extraction.sentences.size(); ++s) {
      const BitVec& key = chunks[s % chunks.size()];
      const auto& bits = extraction.sentences[s].bits;
      for (size_t b = 0; b < key.size() && b < bits.size(); ++b) {
        ++totals[static_cast<size_t>(i)];
        if (bits[b] == key[b]) ++corrects[static_cast<size_t>(i)];
      }
      ++sentence_counts[static_cast<size_t>(i)];
    }
  }
  for (int i = 0; i < generations; ++i) {
    result.bits_total += totals[static_cast<size_t>(i)];
    result.bits_correct += corrects[static_cast<size_t>(i)];
    result.sentences += sentence_counts[static_cast<size_t>(i)];
  }
  result.bit_accuracy =
      result.bits_total
          ? static_cast<double>(result.bits_correct) / result.bits_total
          : 0.0;
  return result;
}

/// Prompts drawn from non-initial sentences of held-out documents.
inline std::vector<std::vector<TokenId>> holdout_prompts(
    const Corpus& corpus, const SentencePolicy& policy, int count,
    uint64_t seed, int prompt_tokens = 2) {
  SplitRng rng = SplitRng(seed).split("prompts");
  std::vector<std::vector<TokenId>> prompts;
  int guard = 0;
  while (static_cast<int>(prompts.size()) < count && guard < count * 50) {
    ++guard;
    const auto& doc = corpus.document(rng.below(corpus.num_documents()));
    const auto spans = segment_ids(doc, policy);
    if (spans.empty()) continue;
    // prefer non-initial sentences: document openers tend to be low-entropy
    const size_t lo = spans.size() > 1 ? 1 : 0;
    const auto& span = spans[lo + rng.below(spans.size() - lo)];
    if (span.end_token - span.start_token < prompt_tokens + 1) continue;
    prompts.push_back({doc.begin() + span.start_token,
                       doc.begin() + span.start_token + prompt_tokens});
  }
  if (prompts.empty()) prompts.push_back({});
  return prompts;
}

}  // namespace cmwm
