// cmwm: train, generate, verify, extract, attack and probe cross-attention
// text watermarking models.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cmwm/attacks.hpp"
#include "cmwm/checkpoint.hpp"
#include "cmwm/codec.hpp"
#include "cmwm/configs.hpp"
#include "cmwm/corpusgen.hpp"
#include "cmwm/manifest.hpp"
#include "cmwm/report.hpp"
#include "cmwm/text.hpp"
#include "cmwm/train.hpp"
#include "json.hpp"

namespace {

using namespace cmwm;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitNotVerified = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

struct ManifestScope {
  RunManifest manifest;
  std::string path;

  ManifestScope(std::string command, std::string out_path, uint64_t seed,
                std::string config_json = "{}")
      : path(std::move(out_path)) {
    manifest.command = std::move(command);
    manifest.seed = seed;
    manifest.resolved_config_json = std::move(config_json);
    manifest.started_at = utc_timestamp();
  }

  void add_checkpoint(const std::string& ckpt_path) {
    manifest.checkpoint_hashes[ckpt_path] = hex_u64(fnv1a_file(ckpt_path));
  }

  void finish() {
    manifest.finished_at = utc_timestamp();
    if (!path.empty()) write_manifest(manifest, path);
  }
};

std::string default_manifest_path(const std::string& out,
                                  const std::string& command) {
  return out.empty() ? "cmwm-" + command + ".manifest.json"
                     : out + ".manifest.json";
}

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::fwrite(text.data(), 1, text.size(), stdout);
  } else {
    write_text_file(out_path, text);
  }
}

std::vector<BitVec> chunks_from_flags(const std::string& watermark_hex,
                                      const std::string& message, int bits) {
  if (!watermark_hex.empty()) {
    const BitVec key = bits_from_hex(watermark_hex);
    if (static_cast<int>(key.size()) != bits)
      throw std::invalid_argument("--watermark-hex must encode exactly " +
                                  std::to_string(bits) + " bits");
    return {key};
  }
  if (message.empty())
    throw std::invalid_argument("need --watermark-hex or --message");
  std::vector<uint8_t> bytes(message.begin(), message.end());
  std::vector<BitVec> chunks;
  for (auto& c : encode_message(bytes, bits, 2)) chunks.push_back(c.bits);
  return chunks;
}

// ---- train ----

struct TrainArgs {
  std::string config_path, corpus_path, out_path;
  std::string metrics_path, manifest_path;
  uint64_t seed = 0;
  std::string dtype = "f32";
  bool quiet = false;
};

template <typename T>
int run_train_typed(const TrainArgs& args, TrainConfig cfg) {
  const std::string corpus_text = read_text_file(args.corpus_path);
  Vocab vocab = Vocab::build(corpus_text, cfg.model.vocab_size);
  cfg.model.vocab_size = vocab.size();

  Corpus train_set, holdout_set;
  {
    std::string train_text, holdout_text;
    const auto docs = split_documents(corpus_text);
    if (docs.empty()) throw std::invalid_argument("corpus has no documents");
    for (size_t i = 0; i < docs.size(); ++i) {
      const bool hold = cfg.holdout_every > 0 &&
                        i % static_cast<size_t>(cfg.holdout_every) ==
                            static_cast<size_t>(cfg.holdout_every) - 1;
      (hold ? holdout_text : train_text) += docs[i] + "\n\n";
    }
    train_set = Corpus::from_text(train_text, vocab, args.seed);
    holdout_set = Corpus::from_text(holdout_text, vocab, args.seed + 1);
  }

  const std::string metrics_path = args.metrics_path.empty()
                                       ? args.out_path + ".metrics.csv"
                                       : args.metrics_path;
  std::ofstream metrics(metrics_path);
  if (!metrics) throw std::runtime_error("cannot write " + metrics_path);
  metrics << "step,phase,text_ce,watermark_bce,bit_accuracy\n";

  TrainingRun<T> run(cfg, vocab, train_set, holdout_set, args.seed);
  int64_t lines = 0;
  run.run([&](const LossReport& r) {
    char row[192];
    std::snprintf(row, sizeof(row), "%lld,%s,%.9g,%.9g,%.9g\n",
                  static_cast<long long>(r.step), r.phase.c_str(), r.text_ce,
                  r.watermark_bce, r.bit_accuracy);
    metrics << row;
    ++lines;
    if (!args.quiet && lines % 50 == 0)
      std::fprintf(stderr, "[%s %lld] ce=%.4f bce=%.4f acc=%.3f\n",
                   r.phase.c_str(), static_cast<long long>(r.step), r.text_ce,
                   r.watermark_bce, r.bit_accuracy);
  });
  metrics.close();

  save_bundle(args.out_path, run.store(), run.bundle_config());

  ManifestScope scope("train", args.manifest_path, args.seed,
                      train_config_to_json(run.config()));
  scope.add_checkpoint(args.out_path);
  scope.manifest.checkpoint_hashes[metrics_path] =
      hex_u64(fnv1a_file(metrics_path));
  scope.finish();
  if (!args.quiet)
    std::fprintf(stderr, "wrote %s (metrics: %s)\n", args.out_path.c_str(),
                 metrics_path.c_str());
  return kExitOk;
}

int run_train(const TrainArgs& args) {
  TrainConfig cfg = train_config_from_file(args.config_path);
  if (args.dtype == "f64") return run_train_typed<double>(args, cfg);
  if (args.dtype == "f32") return run_train_typed<float>(args, cfg);
  throw std::invalid_argument("--dtype must be f32 or f64");
}

// ---- generate ----

struct GenerateArgs {
  std::string model_path, prompt, watermark_hex, message;
  std::string sampling = "temp";
  double temperature = 1.0;
  int max_tokens = 48;
  uint64_t seed = 0;
  std::string out_path, manifest_path;
};

int run_generate(const GenerateArgs& args) {
  auto bundle = load_bundle<float>(args.model_path);
  const auto chunks = chunks_from_flags(args.watermark_hex, args.message,
                                        bundle.cfg.model.watermark_bits);
  if (args.sampling != "greedy" && args.sampling != "temp")
    throw std::invalid_argument("--sampling must be greedy or temp");
  const Sampling sampling =
      args.sampling == "greedy" ? Sampling::greedy : Sampling::temperature;
  const auto prompt_ids = tokenize(args.prompt, bundle.vocab);
  const auto result = bundle.model.generate(prompt_ids, chunks, sampling,
                                            args.temperature, args.max_tokens,
                                            args.seed);
  std::vector<TokenId> visible(result.tokens.begin() + 1, result.tokens.end());
  emit(detokenize(visible, bundle.vocab) + "\n", args.out_path);

  ManifestScope scope("generate", args.manifest_path, args.seed);
  json cfg;
  cfg["prompt"] = args.prompt;
  cfg["sampling"] = args.sampling;
  cfg["temperature"] = args.temperature;
  cfg["max_tokens"] = args.max_tokens;
  json hexes = json::array();
  for (const auto& c : chunks) hexes.push_back(hex_from_bits(c));
  cfg["chunks_hex"] = hexes;
  cfg["chunk_trace"] = result.chunk_trace;
  scope.manifest.resolved_config_json = cfg.dump();
  scope.add_checkpoint(args.model_path);
  scope.finish();
  return kExitOk;
}

// ---- verify / extract ----

struct VerifyArgs {
  std::string model_path, key_hex, text_path;
  double threshold = kDefaultThreshold;
  std::string format = "ansi";
  std::string out_path, manifest_path;
};

int run_verify(const VerifyArgs& args) {
  auto bundle = load_bundle<float>(args.model_path);
  const BitVec key = bits_from_hex(args.key_hex);
  if (static_cast<int>(key.size()) != bundle.cfg.model.watermark_bits)
    throw std::invalid_argument(
        "--key-hex must encode exactly " +
        std::to_string(bundle.cfg.model.watermark_bits) + " bits");
  const std::string text = read_text_file(args.text_path);
  const auto tokens = tokenize(text, bundle.vocab);
  if (tokens.empty()) throw std::invalid_argument("text file is empty");

  const auto extraction = bundle.extractor.extract_from_tokens(
      tokens, bundle.model.policy, &bundle.vocab);
  const auto report = verify_key(extraction.sentences,
                                 extraction.sentence_texts, key, args.threshold);
  emit(render_report(report, report_format_from_string(args.format)),
       args.out_path);

  ManifestScope scope("verify", args.manifest_path, 0);
  json cfg;
  cfg["key_hex"] = args.key_hex;
  cfg["threshold"] = args.threshold;
  cfg["text"] = args.text_path;
  cfg["verdict"] = report.pooled_verified;
  scope.manifest.resolved_config_json = cfg.dump();
  scope.add_checkpoint(args.model_path);
  scope.finish();
  return report.pooled_verified ? kExitOk : kExitNotVerified;
}

struct ExtractArgs {
  std::string model_path, text_path, out_path;
};

int run_extract(const ExtractArgs& args) {
  auto bundle = load_bundle<float>(args.model_path);
  const auto tokens = tokenize(read_text_file(args.text_path), bundle.vocab);
  if (tokens.empty()) throw std::invalid_argument("text file is empty");
  const auto extraction = bundle.extractor.extract_from_tokens(
      tokens, bundle.model.policy, &bundle.vocab);
  json out;
  out["sentences"] = json::array();
  for (size_t s = 0; s < extraction.sentences.size(); ++s) {
    const auto& e = extraction.sentences[s];
    json bits = json::array(), conf = json::array(), pivots = json::array();
    for (size_t b = 0; b < e.bits.size(); ++b) {
      bits.push_back(static_cast<int>(e.bits[b]));
      conf.push_back(e.confidences[b]);
      pivots.push_back(static_cast<bool>(e.pivots[b]));
    }
    out["sentences"].push_back({{"text", extraction.sentence_texts[s]},
                                {"bits", bits},
                                {"confidences", conf},
                                {"pivots", pivots}});
  }
  out["warnings"] = extraction.warnings;
  emit(out.dump(2) + "\n", args.out_path);
  return kExitOk;
}

// ---- attack ----

struct CliAttackArgs {
  std::string model_path, text_path, out_path;
  std::string kind = "substitute";
  double p = 0.1;
  int k_nn = 8;
  std::string command;
  std::string spec_json;
  uint64_t seed = 0;
  std::string manifest_path;
};

int run_attack(const CliAttackArgs& args) {
  auto bundle = load_bundle<float>(args.model_path);
  AttackConfig cfg;
  if (!args.spec_json.empty()) {
    cfg = attack_config_from_json(args.spec_json);
  } else if (args.kind == "baseline") {
    cfg = baseline_attack_config(args.p, args.seed);
    for (auto& part : cfg.parts) part.k_nn = args.k_nn;
  } else {
    cfg.kind = attack_kind_from_string(args.kind);
    cfg.p = args.p;
    cfg.k_nn = args.k_nn;
    cfg.command = args.command;
    cfg.seed = args.seed;
  }
  cfg.validate();

  NeighborTable neighbors =
      build_neighbor_table(bundle.store.get("base/tok_emb")->value, cfg.k_nn);
  const auto attack = make_attack(cfg, bundle.cfg.model.vocab_size,
                                  bundle.model.policy, &neighbors,
                                  &bundle.vocab);
  const std::string text = read_text_file(args.text_path);
  const auto tokens = tokenize(text, bundle.vocab);
  SplitRng rng = SplitRng(args.seed).split("attack");
  const auto attacked = attack(tokens, rng);
  // unchanged token stream: preserve the original bytes
  const std::string out =
      attacked == tokens ? text : detokenize(attacked, bundle.vocab) + "\n";
  emit(out, args.out_path);

  ManifestScope scope("attack", args.manifest_path, args.seed,
                      attack_config_to_json(cfg));
  scope.add_checkpoint(args.model_path);
  scope.finish();
  return kExitOk;
}

// ---- probe-entropy ----

struct ProbeArgs {
  std::string model_path, prompt;
  int watermarks = 8;
  int max_tokens = 24;
  uint64_t seed = 0;
  std::string out_path, manifest_path;
};

int run_probe(const ProbeArgs& args) {
  auto bundle = load_bundle<float>(args.model_path);
  const int bits = bundle.cfg.model.watermark_bits;
  SplitRng rng = SplitRng(args.seed).split("probe");

  std::vector<BitVec> watermarks;
  while (static_cast<int>(watermarks.size()) < args.watermarks) {
    BitVec w;
    for (int b = 0; b < bits; ++b) w.push_back(rng.bernoulli(0.5) ? 1 : 0);
    bool dup = false;
    for (const auto& seen : watermarks) dup |= seen == w;
    if (!dup) watermarks.push_back(std::move(w));
  }

  const auto prompt_ids = tokenize(args.prompt, bundle.vocab);
  std::vector<std::vector<TokenId>> continuations;
  json texts = json::array(), hexes = json::array();
  for (const auto& w : watermarks) {
    const auto gen = bundle.model.generate(prompt_ids, {w}, Sampling::greedy,
                                           0.0, args.max_tokens, args.seed);
    std::vector<TokenId> cont(gen.tokens.begin() + gen.prompt_length,
                              gen.tokens.end());
    continuations.push_back(cont);
    texts.push_back(detokenize(cont, bundle.vocab));
    hexes.push_back(hex_from_bits(w));
  }

  int distinct = 0;
  double mean_dist = 0, max_dist = 0;
  int pairs = 0;
  json matrix = json::array();
  for (size_t i = 0; i < continuations.size(); ++i) {
    json row = json::array();
    bool is_new = true;
    for (size_t j = 0; j < continuations.size(); ++j) {
      const int dist = token_edit_distance(continuations[i], continuations[j]);
      row.push_back(dist);
      if (j < i) {
        mean_dist += dist;
        max_dist = std::max(max_dist, static_cast<double>(dist));
        ++pairs;
        if (dist == 0) is_new = false;
      }
    }
    matrix.push_back(row);
    if (is_new) ++distinct;
  }
  if (pairs > 0) mean_dist /= pairs;

  json out;
  out["prompt"] = args.prompt;
  out["watermarks_hex"] = hexes;
  out["continuations"] = texts;
  out["edit_distance_matrix"] = matrix;
  out["distinct_continuations"] = distinct;
  out["mean_pairwise_distance"] = mean_dist;
  out["max_pairwise_distance"] = max_dist;
  emit(out.dump(2) + "\n", args.out_path);

  ManifestScope scope("probe-entropy", args.manifest_path, args.seed);
  json cfg;
  cfg["prompt"] = args.prompt;
  cfg["watermarks"] = args.watermarks;
  cfg["max_tokens"] = args.max_tokens;
  scope.manifest.resolved_config_json = cfg.dump();
  scope.add_checkpoint(args.model_path);
  scope.finish();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cross-attention text watermarking workbench"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "train embedder + extractor");
  train->add_option("--config", train_args.config_path, "TrainConfig JSON")
      ->required();
  train->add_option("--corpus", train_args.corpus_path, "plain-text corpus")
      ->required();
  train->add_option("--out", train_args.out_path, "output checkpoint")
      ->required();
  train->add_option("--seed", train_args.seed, "run seed");
  train->add_option("--metrics", train_args.metrics_path, "metrics CSV path");
  train->add_option("--manifest", train_args.manifest_path, "manifest path");
  train->add_option("--dtype", train_args.dtype, "f32 or f64");
  train->add_flag("--quiet", train_args.quiet, "suppress progress lines");

  GenerateArgs gen_args;
  auto* gen = app.add_subcommand("generate", "generate watermarked text");
  gen->add_option("--model", gen_args.model_path, "checkpoint")->required();
  gen->add_option("--prompt", gen_args.prompt, "prompt text");
  gen->add_option("--watermark-hex", gen_args.watermark_hex,
                  "per-sentence key bits as hex");
  gen->add_option("--message", gen_args.message, "message to embed");
  gen->add_option("--sampling", gen_args.sampling, "greedy|temp");
  gen->add_option("--temperature", gen_args.temperature, "sampling temperature");
  gen->add_option("--max-tokens", gen_args.max_tokens, "generation budget");
  gen->add_option("--seed", gen_args.seed, "sampling seed");
  gen->add_option("--out", gen_args.out_path, "output file (default stdout)");
  gen->add_option("--manifest", gen_args.manifest_path, "manifest path");

  VerifyArgs verify_args;
  auto* verify = app.add_subcommand("verify", "verify a key in text");
  verify->add_option("--model", verify_args.model_path, "checkpoint")
      ->required();
  verify->add_option("--key-hex", verify_args.key_hex, "key bits as hex")
      ->required();
  verify->add_option("--threshold", verify_args.threshold, "p-value threshold");
  verify->add_option("--text", verify_args.text_path, "text file")->required();
  verify->add_option("--report", verify_args.format, "ansi|html|json");
  verify->add_option("--out", verify_args.out_path, "report file");
  verify->add_option("--manifest", verify_args.manifest_path, "manifest path");

  ExtractArgs extract_args;
  auto* extract = app.add_subcommand("extract", "extract bits per sentence");
  extract->add_option("--model", extract_args.model_path, "checkpoint")
      ->required();
  extract->add_option("--text", extract_args.text_path, "text file")
      ->required();
  extract->add_option("--out", extract_args.out_path, "output file");

  CliAttackArgs attack_args;
  auto* attack = app.add_subcommand("attack", "apply a token-level attack");
  attack->add_option("--model", attack_args.model_path,
                     "checkpoint (vocabulary + embedding table)")
      ->required();
  attack->add_option("--text", attack_args.text_path, "input text")->required();
  attack->add_option("--out", attack_args.out_path, "output text")->required();
  attack->add_option("--kind", attack_args.kind,
                     "synonym|insert|delete|substitute|compose|external|baseline");
  attack->add_option("--p", attack_args.p, "per-token probability");
  attack->add_option("--k-nn", attack_args.k_nn, "synonym neighbor count");
  attack->add_option("--command", attack_args.command, "external rewriter");
  attack->add_option("--spec", attack_args.spec_json, "AttackConfig JSON");
  attack->add_option("--seed", attack_args.seed, "attack seed");
  attack->add_option("--manifest", attack_args.manifest_path, "manifest path");

  ProbeArgs probe_args;
  auto* probe = app.add_subcommand(
      "probe-entropy", "compare continuations across watermarks");
  probe->add_option("--model", probe_args.model_path, "checkpoint")->required();
  probe->add_option("--prompt", probe_args.prompt, "prompt text")->required();
  probe->add_option("--watermarks", probe_args.watermarks, "distinct watermarks");
  probe->add_option("--max-tokens", probe_args.max_tokens, "tokens per decode");
  probe->add_option("--seed", probe_args.seed, "probe seed");
  probe->add_option("--out", probe_args.out_path, "report file");
  probe->add_option("--manifest", probe_args.manifest_path, "manifest path");

  std::string corpus_out;
  uint64_t corpus_bytes = 1 << 20;
  uint64_t corpus_seed = 0;
  auto* mkcorpus = app.add_subcommand("make-corpus", "synthesize a toy corpus");
  mkcorpus->add_option("--out", corpus_out, "output text file")->required();
  mkcorpus->add_option("--bytes", corpus_bytes, "approximate size");
  mkcorpus->add_option("--seed", corpus_seed, "generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*train) {
      if (train_args.manifest_path.empty())
        train_args.manifest_path =
            default_manifest_path(train_args.out_path, "train");
      return run_train(train_args);
    }
    if (*gen) {
      if (gen_args.manifest_path.empty())
        gen_args.manifest_path =
            default_manifest_path(gen_args.out_path, "generate");
      return run_generate(gen_args);
    }
    if (*verify) {
      if (verify_args.manifest_path.empty())
        verify_args.manifest_path =
            default_manifest_path(verify_args.out_path, "verify");
      return run_verify(verify_args);
    }
    if (*extract) return run_extract(extract_args);
    if (*attack) {
      if (attack_args.manifest_path.empty())
        attack_args.manifest_path =
            default_manifest_path(attack_args.out_path, "attack");
      return run_attack(attack_args);
    }
    if (*probe) {
      if (probe_args.manifest_path.empty())
        probe_args.manifest_path =
            default_manifest_path(probe_args.out_path, "probe-entropy");
      return run_probe(probe_args);
    }
    if (*mkcorpus) {
      write_text_file(corpus_out, generate_corpus(corpus_bytes, corpus_seed));
      return kExitOk;
    }
  } catch (const TrainAbort& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }
  return kExitUsage;
}
