#include "cmwm/checkpoint.hpp"
#include "cmwm/rng.hpp"
#include "doctest.h"

using namespace cmwm;

TEST_SUITE_BEGIN("checkpoint");

namespace {

struct BuiltSystem {
  BundleConfig cfg;
  ParamStore<float> store;
  Vocab vocab;
  WatermarkModel<float> model;
  Extractor<float> extractor;

  explicit BuiltSystem(uint64_t seed)
      : store(seed), vocab(Vocab::build("aa bb cc dd ee . ! ?", 24)) {
    cfg.model.vocab_size = vocab.size();
    cfg.model.d_model = 16;
    cfg.model.n_heads = 2;
    cfg.model.n_layers = 2;
    cfg.model.ff_dim = 32;
    cfg.model.max_seq_len = 32;
    cfg.model.watermark_bits = 4;
    cfg.model.watermark_slots = 2;
    cfg.extractor.n_layers = 1;
    cfg.extractor.n_heads = 2;
    cfg.extractor.mlp_hidden = 24;
    for (TokenId id = Vocab::kNumSpecials; id < vocab.size(); ++id)
      cfg.vocab_tokens.push_back(vocab.token_of(id));
    auto base = BaseModel<float>::build(store, cfg.model);
    model = WatermarkModel<float>::substitute_last(
        store, std::move(base), SentencePolicy::from_vocab(vocab));
    extractor = Extractor<float>::build(store, cfg.extractor, cfg.model,
                                        store.get("base/tok_emb"));
  }
};

}  // namespace

TEST_CASE("save -> load -> save produces byte-identical files") {
  BuiltSystem sys(61);
  const std::string path1 = "/tmp/cmwm_test_ckpt1.bin";
  const std::string path2 = "/tmp/cmwm_test_ckpt2.bin";
  save_bundle(path1, sys.store, sys.cfg);

  auto loaded = load_bundle<float>(path1);
  save_bundle(path2, loaded.store, loaded.cfg);

  CHECK(read_text_file(path1) == read_text_file(path2));
  CHECK(read_text_file(path1).substr(0, 4) == "CMWM");
}

TEST_CASE("loaded model logits are bit-identical to pre-save") {
  BuiltSystem sys(67);
  // nudge some weights away from init so the check is not vacuous
  SplitRng rng(5);
  auto* wo = sys.store.get("wm/sub/xattn/wo");
  wo->value = Tensor<float>::randn(wo->value.shape(), rng, 0.2f);

  const auto toks = tokenize("aa bb. cc dd!", sys.vocab);
  const std::vector<BitVec> chunks = {{1, 0, 1, 0}, {0, 1, 1, 0}};
  Graph<float> g1;
  const auto before = g1.value(sys.model.forward_logits(g1, toks, chunks));

  const std::string path = "/tmp/cmwm_test_ckpt3.bin";
  save_bundle(path, sys.store, sys.cfg);
  auto loaded = load_bundle<float>(path);
  Graph<float> g2;
  const auto after = g2.value(loaded.model.forward_logits(g2, toks, chunks));

  REQUIRE(before.same_shape(after));
  for (int64_t i = 0; i < before.numel(); ++i) CHECK(before[i] == after[i]);

  // extractor path too
  const auto conf_before = sys.extractor.extract_confidences({4, 5, 6});
  const auto conf_after = loaded.extractor.extract_confidences({4, 5, 6});
  CHECK(conf_before == conf_after);
}

TEST_CASE("checkpoint carries the vocabulary and both configs") {
  BuiltSystem sys(71);
  const std::string path = "/tmp/cmwm_test_ckpt4.bin";
  save_bundle(path, sys.store, sys.cfg);
  auto loaded = load_bundle<float>(path);
  CHECK(loaded.vocab.size() == sys.vocab.size());
  for (TokenId id = 0; id < sys.vocab.size(); ++id)
    CHECK(loaded.vocab.token_of(id) == sys.vocab.token_of(id));
  CHECK(loaded.cfg.model.d_model == sys.cfg.model.d_model);
  CHECK(loaded.cfg.extractor.mlp_hidden == sys.cfg.extractor.mlp_hidden);
  CHECK((loaded.cfg.model.variant == Variant::substitution));
}

TEST_CASE("shared-table checksum matches across save and load") {
  BuiltSystem sys(73);
  const uint64_t before = sys.store.checksum("base/tok_emb");
  const std::string path = "/tmp/cmwm_test_ckpt5.bin";
  save_bundle(path, sys.store, sys.cfg);
  auto loaded = load_bundle<float>(path);
  CHECK(loaded.store.checksum("base/tok_emb") == before);
  CHECK(loaded.extractor.tok_emb == loaded.store.get("base/tok_emb"));
}

TEST_CASE("parameters are stored under their prefixes in name order") {
  BuiltSystem sys(79);
  const auto ckpt = checkpoint_from_store(sys.store, bundle_config_to_json(sys.cfg));
  bool has_extractor = false, has_wm = false;
  for (size_t i = 1; i < ckpt.params.size(); ++i)
    CHECK(ckpt.params[i - 1].name < ckpt.params[i].name);
  for (const auto& p : ckpt.params) {
    if (p.name.rfind("extractor/", 0) == 0) has_extractor = true;
    if (p.name.rfind("wm/", 0) == 0) has_wm = true;
  }
  CHECK(has_extractor);
  CHECK(has_wm);
}

TEST_CASE("malformed checkpoints are rejected") {
  std::vector<uint8_t> junk = {'N', 'O', 'P', 'E', 0, 0, 0, 0};
  CHECK_THROWS(deserialize_checkpoint(junk));

  BuiltSystem sys(83);
  auto ckpt = checkpoint_from_store(sys.store, bundle_config_to_json(sys.cfg));
  auto bytes = serialize_checkpoint(ckpt);
  bytes.resize(bytes.size() - 7);  // truncate
  CHECK_THROWS(deserialize_checkpoint(bytes));

  // shape mismatch against a rebuilt store
  auto loaded_ckpt = ckpt;
  loaded_ckpt.params[0].data.push_back(0.0f);
  loaded_ckpt.params[0].shape[0] += 1;
  LoadedBundle<float> bundle;
  bundle.cfg = bundle_config_from_json(ckpt.config_json);
  bundle.vocab = Vocab::from_tokens(bundle.cfg.vocab_tokens);
  build_bundle_models(bundle);
  CHECK_THROWS(load_into_store(loaded_ckpt, bundle.store));
}

TEST_SUITE_END();
