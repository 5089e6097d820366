#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cmwm/extractor.hpp"
#include "cmwm/model.hpp"
#include "cmwm/param.hpp"

namespace cmwm {

/// On-disk layout (all integers little-endian):
///   "CMWM" | version u32 | json length u32 | config JSON bytes |
///   repeated: name length u32 | name | rank u32 | dims u64[] | f32 data
/// Parameters are written in lexicographic name order; values are stored as
/// 32-bit floats regardless of the training precision.
constexpr uint32_t kCheckpointVersion = 1;

struct ParamBlob {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;
};

struct Checkpoint {
  uint32_t version = kCheckpointVersion;
  std::string config_json;
  std::vector<ParamBlob> params;  // kept sorted by name
};

std::vector<uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::vector<uint8_t>& bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Everything a checkpoint needs to rebuild the full system: model and
/// extractor configuration plus the vocabulary (ids 4.. in order).
struct BundleConfig {
  ModelConfig model;
  ExtractorConfig extractor;
  std::vector<std::string> vocab_tokens;
};

std::string bundle_config_to_json(const BundleConfig& cfg);
BundleConfig bundle_config_from_json(const std::string& json_text);

template <typename T>
Checkpoint checkpoint_from_store(ParamStore<T>& store,
                                 const std::string& config_json) {
  Checkpoint ckpt;
  ckpt.config_json = config_json;
  for (Parameter<T>* p : store.all()) {  // store iterates in name order
    ParamBlob blob;
    blob.name = p->name;
    blob.shape = p->value.shape();
    blob.data.resize(static_cast<size_t>(p->value.numel()));
    for (int64_t i = 0; i < p->value.numel(); ++i)
      blob.data[static_cast<size_t>(i)] = static_cast<float>(p->value[i]);
    ckpt.params.push_back(std::move(blob));
  }
  return ckpt;
}

/// Copies checkpoint values into an already-built store. Every checkpoint
/// entry must match an existing parameter in name and shape, and vice versa.
template <typename T>
void load_into_store(const Checkpoint& ckpt, ParamStore<T>& store) {
  size_t matched = 0;
  for (const auto& blob : ckpt.params) {
    Parameter<T>* p = store.get(blob.name);  // throws when missing
    if (p->value.shape() != blob.shape)
      throw std::runtime_error("checkpoint: shape mismatch for " + blob.name);
    for (size_t i = 0; i < blob.data.size(); ++i)
      p->value[static_cast<int64_t>(i)] = static_cast<T>(blob.data[i]);
    ++matched;
  }
  if (matched != store.all().size())
    throw std::runtime_error("checkpoint: parameter set mismatch");
}

/// A fully reassembled system: store + embedder + extractor + vocab.
template <typename T>
struct LoadedBundle {
  BundleConfig cfg;
  ParamStore<T> store{0};
  Vocab vocab = Vocab::from_tokens({});
  WatermarkModel<T> model;
  Extractor<T> extractor;
};

template <typename T>
void build_bundle_models(LoadedBundle<T>& b) {
  auto base = BaseModel<T>::build(b.store, b.cfg.model);
  const SentencePolicy policy = SentencePolicy::from_vocab(b.vocab);
  if (b.cfg.model.variant == Variant::gated) {
    b.model = WatermarkModel<T>::attach_gated(
        b.store, std::move(base), b.cfg.model.gated_layer_count, policy);
  } else {
    b.model = WatermarkModel<T>::substitute_last(b.store, std::move(base), policy);
  }
  b.extractor = Extractor<T>::build(b.store, b.cfg.extractor, b.cfg.model,
                                    b.store.get("base/tok_emb"));
}

template <typename T>
LoadedBundle<T> load_bundle(const std::string& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  LoadedBundle<T> b;
  b.cfg = bundle_config_from_json(ckpt.config_json);
  b.vocab = Vocab::from_tokens(b.cfg.vocab_tokens);
  build_bundle_models(b);
  load_into_store(ckpt, b.store);
  return b;
}

template <typename T>
void save_bundle(const std::string& path, ParamStore<T>& store,
                 const BundleConfig& cfg) {
  save_checkpoint(checkpoint_from_store(store, bundle_config_to_json(cfg)), path);
}

}  // namespace cmwm
