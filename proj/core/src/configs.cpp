#include "cmwm/configs.hpp"

#include <stdexcept>

#include "cmwm/checkpoint.hpp"
#include "json.hpp"

namespace cmwm {

using nlohmann::json;

namespace {

json model_config_to_json_obj(const ModelConfig& m) {
  return json{{"vocab_size", m.vocab_size},
              {"d_model", m.d_model},
              {"n_heads", m.n_heads},
              {"n_layers", m.n_layers},
              {"ff_dim", m.ff_dim},
              {"max_seq_len", m.max_seq_len},
              {"watermark_bits", m.watermark_bits},
              {"watermark_slots", m.watermark_slots},
              {"variant", m.variant == Variant::gated ? "gated" : "substitution"},
              {"gated_layer_count", m.gated_layer_count},
              {"norm_mode", m.norm_mode == NormMode::pre ? "pre" : "post"}};
}

ModelConfig model_config_from_json_obj(const json& j) {
  ModelConfig m;
  m.vocab_size = j.value("vocab_size", m.vocab_size);
  m.d_model = j.value("d_model", m.d_model);
  m.n_heads = j.value("n_heads", m.n_heads);
  m.n_layers = j.value("n_layers", m.n_layers);
  m.ff_dim = j.value("ff_dim", m.ff_dim);
  m.max_seq_len = j.value("max_seq_len", m.max_seq_len);
  m.watermark_bits = j.value("watermark_bits", m.watermark_bits);
  m.watermark_slots = j.value("watermark_slots", m.watermark_slots);
  const std::string variant = j.value("variant", "substitution");
  if (variant == "gated") m.variant = Variant::gated;
  else if (variant == "substitution") m.variant = Variant::substitution;
  else throw std::invalid_argument("config: unknown variant " + variant);
  m.gated_layer_count = j.value("gated_layer_count", m.gated_layer_count);
  const std::string norm = j.value("norm_mode", "pre");
  if (norm == "pre") m.norm_mode = NormMode::pre;
  else if (norm == "post") m.norm_mode = NormMode::post;
  else throw std::invalid_argument("config: unknown norm_mode " + norm);
  m.validate();
  return m;
}

json extractor_config_to_json_obj(const ExtractorConfig& e) {
  return json{{"n_layers", e.n_layers},
              {"n_heads", e.n_heads},
              {"mlp_hidden", e.mlp_hidden},
              {"use_pos_emb", e.use_pos_emb},
              {"pooling", e.pooling}};
}

ExtractorConfig extractor_config_from_json_obj(const json& j) {
  ExtractorConfig e;
  e.n_layers = j.value("n_layers", e.n_layers);
  e.n_heads = j.value("n_heads", e.n_heads);
  e.mlp_hidden = j.value("mlp_hidden", e.mlp_hidden);
  e.use_pos_emb = j.value("use_pos_emb", e.use_pos_emb);
  e.pooling = j.value("pooling", e.pooling);
  e.validate();
  return e;
}

json attack_config_to_json_obj(const AttackConfig& a) {
  json j{{"kind", attack_kind_to_string(a.kind)},
         {"p", a.p},
         {"k_nn", a.k_nn},
         {"seed", a.seed}};
  if (a.kind == AttackKind::compose) {
    json parts = json::array();
    for (const auto& part : a.parts) parts.push_back(attack_config_to_json_obj(part));
    j["parts"] = parts;
  }
  if (a.kind == AttackKind::external) j["command"] = a.command;
  return j;
}

AttackConfig attack_config_from_json_obj(const json& j) {
  AttackConfig a;
  a.kind = attack_kind_from_string(j.value("kind", "substitute"));
  a.p = j.value("p", a.p);
  a.k_nn = j.value("k_nn", a.k_nn);
  a.seed = j.value("seed", a.seed);
  a.command = j.value("command", a.command);
  if (j.contains("parts"))
    for (const auto& part : j.at("parts"))
      a.parts.push_back(attack_config_from_json_obj(part));
  a.validate();
  return a;
}

}  // namespace

std::string bundle_config_to_json(const BundleConfig& cfg) {
  json j = model_config_to_json_obj(cfg.model);
  j["extractor"] = extractor_config_to_json_obj(cfg.extractor);
  j["vocab"] = cfg.vocab_tokens;
  return j.dump();
}

BundleConfig bundle_config_from_json(const std::string& json_text) {
  const json j = json::parse(json_text);
  BundleConfig cfg;
  cfg.model = model_config_from_json_obj(j);
  if (j.contains("extractor"))
    cfg.extractor = extractor_config_from_json_obj(j.at("extractor"));
  if (j.contains("vocab"))
    cfg.vocab_tokens = j.at("vocab").get<std::vector<std::string>>();
  return cfg;
}

std::string train_config_to_json(const TrainConfig& cfg) {
  json j;
  j["model"] = model_config_to_json_obj(cfg.model);
  j["extractor"] = extractor_config_to_json_obj(cfg.extractor);
  j["tau"] = cfg.tau;
  j["hard"] = cfg.hard;
  j["lambda_wm"] = cfg.lambda_wm;
  j["sigma"] = cfg.sigma;
  j["p_sent"] = cfg.p_sent;
  j["p_word"] = cfg.p_word;
  j["lr"] = cfg.lr;
  j["batch"] = cfg.batch;
  j["seq_len"] = cfg.seq_len;
  j["base_steps"] = cfg.base_steps;
  j["max_steps"] = cfg.max_steps;
  j["eval_interval"] = cfg.eval_interval;
  j["patience"] = cfg.patience;
  j["plateau_rel"] = cfg.plateau_rel;
  j["harden_steps"] = cfg.harden_steps;
  j["harden_pool"] = cfg.harden_pool;
  j["harden_batch"] = cfg.harden_batch;
  j["harden_attack"] = attack_config_to_json_obj(cfg.harden_attack);
  j["holdout_every"] = cfg.holdout_every;
  j["base_checkpoint"] = cfg.base_checkpoint;
  return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("train config: bad JSON: ") + e.what());
  }
  TrainConfig cfg;
  if (j.contains("model")) cfg.model = model_config_from_json_obj(j.at("model"));
  if (j.contains("extractor"))
    cfg.extractor = extractor_config_from_json_obj(j.at("extractor"));
  cfg.tau = j.value("tau", cfg.tau);
  cfg.hard = j.value("hard", cfg.hard);
  cfg.lambda_wm = j.value("lambda_wm", cfg.lambda_wm);
  cfg.sigma = j.value("sigma", cfg.sigma);
  cfg.p_sent = j.value("p_sent", cfg.p_sent);
  cfg.p_word = j.value("p_word", cfg.p_word);
  cfg.lr = j.value("lr", cfg.lr);
  cfg.batch = j.value("batch", cfg.batch);
  cfg.seq_len = j.value("seq_len", cfg.seq_len);
  cfg.base_steps = j.value("base_steps", cfg.base_steps);
  cfg.max_steps = j.value("max_steps", cfg.max_steps);
  cfg.eval_interval = j.value("eval_interval", cfg.eval_interval);
  cfg.patience = j.value("patience", cfg.patience);
  cfg.plateau_rel = j.value("plateau_rel", cfg.plateau_rel);
  cfg.harden_steps = j.value("harden_steps", cfg.harden_steps);
  cfg.harden_pool = j.value("harden_pool", cfg.harden_pool);
  cfg.harden_batch = j.value("harden_batch", cfg.harden_batch);
  if (j.contains("harden_attack"))
    cfg.harden_attack = attack_config_from_json_obj(j.at("harden_attack"));
  cfg.holdout_every = j.value("holdout_every", cfg.holdout_every);
  cfg.base_checkpoint = j.value("base_checkpoint", cfg.base_checkpoint);
  cfg.validate();
  return cfg;
}

TrainConfig train_config_from_file(const std::string& path) {
  return train_config_from_json(read_text_file(path));
}

std::string attack_config_to_json(const AttackConfig& cfg) {
  return attack_config_to_json_obj(cfg).dump(2);
}

AttackConfig attack_config_from_json(const std::string& json_text) {
  return attack_config_from_json_obj(json::parse(json_text));
}

}  // namespace cmwm
