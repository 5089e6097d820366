#include "cmwm/attacks.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>

namespace cmwm {

AttackKind attack_kind_from_string(const std::string& name) {
  if (name == "synonym") return AttackKind::synonym;
  if (name == "insert") return AttackKind::insert;
  if (name == "delete") return AttackKind::del;
  if (name == "substitute") return AttackKind::substitute;
  if (name == "compose") return AttackKind::compose;
  if (name == "external") return AttackKind::external;
  throw std::invalid_argument("unknown attack kind: " + name);
}

std::string attack_kind_to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::synonym: return "synonym";
    case AttackKind::insert: return "insert";
    case AttackKind::del: return "delete";
    case AttackKind::substitute: return "substitute";
    case AttackKind::compose: return "compose";
    case AttackKind::external: return "external";
  }
  return "?";
}

std::vector<TokenId> synonym_substitute(const std::vector<TokenId>& tokens,
                                        double p, const NeighborTable& table,
                                        SplitRng& rng) {
  std::vector<TokenId> out;
  out.reserve(tokens.size());
  for (TokenId t : tokens) {
    if (t < Vocab::kNumSpecials ||
        static_cast<size_t>(t) >= table.neighbors.size() ||
        table.neighbors[static_cast<size_t>(t)].empty() || !rng.bernoulli(p)) {
      out.push_back(t);
      continue;
    }
    const auto& cands = table.neighbors[static_cast<size_t>(t)];
    out.push_back(cands[rng.below(cands.size())]);
  }
  return out;
}

namespace {

TokenId draw_non_special(int vocab_size, SplitRng& rng) {
  const int body = vocab_size - Vocab::kNumSpecials;
  if (body < 1) throw std::invalid_argument("random_edit: vocabulary too small");
  return Vocab::kNumSpecials + static_cast<TokenId>(rng.below(
                                   static_cast<uint64_t>(body)));
}

std::vector<TokenId> delete_tokens(const std::vector<TokenId>& tokens, double p,
                                   const SentencePolicy& policy, SplitRng& rng) {
  const auto spans = segment_ids(tokens, policy);
  std::vector<uint8_t> drop(tokens.size(), 0);
  for (size_t i = 0; i < tokens.size(); ++i)
    if (tokens[i] >= Vocab::kNumSpecials && rng.bernoulli(p)) drop[i] = 1;
  // floor rule: a sentence never loses its last remaining token
  for (const auto& span : spans) {
    bool survivor = false;
    for (int i = span.start_token; i < span.end_token; ++i)
      if (!drop[static_cast<size_t>(i)]) survivor = true;
    if (!survivor && span.end_token > span.start_token)
      drop[static_cast<size_t>(span.end_token) - 1] = 0;
  }
  std::vector<TokenId> out;
  for (size_t i = 0; i < tokens.size(); ++i)
    if (!drop[i]) out.push_back(tokens[i]);
  return out;
}

}  // namespace

std::vector<TokenId> random_edit(const std::vector<TokenId>& tokens,
                                 AttackKind kind, double p, int vocab_size,
                                 const SentencePolicy& policy, SplitRng& rng) {
  if (p < 0 || p > 1) throw std::invalid_argument("random_edit: p in [0,1]");
  switch (kind) {
    case AttackKind::substitute: {
      std::vector<TokenId> out = tokens;
      for (auto& t : out)
        if (t >= Vocab::kNumSpecials && rng.bernoulli(p))
          t = draw_non_special(vocab_size, rng);
      return out;
    }
    case AttackKind::insert: {
      std::vector<TokenId> out;
      out.reserve(tokens.size() + tokens.size() / 4);
      for (TokenId t : tokens) {
        if (rng.bernoulli(p)) out.push_back(draw_non_special(vocab_size, rng));
        out.push_back(t);
      }
      return out;
    }
    case AttackKind::del:
      return delete_tokens(tokens, p, policy, rng);
    default:
      throw std::invalid_argument("random_edit: kind must be an edit");
  }
}

AttackFn compose_attacks(std::vector<AttackFn> stages) {
  if (stages.empty()) throw std::invalid_argument("compose: empty attack list");
  return [stages = std::move(stages)](const std::vector<TokenId>& tokens,
                                      SplitRng& rng) {
    std::vector<TokenId> cur = tokens;
    for (size_t i = 0; i < stages.size(); ++i) {
      SplitRng stage_rng = rng.split(i);
      cur = stages[i](cur, stage_rng);
    }
    return cur;
  };
}

std::vector<std::string> pipe_through_command(
    const std::string& command, const std::vector<std::string>& lines) {
  // tmpfile redirection keeps this portable without a bidirectional popen
  char in_path[] = "/tmp/cmwm_attack_in_XXXXXX";
  char out_path[] = "/tmp/cmwm_attack_out_XXXXXX";
  const int in_fd = mkstemp(in_path);
  const int out_fd = mkstemp(out_path);
  if (in_fd < 0 || out_fd < 0)
    throw std::runtime_error("external attack: cannot create temp files");
  {
    FILE* f = fdopen(in_fd, "w");
    for (const auto& line : lines) {
      std::fputs(line.c_str(), f);
      std::fputc('\n', f);
    }
    std::fclose(f);
  }
  const std::string cmd =
      "(" + command + ") < " + in_path + " > " + std::string(out_path);
  const int rc = std::system(cmd.c_str());
  std::vector<std::string> out;
  FILE* f = fdopen(out_fd, "r");
  if (f) {
    std::string current;
    int c;
    while ((c = std::fgetc(f)) != EOF) {
      if (c == '\n') {
        out.push_back(current);
        current.clear();
      } else {
        current.push_back(static_cast<char>(c));
      }
    }
    if (!current.empty()) out.push_back(current);
    std::fclose(f);
  }
  std::remove(in_path);
  std::remove(out_path);
  if (rc != 0)
    throw std::runtime_error("external attack: command failed with status " +
                             std::to_string(rc));
  return out;
}

AttackFn make_external_attack(std::string command, const Vocab& vocab) {
  return [command = std::move(command), &vocab](
             const std::vector<TokenId>& tokens, SplitRng&) {
    const auto spans = segment_ids(tokens, SentencePolicy::from_vocab(vocab));
    std::vector<std::string> lines;
    for (const auto& span : spans) {
      std::vector<TokenId> sent(tokens.begin() + span.start_token,
                                tokens.begin() + span.end_token);
      lines.push_back(detokenize(sent, vocab));
    }
    const auto rewritten = pipe_through_command(command, lines);
    std::vector<TokenId> out;
    for (const auto& line : rewritten) {
      const auto ids = tokenize(line, vocab);
      out.insert(out.end(), ids.begin(), ids.end());
    }
    return out;
  };
}

AttackFn make_attack(const AttackConfig& cfg, int vocab_size,
                     const SentencePolicy& policy,
                     const NeighborTable* neighbors, const Vocab* vocab) {
  cfg.validate();
  switch (cfg.kind) {
    case AttackKind::synonym: {
      if (!neighbors)
        throw std::invalid_argument("synonym attack needs an embedding table");
      const NeighborTable table = *neighbors;
      const double p = cfg.p;
      return [table, p](const std::vector<TokenId>& tokens, SplitRng& rng) {
        return synonym_substitute(tokens, p, table, rng);
      };
    }
    case AttackKind::insert:
    case AttackKind::del:
    case AttackKind::substitute: {
      const AttackKind kind = cfg.kind;
      const double p = cfg.p;
      return [kind, p, vocab_size, policy](const std::vector<TokenId>& tokens,
                                           SplitRng& rng) {
        return random_edit(tokens, kind, p, vocab_size, policy, rng);
      };
    }
    case AttackKind::compose: {
      std::vector<AttackFn> stages;
      for (const auto& part : cfg.parts)
        stages.push_back(make_attack(part, vocab_size, policy, neighbors, vocab));
      return compose_attacks(std::move(stages));
    }
    case AttackKind::external: {
      if (!vocab)
        throw std::invalid_argument("external attack needs a vocabulary");
      return make_external_attack(cfg.command, *vocab);
    }
  }
  throw std::logic_error("make_attack: unreachable");
}

AttackConfig baseline_attack_config(double p, uint64_t seed) {
  AttackConfig cfg;
  cfg.kind = AttackKind::compose;
  cfg.seed = seed;
  for (AttackKind k : {AttackKind::synonym, AttackKind::insert, AttackKind::del,
                       AttackKind::substitute}) {
    AttackConfig part;
    part.kind = k;
    part.p = p;
    cfg.parts.push_back(part);
  }
  return cfg;
}

}  // namespace cmwm
