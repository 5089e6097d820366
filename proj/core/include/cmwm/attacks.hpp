#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "cmwm/rng.hpp"
#include "cmwm/tensor.hpp"
#include "cmwm/text.hpp"

namespace cmwm {

enum class AttackKind { synonym, insert, del, substitute, compose, external };

struct AttackConfig {
  AttackKind kind = AttackKind::substitute;
  double p = 0.1;
  int k_nn = 8;
  uint64_t seed = 0;
  std::vector<AttackConfig> parts;  // compose
  std::string command;              // external rewriter

  void validate() const {
    if (p < 0 || p > 1) throw std::invalid_argument("attack: p must be in [0,1]");
    if (k_nn < 1) throw std::invalid_argument("attack: k_nn >= 1");
    if (kind == AttackKind::compose && parts.empty())
      throw std::invalid_argument("attack: compose needs parts");
    if (kind == AttackKind::external && command.empty())
      throw std::invalid_argument("attack: external needs a command");
  }
};

AttackKind attack_kind_from_string(const std::string& name);
std::string attack_kind_to_string(AttackKind kind);

/// k nearest cosine neighbors per token id over an embedding table.
/// Specials are excluded both as sources and as candidates.
struct NeighborTable {
  std::vector<std::vector<TokenId>> neighbors;  // indexed by token id
};

template <typename T>
NeighborTable build_neighbor_table(const Tensor<T>& embedding, int k_nn) {
  const int v = embedding.dim(0), d = embedding.dim(1);
  NeighborTable table;
  table.neighbors.assign(static_cast<size_t>(v), {});
  std::vector<double> norms(static_cast<size_t>(v), 0.0);
  for (int i = 0; i < v; ++i) {
    double acc = 0;
    const T* row = embedding.row(i);
    for (int j = 0; j < d; ++j) acc += static_cast<double>(row[j]) * row[j];
    norms[static_cast<size_t>(i)] = std::sqrt(acc) + 1e-12;
  }
  std::vector<std::pair<double, TokenId>> scored;
  for (int i = Vocab::kNumSpecials; i < v; ++i) {
    scored.clear();
    const T* a = embedding.row(i);
    for (int j = Vocab::kNumSpecials; j < v; ++j) {
      if (j == i) continue;
      const T* b = embedding.row(j);
      double dot = 0;
      for (int c = 0; c < d; ++c) dot += static_cast<double>(a[c]) * b[c];
      scored.emplace_back(dot / (norms[static_cast<size_t>(i)] *
                                 norms[static_cast<size_t>(j)]),
                          j);
    }
    const size_t k = std::min(static_cast<size_t>(k_nn), scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<long>(k),
                      scored.end(), [](const auto& x, const auto& y) {
                        if (x.first != y.first) return x.first > y.first;
                        return x.second < y.second;
                      });
    for (size_t n = 0; n < k; ++n)
      table.neighbors[static_cast<size_t>(i)].push_back(scored[n].second);
  }
  return table;
}

/// Each non-special token is independently replaced, with probability p, by
/// a uniform draw from its k nearest neighbors.
std::vector<TokenId> synonym_substitute(const std::vector<TokenId>& tokens,
                                        double p, const NeighborTable& table,
                                        SplitRng& rng);

/// Per-position random edits. Insert draws uniform non-special ids before a
/// position (and at the end); delete keeps at least one token per sentence.
std::vector<TokenId> random_edit(const std::vector<TokenId>& tokens,
                                 AttackKind kind, double p, int vocab_size,
                                 const SentencePolicy& policy, SplitRng& rng);

using AttackFn =
    std::function<std::vector<TokenId>(const std::vector<TokenId>&, SplitRng&)>;

/// Sequential application with split RNG streams per stage.
AttackFn compose_attacks(std::vector<AttackFn> stages);

/// External rewriter contract: sentence-per-line text on stdin, rewritten
/// lines on stdout, exit code 0. Token sequences are detokenized/retokenized
/// around the command.
std::vector<std::string> pipe_through_command(const std::string& command,
                                              const std::vector<std::string>& lines);

AttackFn make_external_attack(std::string command, const Vocab& vocab);

/// Builds the attack function described by a config. The neighbor table is
/// only required for synonym attacks.
AttackFn make_attack(const AttackConfig& cfg, int vocab_size,
                     const SentencePolicy& policy,
                     const NeighborTable* neighbors, const Vocab* vocab);

/// The paper-style baseline: synonym + insert + delete + substitute composed,
/// each at probability p.
AttackConfig baseline_attack_config(double p, uint64_t seed);

}  // namespace cmwm
