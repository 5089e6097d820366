#pragma once

#include <cstdint>
#include <string>

namespace cmwm {

/// Synthetic plain-text corpus: template sentences over small word pools,
/// blank-line separated documents. Every document opens with one fixed
/// sentence, which gives the trained model a reliably low-entropy prompt;
/// all other slots draw uniformly from their pools. The distinct-token
/// count stays under 500, so a 512-entry vocabulary captures everything.
std::string generate_corpus(uint64_t target_bytes, uint64_t seed);

/// The fixed document-opening sentence (the low-entropy probe anchor).
extern const char* kCorpusAnchorSentence;

}  // namespace cmwm
