// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "refdec/training.hpp"

namespace refdec {

using TokenSeq = std::vector<std::string>;

// Corpus BLEU-1..4: modified n-gram precision clipped by the per-reference
// maxima, geometric mean over orders, brevity penalty from the closest
// reference length (ties toward the shorter). For n >= 2 an order whose
// corpus match count is zero gets add-1 smoothing on both numerator and
// denominator; BLEU-1 is left unsmoothed.
struct BleuResult {
  std::array<double, 4> bleu{};        // cumulative BLEU-1..4
  std::array<double, 4> precisions{};  // per-order modified precision
  double brevity_penalty = 1.0;
};

BleuResult bleu(std::span<const TokenSeq> candidates,
                std::span<const std::vector<TokenSeq>> references,
                std::size_t max_n = 4);

// Mean over candidates of the best per-reference LCS F-measure with
// beta^2 = 1.2 (recall-weighted, the captioning convention).
double rouge_l(std::span<const TokenSeq> candidates,
               std::span<const std::vector<TokenSeq>> references);

// CIDEr-D: TF-IDF n-gram vectors for n = 1..4 with document frequencies
// from the reference corpus, reference-clipped cosine per order, Gaussian
// length penalty (sigma = 6), averaged over orders and references, x10.
// Needs at least two reference sets so the IDF is defined.
double cider(std::span<const TokenSeq> candidates,
             std::span<const std::vector<TokenSeq>> references);

struct EvalReport {
  std::array<double, 4> bleu{};
  double rouge_l = 0.0;
  double cider = 0.0;
  std::size_t n = 0;       // corpus size
  double mean_len = 0.0;   // mean candidate length in tokens
};

// {"bleu1":..,"bleu2":..,"bleu3":..,"bleu4":..,"rougeL":..,"cider":..,
//  "n":..,"mean_len":..}
std::string to_json(const EvalReport& report);

// Decodes every record with beam search, strips <eos>, and scores against
// the record's caption. With oracle set the candidates are the references
// themselves (pipeline sanity path).
EvalReport corpus_eval(const Checkpoint& checkpoint,
                       std::span<const DatasetRecord> records,
                       std::size_t beam_size, std::size_t max_len = 30,
                       bool oracle = false);

}  // namespace refdec
