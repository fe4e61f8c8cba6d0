// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <vector>

#include "refdec/data.hpp"
#include "refdec/model.hpp"

namespace refdec {

// Per-step attention snapshot captured while decoding.
struct TraceStep {
  std::size_t t = 0;  // 1-based step index
  int token = 0;      // token chosen at this step (may be <eos>)
  std::vector<double> alpha_vis;
  std::vector<double> alpha_ref;
  double pos_pred = 0.0;
};

using AttentionTrace = std::vector<TraceStep>;

struct DecodeResult {
  std::vector<int> tokens;  // caption ids, <eos> excluded
  AttentionTrace trace;     // includes the step that emitted <eos>
};

// Argmax decoding from <bos> until <eos> or max_len tokens; ties break
// toward the lowest token id.
DecodeResult greedy_decode(const ModelParams& params,
                           std::span<const Tensor> regions,
                           std::size_t max_len);

struct BeamHypothesis {
  std::vector<int> tokens;  // caption ids, <eos> excluded
  double log_prob = 0.0;    // sum of chosen-token log probabilities
  double score = 0.0;       // ranking key (log_prob, length-normalized if on)
  bool finished = false;    // ended on <eos> or hit max_len
  AttentionTrace trace;
};

// Breadth-limited search: each live hypothesis proposes its top beam_size
// tokens, the global top beam_size survive, and hypotheses that emit <eos>
// retire into a completed pool. Without length normalization the search
// stops early once no live hypothesis can beat the pool. Ties break by
// (score, token sequence lexicographic). Results sort by score descending.
std::vector<BeamHypothesis> beam_search(const ModelParams& params,
                                        std::span<const Tensor> regions,
                                        std::size_t beam_size,
                                        std::size_t max_len,
                                        bool length_norm = false);

enum class TraceFormat { json, dot };

// json: {"steps":[{"t":..,"token":..,"alpha_vis":[..],"alpha_ref":[..],
// "pos_pred":..}]} with exact weights. dot: Graphviz digraph with one edge
// per (past step i -> step t) weighted by the reflective attention, the
// heaviest incoming edge of each step flagged red.
std::string export_trace(const AttentionTrace& trace, const Vocabulary& vocab,
                         TraceFormat format);

}  // namespace refdec
