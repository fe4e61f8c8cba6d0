// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "refdec/layers.hpp"
#include "refdec/tensor.hpp"

namespace refdec {

// Ablation variants of the decoder:
//   baseline  - neither history attention nor position supervision
//   pos_only  - position head supervised, history attention off
//   ref_only  - history attention on, position loss weight zero
//   full      - both modules active
enum class Variant { baseline, pos_only, ref_only, full };

Variant variant_from_string(const std::string& s);
std::string to_string(Variant v);

struct ModelDims {
  std::size_t region_dim = 16;  // D: per-region feature width
  std::size_t embed_dim = 32;   // E: token embedding width
  std::size_t hidden_dim = 64;  // H: both LSTM layers
  std::size_t attn_dim = 32;    // width of both attention score spaces
  std::size_t vocab_size = 0;   // V: set from the vocabulary

  bool operator==(const ModelDims&) const = default;
  void validate() const;
};

// Complete trainable state of the two-layer decoder.
//
// Layer 1 consumes [pooled regions; token embedding; previous h2] and
// queries the visual attention; layer 2 consumes [attended region; h1] and
// its outputs form the history the reflective attention block looks back
// over. The output head maps the attended history to vocabulary logits and
// the position head to a relative sentence position in (0, 1).
struct ModelParams {
  ModelDims dims;
  Variant variant = Variant::full;
  EmbeddingTable embedding;
  LstmCellParams lstm1;
  LstmCellParams lstm2;
  AdditiveAttentionParams att_vis;
  AdditiveAttentionParams att_ref;
  LinearParams out_head;  // H -> V, with bias
  LinearParams pos_head;  // H -> 1, no bias
};

ModelParams init_params(const ModelDims& dims, Variant variant,
                        std::uint64_t seed);

// Applies fn(name, tensor) to every trainable tensor in a fixed order. This
// order defines the checkpoint payload layout and gradient vectors.
template <class Params, class Fn>
void for_each_param(Params&& p, Fn&& fn) {
  fn("embedding.weight", p.embedding.weight);
  fn("lstm1.w_x", p.lstm1.w_x);
  fn("lstm1.w_h", p.lstm1.w_h);
  fn("lstm1.b", p.lstm1.b);
  fn("lstm2.w_x", p.lstm2.w_x);
  fn("lstm2.w_h", p.lstm2.w_h);
  fn("lstm2.b", p.lstm2.b);
  fn("att_vis.key_proj", p.att_vis.key_proj);
  fn("att_vis.query_proj", p.att_vis.query_proj);
  fn("att_vis.score", p.att_vis.score);
  fn("att_ref.key_proj", p.att_ref.key_proj);
  fn("att_ref.query_proj", p.att_ref.query_proj);
  fn("att_ref.score", p.att_ref.score);
  fn("out_head.weight", p.out_head.weight);
  fn("out_head.bias", p.out_head.bias);
  fn("pos_head.weight", p.pos_head.weight);
}

std::size_t param_count(const ModelParams& p);

// Registers every parameter tensor as a leaf; the returned struct carries
// tracked tensors bound to the tape.
ModelParams track(Tape& tape, const ModelParams& p);

// Recurrent carry plus the growing history of second-layer hidden states.
struct DecoderState {
  Tensor h1, c1, h2, c2;
  std::vector<Tensor> history;  // one h2 per elapsed step
  std::size_t step = 0;         // == history.size()
};

struct StepOutput {
  Tensor logits;     // [V]
  Tensor pos_pred;   // [1], sigmoid output in (0, 1)
  Tensor alpha_vis;  // [k] attention over regions
  Tensor alpha_ref;  // [t] attention over history (one-hot on the current
                     // step when the reflective block is off)
  Tensor h2;         // [H]
  Tensor h_ref;      // [H] attended history; equals h2 with the block off
};

// Coordinate-wise mean of the region set; plain (untracked) math.
Tensor mean_pool_regions(std::span<const Tensor> regions);

// Zero carries, empty history.
DecoderState init_state(Tape& tape, const ModelParams& p);

struct StepOptions {
  // Test hook: replace the attended history with the current h2 while still
  // running the reflective block, to compare against the baseline path.
  bool force_reflective_passthrough = false;
};

// One decode step. Order: layer-1 LSTM on [pooled; embed(prev); h2_prev],
// visual attention queried by h1, layer-2 LSTM on [context; h1], history
// append, reflective attention over the history (current step included)
// queried by h1, then the output and position heads on the attended state.
StepOutput decoder_step(Tape& tape, const ModelParams& tracked,
                        DecoderState& state, int prev_token,
                        std::span<const Tensor> regions,
                        const StepOptions& opts = {});

// Teacher-forced pass: step t consumes gold[t-1] (<bos> at t=1) and its
// logits score gold[t]. Output t depends only on the regions and gold[0..t-1].
std::vector<StepOutput> forward_teacher(Tape& tape, const ModelParams& tracked,
                                        std::span<const Tensor> regions,
                                        std::span<const int> gold);

}  // namespace refdec
