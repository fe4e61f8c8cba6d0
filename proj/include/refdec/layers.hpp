// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>

#include "refdec/rng.hpp"
#include "refdec/tensor.hpp"

namespace refdec {

// Parameter structs hold plain tensors; Tape::leaf-tracked copies of the
// same structs feed the forward functions when gradients are wanted. They
// are immutable during a forward/backward pass and safe to share read-only
// across decode threads.

// Fused LSTM cell. Gate order inside the 4H dimension is
// (input, forget, cell, output).
struct LstmCellParams {
  Tensor w_x;  // [4H x input_dim]
  Tensor w_h;  // [4H x H]
  Tensor b;    // [4H]
  std::size_t hidden = 0;
};

// Uniform [-0.08, 0.08] init with the forget-gate bias at 1.0.
LstmCellParams make_lstm_cell(std::size_t input_dim, std::size_t hidden,
                              Rng& rng);

struct LstmState {
  Tensor h;
  Tensor c;
};

// One recurrence: gates = sigmoid/tanh(w_x x + w_h h + b),
// c' = f.c + i.g, h' = o.tanh(c').
LstmState lstm_step(Tape& tape, const LstmCellParams& p, const Tensor& x,
                    const Tensor& h, const Tensor& c);

// Additive (concat) attention: score_i = score . tanh(Wk key_i + Wq query),
// weights = softmax(scores), context = sum_i weights_i values_i. The model
// instantiates this twice, over image regions and over decoder history.
struct AdditiveAttentionParams {
  Tensor key_proj;    // [Da x Dkey]
  Tensor query_proj;  // [Da x Dquery]
  Tensor score;       // [1 x Da]
};

AdditiveAttentionParams make_additive_attention(std::size_t attn_dim,
                                                std::size_t key_dim,
                                                std::size_t query_dim,
                                                Rng& rng);

struct AttentionResult {
  Tensor weights;  // [len(keys)], on the probability simplex
  Tensor context;  // [Dval]
};

AttentionResult additive_attention(Tape& tape,
                                   const AdditiveAttentionParams& p,
                                   const Tensor& query,
                                   std::span<const Tensor> keys,
                                   std::span<const Tensor> values);

// Token embeddings stored column-wise: column id = embedding of token id.
struct EmbeddingTable {
  Tensor weight;  // [E x V]
};

EmbeddingTable make_embedding(std::size_t embed_dim, std::size_t vocab_size,
                              Rng& rng);

Tensor embed_lookup(Tape& tape, const EmbeddingTable& table,
                    std::size_t token);

struct LinearParams {
  Tensor weight;  // [out x in]
  Tensor bias;    // [out], size 0 when the map has no bias
};

LinearParams make_linear(std::size_t out, std::size_t in, bool with_bias,
                         Rng& rng);

Tensor linear(Tape& tape, const LinearParams& p, const Tensor& x);

}  // namespace refdec
