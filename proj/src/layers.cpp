// SPDX-License-Identifier: Apache-2.0
#include "refdec/layers.hpp"

#include <array>
#include <string>

#include "refdec/error.hpp"

namespace refdec {

namespace {

constexpr double kInitRange = 0.08;

Tensor uniform_tensor(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.uniform(-kInitRange, kInitRange);
  return t;
}

}  // namespace

LstmCellParams make_lstm_cell(std::size_t input_dim, std::size_t hidden,
                              Rng& rng) {
  LstmCellParams p;
  p.hidden = hidden;
  p.w_x = uniform_tensor({4 * hidden, input_dim}, rng);
  p.w_h = uniform_tensor({4 * hidden, hidden}, rng);
  p.b = uniform_tensor({4 * hidden}, rng);
  // forget-gate bias starts at 1 so early training does not wipe the cell
  for (std::size_t j = hidden; j < 2 * hidden; ++j) p.b.data[j] = 1.0;
  return p;
}

LstmState lstm_step(Tape& tape, const LstmCellParams& p, const Tensor& x,
                    const Tensor& h, const Tensor& c) {
  const std::size_t hdim = p.hidden;
  if (p.w_x.shape[0] != 4 * hdim || p.w_h.shape != Shape{4 * hdim, hdim} ||
      p.b.shape != Shape{4 * hdim}) {
    throw DimensionError("lstm_step: inconsistent cell parameters");
  }
  if (x.shape != Shape{p.w_x.shape[1]} || h.shape != Shape{hdim} ||
      c.shape != Shape{hdim}) {
    throw DimensionError("lstm_step: input shapes " + shape_str(x.shape) +
                         "/" + shape_str(h.shape) + " do not match cell of " +
                         shape_str(p.w_x.shape));
  }
  Tensor pre = tape.add(tape.add(tape.matvec(p.w_x, x), tape.matvec(p.w_h, h)),
                        p.b);
  Tensor gi = tape.sigmoid(tape.slice(pre, 0, hdim));
  Tensor gf = tape.sigmoid(tape.slice(pre, hdim, hdim));
  Tensor gg = tape.tanh(tape.slice(pre, 2 * hdim, hdim));
  Tensor go = tape.sigmoid(tape.slice(pre, 3 * hdim, hdim));
  Tensor c_next = tape.add(tape.mul(gf, c), tape.mul(gi, gg));
  Tensor h_next = tape.mul(go, tape.tanh(c_next));
  return {h_next, c_next};
}

AdditiveAttentionParams make_additive_attention(std::size_t attn_dim,
                                                std::size_t key_dim,
                                                std::size_t query_dim,
                                                Rng& rng) {
  AdditiveAttentionParams p;
  p.key_proj = uniform_tensor({attn_dim, key_dim}, rng);
  p.query_proj = uniform_tensor({attn_dim, query_dim}, rng);
  p.score = uniform_tensor({1, attn_dim}, rng);
  return p;
}

AttentionResult additive_attention(Tape& tape,
                                   const AdditiveAttentionParams& p,
                                   const Tensor& query,
                                   std::span<const Tensor> keys,
                                   std::span<const Tensor> values) {
  if (keys.empty()) throw DomainError("additive_attention: no keys");
  if (keys.size() != values.size()) {
    throw DimensionError("additive_attention: " +
                         std::to_string(keys.size()) + " keys vs " +
                         std::to_string(values.size()) + " values");
  }
  if (p.score.shape[1] != p.key_proj.shape[0] ||
      p.key_proj.shape[0] != p.query_proj.shape[0]) {
    throw DimensionError("additive_attention: inconsistent parameters");
  }
  Tensor projected_query = tape.matvec(p.query_proj, query);
  std::vector<Tensor> scores;
  scores.reserve(keys.size());
  for (const Tensor& key : keys) {
    Tensor hidden =
        tape.tanh(tape.add(tape.matvec(p.key_proj, key), projected_query));
    scores.push_back(tape.matvec(p.score, hidden));  // [1]
  }
  AttentionResult result;
  result.weights = tape.softmax(tape.concat(scores));
  result.context = tape.weighted_sum(result.weights, values);
  return result;
}

EmbeddingTable make_embedding(std::size_t embed_dim, std::size_t vocab_size,
                              Rng& rng) {
  return {uniform_tensor({embed_dim, vocab_size}, rng)};
}

Tensor embed_lookup(Tape& tape, const EmbeddingTable& table,
                    std::size_t token) {
  if (token >= table.weight.shape[1]) {
    throw IndexError("embed_lookup: token id " + std::to_string(token) +
                     " outside vocabulary of " +
                     std::to_string(table.weight.shape[1]));
  }
  return tape.column(table.weight, token);
}

LinearParams make_linear(std::size_t out, std::size_t in, bool with_bias,
                         Rng& rng) {
  LinearParams p;
  p.weight = uniform_tensor({out, in}, rng);
  if (with_bias) p.bias = uniform_tensor({out}, rng);
  return p;
}

Tensor linear(Tape& tape, const LinearParams& p, const Tensor& x) {
  Tensor y = tape.matvec(p.weight, x);
  if (p.bias.size() > 0) y = tape.add(y, p.bias);
  return y;
}

}  // namespace refdec
