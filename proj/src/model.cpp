// SPDX-License-Identifier: Apache-2.0
#include "refdec/model.hpp"

#include <array>

#include "refdec/error.hpp"
#include "refdec/rng.hpp"

namespace refdec {

namespace {

constexpr std::uint64_t kInitSalt = 0x6d6f64656c696e69ull;

// <bos> = 1 everywhere in this project (see Vocabulary).
constexpr int kBosToken = 1;

}  // namespace

Variant variant_from_string(const std::string& s) {
  if (s == "baseline") return Variant::baseline;
  if (s == "pos" || s == "pos_only") return Variant::pos_only;
  if (s == "ref" || s == "ref_only") return Variant::ref_only;
  if (s == "full") return Variant::full;
  throw ConfigError("unknown variant '" + s +
                    "' (expected baseline|pos|ref|full)");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::pos_only: return "pos_only";
    case Variant::ref_only: return "ref_only";
    case Variant::full: return "full";
  }
  throw ContractError("invalid variant value");
}

void ModelDims::validate() const {
  if (region_dim == 0 || embed_dim == 0 || hidden_dim == 0 || attn_dim == 0 ||
      vocab_size == 0) {
    throw ConfigError("model dimensions must all be positive");
  }
}

ModelParams init_params(const ModelDims& dims, Variant variant,
                        std::uint64_t seed) {
  dims.validate();
  Rng rng(derive_seed(seed, kInitSalt, 0));
  ModelParams p;
  p.dims = dims;
  p.variant = variant;
  p.embedding = make_embedding(dims.embed_dim, dims.vocab_size, rng);
  p.lstm1 = make_lstm_cell(dims.region_dim + dims.embed_dim + dims.hidden_dim,
                           dims.hidden_dim, rng);
  p.lstm2 = make_lstm_cell(dims.region_dim + dims.hidden_dim, dims.hidden_dim,
                           rng);
  p.att_vis = make_additive_attention(dims.attn_dim, dims.region_dim,
                                      dims.hidden_dim, rng);
  p.att_ref = make_additive_attention(dims.attn_dim, dims.hidden_dim,
                                      dims.hidden_dim, rng);
  p.out_head = make_linear(dims.vocab_size, dims.hidden_dim, true, rng);
  p.pos_head = make_linear(1, dims.hidden_dim, false, rng);
  return p;
}

std::size_t param_count(const ModelParams& p) {
  std::size_t n = 0;
  for_each_param(p, [&n](const char*, const Tensor& t) { n += t.size(); });
  return n;
}

ModelParams track(Tape& tape, const ModelParams& p) {
  ModelParams tracked = p;
  for_each_param(tracked,
                 [&tape](const char*, Tensor& t) { t = tape.leaf(t); });
  return tracked;
}

Tensor mean_pool_regions(std::span<const Tensor> regions) {
  if (regions.empty()) throw DomainError("mean_pool_regions: empty region set");
  Tensor pooled(regions.front().shape);
  for (const Tensor& r : regions) {
    if (r.shape != pooled.shape) {
      throw DimensionError("mean_pool_regions: region shapes differ");
    }
    for (std::size_t i = 0; i < pooled.size(); ++i) pooled.data[i] += r.data[i];
  }
  const double inv = 1.0 / static_cast<double>(regions.size());
  for (double& v : pooled.data) v *= inv;
  return pooled;
}

DecoderState init_state(Tape& tape, const ModelParams& p) {
  const Tensor zeros(Shape{p.dims.hidden_dim});
  DecoderState s;
  s.h1 = tape.leaf(zeros);
  s.c1 = tape.leaf(zeros);
  s.h2 = tape.leaf(zeros);
  s.c2 = tape.leaf(zeros);
  return s;
}

StepOutput decoder_step(Tape& tape, const ModelParams& p, DecoderState& state,
                        int prev_token, std::span<const Tensor> regions,
                        const StepOptions& opts) {
  if (regions.empty()) throw DomainError("decoder_step: empty region set");
  if (prev_token < 0 ||
      static_cast<std::size_t>(prev_token) >= p.dims.vocab_size) {
    throw IndexError("decoder_step: token id " + std::to_string(prev_token) +
                     " outside vocabulary of " +
                     std::to_string(p.dims.vocab_size));
  }
  const Tensor pooled = mean_pool_regions(regions);
  const Tensor embedded = embed_lookup(tape, p.embedding, prev_token);

  const std::array<Tensor, 3> x1_parts{pooled, embedded, state.h2};
  const Tensor x1 = tape.concat(x1_parts);
  const LstmState l1 = lstm_step(tape, p.lstm1, x1, state.h1, state.c1);

  const AttentionResult vis =
      additive_attention(tape, p.att_vis, l1.h, regions, regions);

  const std::array<Tensor, 2> x2_parts{vis.context, l1.h};
  const Tensor x2 = tape.concat(x2_parts);
  const LstmState l2 = lstm_step(tape, p.lstm2, x2, state.h2, state.c2);

  state.h1 = l1.h;
  state.c1 = l1.c;
  state.h2 = l2.h;
  state.c2 = l2.c;
  state.history.push_back(l2.h);
  state.step += 1;

  StepOutput out;
  out.h2 = l2.h;
  const bool reflective =
      p.variant == Variant::ref_only || p.variant == Variant::full;
  if (reflective) {
    // Queried by h1, same query the visual block used; keys cover the whole
    // history including the h2 appended this step.
    const AttentionResult ref = additive_attention(
        tape, p.att_ref, l1.h, state.history, state.history);
    out.alpha_ref = ref.weights;
    out.h_ref = opts.force_reflective_passthrough ? l2.h : ref.context;
  } else {
    Tensor onehot(Shape{state.step});
    onehot.data.back() = 1.0;
    out.alpha_ref = onehot;
    out.h_ref = l2.h;
  }
  out.alpha_vis = vis.weights;
  out.logits = linear(tape, p.out_head, out.h_ref);
  out.pos_pred = tape.sigmoid(linear(tape, p.pos_head, out.h_ref));
  return out;
}

std::vector<StepOutput> forward_teacher(Tape& tape, const ModelParams& p,
                                        std::span<const Tensor> regions,
                                        std::span<const int> gold) {
  if (gold.empty()) throw DomainError("forward_teacher: empty gold sequence");
  std::vector<Tensor> tracked_regions;
  tracked_regions.reserve(regions.size());
  for (const Tensor& r : regions) tracked_regions.push_back(tape.leaf(r));

  DecoderState state = init_state(tape, p);
  std::vector<StepOutput> outputs;
  outputs.reserve(gold.size());
  int prev = kBosToken;
  for (const int token : gold) {
    if (token < 0 || static_cast<std::size_t>(token) >= p.dims.vocab_size) {
      throw IndexError("forward_teacher: token id " + std::to_string(token) +
                       " outside vocabulary of " +
                       std::to_string(p.dims.vocab_size));
    }
    outputs.push_back(decoder_step(tape, p, state, prev, tracked_regions));
    prev = token;
  }
  return outputs;
}

}  // namespace refdec
