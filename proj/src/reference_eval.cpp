// SPDX-License-Identifier: Apache-2.0
#include "refdec/reference_eval.hpp"

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "refdec/error.hpp"
#include "refdec/rng.hpp"
#include "refdec/training.hpp"

namespace refdec {

namespace {

using ld = long double;
using Vec = std::vector<ld>;

Vec widen(const Tensor& t) { return Vec(t.data.begin(), t.data.end()); }

Vec matvec(const Tensor& w, const Vec& x) {
  const std::size_t m = w.shape[0], k = w.shape[1];
  Vec y(m, 0.0L);
  for (std::size_t i = 0; i < m; ++i) {
    ld acc = 0.0L;
    for (std::size_t j = 0; j < k; ++j) acc += static_cast<ld>(w.data[i * k + j]) * x[j];
    y[i] = acc;
  }
  return y;
}

ld sigmoid(ld v) {
  if (v >= 0.0L) return 1.0L / (1.0L + std::exp(-v));
  const ld e = std::exp(v);
  return e / (1.0L + e);
}

Vec softmax(const Vec& x) {
  const ld mx = *std::max_element(x.begin(), x.end());
  Vec y(x.size());
  ld denom = 0.0L;
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = std::exp(x[i] - mx);
    denom += y[i];
  }
  for (ld& v : y) v /= denom;
  return y;
}

ld logsumexp(const Vec& x) {
  const ld mx = *std::max_element(x.begin(), x.end());
  ld denom = 0.0L;
  for (const ld v : x) denom += std::exp(v - mx);
  return mx + std::log(denom);
}

// gates fused as (input, forget, cell, output)
void lstm(const LstmCellParams& p, const Vec& x, Vec& h, Vec& c) {
  const std::size_t hd = p.hidden;
  Vec pre = matvec(p.w_x, x);
  const Vec rec = matvec(p.w_h, h);
  for (std::size_t j = 0; j < 4 * hd; ++j) {
    pre[j] += rec[j] + static_cast<ld>(p.b.data[j]);
  }
  for (std::size_t j = 0; j < hd; ++j) {
    const ld gi = sigmoid(pre[j]);
    const ld gf = sigmoid(pre[hd + j]);
    const ld gg = std::tanh(pre[2 * hd + j]);
    const ld go = sigmoid(pre[3 * hd + j]);
    c[j] = gf * c[j] + gi * gg;
    h[j] = go * std::tanh(c[j]);
  }
}

struct Attended {
  Vec weights;
  Vec context;
};

Attended attend(const AdditiveAttentionParams& p, const Vec& query,
                const std::vector<Vec>& keys, const std::vector<Vec>& values) {
  const Vec pq = matvec(p.query_proj, query);
  const std::size_t da = p.key_proj.shape[0];
  Vec scores(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const Vec pk = matvec(p.key_proj, keys[i]);
    ld acc = 0.0L;
    for (std::size_t j = 0; j < da; ++j) {
      acc += static_cast<ld>(p.score.data[j]) * std::tanh(pk[j] + pq[j]);
    }
    scores[i] = acc;
  }
  Attended out;
  out.weights = softmax(scores);
  out.context.assign(values.front().size(), 0.0L);
  for (std::size_t i = 0; i < values.size(); ++i) {
    for (std::size_t j = 0; j < out.context.size(); ++j) {
      out.context[j] += out.weights[i] * values[i][j];
    }
  }
  return out;
}

}  // namespace

long double reference_objective(const ModelParams& p,
                                std::span<const Tensor> regions,
                                std::span<const int> gold, double lambda) {
  if (regions.empty()) throw DomainError("reference_objective: no regions");
  if (gold.empty()) throw DomainError("reference_objective: empty gold");
  const std::size_t d = p.dims.region_dim, hd = p.dims.hidden_dim;
  const std::size_t n = gold.size();

  std::vector<Vec> region_vecs;
  region_vecs.reserve(regions.size());
  for (const Tensor& r : regions) region_vecs.push_back(widen(r));
  Vec pooled(d, 0.0L);
  for (const Vec& r : region_vecs) {
    for (std::size_t j = 0; j < d; ++j) pooled[j] += r[j];
  }
  for (ld& v : pooled) v /= static_cast<ld>(region_vecs.size());

  const bool reflective =
      p.variant == Variant::ref_only || p.variant == Variant::full;

  Vec h1(hd, 0.0L), c1(hd, 0.0L), h2(hd, 0.0L), c2(hd, 0.0L);
  std::vector<Vec> history;
  ld xe = 0.0L, pos = 0.0L;
  int prev = 1;  // <bos>
  for (std::size_t t = 1; t <= n; ++t) {
    Vec x1 = pooled;
    const std::size_t cols = p.embedding.weight.shape[1];
    for (std::size_t j = 0; j < p.dims.embed_dim; ++j) {
      x1.push_back(static_cast<ld>(
          p.embedding.weight.data[j * cols + static_cast<std::size_t>(prev)]));
    }
    x1.insert(x1.end(), h2.begin(), h2.end());
    lstm(p.lstm1, x1, h1, c1);

    const Attended vis = attend(p.att_vis, h1, region_vecs, region_vecs);

    Vec x2 = vis.context;
    x2.insert(x2.end(), h1.begin(), h1.end());
    lstm(p.lstm2, x2, h2, c2);
    history.push_back(h2);

    Vec h_ref = h2;
    if (reflective) {
      h_ref = attend(p.att_ref, h1, history, history).context;
    }

    const std::size_t v = p.dims.vocab_size;
    Vec logits = matvec(p.out_head.weight, h_ref);
    for (std::size_t j = 0; j < v; ++j) {
      logits[j] += static_cast<ld>(p.out_head.bias.data[j]);
    }
    xe += logsumexp(logits) - logits[static_cast<std::size_t>(gold[t - 1])];

    const Vec pos_pre = matvec(p.pos_head.weight, h_ref);
    const ld gap = static_cast<ld>(t) / static_cast<ld>(n) - sigmoid(pos_pre[0]);
    pos += gap * gap;

    prev = gold[t - 1];
  }
  return xe + static_cast<ld>(lambda) * pos;
}

GradCheckReport model_grad_check(const ModelDims& dims,
                                 std::size_t region_count,
                                 std::size_t caption_len, std::uint64_t seed,
                                 double eps, double lambda,
                                 bool corrupt_one) {
  ModelParams params = init_params(dims, Variant::full, seed);
  Rng rng(derive_seed(seed, 0x67726164ull, 0));
  std::vector<Tensor> regions;
  for (std::size_t i = 0; i < region_count; ++i) {
    Tensor r(Shape{dims.region_dim});
    for (double& v : r.data) v = rng.gaussian();
    regions.push_back(std::move(r));
  }
  std::vector<int> gold;
  for (std::size_t t = 0; t + 1 < caption_len; ++t) {
    gold.push_back(4 + static_cast<int>(rng.below(dims.vocab_size - 4)));
  }
  gold.push_back(Vocabulary::kEos);

  GradVec analytic = zero_grads(params);
  {
    Tape tape;
    const ModelParams tracked = track(tape, params);
    const auto outputs = forward_teacher(tape, tracked, regions, gold);
    const Tensor xe = loss_xe(tape, outputs, gold);
    const Tensor pos = loss_pos(tape, outputs, gold.size());
    const Gradients g = tape.backward(loss_total(tape, xe, pos, lambda));
    std::size_t index = 0;
    for_each_param(tracked, [&](const char*, const Tensor& t) {
      analytic[index++] = g.at(t);
    });
  }
  if (corrupt_one) analytic[0][0] += 0.5;

  std::vector<std::pair<std::string, Tensor*>> refs;
  for_each_param(params, [&](const char* name, Tensor& t) {
    refs.emplace_back(name, &t);
  });
  return grad_check(
      [&] { return reference_objective(params, regions, gold, lambda); },
      refs, analytic, eps);
}

}  // namespace refdec
