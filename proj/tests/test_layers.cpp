// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <array>
#include <cmath>
#include <numeric>

#include "refdec/error.hpp"
#include "refdec/layers.hpp"
#include "refdec/rng.hpp"

using namespace refdec;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.uniform(-scale, scale);
  return t;
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Central finite differences over every tensor reachable through `refs`,
// against the analytic gradients of a scalar program.
double fd_check_params(
    const std::function<double(bool, Gradients*)>& run_and_backward,
    std::span<Tensor* const> refs, const std::vector<const Tensor*>& tracked,
    double eps = 1e-5) {
  Gradients grads;
  run_and_backward(true, &grads);
  double worst = 0.0;
  for (std::size_t p = 0; p < refs.size(); ++p) {
    const std::vector<double>& analytic = grads.at(*tracked[p]);
    for (std::size_t i = 0; i < refs[p]->size(); ++i) {
      double& slot = refs[p]->data[i];
      const double saved = slot;
      slot = saved + eps;
      const double fp = run_and_backward(false, nullptr);
      slot = saved - eps;
      const double fm = run_and_backward(false, nullptr);
      slot = saved;
      const double numeric = (fp - fm) / (2 * eps);
      const double rel =
          std::abs(analytic[i] - numeric) /
          std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("lstm_step") {
  SUBCASE("all-zero parameters give a zero hidden state") {
    LstmCellParams p;
    p.hidden = 3;
    p.w_x = Tensor({12, 2});
    p.w_h = Tensor({12, 3});
    p.b = Tensor({12});
    Tape tape;
    const LstmState s = lstm_step(tape, p, Tensor({2}), Tensor({3}),
                                  Tensor({3}));
    for (const double v : s.h.data) CHECK(v == 0.0);
  }

  SUBCASE("zero input and state: gates depend only on biases (H=1)") {
    // hand-computed closed form: c' = sigmoid(b_i)*tanh(b_g),
    // h' = sigmoid(b_o)*tanh(c')
    LstmCellParams p;
    p.hidden = 1;
    Rng rng(5);
    p.w_x = random_tensor({4, 2}, rng);
    p.w_h = random_tensor({4, 1}, rng);
    p.b = Tensor({4}, {0.3, -0.2, 0.7, -0.4});
    Tape tape;
    const LstmState s =
        lstm_step(tape, p, Tensor({2}), Tensor({1}), Tensor({1}));
    const double c_expect = sigmoid(0.3) * std::tanh(0.7);
    const double h_expect = sigmoid(-0.4) * std::tanh(c_expect);
    CHECK(s.c.item() == doctest::Approx(c_expect).epsilon(1e-14));
    CHECK(s.h.item() == doctest::Approx(h_expect).epsilon(1e-14));
  }

  SUBCASE("saturated forget gate carries the cell state") {
    LstmCellParams p;
    p.hidden = 2;
    Rng rng(6);
    p.w_x = random_tensor({8, 2}, rng, 0.05);
    p.w_h = random_tensor({8, 2}, rng, 0.05);
    p.b = Tensor({8});
    for (std::size_t j = 0; j < 2; ++j) p.b.data[j] = -20.0;      // i ~ 0
    for (std::size_t j = 2; j < 4; ++j) p.b.data[j] = 20.0;       // f ~ 1
    Tape tape;
    const Tensor c0 = Tensor::from_vector({0.4, -0.3});
    LstmState s = lstm_step(tape, p, random_tensor({2}, rng, 0.05),
                            Tensor({2}), c0);
    s = lstm_step(tape, p, random_tensor({2}, rng, 0.05), s.h, s.c);
    for (std::size_t j = 0; j < 2; ++j) {
      CHECK(std::abs(s.c.data[j] - c0.data[j]) <= 1e-6);
    }
  }

  SUBCASE("hidden state stays inside (-1, 1)") {
    Rng rng(7);
    for (int rep = 0; rep < 50; ++rep) {
      LstmCellParams p;
      p.hidden = 4;
      p.w_x = random_tensor({16, 3}, rng, 3.0);
      p.w_h = random_tensor({16, 4}, rng, 3.0);
      p.b = random_tensor({16}, rng, 3.0);
      Tape tape;
      const LstmState s =
          lstm_step(tape, p, random_tensor({3}, rng, 5.0),
                    random_tensor({4}, rng, 0.9), random_tensor({4}, rng, 2.0));
      for (const double v : s.h.data) CHECK(std::abs(v) < 1.0);
    }
  }

  SUBCASE("shape mismatch rejected") {
    LstmCellParams p;
    p.hidden = 2;
    p.w_x = Tensor({8, 3});
    p.w_h = Tensor({8, 2});
    p.b = Tensor({8});
    Tape tape;
    CHECK_THROWS_AS(
        lstm_step(tape, p, Tensor({5}), Tensor({2}), Tensor({2})),
        DimensionError);
  }

  SUBCASE("gradients match finite differences") {
    Rng rng(8);
    LstmCellParams p;
    p.hidden = 3;
    p.w_x = random_tensor({12, 2}, rng);
    p.w_h = random_tensor({12, 3}, rng);
    p.b = random_tensor({12}, rng);
    const Tensor x = random_tensor({2}, rng);
    const Tensor h0 = random_tensor({3}, rng, 0.5);
    const Tensor c0 = random_tensor({3}, rng, 0.5);

    LstmCellParams mutable_p = p;
    std::vector<const Tensor*> tracked(3);
    LstmCellParams tracked_p;
    const auto run = [&](bool wants_grads, Gradients* out) {
      Tape tape;
      tracked_p.hidden = 3;
      tracked_p.w_x = tape.leaf(mutable_p.w_x);
      tracked_p.w_h = tape.leaf(mutable_p.w_h);
      tracked_p.b = tape.leaf(mutable_p.b);
      const LstmState s = lstm_step(tape, tracked_p, x, h0, c0);
      const Tensor loss = tape.sum(tape.mul(s.h, s.c));
      if (wants_grads) {
        tracked[0] = &tracked_p.w_x;
        tracked[1] = &tracked_p.w_h;
        tracked[2] = &tracked_p.b;
        *out = tape.backward(loss);
      }
      return loss.item();
    };
    const std::array<Tensor*, 3> refs{&mutable_p.w_x, &mutable_p.w_h,
                                      &mutable_p.b};
    CHECK(fd_check_params(run, refs, tracked) <= 1e-4);
  }
}

TEST_CASE("additive_attention") {
  SUBCASE("single key takes all the weight") {
    Rng rng(9);
    const AdditiveAttentionParams p = make_additive_attention(4, 3, 2, rng);
    Tape tape;
    const std::array<Tensor, 1> keys{random_tensor({3}, rng)};
    const std::array<Tensor, 1> values{random_tensor({3}, rng)};
    const AttentionResult r = additive_attention(
        tape, p, random_tensor({2}, rng), keys, values);
    CHECK(r.weights.item() == 1.0);
    CHECK(r.context.data == values[0].data);
  }

  SUBCASE("identical keys, distinct values: context is the mean") {
    Rng rng(10);
    const AdditiveAttentionParams p = make_additive_attention(4, 3, 2, rng);
    Tape tape;
    const Tensor key = random_tensor({3}, rng);
    const std::array<Tensor, 3> keys{key, key, key};
    const std::array<Tensor, 3> values{random_tensor({3}, rng),
                                       random_tensor({3}, rng),
                                       random_tensor({3}, rng)};
    const AttentionResult r =
        additive_attention(tape, p, random_tensor({2}, rng), keys, values);
    for (const double w : r.weights.data) {
      CHECK(w == doctest::Approx(1.0 / 3).epsilon(1e-12));
    }
    for (std::size_t i = 0; i < 3; ++i) {
      const double mean =
          (values[0].data[i] + values[1].data[i] + values[2].data[i]) / 3.0;
      CHECK(r.context.data[i] == doctest::Approx(mean).epsilon(1e-12));
    }
  }

  SUBCASE("two keys, scalar projections, closed-form softmax") {
    // Da = Dkey = Dquery = 1, so score_i = ws * tanh(wk*k_i + wq*q).
    AdditiveAttentionParams p;
    p.key_proj = Tensor({1, 1}, {0.8});
    p.query_proj = Tensor({1, 1}, {-0.5});
    p.score = Tensor({1, 1}, {1.3});
    Tape tape;
    const std::array<Tensor, 2> keys{Tensor::scalar(0.2), Tensor::scalar(-0.7)};
    const std::array<Tensor, 2> values{Tensor::scalar(1.0),
                                       Tensor::scalar(2.0)};
    const Tensor query = Tensor::scalar(0.4);
    const AttentionResult r =
        additive_attention(tape, p, query, keys, values);
    const double s0 = 1.3 * std::tanh(0.8 * 0.2 + (-0.5) * 0.4);
    const double s1 = 1.3 * std::tanh(0.8 * (-0.7) + (-0.5) * 0.4);
    const double w0 = std::exp(s0) / (std::exp(s0) + std::exp(s1));
    CHECK(r.weights.data[0] == doctest::Approx(w0).epsilon(1e-12));
    CHECK(r.weights.data[1] == doctest::Approx(1 - w0).epsilon(1e-12));
    CHECK(r.context.item() ==
          doctest::Approx(w0 * 1.0 + (1 - w0) * 2.0).epsilon(1e-12));
  }

  SUBCASE("weights form a simplex and permuting keys/values permutes weights") {
    Rng rng(11);
    const AdditiveAttentionParams p = make_additive_attention(4, 3, 3, rng);
    for (int rep = 0; rep < 30; ++rep) {
      const std::size_t n = 2 + rng.below(5);
      std::vector<Tensor> keys, values;
      for (std::size_t i = 0; i < n; ++i) {
        keys.push_back(random_tensor({3}, rng));
        values.push_back(random_tensor({3}, rng));
      }
      const Tensor query = random_tensor({3}, rng);
      Tape tape;
      const AttentionResult r =
          additive_attention(tape, p, query, keys, values);
      double sum = 0.0;
      for (const double w : r.weights.data) {
        CHECK(w >= 0.0);
        sum += w;
      }
      CHECK(std::abs(sum - 1.0) <= 1e-12);

      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), 0);
      for (std::size_t i = n; i > 1; --i) {
        std::swap(perm[i - 1], perm[rng.below(i)]);
      }
      std::vector<Tensor> pkeys, pvalues;
      for (const std::size_t idx : perm) {
        pkeys.push_back(keys[idx]);
        pvalues.push_back(values[idx]);
      }
      Tape tape2;
      const AttentionResult r2 =
          additive_attention(tape2, p, query, pkeys, pvalues);
      for (std::size_t i = 0; i < n; ++i) {
        CHECK(std::abs(r2.weights.data[i] - r.weights.data[perm[i]]) <= 1e-12);
      }
      for (std::size_t i = 0; i < 3; ++i) {
        CHECK(std::abs(r2.context.data[i] - r.context.data[i]) <= 1e-12);
      }
    }
  }

  SUBCASE("empty key set rejected") {
    Rng rng(12);
    const AdditiveAttentionParams p = make_additive_attention(4, 3, 2, rng);
    Tape tape;
    CHECK_THROWS_AS(additive_attention(tape, p, Tensor({2}), {}, {}),
                    DomainError);
  }

  SUBCASE("gradients match finite differences") {
    Rng rng(13);
    AdditiveAttentionParams p = make_additive_attention(3, 2, 2, rng);
    std::vector<Tensor> keys{random_tensor({2}, rng), random_tensor({2}, rng),
                             random_tensor({2}, rng)};
    const Tensor query = random_tensor({2}, rng);

    std::vector<const Tensor*> tracked(3);
    AdditiveAttentionParams tp;
    const auto run = [&](bool wants_grads, Gradients* out) {
      Tape tape;
      tp.key_proj = tape.leaf(p.key_proj);
      tp.query_proj = tape.leaf(p.query_proj);
      tp.score = tape.leaf(p.score);
      const AttentionResult r =
          additive_attention(tape, tp, query, keys, keys);
      const Tensor loss = tape.sum(tape.mul(r.context, r.context));
      if (wants_grads) {
        tracked[0] = &tp.key_proj;
        tracked[1] = &tp.query_proj;
        tracked[2] = &tp.score;
        *out = tape.backward(loss);
      }
      return loss.item();
    };
    const std::array<Tensor*, 3> refs{&p.key_proj, &p.query_proj, &p.score};
    CHECK(fd_check_params(run, refs, tracked) <= 1e-4);
  }
}

TEST_CASE("embed_lookup") {
  Tape tape;
  EmbeddingTable table;
  table.weight = Tensor({2, 3}, {1, 2, 3, 4, 5, 6});

  SUBCASE("id 0 returns the first column") {
    const EmbeddingTable tracked{tape.leaf(table.weight)};
    CHECK(embed_lookup(tape, tracked, 0).data == std::vector<double>{1, 4});
  }
  SUBCASE("gradient accumulates into the looked-up column only") {
    const EmbeddingTable tracked{tape.leaf(table.weight)};
    const Gradients g =
        tape.backward(tape.sum(embed_lookup(tape, tracked, 2)));
    CHECK(g.at(tracked.weight) == std::vector<double>{0, 0, 1, 0, 0, 1});
  }
  SUBCASE("one-hot matmul agrees with the lookup") {
    const Tensor onehot({3, 1}, {0, 1, 0});
    const Tensor via_matmul = tape.matmul(table.weight, onehot);
    const EmbeddingTable tracked{tape.leaf(table.weight)};
    const Tensor via_lookup = embed_lookup(tape, tracked, 1);
    CHECK(via_matmul.data == via_lookup.data);
  }
  SUBCASE("out-of-range id rejected") {
    const EmbeddingTable tracked{tape.leaf(table.weight)};
    CHECK_THROWS_AS(embed_lookup(tape, tracked, 3), IndexError);
  }
}

TEST_CASE("linear") {
  Tape tape;

  SUBCASE("identity weight, zero bias") {
    LinearParams p;
    p.weight = Tensor({2, 2}, {1, 0, 0, 1});
    p.bias = Tensor({2});
    const Tensor x = Tensor::from_vector({3, -4});
    CHECK(linear(tape, p, x).data == x.data);
  }
  SUBCASE("zero weight returns the bias") {
    LinearParams p;
    p.weight = Tensor({2, 3});
    p.bias = Tensor::from_vector({0.5, -0.5});
    CHECK(linear(tape, p, Tensor::from_vector({1, 2, 3})).data ==
          p.bias.data);
  }
  SUBCASE("matches matmul + add composition") {
    Rng rng(14);
    LinearParams p;
    p.weight = Tensor({2, 3});
    p.bias = Tensor({2});
    for (double& v : p.weight.data) v = rng.uniform(-1, 1);
    for (double& v : p.bias.data) v = rng.uniform(-1, 1);
    Tensor x({3});
    for (double& v : x.data) v = rng.uniform(-1, 1);
    const Tensor via_linear = linear(tape, p, x);
    const Tensor via_ops = tape.add(tape.matvec(p.weight, x), p.bias);
    CHECK(via_linear.data == via_ops.data);
  }
  SUBCASE("no-bias form is a pure matvec") {
    LinearParams p;
    p.weight = Tensor({1, 2}, {2, 3});
    CHECK(linear(tape, p, Tensor::from_vector({1, 1})).item() == 5.0);
  }
}

TEST_CASE("initialization ranges") {
  Rng rng(15);
  const LstmCellParams p = make_lstm_cell(4, 3, rng);
  for (const double v : p.w_x.data) CHECK(std::abs(v) <= 0.08);
  for (const double v : p.w_h.data) CHECK(std::abs(v) <= 0.08);
  // forget-gate slab sits at exactly 1
  for (std::size_t j = 3; j < 6; ++j) CHECK(p.b.data[j] == 1.0);
  for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(p.b.data[j]) <= 0.08);
}
