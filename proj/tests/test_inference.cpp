// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "refdec/error.hpp"
#include "refdec/inference.hpp"
#include "refdec/rng.hpp"

using namespace refdec;

namespace {

std::vector<Tensor> random_regions(std::size_t k, std::size_t d, Rng& rng) {
  std::vector<Tensor> regions;
  for (std::size_t i = 0; i < k; ++i) {
    Tensor r(Shape{d});
    for (double& v : r.data) v = rng.uniform(-1, 1);
    regions.push_back(std::move(r));
  }
  return regions;
}

ModelParams random_model(std::size_t vocab, std::uint64_t seed,
                         Variant variant = Variant::full) {
  const ModelDims dims{.region_dim = 3, .embed_dim = 3, .hidden_dim = 4,
                       .attn_dim = 3, .vocab_size = vocab};
  ModelParams p = init_params(dims, variant, seed);
  // spread the output head so decodes are not near-uniform
  Rng rng(seed ^ 0xabcdef);
  for (double& v : p.out_head.weight.data) v = rng.uniform(-1.5, 1.5);
  for (double& v : p.out_head.bias.data) v = rng.uniform(-1.5, 1.5);
  return p;
}

// All complete decodes (first <eos> or max_len emissions), scored by the
// model step by step.
struct Enumerated {
  std::vector<int> tokens;  // stripped of <eos>
  double log_prob;
};

void enumerate_rec(const ModelParams& params,
                   const std::vector<Tensor>& regions, std::vector<int>& path,
                   double lp, std::size_t max_len,
                   std::vector<Enumerated>& out) {
  // score the next step by replaying the whole prefix on a fresh tape
  Tape tape;
  const ModelParams tracked = track(tape, params);
  std::vector<Tensor> tr;
  for (const Tensor& r : regions) tr.push_back(tape.leaf(r));
  DecoderState state = init_state(tape, tracked);
  int prev = Vocabulary::kBos;
  StepOutput step_out;
  for (const int tok : path) {
    step_out = decoder_step(tape, tracked, state, prev, tr);
    prev = tok;
  }
  step_out = decoder_step(tape, tracked, state, prev, tr);
  const auto& logits = step_out.logits.data;
  double mx = logits[0];
  for (const double v : logits) mx = std::max(mx, v);
  double denom = 0.0;
  for (const double v : logits) denom += std::exp(v - mx);
  const double lse = mx + std::log(denom);

  for (std::size_t tok = 0; tok < logits.size(); ++tok) {
    const double tok_lp = lp + logits[tok] - lse;
    if (tok == Vocabulary::kEos) {
      out.push_back({path, tok_lp});
    } else {
      path.push_back(static_cast<int>(tok));
      if (path.size() == max_len) {
        out.push_back({path, tok_lp});
      } else {
        enumerate_rec(params, regions, path, tok_lp, max_len, out);
      }
      path.pop_back();
    }
  }
}

Enumerated exhaustive_best(const ModelParams& params,
                           const std::vector<Tensor>& regions,
                           std::size_t max_len) {
  std::vector<Enumerated> all;
  std::vector<int> path;
  enumerate_rec(params, regions, path, 0.0, max_len, all);
  std::sort(all.begin(), all.end(), [](const Enumerated& a,
                                       const Enumerated& b) {
    if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
    return a.tokens < b.tokens;
  });
  return all.front();
}

}  // namespace

TEST_CASE("greedy_decode on constructed models") {
  SUBCASE("a bias that dumps everything on <eos> gives an empty caption") {
    const ModelDims dims{.region_dim = 2, .embed_dim = 2, .hidden_dim = 2,
                         .attn_dim = 2, .vocab_size = 5};
    ModelParams p = init_params(dims, Variant::full, 1);
    p.out_head.bias.data.assign(5, 0.0);
    p.out_head.bias.data[Vocabulary::kEos] = 50.0;
    Rng rng(2);
    const auto regions = random_regions(2, 2, rng);
    const DecodeResult r = greedy_decode(p, regions, 8);
    CHECK(r.tokens.empty());
    REQUIRE(r.trace.size() == 1);
    CHECK(r.trace[0].token == Vocabulary::kEos);
  }

  SUBCASE("hand-wired model emits token 4 then <eos>") {
    // Both LSTMs pass their chosen input through gate g with i ~ 1, f ~ 0,
    // o ~ 1. Layer 1 reads the embedding slot of token 4, layer 2 reads
    // h1[0]. The output head tips to <eos> once that signal arrives, one
    // step after token 4 was consumed.
    const ModelDims dims{.region_dim = 2, .embed_dim = 2, .hidden_dim = 2,
                         .attn_dim = 2, .vocab_size = 5};
    ModelParams p = init_params(dims, Variant::baseline, 0);
    for_each_param(p, [](const char*, Tensor& t) {
      t.data.assign(t.data.size(), 0.0);
    });
    const std::size_t hd = 2;
    p.embedding.weight.data[0 * 5 + 4] = 10.0;  // emb(token 4) = [10, 0]
    auto open_gates = [hd](LstmCellParams& cell) {
      for (std::size_t j = 0; j < hd; ++j) {
        cell.b.data[j] = 20.0;            // input gate ~ 1
        cell.b.data[hd + j] = -20.0;  // forget gate ~ 0
        cell.b.data[3 * hd + j] = 20.0;   // output gate ~ 1
      }
    };
    open_gates(p.lstm1);
    open_gates(p.lstm2);
    // g-slab row 0: layer 1 reads x1[region_dim + 0] (embedding slot 0)
    p.lstm1.w_x.data[(2 * hd + 0) * p.lstm1.w_x.shape[1] + 2] = 1.0;
    // layer 2 reads x2[region_dim + 0] (h1[0])
    p.lstm2.w_x.data[(2 * hd + 0) * p.lstm2.w_x.shape[1] + 2] = 10.0;
    p.out_head.bias.data[4] = 1.0;
    p.out_head.weight.data[Vocabulary::kEos * hd + 0] = 5.0;
    p.out_head.bias.data[Vocabulary::kEos] = -1.0;

    const std::vector<Tensor> regions{Tensor({2}), Tensor({2})};
    const DecodeResult r = greedy_decode(p, regions, 6);
    CHECK(r.tokens == std::vector<int>{4});
    REQUIRE(r.trace.size() == 2);
    CHECK(r.trace[1].token == Vocabulary::kEos);
  }

  SUBCASE("repeated calls give identical output") {
    const ModelParams p = random_model(7, 3);
    Rng rng(4);
    const auto regions = random_regions(3, 3, rng);
    const DecodeResult a = greedy_decode(p, regions, 10);
    const DecodeResult b = greedy_decode(p, regions, 10);
    CHECK(a.tokens == b.tokens);
    REQUIRE(a.trace.size() == b.trace.size());
    for (std::size_t t = 0; t < a.trace.size(); ++t) {
      CHECK(a.trace[t].alpha_ref == b.trace[t].alpha_ref);
    }
  }
}

TEST_CASE("beam_search equals greedy at beam 1") {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const ModelParams p = random_model(6, seed);
    Rng rng(seed + 100);
    const auto regions = random_regions(2 + seed % 3, 3, rng);
    const DecodeResult greedy = greedy_decode(p, regions, 6);
    const auto beam = beam_search(p, regions, 1, 6);
    REQUIRE(!beam.empty());
    CHECK(beam.front().tokens == greedy.tokens);
  }
}

TEST_CASE("beam_search with a full-width beam matches exhaustive search") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const ModelParams p = random_model(4, seed);  // reserved tokens only
    Rng rng(seed + 500);
    const auto regions = random_regions(2, 3, rng);
    const std::size_t max_len = 3;
    const Enumerated best = exhaustive_best(p, regions, max_len);
    const auto beam = beam_search(p, regions, 64, max_len);  // 4^3
    REQUIRE(!beam.empty());
    CHECK(beam.front().tokens == best.tokens);
    CHECK(beam.front().log_prob ==
          doctest::Approx(best.log_prob).epsilon(1e-9));
  }
}

TEST_CASE("beam_search output contract") {
  const ModelParams p = random_model(6, 11);
  Rng rng(12);
  const auto regions = random_regions(3, 3, rng);
  const auto beam = beam_search(p, regions, 4, 6);
  REQUIRE(!beam.empty());
  for (std::size_t i = 1; i < beam.size(); ++i) {
    CHECK(beam[i - 1].score >= beam[i].score);
    for (std::size_t j = 0; j < i; ++j) {
      CHECK(beam[j].tokens != beam[i].tokens);
    }
  }
  for (const auto& h : beam) CHECK(h.finished);
  CHECK_THROWS_AS(beam_search(p, regions, 0, 6), DomainError);
}

TEST_CASE("uniform distributions tie-break to the lexicographically smallest") {
  // Every step costs ln V, so shorter sequences score higher; within each
  // equal-score band the token-sequence order decides.
  const ModelDims dims{.region_dim = 2, .embed_dim = 2, .hidden_dim = 2,
                       .attn_dim = 2, .vocab_size = 5};
  ModelParams p = init_params(dims, Variant::full, 5);
  p.out_head.weight = Tensor({5, 2});
  p.out_head.bias = Tensor({5});
  const std::vector<Tensor> regions{Tensor({2})};
  const auto beam = beam_search(p, regions, 3, 3);
  REQUIRE(beam.size() == 3);
  CHECK(beam[0].tokens == std::vector<int>{});
  CHECK(beam[1].tokens == std::vector<int>{0});
  // the three-emission band is tied; [0,0,<eos>] beats [0,0,0] and [0,0,1]
  CHECK(beam[2].tokens == std::vector<int>{0, 0});
  CHECK(beam[1].log_prob == doctest::Approx(2 * std::log(0.2)).epsilon(1e-12));
}

TEST_CASE("trace rows stay on the simplex with the right lengths") {
  const ModelParams p = random_model(6, 21);
  Rng rng(22);
  const auto regions = random_regions(4, 3, rng);
  const DecodeResult r = greedy_decode(p, regions, 8);
  for (std::size_t t = 0; t < r.trace.size(); ++t) {
    CHECK(r.trace[t].t == t + 1);
    REQUIRE(r.trace[t].alpha_ref.size() == t + 1);
    CHECK(r.trace[t].alpha_vis.size() == 4);
    double sum = 0.0;
    for (const double w : r.trace[t].alpha_ref) {
      CHECK(w >= 0.0);
      sum += w;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-10);
    CHECK(r.trace[t].pos_pred > 0.0);
    CHECK(r.trace[t].pos_pred < 1.0);
  }
}

TEST_CASE("export_trace") {
  const Vocabulary vocab = Vocabulary::from_tokens(
      {"<pad>", "<bos>", "<eos>", "<unk>", "red", "box"});
  AttentionTrace trace;
  trace.push_back({1, 4, {0.25, 0.75}, {1.0}, 0.2});
  trace.push_back({2, 5, {0.5, 0.5}, {0.3, 0.7}, 0.55});
  trace.push_back({3, 2, {0.9, 0.1}, {0.6, 0.25, 0.15}, 0.9});

  SUBCASE("json round-trips the exact weights") {
    const std::string json = export_trace(trace, vocab, TraceFormat::json);
    const auto parsed = nlohmann::json::parse(json);
    REQUIRE(parsed.at("steps").size() == 3);
    const auto& s2 = parsed.at("steps")[1];
    CHECK(s2.at("t").get<int>() == 2);
    CHECK(s2.at("token").get<std::string>() == "box");
    CHECK(s2.at("alpha_ref").get<std::vector<double>>() ==
          std::vector<double>{0.3, 0.7});
    CHECK(s2.at("alpha_vis").get<std::vector<double>>() ==
          std::vector<double>{0.5, 0.5});
    CHECK(s2.at("pos_pred").get<double>() == 0.55);
  }

  SUBCASE("one-step dot graph has a single self-edge of weight 1") {
    const AttentionTrace single(trace.begin(), trace.begin() + 1);
    const std::string dot = export_trace(single, vocab, TraceFormat::dot);
    CHECK(dot.find("s1 -> s1 [label=\"1\"") != std::string::npos);
    CHECK(dot.find("digraph") != std::string::npos);
  }

  SUBCASE("the flagged edge is the argmax of alpha_ref") {
    const std::string dot = export_trace(trace, vocab, TraceFormat::dot);
    // step 3's largest weight comes from step 1 (0.6)
    CHECK(dot.find("s1 -> s3 [label=\"0.6\" penwidth=2.9 color=red]") !=
          std::string::npos);
    // step 2's largest comes from itself (0.7)
    CHECK(dot.find("s2 -> s2 [label=\"0.7\"") != std::string::npos);
  }

  SUBCASE("empty trace rejected") {
    CHECK_THROWS_AS(export_trace({}, vocab, TraceFormat::json), DomainError);
  }
}
