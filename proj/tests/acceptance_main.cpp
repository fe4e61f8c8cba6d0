// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one line per criterion, [PASS]/[FAIL] plus detail.
// Exit code is the number of failed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "refdec/data.hpp"
#include "refdec/inference.hpp"
#include "refdec/kernels.hpp"
#include "refdec/metrics.hpp"
#include "refdec/model.hpp"
#include "refdec/reference_eval.hpp"
#include "refdec/rng.hpp"
#include "refdec/training.hpp"

using namespace refdec;

namespace {

int g_failures = 0;

void report(int id, const char* name, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %d: %s — %s\n", pass ? "PASS" : "FAIL", id,
              name, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof buf, f, args);
  va_end(args);
  return buf;
}

ModelParams random_tiny_model(std::size_t vocab, std::uint64_t seed) {
  const ModelDims dims{.region_dim = 3, .embed_dim = 3, .hidden_dim = 4,
                       .attn_dim = 3, .vocab_size = vocab};
  ModelParams p = init_params(dims, Variant::full, seed);
  Rng rng(seed ^ 0x5eedbeef);
  for (double& v : p.out_head.weight.data) v = rng.uniform(-1.5, 1.5);
  for (double& v : p.out_head.bias.data) v = rng.uniform(-1.5, 1.5);
  return p;
}

std::vector<Tensor> random_regions(std::size_t k, std::size_t d, Rng& rng) {
  std::vector<Tensor> regions;
  for (std::size_t i = 0; i < k; ++i) {
    Tensor r(Shape{d});
    for (double& v : r.data) v = rng.uniform(-1, 1);
    regions.push_back(std::move(r));
  }
  return regions;
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness on the pinned tiny full-variant model.

void criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  const ModelDims dims{.region_dim = 6, .embed_dim = 8, .hidden_dim = 10,
                       .attn_dim = 6, .vocab_size = 12};
  const GradCheckReport r = model_grad_check(dims, 3, 5, 0, 1e-5, 0.02);
  const double secs = seconds_since(t0);
  const bool pass = r.finite && r.max_rel_err <= 1e-4 && secs < 30.0;
  report(1, "gradient correctness", pass,
         fmt("max relative error %.3e (tolerance 1e-4, eps 1e-5), worst %s[%zu], %.1f s",
             r.max_rel_err, r.worst_param.c_str(), r.worst_coord, secs));
}

// ---------------------------------------------------------------------------
// 2. Attention weight invariants over 1,000 randomized decode steps.

void criterion2() {
  std::size_t steps = 0, violations = 0;
  double worst_gap = 0.0;
  bool first_step_exact = true;
  std::uint64_t model_seed = 0;
  while (steps < 1000) {
    const ModelParams p = random_tiny_model(7, model_seed);
    Rng rng(model_seed + 7777);
    const auto regions = random_regions(2 + model_seed % 4, 3, rng);
    const DecodeResult r = greedy_decode(p, regions, 8);
    for (std::size_t t = 0; t < r.trace.size(); ++t) {
      ++steps;
      const auto check_simplex = [&](const std::vector<double>& w) {
        double sum = 0.0;
        for (const double v : w) {
          if (v < 0.0) ++violations;
          sum += v;
        }
        worst_gap = std::max(worst_gap, std::abs(sum - 1.0));
        if (std::abs(sum - 1.0) > 1e-10) ++violations;
      };
      check_simplex(r.trace[t].alpha_vis);
      check_simplex(r.trace[t].alpha_ref);
      if (t == 0) {
        if (r.trace[t].alpha_ref.size() != 1 ||
            std::abs(r.trace[t].alpha_ref[0] - 1.0) > 1e-12) {
          first_step_exact = false;
        }
      }
    }
    ++model_seed;
  }
  const bool pass = violations == 0 && first_step_exact;
  report(2, "attention invariants", pass,
         fmt("%zu decode steps, %zu simplex violations, worst |sum-1| %.2e, "
             "alpha_ref(t=1) exact: %s",
             steps, violations, worst_gap, first_step_exact ? "yes" : "no"));
}

// ---------------------------------------------------------------------------
// 3. Beam search vs exhaustive enumeration, and beam-1 vs greedy.

struct Enumerated {
  std::vector<int> tokens;
  double log_prob;
};

void enumerate_rec(const ModelParams& params,
                   const std::vector<Tensor>& regions, std::vector<int>& path,
                   double lp, std::size_t max_len,
                   std::vector<Enumerated>& out) {
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

void criterion3() {
  std::size_t exact_hits = 0;
  const std::size_t exact_models = 50;
  for (std::uint64_t seed = 0; seed < exact_models; ++seed) {
    const ModelParams p = random_tiny_model(4, seed);  // V = 4
    Rng rng(seed + 900);
    const auto regions = random_regions(2, 3, rng);
    const std::size_t max_len = 2 + seed % 3;  // 2..4
    std::vector<Enumerated> all;
    std::vector<int> path;
    enumerate_rec(p, regions, path, 0.0, max_len, all);
    std::sort(all.begin(), all.end(),
              [](const Enumerated& a, const Enumerated& b) {
                if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
                return a.tokens < b.tokens;
              });
    const std::size_t beam_width = static_cast<std::size_t>(
        std::pow(4.0, static_cast<double>(max_len)));
    const auto beam = beam_search(p, regions, beam_width, max_len);
    if (!beam.empty() && beam.front().tokens == all.front().tokens &&
        std::abs(beam.front().log_prob - all.front().log_prob) <= 1e-9) {
      ++exact_hits;
    }
  }

  std::size_t greedy_hits = 0;
  const std::size_t greedy_cases = 100;
  for (std::uint64_t seed = 0; seed < greedy_cases; ++seed) {
    const ModelParams p = random_tiny_model(5 + seed % 3, seed + 300);
    Rng rng(seed + 1300);
    const auto regions = random_regions(2 + seed % 3, 3, rng);
    const DecodeResult g = greedy_decode(p, regions, 6);
    const auto beam = beam_search(p, regions, 1, 6);
    greedy_hits += !beam.empty() && beam.front().tokens == g.tokens;
  }
  const bool pass =
      exact_hits == exact_models && greedy_hits == greedy_cases;
  report(3, "beam correctness", pass,
         fmt("exhaustive optimum matched on %zu/%zu tiny models, "
             "beam-1 == greedy on %zu/%zu cases",
             exact_hits, exact_models, greedy_hits, greedy_cases));
}

// ---------------------------------------------------------------------------
// 4. Memorization of a 20-record set at desk dims, single-threaded.

void criterion4() {
  const auto t0 = std::chrono::steady_clock::now();
  const int hw_threads = kernels::max_threads();
  kernels::set_threads(1);

  const GeneratorConfig gc = GeneratorConfig::defaults();
  const DatasetSplits splits = generate_dataset(gc, 20, 2, 2, 11);
  std::vector<std::vector<std::string>> corpus;
  for (const auto& r : splits.train) corpus.push_back(r.caption);
  const Vocabulary vocab = build_vocab(corpus, 1);
  const TrainDataset data = bind_dataset(vocab, splits.train);

  TrainConfig cfg;
  cfg.dims = {.region_dim = gc.region_dim, .embed_dim = 32, .hidden_dim = 64,
              .attn_dim = 32, .vocab_size = vocab.size()};
  cfg.variant = Variant::full;
  cfg.lr0 = 0.3;
  cfg.total_iters = 5000;
  cfg.batch_size = 20;
  cfg.seed = 1;

  // Stage the schedule and stop as soon as the bar is cleared.
  double accuracy = 0.0;
  std::size_t used = 0;
  ModelParams params;
  for (std::size_t stop = 250; stop <= cfg.total_iters && accuracy < 0.99;
       stop += 250) {
    const TrainResult r =
        train(data, vocab, cfg, used == 0 ? nullptr : &params, used, stop);
    params = r.params;
    used = stop;
    accuracy = teacher_forced_accuracy(params, data);
  }
  kernels::set_threads(hw_threads);
  const double secs = seconds_since(t0);
  const bool pass = accuracy >= 0.99 && used <= 5000 && secs < 600.0;
  report(4, "memorization", pass,
         fmt("teacher-forced accuracy %.4f after %zu iterations "
             "(cap 5000), %.0f s single-threaded (cap 600)",
             accuracy, used, secs));
}

// ---------------------------------------------------------------------------
// 5 + 6. Ablation direction on the long-dependency corpus, and the
// position head calibration of the trained full model.

struct AblationRun {
  double color_acc = 0.0;
  double cider_score = 0.0;
};

// The engineered dependency is the caption's own: its final color token
// must repeat its third token. A decode gets credit when its last token
// matches the color it emitted in the third slot. (Scoring against the
// scene instead would fold in subject selection, which is unidentifiable
// from the unordered region set and independent of the mechanism under
// test.)
AblationRun run_variant(const TrainDataset& data, const Vocabulary& vocab,
                        const DatasetSplits& splits, Variant variant,
                        std::uint64_t seed, std::size_t iters,
                        std::size_t hidden, ModelParams* params_out) {
  TrainConfig cfg;
  cfg.dims = {.region_dim = GeneratorConfig::defaults().region_dim,
              .embed_dim = 32, .hidden_dim = hidden, .attn_dim = 32,
              .vocab_size = vocab.size()};
  cfg.variant = variant;
  cfg.lr0 = 0.3;
  cfg.total_iters = iters;
  cfg.batch_size = 20;
  cfg.seed = seed;
  const TrainResult r = train(data, vocab, cfg);
  if (params_out) *params_out = r.params;

  AblationRun out;
  std::size_t hits = 0;
  for (const auto& rec : splits.test) {
    const auto beams = beam_search(r.params, rec.regions, 5, 30);
    if (!beams.empty() && beams.front().tokens.size() >= 4) {
      const auto& toks = beams.front().tokens;
      hits += toks.back() == toks[2];
    }
  }
  out.color_acc =
      100.0 * static_cast<double>(hits) / static_cast<double>(splits.test.size());
  const Checkpoint ckpt{r.params, vocab, {iters, seed}, vocab.fingerprint()};
  out.cider_score = corpus_eval(ckpt, splits.test, 5, 30).cider;
  return out;
}

double median3(double a, double b, double c) {
  return std::max(std::min(a, b), std::min(std::max(a, b), c));
}

void criteria5and6() {
  const auto t0 = std::chrono::steady_clock::now();
  // Desk-scale recipe: both variants reach ~full teacher-forced accuracy on
  // the 200 training scenes, so the held-out gap isolates generalization of
  // the long-range hook rather than optimization speed.
  const std::size_t iters = 2500;
  const std::size_t hidden = 32;
  const GeneratorConfig gc = GeneratorConfig::defaults();
  const DatasetSplits splits = generate_dataset(gc, 200, 50, 50, 101);
  std::vector<std::vector<std::string>> corpus;
  for (const auto& r : splits.train) corpus.push_back(r.caption);
  const Vocabulary vocab = build_vocab(corpus, 5);
  const TrainDataset data = bind_dataset(vocab, splits.train);

  std::vector<AblationRun> full_runs, base_runs;
  ModelParams first_full;
  for (const std::uint64_t seed : {1ull, 2ull, 3ull}) {
    full_runs.push_back(run_variant(data, vocab, splits, Variant::full, seed,
                                    iters, hidden,
                                    seed == 1 ? &first_full : nullptr));
  }
  for (const std::uint64_t seed : {1ull, 2ull, 3ull}) {
    base_runs.push_back(run_variant(data, vocab, splits, Variant::baseline,
                                    seed, iters, hidden, nullptr));
  }
  const double full_color = median3(full_runs[0].color_acc,
                                    full_runs[1].color_acc,
                                    full_runs[2].color_acc);
  const double base_color = median3(base_runs[0].color_acc,
                                    base_runs[1].color_acc,
                                    base_runs[2].color_acc);
  const double full_cider = median3(full_runs[0].cider_score,
                                    full_runs[1].cider_score,
                                    full_runs[2].cider_score);
  const double base_cider = median3(base_runs[0].cider_score,
                                    base_runs[1].cider_score,
                                    base_runs[2].cider_score);
  const double secs = seconds_since(t0);
  const bool pass = full_color - base_color >= 5.0 &&
                    full_cider >= base_cider && secs < 3600.0;
  report(5, "ablation direction", pass,
         fmt("median final-color accuracy full %.1f%% vs baseline %.1f%% "
             "(need +5), median CIDEr %.3f vs %.3f, 3 seeds, %.0f s "
             "(cap 3600)",
             full_color, base_color, full_cider, base_cider, secs));

  const double pos_err = mean_position_error(first_full, data);
  report(6, "position head", pos_err <= 0.1,
         fmt("mean |predicted - actual| relative position %.4f over the "
             "training set (cap 0.1)",
             pos_err));
}

// ---------------------------------------------------------------------------
// 7. Metric oracles.

void criterion7() {
  bool pass = true;
  std::string detail = "identity/disjoint exact; hand cases within 1e-9";
  const auto expect = [&](bool ok, const char* what) {
    if (!ok) {
      pass = false;
      detail = std::string("failed: ") + what;
    }
  };

  const TokenSeq idc{"a", "big", "red", "box", "here"};
  const BleuResult ident = bleu(std::vector<TokenSeq>{idc},
                                std::vector<std::vector<TokenSeq>>{{idc}});
  for (const double b : ident.bleu) expect(b == 1.0, "BLEU identity");
  expect(rouge_l(std::vector<TokenSeq>{idc},
                 std::vector<std::vector<TokenSeq>>{{idc}}) == 1.0,
         "ROUGE identity");

  const TokenSeq disjoint_c{"x", "y", "z"};
  const TokenSeq disjoint_r{"a", "b", "c"};
  const BleuResult dj =
      bleu(std::vector<TokenSeq>{disjoint_c},
           std::vector<std::vector<TokenSeq>>{{disjoint_r}});
  expect(dj.bleu[0] == 0.0, "BLEU disjoint");
  expect(rouge_l(std::vector<TokenSeq>{disjoint_c},
                 std::vector<std::vector<TokenSeq>>{{disjoint_r}}) == 0.0,
         "ROUGE disjoint");

  const BleuResult bp =
      bleu(std::vector<TokenSeq>{{"the", "cat", "sat"}},
           std::vector<std::vector<TokenSeq>>{{{"the", "cat", "sat",
                                                "down"}}});
  expect(std::abs(bp.bleu[0] - std::exp(1.0 - 4.0 / 3.0)) <= 1e-9,
         "BLEU brevity-penalty hand case");

  const double rl =
      rouge_l(std::vector<TokenSeq>{{"a", "b", "c", "d"}},
              std::vector<std::vector<TokenSeq>>{{{"a", "c", "d"}}});
  expect(std::abs(rl - 1.65 / 1.9) <= 1e-9, "ROUGE LCS hand case");

  const double cd =
      cider(std::vector<TokenSeq>{{"red", "box"}, {"red", "sky"}},
            std::vector<std::vector<TokenSeq>>{{{"red", "box"}},
                                               {{"blue", "sky"}}});
  expect(std::abs(cd - 3.125) <= 1e-9, "CIDEr TF-IDF hand case");

  const double cd0 =
      cider(std::vector<TokenSeq>{{"x", "y"}, {"p", "q"}},
            std::vector<std::vector<TokenSeq>>{{{"a", "b"}}, {{"c", "d"}}});
  expect(cd0 == 0.0, "CIDEr disjoint");

  report(7, "metric oracles", pass, detail);
}

// ---------------------------------------------------------------------------
// 8. Determinism and serialization.

void criterion8() {
  const GeneratorConfig gc = GeneratorConfig::defaults();
  const DatasetSplits splits = generate_dataset(gc, 8, 1, 1, 21);
  std::vector<std::vector<std::string>> corpus;
  for (const auto& r : splits.train) corpus.push_back(r.caption);
  const Vocabulary vocab = build_vocab(corpus, 1);
  const TrainDataset data = bind_dataset(vocab, splits.train);

  TrainConfig cfg;
  cfg.dims = {.region_dim = gc.region_dim, .embed_dim = 8, .hidden_dim = 12,
              .attn_dim = 6, .vocab_size = vocab.size()};
  cfg.variant = Variant::full;
  cfg.lr0 = 0.3;
  cfg.total_iters = 60;
  cfg.batch_size = 4;
  cfg.seed = 5;

  const auto slurp = [](const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
  };

  const TrainResult a = train(data, vocab, cfg);
  const TrainResult b = train(data, vocab, cfg);
  const std::string stem_a = "/tmp/refdec_acceptance_a";
  const std::string stem_b = "/tmp/refdec_acceptance_b";
  save_checkpoint(a.params, vocab, {60, 5}, stem_a);
  save_checkpoint(b.params, vocab, {60, 5}, stem_b);
  const bool identical_runs = slurp(stem_a + ".bin") == slurp(stem_b + ".bin") &&
                              slurp(stem_a + ".json") == slurp(stem_b + ".json");

  const Checkpoint loaded = load_checkpoint(stem_a);
  const std::string stem_c = "/tmp/refdec_acceptance_c";
  save_checkpoint(loaded.params, loaded.vocab, loaded.meta, stem_c);
  const bool roundtrip = slurp(stem_a + ".bin") == slurp(stem_c + ".bin") &&
                         slurp(stem_a + ".json") == slurp(stem_c + ".json");
  for (const auto& s : {stem_a, stem_b, stem_c}) {
    std::remove((s + ".json").c_str());
    std::remove((s + ".bin").c_str());
  }
  report(8, "determinism and serialization", identical_runs && roundtrip,
         fmt("same-seed checkpoints byte-identical: %s; "
             "save-load-save byte-identical: %s",
             identical_runs ? "yes" : "no", roundtrip ? "yes" : "no"));
}

// ---------------------------------------------------------------------------
// 9. Learning-rate schedule endpoints.

void criterion9() {
  const double lr_start = poly_decay_lr(0.01, 0, 70000, 1.0);
  const double lr_end = poly_decay_lr(0.01, 70000, 70000, 1.0);
  bool monotone = true;
  double prev = lr_start;
  for (std::size_t it = 0; it <= 70000; it += 3500) {
    const double lr = poly_decay_lr(0.01, it, 70000, 1.0);
    if (lr > prev) monotone = false;
    prev = lr;
  }
  const bool pass = lr_start == 0.01 && lr_end == 0.0 && monotone;
  report(9, "learning-rate schedule", pass,
         fmt("lr(0) = %.4g, lr(70000) = %.4g, nonincreasing: %s", lr_start,
             lr_end, monotone ? "yes" : "no"));
}

}  // namespace

int main() {
  std::printf("refdec acceptance suite (threads available: %d)\n",
              kernels::max_threads());
  criterion1();
  criterion2();
  criterion3();
  criterion4();
  criteria5and6();
  criterion7();
  criterion8();
  criterion9();
  std::printf("%d criterion(s) failed\n", g_failures);
  return g_failures;
}
