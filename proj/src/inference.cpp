// SPDX-License-Identifier: Apache-2.0
#include "refdec/inference.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "refdec/error.hpp"

namespace refdec {

namespace {

using ordered_json = nlohmann::ordered_json;

std::vector<double> log_softmax(const std::vector<double>& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double denom = 0.0;
  for (const double v : logits) denom += std::exp(v - mx);
  const double lse = mx + std::log(denom);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

TraceStep make_trace_step(std::size_t t, int token, const StepOutput& out) {
  return {t, token, out.alpha_vis.data, out.alpha_ref.data,
          out.pos_pred.item()};
}

// Internal search state; `tokens` includes the trailing <eos> here and is
// stripped when hypotheses are materialized for callers.
struct Candidate {
  std::vector<int> tokens;
  double log_prob = 0.0;
  bool finished = false;
  DecoderState state;
  AttentionTrace trace;
};

bool candidate_order(const std::pair<double, const std::vector<int>*>& a,
                     const std::pair<double, const std::vector<int>*>& b) {
  if (a.first != b.first) return a.first > b.first;
  return *a.second < *b.second;
}

}  // namespace

DecodeResult greedy_decode(const ModelParams& params,
                           std::span<const Tensor> regions,
                           std::size_t max_len) {
  if (max_len < 1) throw ContractError("greedy_decode: max_len must be >= 1");
  Tape tape;
  const ModelParams tracked = track(tape, params);
  std::vector<Tensor> tracked_regions;
  for (const Tensor& r : regions) tracked_regions.push_back(tape.leaf(r));

  DecodeResult result;
  DecoderState state = init_state(tape, tracked);
  int prev = Vocabulary::kBos;
  for (std::size_t t = 1; t <= max_len; ++t) {
    const StepOutput out =
        decoder_step(tape, tracked, state, prev, tracked_regions);
    const auto& logits = out.logits.data;
    const int token = static_cast<int>(
        std::max_element(logits.begin(), logits.end()) - logits.begin());
    result.trace.push_back(make_trace_step(t, token, out));
    if (token == Vocabulary::kEos) break;
    result.tokens.push_back(token);
    prev = token;
  }
  return result;
}

std::vector<BeamHypothesis> beam_search(const ModelParams& params,
                                        std::span<const Tensor> regions,
                                        std::size_t beam_size,
                                        std::size_t max_len,
                                        bool length_norm) {
  if (beam_size == 0) throw DomainError("beam_search: beam_size must be >= 1");
  if (max_len < 1) throw ContractError("beam_search: max_len must be >= 1");

  Tape tape;
  const ModelParams tracked = track(tape, params);
  std::vector<Tensor> tracked_regions;
  for (const Tensor& r : regions) tracked_regions.push_back(tape.leaf(r));

  std::vector<Candidate> live(1);
  live[0].state = init_state(tape, tracked);
  std::vector<Candidate> completed;

  const auto final_score = [length_norm](const Candidate& c) {
    if (!length_norm) return c.log_prob;
    return c.log_prob / static_cast<double>(std::max<std::size_t>(
                            1, c.trace.size()));
  };

  for (std::size_t t = 1; t <= max_len && !live.empty(); ++t) {
    struct Expansion {
      std::size_t parent;
      int token;
      double log_prob;
      std::vector<int> tokens;  // parent tokens + token
    };
    std::vector<Expansion> expansions;
    std::vector<StepOutput> parent_out(live.size());
    for (std::size_t pi = 0; pi < live.size(); ++pi) {
      Candidate& parent = live[pi];
      const int prev =
          parent.tokens.empty() ? Vocabulary::kBos : parent.tokens.back();
      parent_out[pi] =
          decoder_step(tape, tracked, parent.state, prev, tracked_regions);
      const std::vector<double> lp = log_softmax(parent_out[pi].logits.data);

      // Top beam_size tokens of this hypothesis, before the global cut.
      std::vector<int> order(lp.size());
      for (std::size_t i = 0; i < lp.size(); ++i) order[i] = static_cast<int>(i);
      const std::size_t keep = std::min<std::size_t>(beam_size, lp.size());
      std::partial_sort(order.begin(), order.begin() + keep, order.end(),
                        [&lp](int a, int b) {
                          if (lp[a] != lp[b]) return lp[a] > lp[b];
                          return a < b;
                        });
      for (std::size_t i = 0; i < keep; ++i) {
        Expansion e;
        e.parent = pi;
        e.token = order[i];
        e.log_prob = parent.log_prob + lp[order[i]];
        e.tokens = parent.tokens;
        e.tokens.push_back(order[i]);
        expansions.push_back(std::move(e));
      }
    }

    std::vector<std::size_t> sel(expansions.size());
    for (std::size_t i = 0; i < sel.size(); ++i) sel[i] = i;
    std::sort(sel.begin(), sel.end(), [&](std::size_t a, std::size_t b) {
      return candidate_order({expansions[a].log_prob, &expansions[a].tokens},
                             {expansions[b].log_prob, &expansions[b].tokens});
    });
    if (sel.size() > beam_size) sel.resize(beam_size);

    std::vector<Candidate> next_live;
    for (const std::size_t si : sel) {
      const Expansion& e = expansions[si];
      Candidate c;
      c.tokens = e.tokens;
      c.log_prob = e.log_prob;
      c.state = live[e.parent].state;
      c.trace = live[e.parent].trace;
      c.trace.push_back(make_trace_step(t, e.token, parent_out[e.parent]));
      if (e.token == Vocabulary::kEos || t == max_len) {
        c.finished = true;
        completed.push_back(std::move(c));
      } else {
        next_live.push_back(std::move(c));
      }
    }
    live = std::move(next_live);

    // Without normalization scores only fall with length, so once the best
    // live prefix sits strictly below the pool's top beam_size nothing live
    // can win. Kept strict so equal-score ties still resolve by token order.
    if (!length_norm && completed.size() >= beam_size && !live.empty()) {
      std::vector<double> pool_scores;
      for (const Candidate& c : completed) pool_scores.push_back(c.log_prob);
      std::sort(pool_scores.begin(), pool_scores.end(), std::greater<>());
      const double worst_kept = pool_scores[beam_size - 1];
      double best_live = -std::numeric_limits<double>::infinity();
      for (const Candidate& c : live) best_live = std::max(best_live, c.log_prob);
      if (best_live < worst_kept) break;
    }
  }

  std::vector<BeamHypothesis> results;
  results.reserve(completed.size());
  for (Candidate& c : completed) {
    BeamHypothesis h;
    h.tokens = std::move(c.tokens);
    if (!h.tokens.empty() && h.tokens.back() == Vocabulary::kEos) {
      h.tokens.pop_back();
    }
    h.log_prob = c.log_prob;
    h.finished = c.finished;
    h.trace = std::move(c.trace);
    h.score = final_score(c);
    results.push_back(std::move(h));
  }
  std::sort(results.begin(), results.end(),
            [](const BeamHypothesis& a, const BeamHypothesis& b) {
              return candidate_order({a.score, &a.tokens},
                                     {b.score, &b.tokens});
            });
  if (results.size() > beam_size) results.resize(beam_size);
  return results;
}

std::string export_trace(const AttentionTrace& trace, const Vocabulary& vocab,
                         TraceFormat format) {
  if (trace.empty()) throw DomainError("export_trace: empty trace");
  if (format == TraceFormat::json) {
    ordered_json steps = ordered_json::array();
    for (const TraceStep& s : trace) {
      steps.push_back({{"t", s.t},
                       {"token", vocab.token(s.token)},
                       {"alpha_vis", s.alpha_vis},
                       {"alpha_ref", s.alpha_ref},
                       {"pos_pred", s.pos_pred}});
    }
    ordered_json root;
    root["steps"] = std::move(steps);
    return root.dump(2);
  }

  // Graphviz text: one node per step, reflective weights as edges into the
  // step that produced them.
  std::ostringstream os;
  os << "digraph reflective_trace {\n  rankdir=LR;\n";
  for (const TraceStep& s : trace) {
    os << "  s" << s.t << " [label=\"" << s.t << ": "
       << vocab.token(s.token) << "\"];\n";
  }
  char buf[64];
  for (const TraceStep& s : trace) {
    const auto& w = s.alpha_ref;
    const std::size_t argmax = static_cast<std::size_t>(
        std::max_element(w.begin(), w.end()) - w.begin());
    for (std::size_t i = 0; i < w.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.6g", w[i]);
      os << "  s" << (i + 1) << " -> s" << s.t << " [label=\"" << buf
         << "\" penwidth=" << (0.5 + 4.0 * w[i]);
      if (i == argmax) os << " color=red";
      os << "];\n";
    }
  }
  os << "}\n";
  return os.str();
}

}  // namespace refdec
