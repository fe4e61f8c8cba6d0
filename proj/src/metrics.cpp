// SPDX-License-Identifier: Apache-2.0
#include "refdec/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>

#include <json.hpp>

#include "refdec/error.hpp"
#include "refdec/inference.hpp"

namespace refdec {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr std::size_t kCiderMaxN = 4;
constexpr double kCiderSigma = 6.0;
constexpr double kRougeBetaSq = 1.2;

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts count_ngrams(const TokenSeq& seq, std::size_t n) {
  NgramCounts counts;
  if (seq.size() < n) return counts;
  for (std::size_t i = 0; i + n <= seq.size(); ++i) {
    ++counts[std::vector<std::string>(seq.begin() + i, seq.begin() + i + n)];
  }
  return counts;
}

void check_corpus(std::span<const TokenSeq> candidates,
                  std::span<const std::vector<TokenSeq>> references) {
  if (candidates.empty()) throw DomainError("metric: empty candidate set");
  if (candidates.size() != references.size()) {
    throw ContractError("metric: " + std::to_string(candidates.size()) +
                        " candidates vs " + std::to_string(references.size()) +
                        " reference sets");
  }
  for (const auto& refs : references) {
    if (refs.empty()) throw DomainError("metric: empty reference set");
  }
}

std::size_t lcs_length(const TokenSeq& a, const TokenSeq& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1
                                    : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

BleuResult bleu(std::span<const TokenSeq> candidates,
                std::span<const std::vector<TokenSeq>> references,
                std::size_t max_n) {
  check_corpus(candidates, references);
  if (max_n < 1 || max_n > 4) {
    throw ContractError("bleu: max_n must lie in 1..4");
  }

  std::array<double, 4> matched{}, total{};
  std::size_t cand_len = 0, ref_len = 0;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const TokenSeq& cand = candidates[c];
    cand_len += cand.size();
    // closest reference length, ties toward the shorter
    std::size_t best = references[c].front().size();
    for (const TokenSeq& ref : references[c]) {
      const auto dist = [&](std::size_t len) {
        return len > cand.size() ? len - cand.size() : cand.size() - len;
      };
      if (dist(ref.size()) < dist(best) ||
          (dist(ref.size()) == dist(best) && ref.size() < best)) {
        best = ref.size();
      }
    }
    ref_len += best;

    for (std::size_t n = 1; n <= max_n; ++n) {
      const NgramCounts cand_counts = count_ngrams(cand, n);
      NgramCounts clip;
      for (const TokenSeq& ref : references[c]) {
        for (const auto& [gram, count] : count_ngrams(ref, n)) {
          clip[gram] = std::max(clip[gram], count);
        }
      }
      for (const auto& [gram, count] : cand_counts) {
        const auto it = clip.find(gram);
        if (it != clip.end()) {
          matched[n - 1] += static_cast<double>(std::min(count, it->second));
        }
      }
      if (cand.size() >= n) {
        total[n - 1] += static_cast<double>(cand.size() - n + 1);
      }
    }
  }

  BleuResult result;
  result.brevity_penalty =
      cand_len >= ref_len || cand_len == 0
          ? 1.0
          : std::exp(1.0 - static_cast<double>(ref_len) /
                               static_cast<double>(cand_len));
  for (std::size_t n = 1; n <= max_n; ++n) {
    double m = matched[n - 1], d = total[n - 1];
    if (d == 0.0) {
      result.precisions[n - 1] = 0.0;
    } else if (m == 0.0 && n >= 2) {
      result.precisions[n - 1] = 1.0 / (d + 1.0);  // add-1 smoothing
    } else {
      result.precisions[n - 1] = m / d;
    }
  }
  for (std::size_t n = 1; n <= max_n; ++n) {
    double log_sum = 0.0;
    bool zero = false;
    for (std::size_t m = 1; m <= n; ++m) {
      if (result.precisions[m - 1] <= 0.0) {
        zero = true;
        break;
      }
      log_sum += std::log(result.precisions[m - 1]);
    }
    result.bleu[n - 1] =
        zero ? 0.0
             : result.brevity_penalty *
                   std::exp(log_sum / static_cast<double>(n));
  }
  return result;
}

double rouge_l(std::span<const TokenSeq> candidates,
               std::span<const std::vector<TokenSeq>> references) {
  check_corpus(candidates, references);
  double sum = 0.0;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const TokenSeq& cand = candidates[c];
    double best = 0.0;
    for (const TokenSeq& ref : references[c]) {
      if (cand.empty() || ref.empty()) continue;
      const double lcs = static_cast<double>(lcs_length(cand, ref));
      const double p = lcs / static_cast<double>(cand.size());
      const double r = lcs / static_cast<double>(ref.size());
      if (p + r == 0.0) continue;
      const double f =
          (1.0 + kRougeBetaSq) * p * r / (r + kRougeBetaSq * p);
      best = std::max(best, f);
    }
    sum += best;
  }
  return sum / static_cast<double>(candidates.size());
}

double cider(std::span<const TokenSeq> candidates,
             std::span<const std::vector<TokenSeq>> references) {
  check_corpus(candidates, references);
  if (candidates.size() < 2) {
    throw DomainError("cider: needs at least two reference sets for the IDF");
  }
  const double log_images = std::log(static_cast<double>(references.size()));

  // Document frequency: number of images whose references mention the gram.
  std::map<std::vector<std::string>, double> df;
  for (const auto& refs : references) {
    std::set<std::vector<std::string>> seen;
    for (const TokenSeq& ref : refs) {
      for (std::size_t n = 1; n <= kCiderMaxN; ++n) {
        for (const auto& [gram, count] : count_ngrams(ref, n)) seen.insert(gram);
      }
    }
    for (const auto& gram : seen) df[gram] += 1.0;
  }
  const auto idf = [&](const std::vector<std::string>& gram) {
    const auto it = df.find(gram);
    const double freq = it == df.end() ? 0.0 : it->second;
    return log_images - std::log(std::max(1.0, freq));
  };

  struct TfIdf {
    std::array<std::map<std::vector<std::string>, double>, kCiderMaxN> vec;
    std::array<double, kCiderMaxN> norm{};
    std::size_t length = 0;
  };
  const auto vectorize = [&](const TokenSeq& seq) {
    TfIdf v;
    v.length = seq.size();
    for (std::size_t n = 1; n <= kCiderMaxN; ++n) {
      for (const auto& [gram, count] : count_ngrams(seq, n)) {
        const double w = static_cast<double>(count) * idf(gram);
        v.vec[n - 1][gram] = w;
        v.norm[n - 1] += w * w;
      }
      v.norm[n - 1] = std::sqrt(v.norm[n - 1]);
    }
    return v;
  };

  double corpus_sum = 0.0;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const TfIdf hyp = vectorize(candidates[c]);
    std::array<double, kCiderMaxN> acc{};
    for (const TokenSeq& ref : references[c]) {
      const TfIdf rv = vectorize(ref);
      const double delta = static_cast<double>(hyp.length) -
                           static_cast<double>(rv.length);
      const double penalty =
          std::exp(-delta * delta / (2.0 * kCiderSigma * kCiderSigma));
      for (std::size_t n = 0; n < kCiderMaxN; ++n) {
        double dot = 0.0;
        for (const auto& [gram, w] : hyp.vec[n]) {
          const auto it = rv.vec[n].find(gram);
          if (it != rv.vec[n].end()) dot += std::min(w, it->second) * it->second;
        }
        if (hyp.norm[n] > 0.0 && rv.norm[n] > 0.0) {
          acc[n] += penalty * dot / (hyp.norm[n] * rv.norm[n]);
        }
      }
    }
    double image_score = 0.0;
    for (std::size_t n = 0; n < kCiderMaxN; ++n) image_score += acc[n];
    image_score /= static_cast<double>(kCiderMaxN) *
                   static_cast<double>(references[c].size());
    corpus_sum += 10.0 * image_score;
  }
  return corpus_sum / static_cast<double>(candidates.size());
}

std::string to_json(const EvalReport& report) {
  ordered_json j;
  j["bleu1"] = report.bleu[0];
  j["bleu2"] = report.bleu[1];
  j["bleu3"] = report.bleu[2];
  j["bleu4"] = report.bleu[3];
  j["rougeL"] = report.rouge_l;
  j["cider"] = report.cider;
  j["n"] = report.n;
  j["mean_len"] = report.mean_len;
  return j.dump();
}

EvalReport corpus_eval(const Checkpoint& checkpoint,
                       std::span<const DatasetRecord> records,
                       std::size_t beam_size, std::size_t max_len,
                       bool oracle) {
  if (records.empty()) throw DomainError("corpus_eval: empty dataset");
  if (checkpoint.vocab_fingerprint != checkpoint.vocab.fingerprint()) {
    throw ConfigError("corpus_eval: vocabulary fingerprint mismatch");
  }

  std::vector<TokenSeq> candidates(records.size());
  std::vector<std::vector<TokenSeq>> references(records.size());
  bool failed = false;
  std::string failure;
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(records.size());
       ++i) {
    try {
      const DatasetRecord& rec = records[i];
      TokenSeq ref(rec.caption.begin(), rec.caption.end());
      if (!ref.empty() && ref.back() == "<eos>") ref.pop_back();
      references[i] = {ref};
      if (oracle) {
        candidates[i] = ref;
      } else {
        const auto hyps = beam_search(checkpoint.params, rec.regions,
                                      beam_size, max_len);
        TokenSeq cand;
        if (!hyps.empty()) {
          for (const int id : hyps.front().tokens) {
            cand.push_back(checkpoint.vocab.token(id));
          }
        }
        candidates[i] = std::move(cand);
      }
    } catch (const std::exception& ex) {
#pragma omp critical
      {
        failed = true;
        failure = ex.what();
      }
    }
  }
  if (failed) throw Error("corpus_eval: " + failure);

  EvalReport report;
  report.n = records.size();
  const BleuResult b = bleu(candidates, references);
  report.bleu = b.bleu;
  report.rouge_l = rouge_l(candidates, references);
  report.cider = cider(candidates, references);
  double len = 0.0;
  for (const TokenSeq& c : candidates) len += static_cast<double>(c.size());
  report.mean_len = len / static_cast<double>(candidates.size());
  return report;
}

}  // namespace refdec
