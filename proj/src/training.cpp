// SPDX-License-Identifier: Apache-2.0
#include "refdec/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "refdec/error.hpp"
#include "refdec/kernels.hpp"
#include "refdec/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace refdec {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr std::uint64_t kShuffleSalt = 0x73687566666c65ull;
constexpr char kManifestFormat[] = "refdec-checkpoint-v1";

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(v));
  return buf;
}

// Infinite deterministic sample stream: global position j maps to slot
// j % n of the permutation for epoch j / n. Independent of batch size
// history, so resumed runs see the exact schedule of an uninterrupted one.
class EpochSampler {
 public:
  EpochSampler(std::uint64_t seed, std::size_t n) : seed_(seed), n_(n) {}

  std::size_t at(std::size_t global_pos) {
    const std::size_t epoch = global_pos / n_;
    const auto it = perms_.find(epoch);
    if (it != perms_.end()) return it->second[global_pos % n_];
    std::vector<std::size_t> perm(n_);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(derive_seed(seed_, kShuffleSalt, epoch));
    for (std::size_t i = n_; i > 1; --i) {
      std::swap(perm[i - 1], perm[rng.below(i)]);
    }
    if (perms_.size() > 4) perms_.clear();
    return (perms_[epoch] = std::move(perm))[global_pos % n_];
  }

 private:
  std::uint64_t seed_;
  std::size_t n_;
  std::map<std::size_t, std::vector<std::size_t>> perms_;
};

double effective_lambda(Variant variant, double lambda) {
  const bool position_supervised =
      variant == Variant::pos_only || variant == Variant::full;
  return position_supervised ? lambda : 0.0;
}

}  // namespace

void TrainConfig::validate() const {
  if (lr0 <= 0.0) throw ConfigError("lr0 must be positive");
  if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
  if (total_iters < 1) throw ConfigError("total_iters must be >= 1");
  if (decay_power <= 0.0) throw ConfigError("decay_power must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
}

Tensor loss_xe(Tape& tape, std::span<const StepOutput> outputs,
               std::span<const int> gold) {
  if (outputs.size() != gold.size()) {
    throw ContractError("loss_xe: " + std::to_string(outputs.size()) +
                        " outputs vs " + std::to_string(gold.size()) +
                        " gold tokens");
  }
  if (outputs.empty()) throw DomainError("loss_xe: empty sequence");
  Tensor total;
  for (std::size_t t = 0; t < outputs.size(); ++t) {
    const Tensor nll = tape.sub(
        tape.logsumexp(outputs[t].logits),
        tape.pick(outputs[t].logits, static_cast<std::size_t>(gold[t])));
    total = t == 0 ? nll : tape.add(total, nll);
  }
  return total;
}

Tensor loss_pos(Tape& tape, std::span<const StepOutput> outputs,
                std::size_t n) {
  if (n == 0) throw DomainError("loss_pos: zero-length sentence");
  if (outputs.size() != n) {
    throw ContractError("loss_pos: " + std::to_string(outputs.size()) +
                        " outputs for sentence length " + std::to_string(n));
  }
  Tensor total;
  for (std::size_t t = 1; t <= n; ++t) {
    const double target =
        static_cast<double>(t) / static_cast<double>(n);
    const Tensor diff =
        tape.sub(Tensor::scalar(target), outputs[t - 1].pos_pred);
    const Tensor sq = tape.mul(diff, diff);
    total = t == 1 ? sq : tape.add(total, sq);
  }
  return total;
}

Tensor loss_total(Tape& tape, const Tensor& xe, const Tensor& pos,
                  double lambda) {
  if (lambda < 0.0) throw ContractError("loss_total: lambda must be >= 0");
  if (lambda == 0.0) return xe;
  return tape.add(xe, tape.scale(pos, lambda));
}

double poly_decay_lr(double lr0, std::size_t iter, std::size_t total_iters,
                     double power) {
  if (iter > total_iters) {
    throw ContractError("poly_decay_lr: iter " + std::to_string(iter) +
                        " past total " + std::to_string(total_iters));
  }
  const double remaining = 1.0 - static_cast<double>(iter) /
                                     static_cast<double>(total_iters);
  return lr0 * std::pow(remaining, power);
}

GradVec zero_grads(const ModelParams& p) {
  GradVec g;
  for_each_param(p, [&g](const char*, const Tensor& t) {
    g.emplace_back(t.size(), 0.0);
  });
  return g;
}

void sgd_step(ModelParams& params, const GradVec& grads, double lr,
              double grad_clip) {
  std::size_t index = 0;
  double sq_norm = 0.0;
  for_each_param(params, [&](const char* name, Tensor& t) {
    if (index >= grads.size() || grads[index].size() != t.size()) {
      throw ContractError("sgd_step: gradients misaligned at " +
                          std::string(name));
    }
    for (const double g : grads[index]) {
      if (!std::isfinite(g)) {
        throw TrainingError("non-finite gradient for parameter " +
                            std::string(name));
      }
      sq_norm += g * g;
    }
    ++index;
  });
  double factor = lr;
  if (grad_clip > 0.0) {
    const double norm = std::sqrt(sq_norm);
    if (norm > grad_clip) factor *= grad_clip / norm;
  }
  index = 0;
  for_each_param(params, [&](const char*, Tensor& t) {
    kernels::axpy(-factor, grads[index].data(), t.data.data(), t.size());
    ++index;
  });
}

TrainDataset bind_dataset(const Vocabulary& vocab,
                          std::span<const DatasetRecord> records) {
  TrainDataset data;
  data.regions.reserve(records.size());
  data.gold.reserve(records.size());
  for (const DatasetRecord& rec : records) {
    if (rec.regions.empty()) {
      throw ConfigError("dataset record has no regions");
    }
    if (rec.caption.empty() || rec.caption.back() != "<eos>") {
      throw ConfigError("dataset caption must end with <eos>");
    }
    data.regions.push_back(rec.regions);
    data.gold.push_back(tokenize(vocab, rec.caption));
  }
  return data;
}

ExampleLoss example_grads(const ModelParams& params,
                          std::span<const Tensor> regions,
                          std::span<const int> gold, double lambda_eff,
                          GradVec& grads) {
  Tape tape;
  const ModelParams tracked = track(tape, params);
  const std::vector<StepOutput> outputs =
      forward_teacher(tape, tracked, regions, gold);

  ExampleLoss loss;
  const std::size_t n = outputs.size();
  for (std::size_t t = 1; t <= n; ++t) {
    const double gap = static_cast<double>(t) / static_cast<double>(n) -
                       outputs[t - 1].pos_pred.item();
    loss.pos += gap * gap;
  }
  const Tensor xe = loss_xe(tape, outputs, gold);
  Tensor total = xe;
  if (lambda_eff > 0.0) {
    total = loss_total(tape, xe, loss_pos(tape, outputs, n), lambda_eff);
  }
  loss.xe = xe.item();
  loss.total = total.item();

  const Gradients g = tape.backward(total);
  std::size_t index = 0;
  for_each_param(tracked, [&](const char*, const Tensor& t) {
    const std::vector<double>& src = g.at(t);
    kernels::axpy(1.0, src.data(), grads[index].data(), src.size());
    ++index;
  });
  return loss;
}

TrainResult train(const TrainDataset& data, const Vocabulary& vocab,
                  const TrainConfig& config, const ModelParams* resume,
                  std::size_t start_iter, std::size_t stop_iter) {
  config.validate();
  if (stop_iter == 0 || stop_iter > config.total_iters) {
    stop_iter = config.total_iters;
  }
  if (data.gold.empty()) throw ConfigError("train: empty dataset");
  ModelDims dims = config.dims;
  dims.vocab_size = vocab.size();
  for (const auto& regions : data.regions) {
    if (regions.front().shape != Shape{dims.region_dim}) {
      throw ConfigError("dataset region width " +
                        shape_str(regions.front().shape) +
                        " does not match configured region_dim " +
                        std::to_string(dims.region_dim));
    }
  }
  for (const auto& gold : data.gold) {
    for (const int id : gold) {
      if (id < 0 || static_cast<std::size_t>(id) >= vocab.size()) {
        throw ConfigError("dataset token id outside the vocabulary");
      }
    }
  }
  if (start_iter > stop_iter) {
    throw ConfigError("start_iter past the end of the run");
  }

  TrainResult result;
  result.params = resume ? *resume
                         : init_params(dims, config.variant, config.seed);
  if (resume && resume->dims != dims) {
    throw ConfigError("resume checkpoint dimensions do not match config");
  }
  const double lambda_eff = effective_lambda(config.variant, config.lambda);
  const std::size_t batch = config.batch_size;

  EpochSampler sampler(config.seed, data.gold.size());
  std::vector<GradVec> slot_grads(batch);
  std::vector<ExampleLoss> slot_loss(batch);
  GradVec grads = zero_grads(result.params);

  for (std::size_t iter = start_iter; iter < stop_iter; ++iter) {
    const double lr =
        poly_decay_lr(config.lr0, iter, config.total_iters, config.decay_power);
    std::vector<std::size_t> indices(batch);
    for (std::size_t m = 0; m < batch; ++m) {
      indices[m] = sampler.at(iter * batch + m);
    }

    bool failed = false;
    std::string failure;
    // Per-example tapes are independent; accumulation below runs in slot
    // order, so the result does not depend on thread count.
#pragma omp parallel for schedule(dynamic)
    for (std::int64_t m = 0; m < static_cast<std::int64_t>(batch); ++m) {
      try {
        slot_grads[m] = zero_grads(result.params);
        const std::size_t e = indices[m];
        slot_loss[m] = example_grads(result.params, data.regions[e],
                                     data.gold[e], lambda_eff, slot_grads[m]);
      } catch (const std::exception& ex) {
#pragma omp critical
        {
          failed = true;
          failure = ex.what();
        }
      }
    }
    if (failed) throw TrainingError(failure);

    for (auto& param_grads : grads) {
      std::fill(param_grads.begin(), param_grads.end(), 0.0);
    }
    const double inv_batch = 1.0 / static_cast<double>(batch);
    ExampleLoss mean;
    for (std::size_t m = 0; m < batch; ++m) {
      for (std::size_t pi = 0; pi < grads.size(); ++pi) {
        kernels::axpy(inv_batch, slot_grads[m][pi].data(), grads[pi].data(),
                      grads[pi].size());
      }
      mean.xe += slot_loss[m].xe * inv_batch;
      mean.pos += slot_loss[m].pos * inv_batch;
      mean.total += slot_loss[m].total * inv_batch;
    }
    if (!std::isfinite(mean.total)) {
      throw TrainingError("non-finite batch loss at iteration " +
                          std::to_string(iter));
    }
    sgd_step(result.params, grads, lr, config.grad_clip);
    result.log.push_back({iter, lr, mean.xe, mean.pos, mean.total});
  }
  return result;
}

double teacher_forced_accuracy(const ModelParams& params,
                               const TrainDataset& data) {
  if (data.gold.empty()) throw DomainError("empty dataset");
  std::size_t hits = 0, steps = 0;
#pragma omp parallel for schedule(dynamic) reduction(+ : hits, steps)
  for (std::int64_t e = 0; e < static_cast<std::int64_t>(data.gold.size());
       ++e) {
    Tape tape;
    const ModelParams tracked = track(tape, params);
    const auto outputs =
        forward_teacher(tape, tracked, data.regions[e], data.gold[e]);
    for (std::size_t t = 0; t < outputs.size(); ++t) {
      const auto& logits = outputs[t].logits.data;
      const std::size_t best = static_cast<std::size_t>(
          std::max_element(logits.begin(), logits.end()) - logits.begin());
      hits += best == static_cast<std::size_t>(data.gold[e][t]);
      ++steps;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(steps);
}

double mean_position_error(const ModelParams& params,
                           const TrainDataset& data) {
  if (data.gold.empty()) throw DomainError("empty dataset");
  double gap_sum = 0.0;
  std::size_t steps = 0;
#pragma omp parallel for schedule(dynamic) reduction(+ : gap_sum, steps)
  for (std::int64_t e = 0; e < static_cast<std::int64_t>(data.gold.size());
       ++e) {
    Tape tape;
    const ModelParams tracked = track(tape, params);
    const auto outputs =
        forward_teacher(tape, tracked, data.regions[e], data.gold[e]);
    const std::size_t n = outputs.size();
    for (std::size_t t = 1; t <= n; ++t) {
      gap_sum += std::abs(static_cast<double>(t) / static_cast<double>(n) -
                          outputs[t - 1].pos_pred.item());
      ++steps;
    }
  }
  return gap_sum / static_cast<double>(steps);
}

void save_checkpoint(const ModelParams& params, const Vocabulary& vocab,
                     const CheckpointMeta& meta, const std::string& stem) {
  if (params.dims.vocab_size != vocab.size()) {
    throw ConfigError("checkpoint vocabulary does not match model dims");
  }
  ordered_json manifest;
  manifest["format"] = kManifestFormat;
  manifest["variant"] = to_string(params.variant);
  manifest["dims"] = {{"region_dim", params.dims.region_dim},
                      {"embed_dim", params.dims.embed_dim},
                      {"hidden_dim", params.dims.hidden_dim},
                      {"attn_dim", params.dims.attn_dim},
                      {"vocab_size", params.dims.vocab_size}};
  manifest["iteration"] = meta.iteration;
  manifest["seed"] = meta.seed;
  manifest["vocab_fingerprint"] = hex64(vocab.fingerprint());
  manifest["vocab"] = vocab.tokens;
  auto& plist = manifest["params"] = ordered_json::array();
  std::size_t doubles = 0;
  for_each_param(params, [&](const char* name, const Tensor& t) {
    plist.push_back({{"name", name}, {"shape", t.shape}});
    doubles += t.size();
  });
  manifest["payload_doubles"] = doubles;

  std::ofstream mout(stem + ".json");
  if (!mout) throw ConfigError("cannot open " + stem + ".json for writing");
  mout << manifest.dump(2) << "\n";
  if (!mout) throw ConfigError("failed while writing " + stem + ".json");

  std::ofstream bout(stem + ".bin", std::ios::binary);
  if (!bout) throw ConfigError("cannot open " + stem + ".bin for writing");
  for_each_param(params, [&](const char*, const Tensor& t) {
    for (const double v : t.data) {
      const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
      char bytes[8];
      for (int b = 0; b < 8; ++b) {
        bytes[b] = static_cast<char>((bits >> (8 * b)) & 0xff);
      }
      bout.write(bytes, 8);
    }
  });
  if (!bout) throw ConfigError("failed while writing " + stem + ".bin");
}

Checkpoint load_checkpoint(const std::string& stem,
                           const std::optional<ModelDims>& expect) {
  std::ifstream min(stem + ".json");
  if (!min) throw ConfigError("cannot open " + stem + ".json");
  ordered_json manifest;
  try {
    min >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(stem + ".json: " + e.what());
  }
  Checkpoint ckpt;
  try {
    if (manifest.at("format").get<std::string>() != kManifestFormat) {
      throw FormatError(stem + ".json: unknown checkpoint format");
    }
    const auto& dims = manifest.at("dims");
    ckpt.params.dims.region_dim = dims.at("region_dim").get<std::size_t>();
    ckpt.params.dims.embed_dim = dims.at("embed_dim").get<std::size_t>();
    ckpt.params.dims.hidden_dim = dims.at("hidden_dim").get<std::size_t>();
    ckpt.params.dims.attn_dim = dims.at("attn_dim").get<std::size_t>();
    ckpt.params.dims.vocab_size = dims.at("vocab_size").get<std::size_t>();
    ckpt.params.variant =
        variant_from_string(manifest.at("variant").get<std::string>());
    ckpt.meta.iteration = manifest.at("iteration").get<std::size_t>();
    ckpt.meta.seed = manifest.at("seed").get<std::uint64_t>();
    ckpt.vocab = Vocabulary::from_tokens(
        manifest.at("vocab").get<std::vector<std::string>>());
    if (hex64(ckpt.vocab.fingerprint()) !=
        manifest.at("vocab_fingerprint").get<std::string>()) {
      throw ConfigError(stem + ".json: vocabulary fingerprint mismatch");
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(stem + ".json: " + e.what());
  }
  ckpt.vocab_fingerprint = ckpt.vocab.fingerprint();
  if (ckpt.params.dims.vocab_size != ckpt.vocab.size()) {
    throw ConfigError(stem + ".json: vocab length disagrees with dims");
  }

  // Materialize parameter tensors from the declared dims, then check the
  // manifest's shape list against them.
  ModelParams reference =
      init_params(ckpt.params.dims, ckpt.params.variant, 0);
  const auto& plist = manifest.at("params");
  std::size_t pi = 0;
  std::size_t doubles = 0;
  ckpt.params.variant = reference.variant;
  try {
    for_each_param(reference, [&](const char* name, Tensor& t) {
      if (pi >= plist.size()) {
        throw ConfigError(stem + ".json: missing parameter " +
                          std::string(name));
      }
      const auto& entry = plist.at(pi);
      const auto mname = entry.at("name").get<std::string>();
      const auto mshape = entry.at("shape").get<Shape>();
      if (mname != name || mshape != t.shape) {
        throw ConfigError(stem + ".json: parameter " + std::string(name) +
                          " expects shape " + shape_str(t.shape) +
                          ", manifest has " + mname + " " +
                          shape_str(mshape));
      }
      if (expect) {
        ModelDims want = *expect;
        if (want.vocab_size == 0) want.vocab_size = ckpt.params.dims.vocab_size;
        if (ckpt.params.dims != want) {
          throw ConfigError("checkpoint dims mismatch at parameter " +
                            std::string(name) + ": stored " +
                            shape_str(t.shape));
        }
      }
      doubles += t.size();
      ++pi;
    });
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(stem + ".json: " + e.what());
  }
  if (manifest.at("payload_doubles").get<std::size_t>() != doubles) {
    throw FormatError(stem + ".json: payload_doubles disagrees with shapes");
  }

  std::ifstream bin(stem + ".bin", std::ios::binary);
  if (!bin) throw ConfigError("cannot open " + stem + ".bin");
  std::vector<char> payload((std::istreambuf_iterator<char>(bin)),
                            std::istreambuf_iterator<char>());
  if (payload.size() != doubles * 8) {
    throw FormatError(stem + ".bin: expected " + std::to_string(doubles * 8) +
                      " bytes, found " + std::to_string(payload.size()));
  }
  std::size_t off = 0;
  for_each_param(reference, [&](const char*, Tensor& t) {
    for (double& v : t.data) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) {
        bits |= static_cast<std::uint64_t>(
                    static_cast<unsigned char>(payload[off + b]))
                << (8 * b);
      }
      v = std::bit_cast<double>(bits);
      off += 8;
    }
  });
  const ModelDims dims = ckpt.params.dims;
  const Variant variant = ckpt.params.variant;
  ckpt.params = std::move(reference);
  ckpt.params.dims = dims;
  ckpt.params.variant = variant;
  return ckpt;
}

void write_train_log(std::span<const TrainLogEntry> log,
                     const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open " + path + " for writing");
  char buf[160];
  for (const TrainLogEntry& e : log) {
    std::snprintf(buf, sizeof buf, "%zu\t%.17g\t%.17g\t%.17g\t%.17g\n", e.iter,
                  e.lr, e.xe, e.pos, e.total);
    out << buf;
  }
  if (!out) throw ConfigError("failed while writing " + path);
}

}  // namespace refdec
