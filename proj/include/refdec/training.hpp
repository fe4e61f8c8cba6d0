// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "refdec/data.hpp"
#include "refdec/model.hpp"

namespace refdec {

struct TrainConfig {
  double lr0 = 0.01;
  std::size_t total_iters = 70000;
  std::size_t batch_size = 100;
  double lambda = 0.02;     // position-loss weight
  double decay_power = 1.0; // polynomial decay, linear-to-zero by default
  std::uint64_t seed = 0;
  ModelDims dims;
  Variant variant = Variant::full;
  double grad_clip = 5.0;   // global L2 norm cap; <= 0 disables

  void validate() const;  // ConfigError
};

// Negative log likelihood of the gold tokens, summed over steps and
// computed through log-sum-exp rather than softmax-then-log.
Tensor loss_xe(Tape& tape, std::span<const StepOutput> outputs,
               std::span<const int> gold);

// Sum over steps of (t/n - predicted position)^2.
Tensor loss_pos(Tape& tape, std::span<const StepOutput> outputs,
                std::size_t n);

// xe + lambda * pos. With lambda == 0 the position term is dropped entirely,
// so nothing flows back into the position head.
Tensor loss_total(Tape& tape, const Tensor& xe, const Tensor& pos,
                  double lambda);

// lr0 * (1 - iter/total)^power; lr(0) = lr0, lr(total) = 0.
double poly_decay_lr(double lr0, std::size_t iter, std::size_t total_iters,
                     double power);

// Per-parameter gradients aligned with for_each_param order.
using GradVec = std::vector<std::vector<double>>;
GradVec zero_grads(const ModelParams& p);

// Optional global-norm clip followed by theta -= lr * g.
void sgd_step(ModelParams& params, const GradVec& grads, double lr,
              double grad_clip);

// Tokenized dataset bound to one vocabulary.
struct TrainDataset {
  std::vector<std::vector<Tensor>> regions;
  std::vector<std::vector<int>> gold;  // per record, ends with <eos>
};

TrainDataset bind_dataset(const Vocabulary& vocab,
                          std::span<const DatasetRecord> records);

struct ExampleLoss {
  double xe = 0.0;
  double pos = 0.0;   // always measured, weighted into total only if active
  double total = 0.0;
};

// Forward + backward for one caption; accumulates into grads.
ExampleLoss example_grads(const ModelParams& params,
                          std::span<const Tensor> regions,
                          std::span<const int> gold, double lambda_eff,
                          GradVec& grads);

struct TrainLogEntry {
  std::size_t iter;
  double lr, xe, pos, total;
};

struct TrainResult {
  ModelParams params;
  std::vector<TrainLogEntry> log;
};

// Teacher-forced SGD over iterations [start_iter, stop_iter) of a
// total_iters-long schedule (stop_iter of 0 means run to the end).
// Deterministic given config.seed: initialization and the batch schedule
// derive from it, and per-example gradients accumulate in a fixed order
// regardless of thread count. A run split at any iteration via
// resume/start_iter reproduces an unsplit run bit for bit.
TrainResult train(const TrainDataset& data, const Vocabulary& vocab,
                  const TrainConfig& config,
                  const ModelParams* resume = nullptr,
                  std::size_t start_iter = 0, std::size_t stop_iter = 0);

// Fraction of teacher-forced steps whose argmax logit hits the gold token.
double teacher_forced_accuracy(const ModelParams& params,
                               const TrainDataset& data);

// Mean absolute gap between predicted and actual relative position, over
// all teacher-forced steps of the dataset.
double mean_position_error(const ModelParams& params,
                           const TrainDataset& data);

struct CheckpointMeta {
  std::size_t iteration = 0;
  std::uint64_t seed = 0;
};

struct Checkpoint {
  ModelParams params;
  Vocabulary vocab;
  CheckpointMeta meta;
  std::uint64_t vocab_fingerprint = 0;
};

// Writes <stem>.json (manifest: dims, variant, named shapes, vocab and its
// fingerprint, iteration, seed) and <stem>.bin (little-endian doubles in
// manifest order). save(load(x)) is byte-identical.
void save_checkpoint(const ModelParams& params, const Vocabulary& vocab,
                     const CheckpointMeta& meta, const std::string& stem);

Checkpoint load_checkpoint(const std::string& stem,
                           const std::optional<ModelDims>& expect = {});

// One line per iteration: iter<TAB>lr<TAB>xe<TAB>pos<TAB>total.
void write_train_log(std::span<const TrainLogEntry> log,
                     const std::string& path);

}  // namespace refdec
