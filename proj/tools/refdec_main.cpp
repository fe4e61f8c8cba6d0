// SPDX-License-Identifier: Apache-2.0
//
// Operator CLI for the reflective caption decoder: data generation,
// training, decoding with attention traces, metric evaluation, and the
// gradient checker.
//
// Exit codes: 0 success, 1 check failure, 2 configuration or usage error,
// 3 numerical failure during training.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "refdec/data.hpp"
#include "refdec/error.hpp"
#include "refdec/inference.hpp"
#include "refdec/kernels.hpp"
#include "refdec/metrics.hpp"
#include "refdec/model.hpp"
#include "refdec/reference_eval.hpp"
#include "refdec/rng.hpp"
#include "refdec/tensor.hpp"
#include "refdec/training.hpp"

namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;
using namespace refdec;

// Config file values act as defaults under the CLI flags:
// built-in defaults < config file < flags.
class FileDefaults {
 public:
  explicit FileDefaults(const std::string& path) {
    if (path.empty()) return;
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    try {
      in >> root_;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config file " + path + ": " + e.what());
    }
  }

  template <class T>
  T get(std::initializer_list<const char*> keys, T fallback) const {
    const ordered_json* node = &root_;
    for (const char* key : keys) {
      if (!node->is_object() || !node->contains(key)) return fallback;
      node = &(*node)[key];
    }
    try {
      return node->get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config file: bad value for ") +
                        *(keys.end() - 1) + ": " + e.what());
    }
  }

 private:
  ordered_json root_ = ordered_json::object();
};

std::string find_config_path(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--config" && i + 1 < argc) return argv[i + 1];
    if (arg.rfind("--config=", 0) == 0) return arg.substr(9);
  }
  return "";
}

void print_effective(const char* command, const ordered_json& cfg) {
  std::cerr << "[refdec] " << command << " config: " << cfg.dump() << "\n";
}

struct GenDataArgs {
  std::string out, config;
  std::size_t count = 200, val = 50, test = 50;
  std::uint64_t seed = 0;
  GeneratorConfig gen = GeneratorConfig::defaults();
};

int run_gen_data(const GenDataArgs& a) {
  a.gen.validate();
  ordered_json cfg{{"out", a.out},           {"count", a.count},
                   {"val", a.val},           {"test", a.test},
                   {"seed", a.seed},         {"k_min", a.gen.k_min},
                   {"k_max", a.gen.k_max},   {"region_dim", a.gen.region_dim},
                   {"noise_sigma", a.gen.noise_sigma}};
  print_effective("gen-data", cfg);

  std::error_code ec;
  fs::create_directories(a.out, ec);
  const DatasetSplits splits =
      generate_dataset(a.gen, a.count, a.val, a.test, a.seed);
  write_dataset(splits.train, a.out + "/train.jsonl");
  write_dataset(splits.val, a.out + "/val.jsonl");
  write_dataset(splits.test, a.out + "/test.jsonl");
  std::cout << "train=" << splits.train.size() << " val=" << splits.val.size()
            << " test=" << splits.test.size() << " dir=" << a.out << "\n";
  return 0;
}

struct TrainArgs {
  std::string data, out, resume, log;
  TrainConfig config;
  std::size_t min_count = 5;
  std::size_t stop = 0;  // pause the schedule here; 0 runs to total_iters
};

int run_train(const TrainArgs& a) {
  const std::vector<DatasetRecord> records = read_dataset(a.data);
  if (records.empty()) throw ConfigError("training dataset is empty");

  Vocabulary vocab;
  ModelParams start_params;
  std::size_t start_iter = 0;
  bool resuming = false;
  TrainConfig config = a.config;
  config.dims.region_dim = records.front().regions.front().size();

  if (!a.resume.empty()) {
    const Checkpoint ckpt = load_checkpoint(a.resume);
    vocab = ckpt.vocab;
    start_params = ckpt.params;
    start_iter = ckpt.meta.iteration;
    resuming = true;
    config.dims = ckpt.params.dims;
    config.variant = ckpt.params.variant;
  } else {
    std::vector<std::vector<std::string>> corpus;
    corpus.reserve(records.size());
    for (const auto& rec : records) corpus.push_back(rec.caption);
    vocab = build_vocab(corpus, a.min_count);
  }
  config.dims.vocab_size = vocab.size();
  config.validate();

  ordered_json cfg{{"data", a.data},
                   {"out", a.out},
                   {"variant", to_string(config.variant)},
                   {"total_iters", config.total_iters},
                   {"start_iter", start_iter},
                   {"batch_size", config.batch_size},
                   {"lr0", config.lr0},
                   {"lambda", config.lambda},
                   {"decay_power", config.decay_power},
                   {"grad_clip", config.grad_clip},
                   {"seed", config.seed},
                   {"min_count", a.min_count},
                   {"vocab_size", vocab.size()},
                   {"dims",
                    {{"region_dim", config.dims.region_dim},
                     {"embed_dim", config.dims.embed_dim},
                     {"hidden_dim", config.dims.hidden_dim},
                     {"attn_dim", config.dims.attn_dim}}}};
  print_effective("train", cfg);

  const TrainDataset dataset = bind_dataset(vocab, records);
  const std::size_t stop =
      a.stop == 0 ? config.total_iters : std::min(a.stop, config.total_iters);
  const TrainResult result =
      train(dataset, vocab, config, resuming ? &start_params : nullptr,
            start_iter, stop);
  save_checkpoint(result.params, vocab, {stop, config.seed}, a.out);
  write_train_log(result.log, a.log.empty() ? a.out + ".log" : a.log);
  const double acc = teacher_forced_accuracy(result.params, dataset);
  std::cout << "checkpoint=" << a.out << " iters=" << result.log.size()
            << " final_loss="
            << (result.log.empty() ? 0.0 : result.log.back().total)
            << " train_accuracy=" << acc << "\n";
  return 0;
}

struct CaptionArgs {
  std::string checkpoint, record, trace, trace_format = "json";
  std::size_t beam = 5, max_len = 30;
  bool length_norm = false;
};

int run_caption(const CaptionArgs& a) {
  ordered_json cfg{{"checkpoint", a.checkpoint}, {"beam", a.beam},
                   {"max_len", a.max_len},       {"length_norm", a.length_norm},
                   {"trace", a.trace},           {"trace_format", a.trace_format}};
  print_effective("caption", cfg);

  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  std::vector<DatasetRecord> records;
  std::error_code probe;
  if (fs::exists(a.record, probe)) {
    records = read_dataset(a.record);
  } else {
    records.push_back(parse_record(a.record));
  }
  if (records.empty()) throw ConfigError("no records to caption");

  bool traced = false;
  for (const DatasetRecord& rec : records) {
    const auto hyps = beam_search(ckpt.params, rec.regions, a.beam, a.max_len,
                                  a.length_norm);
    if (hyps.empty()) throw Error("beam search returned no hypotheses");
    std::cout << detokenize(ckpt.vocab, hyps.front().tokens) << "\n";
    if (!a.trace.empty() && !traced) {
      const TraceFormat format = a.trace_format == "dot" ? TraceFormat::dot
                                                         : TraceFormat::json;
      std::ofstream out(a.trace);
      if (!out) throw ConfigError("cannot open " + a.trace + " for writing");
      out << export_trace(hyps.front().trace, ckpt.vocab, format);
      traced = true;
    }
  }
  return 0;
}

struct EvalArgs {
  std::string checkpoint, data;
  std::size_t beam = 5, max_len = 30;
  bool oracle = false;
};

int run_eval(const EvalArgs& a) {
  ordered_json cfg{{"checkpoint", a.checkpoint},
                   {"data", a.data},
                   {"beam", a.beam},
                   {"max_len", a.max_len},
                   {"oracle", a.oracle}};
  print_effective("eval", cfg);

  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const std::vector<DatasetRecord> records = read_dataset(a.data);
  const EvalReport report =
      corpus_eval(ckpt, records, a.beam, a.max_len, a.oracle);
  std::cout << to_json(report) << "\n";
  return 0;
}

struct GradCheckArgs {
  std::string dims = "tiny";
  std::uint64_t seed = 0;
  double eps = 1e-5;
  double tolerance = 1e-4;
  bool corrupt = false;  // test hook: break one analytic gradient
};

int run_gradcheck(const GradCheckArgs& a) {
  ordered_json cfg{{"dims", a.dims},
                   {"seed", a.seed},
                   {"eps", a.eps},
                   {"tolerance", a.tolerance},
                   {"corrupt_gradient", a.corrupt}};
  print_effective("gradcheck", cfg);

  if (a.dims != "tiny") {
    throw ConfigError("unknown --dims preset '" + a.dims +
                      "' (available: tiny)");
  }
  const ModelDims dims{.region_dim = 6,
                       .embed_dim = 8,
                       .hidden_dim = 10,
                       .attn_dim = 6,
                       .vocab_size = 12};
  const GradCheckReport report =
      model_grad_check(dims, 3, 5, a.seed, a.eps, 0.02, a.corrupt);

  std::printf("max_rel_err=%.6e worst=%s[%zu]\n", report.max_rel_err,
              report.worst_param.c_str(), report.worst_coord);
  if (!report.finite) {
    std::fprintf(stderr, "gradcheck failed: %s\n", report.note.c_str());
    return 1;
  }
  if (report.max_rel_err > a.tolerance) {
    std::fprintf(stderr, "gradcheck failed: %s[%zu] exceeds tolerance %g\n",
                 report.worst_param.c_str(), report.worst_coord, a.tolerance);
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"reflective caption decoder"};
  app.require_subcommand(1);

  std::string config_path;
  int threads = 0;
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--threads", threads, "cap worker threads");

  try {
    const FileDefaults file(find_config_path(argc, argv));

    GenDataArgs gen;
    gen.count = file.get<std::size_t>({"data", "count"}, gen.count);
    gen.val = file.get<std::size_t>({"data", "val_count"}, gen.val);
    gen.test = file.get<std::size_t>({"data", "test_count"}, gen.test);
    gen.seed = file.get<std::uint64_t>({"data", "seed"}, gen.seed);
    gen.gen.k_min = file.get<std::size_t>({"data", "k_min"}, gen.gen.k_min);
    gen.gen.k_max = file.get<std::size_t>({"data", "k_max"}, gen.gen.k_max);
    gen.gen.region_dim =
        file.get<std::size_t>({"data", "region_dim"}, gen.gen.region_dim);
    gen.gen.noise_sigma =
        file.get<double>({"data", "noise_sigma"}, gen.gen.noise_sigma);
    auto* gen_cmd = app.add_subcommand("gen-data", "generate a toy dataset");
    gen_cmd->add_option("--out", gen.out, "output directory")->required();
    gen_cmd->add_option("--count", gen.count, "training records");
    gen_cmd->add_option("--val", gen.val, "validation records");
    gen_cmd->add_option("--test", gen.test, "test records");
    gen_cmd->add_option("--seed", gen.seed, "generator seed");
    gen_cmd->add_option("--k-min", gen.gen.k_min, "min objects per scene");
    gen_cmd->add_option("--k-max", gen.gen.k_max, "max objects per scene");
    gen_cmd->add_option("--region-dim", gen.gen.region_dim, "feature width");
    gen_cmd->add_option("--noise-sigma", gen.gen.noise_sigma,
                        "feature noise sigma");

    TrainArgs tr;
    std::string variant_name =
        file.get<std::string>({"train", "variant"}, "full");
    tr.config.lr0 = file.get<double>({"train", "lr0"}, tr.config.lr0);
    tr.config.total_iters =
        file.get<std::size_t>({"train", "total_iters"}, tr.config.total_iters);
    tr.config.batch_size =
        file.get<std::size_t>({"train", "batch_size"}, tr.config.batch_size);
    tr.config.lambda = file.get<double>({"train", "lambda"}, tr.config.lambda);
    tr.config.decay_power =
        file.get<double>({"train", "decay_power"}, tr.config.decay_power);
    tr.config.seed = file.get<std::uint64_t>({"train", "seed"}, tr.config.seed);
    tr.config.grad_clip =
        file.get<double>({"train", "grad_clip"}, tr.config.grad_clip);
    tr.min_count = file.get<std::size_t>({"train", "min_count"}, tr.min_count);
    tr.config.dims.embed_dim =
        file.get<std::size_t>({"dims", "embed_dim"}, tr.config.dims.embed_dim);
    tr.config.dims.hidden_dim = file.get<std::size_t>(
        {"dims", "hidden_dim"}, tr.config.dims.hidden_dim);
    tr.config.dims.attn_dim =
        file.get<std::size_t>({"dims", "attn_dim"}, tr.config.dims.attn_dim);
    auto* train_cmd = app.add_subcommand("train", "train a decoder variant");
    train_cmd->add_option("--data", tr.data, "training JSON-lines file")
        ->required();
    train_cmd->add_option("--out", tr.out, "checkpoint stem")->required();
    train_cmd->add_option("--variant", variant_name,
                          "baseline|pos|ref|full");
    train_cmd->add_option("--iters", tr.config.total_iters, "total iterations");
    train_cmd->add_option("--stop", tr.stop,
                          "pause after this iteration of the schedule");
    train_cmd->add_option("--batch", tr.config.batch_size, "batch size");
    train_cmd->add_option("--lr0", tr.config.lr0, "initial learning rate");
    train_cmd->add_option("--lambda", tr.config.lambda,
                          "position loss weight");
    train_cmd->add_option("--decay-power", tr.config.decay_power,
                          "lr decay exponent");
    train_cmd->add_option("--seed", tr.config.seed, "training seed");
    train_cmd->add_option("--grad-clip", tr.config.grad_clip,
                          "global gradient norm cap (<=0 disables)");
    train_cmd->add_option("--min-count", tr.min_count,
                          "vocabulary frequency threshold");
    train_cmd->add_option("--embed-dim", tr.config.dims.embed_dim, "E");
    train_cmd->add_option("--hidden-dim", tr.config.dims.hidden_dim, "H");
    train_cmd->add_option("--attn-dim", tr.config.dims.attn_dim,
                          "attention width");
    train_cmd->add_option("--resume", tr.resume,
                          "checkpoint stem to continue from");
    train_cmd->add_option("--log", tr.log, "training log path");

    CaptionArgs cap;
    cap.beam = file.get<std::size_t>({"beam_size"}, cap.beam);
    cap.max_len = file.get<std::size_t>({"max_len"}, cap.max_len);
    auto* caption_cmd = app.add_subcommand("caption", "decode captions");
    caption_cmd->add_option("--checkpoint", cap.checkpoint, "checkpoint stem")
        ->required();
    caption_cmd
        ->add_option("--record", cap.record,
                     "dataset JSON line or a JSON-lines file")
        ->required();
    caption_cmd->add_option("--beam", cap.beam, "beam size");
    caption_cmd->add_option("--max-len", cap.max_len, "max caption length");
    caption_cmd->add_option("--trace", cap.trace,
                            "write the first record's attention trace here");
    caption_cmd->add_option("--trace-format", cap.trace_format, "json|dot");
    caption_cmd->add_flag("--length-norm", cap.length_norm,
                          "normalize beam scores by length");

    EvalArgs ev;
    ev.beam = file.get<std::size_t>({"beam_size"}, ev.beam);
    ev.max_len = file.get<std::size_t>({"max_len"}, ev.max_len);
    auto* eval_cmd = app.add_subcommand("eval", "score a dataset");
    eval_cmd->add_option("--checkpoint", ev.checkpoint, "checkpoint stem")
        ->required();
    eval_cmd->add_option("--data", ev.data, "JSON-lines dataset")->required();
    eval_cmd->add_option("--beam", ev.beam, "beam size");
    eval_cmd->add_option("--max-len", ev.max_len, "max caption length");
    eval_cmd->add_flag("--oracle", ev.oracle,
                       "score the references against themselves");

    GradCheckArgs gc;
    auto* gradcheck_cmd =
        app.add_subcommand("gradcheck", "finite-difference gradient check");
    gradcheck_cmd->add_option("--dims", gc.dims, "dimension preset (tiny)");
    gradcheck_cmd->add_option("--seed", gc.seed, "model/data seed");
    gradcheck_cmd->add_option("--eps", gc.eps, "finite-difference step");
    gradcheck_cmd->add_option("--tolerance", gc.tolerance,
                              "max relative error accepted");
    gradcheck_cmd->add_flag("--corrupt-gradient", gc.corrupt,
                            "test hook: corrupt one analytic gradient");

    try {
      app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e);
      return code == 0 ? 0 : 2;
    }
    if (threads > 0) kernels::set_threads(threads);

    if (*gen_cmd) return run_gen_data(gen);
    if (*train_cmd) {
      tr.config.variant = variant_from_string(variant_name);
      return run_train(tr);
    }
    if (*caption_cmd) return run_caption(cap);
    if (*eval_cmd) return run_eval(ev);
    if (*gradcheck_cmd) return run_gradcheck(gc);
    return 2;
  } catch (const TrainingError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 3;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
