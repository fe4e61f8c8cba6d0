// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "refdec/tensor.hpp"

namespace refdec {

// Token <-> id bijection with fixed reserved ids.
struct Vocabulary {
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  std::vector<std::string> tokens;  // id -> token, starts with the reserved 4
  std::unordered_map<std::string, int> ids;

  static Vocabulary from_tokens(std::vector<std::string> tokens);

  std::size_t size() const { return tokens.size(); }
  // Exact lookup; unknown tokens map to <unk>.
  int id_or_unk(const std::string& token) const;
  const std::string& token(int id) const;  // IndexError when out of range
  // FNV-1a over the token list; pins vocab identity in checkpoints.
  std::uint64_t fingerprint() const;
};

// Tokens occurring at least min_count times are kept, ordered by descending
// count then lexicographically; everything else maps to <unk>.
Vocabulary build_vocab(std::span<const std::vector<std::string>> corpus,
                       std::size_t min_count);

// Closed attribute inventories for the toy scenes plus feature-encoding
// settings. The defaults give 8 categories, 6 colors, 3 sizes, 4 relations.
struct GeneratorConfig {
  std::vector<std::string> categories;
  std::vector<std::string> colors;
  std::vector<std::string> sizes;
  std::vector<std::string> relations;
  std::size_t k_min = 2;
  std::size_t k_max = 5;
  std::size_t region_dim = 17;  // >= one-hot width (categories+colors+sizes)
  double noise_sigma = 0.1;

  static GeneratorConfig defaults();
  std::size_t onehot_width() const;
  void validate() const;  // ConfigError
};

struct SceneObject {
  std::string category;
  std::string color;
  std::string size;
};

// A scene of k objects; the caption relates object 0 to object 1, the rest
// are distractors the visual attention has to see past.
struct ToyScene {
  std::vector<SceneObject> objects;
  std::string relation;

  // Identity string used to keep dataset splits disjoint.
  std::string signature() const;
};

ToyScene gen_scene(std::uint64_t seed, const GeneratorConfig& config);

// Region i = one-hot blocks for (category, color, size) plus Gaussian noise
// of config.noise_sigma on every coordinate. Deterministic in (scene, seed).
std::vector<Tensor> encode_scene(const ToyScene& scene,
                                 const GeneratorConfig& config,
                                 std::uint64_t noise_seed);

// Fixed template:
//   a <size0> <color0> <cat0> <relation> a <color1> <cat1>
//   and the <cat0> is <color0> <eos>
// The trailing clause repeats object 0's category and color at distance >= 6
// tokens, so getting the final color right requires carrying information
// across the sentence.
std::vector<std::string> render_caption(const ToyScene& scene);

struct DatasetRecord {
  std::vector<Tensor> regions;
  std::vector<std::string> caption;  // ends with "<eos>"
  ToyScene scene;                    // kept for debugging
};

struct DatasetSplits {
  std::vector<DatasetRecord> train, val, test;
};

// Seeded generation with globally distinct scene signatures, so no scene
// tuple appears in more than one split (or twice in the same split).
DatasetSplits generate_dataset(const GeneratorConfig& config,
                               std::size_t train_n, std::size_t val_n,
                               std::size_t test_n, std::uint64_t seed);

// JSON-lines: {"regions":[[...],...],"caption":[...],"scene":{...}} per line.
void write_dataset(std::span<const DatasetRecord> records,
                   const std::string& path);
std::vector<DatasetRecord> read_dataset(const std::string& path);

// One dataset line; FormatError on malformed input.
DatasetRecord parse_record(const std::string& json_line);

// Caption strings -> ids under the vocabulary (<unk> fallback).
std::vector<int> tokenize(const Vocabulary& vocab,
                          std::span<const std::string> caption);
// Space-joined token strings.
std::string detokenize(const Vocabulary& vocab, std::span<const int> ids);

}  // namespace refdec
