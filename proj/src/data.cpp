// SPDX-License-Identifier: Apache-2.0
#include "refdec/data.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "refdec/error.hpp"
#include "refdec/rng.hpp"

namespace refdec {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr std::uint64_t kSceneSalt = 0x7363656e65ull;
constexpr std::uint64_t kNoiseSalt = 0x6e6f697365ull;

const std::array<std::string, 4> kReserved = {"<pad>", "<bos>", "<eos>",
                                              "<unk>"};

std::size_t index_of(const std::vector<std::string>& inventory,
                     const std::string& value, const char* what) {
  const auto it = std::find(inventory.begin(), inventory.end(), value);
  if (it == inventory.end()) {
    throw ConfigError(std::string(what) + " '" + value +
                      "' is not in the generator inventory");
  }
  return static_cast<std::size_t>(it - inventory.begin());
}

}  // namespace

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < kReserved.size()) {
    throw ConfigError("vocabulary must include the reserved tokens");
  }
  for (std::size_t i = 0; i < kReserved.size(); ++i) {
    if (tokens[i] != kReserved[i]) {
      throw ConfigError("vocabulary slot " + std::to_string(i) + " must be " +
                        kReserved[i] + ", got " + tokens[i]);
    }
  }
  Vocabulary v;
  v.tokens = std::move(tokens);
  for (std::size_t i = 0; i < v.tokens.size(); ++i) {
    const auto [it, inserted] =
        v.ids.emplace(v.tokens[i], static_cast<int>(i));
    if (!inserted) {
      throw ConfigError("duplicate vocabulary token " + v.tokens[i]);
    }
  }
  return v;
}

int Vocabulary::id_or_unk(const std::string& token) const {
  const auto it = ids.find(token);
  return it == ids.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens.size()) {
    throw IndexError("token id " + std::to_string(id) +
                     " outside vocabulary of " + std::to_string(tokens.size()));
  }
  return tokens[static_cast<std::size_t>(id)];
}

std::uint64_t Vocabulary::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  const auto mix = [&h](char c) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  };
  for (const std::string& t : tokens) {
    for (char c : t) mix(c);
    mix('\n');
  }
  return h;
}

Vocabulary build_vocab(std::span<const std::vector<std::string>> corpus,
                       std::size_t min_count) {
  if (corpus.empty()) throw DomainError("build_vocab: empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& caption : corpus) {
    for (const std::string& tok : caption) {
      if (std::find(kReserved.begin(), kReserved.end(), tok) !=
          kReserved.end()) {
        continue;
      }
      ++counts[tok];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (const auto& [tok, count] : counts) {
    if (count >= min_count) kept.emplace_back(tok, count);
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> tokens(kReserved.begin(), kReserved.end());
  for (auto& [tok, count] : kept) tokens.push_back(std::move(tok));
  return Vocabulary::from_tokens(std::move(tokens));
}

GeneratorConfig GeneratorConfig::defaults() {
  GeneratorConfig c;
  c.categories = {"box", "ball", "cup", "book", "hat", "lamp", "tree", "car"};
  c.colors = {"red", "blue", "green", "yellow", "black", "white"};
  c.sizes = {"big", "small", "tiny"};
  c.relations = {"left-of", "right-of", "above", "below"};
  return c;
}

std::size_t GeneratorConfig::onehot_width() const {
  return categories.size() + colors.size() + sizes.size();
}

void GeneratorConfig::validate() const {
  if (categories.empty() || colors.empty() || sizes.empty() ||
      relations.empty()) {
    throw ConfigError("generator inventories must be non-empty");
  }
  if (k_min < 2 || k_max < k_min) {
    throw ConfigError("object count range requires 2 <= k_min <= k_max");
  }
  if (region_dim < onehot_width()) {
    throw ConfigError("region_dim " + std::to_string(region_dim) +
                      " is smaller than the one-hot encoding width " +
                      std::to_string(onehot_width()));
  }
  if (noise_sigma < 0.0) throw ConfigError("noise_sigma must be >= 0");
}

std::string ToyScene::signature() const {
  std::ostringstream os;
  for (const SceneObject& o : objects) {
    os << o.category << "," << o.color << "," << o.size << ";";
  }
  os << relation;
  return os.str();
}

ToyScene gen_scene(std::uint64_t seed, const GeneratorConfig& config) {
  config.validate();
  Rng rng(seed);
  ToyScene scene;
  const std::size_t k =
      config.k_min + rng.below(config.k_max - config.k_min + 1);
  scene.objects.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    SceneObject o;
    o.category = config.categories[rng.below(config.categories.size())];
    o.color = config.colors[rng.below(config.colors.size())];
    o.size = config.sizes[rng.below(config.sizes.size())];
    scene.objects.push_back(std::move(o));
  }
  scene.relation = config.relations[rng.below(config.relations.size())];
  return scene;
}

std::vector<Tensor> encode_scene(const ToyScene& scene,
                                 const GeneratorConfig& config,
                                 std::uint64_t noise_seed) {
  config.validate();
  Rng rng(noise_seed);
  std::vector<Tensor> regions;
  regions.reserve(scene.objects.size());
  for (const SceneObject& o : scene.objects) {
    Tensor r(Shape{config.region_dim});
    r.data[index_of(config.categories, o.category, "category")] = 1.0;
    r.data[config.categories.size() +
           index_of(config.colors, o.color, "color")] = 1.0;
    r.data[config.categories.size() + config.colors.size() +
           index_of(config.sizes, o.size, "size")] = 1.0;
    if (config.noise_sigma > 0.0) {
      for (double& v : r.data) v += config.noise_sigma * rng.gaussian();
    }
    regions.push_back(std::move(r));
  }
  return regions;
}

std::vector<std::string> render_caption(const ToyScene& scene) {
  if (scene.objects.size() < 2) {
    throw DomainError("render_caption: scene needs at least two objects");
  }
  const SceneObject& a = scene.objects[0];
  const SceneObject& b = scene.objects[1];
  return {"a",  a.size,     a.color, a.category, scene.relation,
          "a",  b.color,    b.category,
          "and", "the",     a.category, "is", a.color, "<eos>"};
}

DatasetSplits generate_dataset(const GeneratorConfig& config,
                               std::size_t train_n, std::size_t val_n,
                               std::size_t test_n, std::uint64_t seed) {
  config.validate();
  DatasetSplits splits;
  std::unordered_set<std::string> seen;
  std::size_t attempt = 0;
  std::size_t record_index = 0;
  const auto fill = [&](std::vector<DatasetRecord>& out, std::size_t want) {
    out.reserve(want);
    while (out.size() < want) {
      const ToyScene scene =
          gen_scene(derive_seed(seed, kSceneSalt, attempt++), config);
      if (!seen.insert(scene.signature()).second) continue;
      DatasetRecord rec;
      rec.regions = encode_scene(
          scene, config, derive_seed(seed, kNoiseSalt, record_index++));
      rec.caption = render_caption(scene);
      rec.scene = scene;
      out.push_back(std::move(rec));
    }
  };
  fill(splits.train, train_n);
  fill(splits.val, val_n);
  fill(splits.test, test_n);
  return splits;
}

void write_dataset(std::span<const DatasetRecord> records,
                   const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open " + path + " for writing");
  for (const DatasetRecord& rec : records) {
    ordered_json j;
    auto& regions = j["regions"] = ordered_json::array();
    for (const Tensor& r : rec.regions) regions.push_back(r.data);
    j["caption"] = rec.caption;
    ordered_json scene;
    auto& objects = scene["objects"] = ordered_json::array();
    for (const SceneObject& o : rec.scene.objects) {
      objects.push_back({{"category", o.category},
                         {"color", o.color},
                         {"size", o.size}});
    }
    scene["relation"] = rec.scene.relation;
    j["scene"] = std::move(scene);
    out << j.dump() << "\n";
  }
  if (!out) throw ConfigError("failed while writing " + path);
}

DatasetRecord parse_record(const std::string& json_line) {
  try {
    const ordered_json j = ordered_json::parse(json_line);
    DatasetRecord rec;
    for (const auto& region : j.at("regions")) {
      rec.regions.push_back(
          Tensor::from_vector(region.get<std::vector<double>>()));
    }
    rec.caption = j.at("caption").get<std::vector<std::string>>();
    const auto& scene = j.at("scene");
    for (const auto& o : scene.at("objects")) {
      rec.scene.objects.push_back({o.at("category").get<std::string>(),
                                   o.at("color").get<std::string>(),
                                   o.at("size").get<std::string>()});
    }
    rec.scene.relation = scene.at("relation").get<std::string>();
    return rec;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("record: ") + e.what());
  }
}

std::vector<DatasetRecord> read_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  std::vector<DatasetRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      records.push_back(parse_record(line));
    } catch (const FormatError& e) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": " +
                        e.what());
    }
  }
  return records;
}

std::vector<int> tokenize(const Vocabulary& vocab,
                          std::span<const std::string> caption) {
  std::vector<int> ids;
  ids.reserve(caption.size());
  for (const std::string& tok : caption) ids.push_back(vocab.id_or_unk(tok));
  return ids;
}

std::string detokenize(const Vocabulary& vocab, std::span<const int> ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += vocab.token(ids[i]);
  }
  return out;
}

}  // namespace refdec
