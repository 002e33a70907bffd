#pragma once

// Vocabulary, captioning examples, the synthetic attribute task, and the
// on-disk dataset layout.
//
// Region feature file (.xlrf), little-endian:
//   bytes 0..3   magic "XLRF"
//   u32          version (1)
//   u32          N regions
//   u32          feature dim
//   f32[N*dim]   row-major payload
//
// A dataset directory holds:
//   manifest.txt   "xlan-manifest\t1", then  id<TAB>split<TAB>relative .xlrf path
//   captions.txt   "xlan-captions\t1", then  id<TAB>space-separated caption
//   vocab.txt      "xlan-vocab\t1\t<min_count>", then  token<TAB>count  in id order
//   features/      one .xlrf per image

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "xlan/decoder.hpp"
#include "xlan/tensor.hpp"

namespace xlan {

struct Vocabulary {
  std::vector<std::string> tokens;            // id -> token, reserved ids first
  std::map<std::string, TokenId> index;       // token -> id
  std::vector<std::size_t> counts;            // per id; 0 for reserved
  std::size_t min_count = 1;

  std::size_t size() const { return tokens.size(); }
  TokenId id(const std::string& token) const;  // UNK when absent
  std::vector<TokenId> encode(const std::vector<std::string>& words) const;
  std::vector<std::string> decode(const std::vector<TokenId>& ids) const;
  std::string join(const std::vector<TokenId>& ids) const;
};

std::string lowercase(std::string s);
std::vector<std::string> split_words(const std::string& text);

// Lowercases, keeps tokens seen at least `min_count` times, orders them by
// descending count then lexicographically after the four reserved ids.
Vocabulary build_vocab(const std::vector<std::vector<std::string>>& corpus, std::size_t min_count);

void save_vocab(const std::filesystem::path& path, const Vocabulary& vocab);
Vocabulary load_vocab(const std::filesystem::path& path);

// An image as raw region features plus its caption text.
struct RawExample {
  std::string id;
  std::size_t regions = 0;
  std::size_t dim = 0;
  std::vector<double> features;  // [regions×dim]
  std::vector<std::string> words;
};

struct RawSplits {
  std::vector<RawExample> train, val, test;
};

struct Example {
  std::string id;
  Tensor regions;                                  // [N×F], no grad
  std::vector<TokenId> caption;                    // without BOS/EOS
  std::vector<std::vector<TokenId>> references;
};

struct Dataset {
  Vocabulary vocab;
  std::vector<Example> train, val, test;
  std::size_t feature_dim() const;
};

Example make_example(const RawExample& raw, const Vocabulary& vocab);
// Builds the vocabulary from the training captions.
Dataset make_dataset(const RawSplits& splits, std::size_t min_count);
Dataset make_dataset(const RawSplits& splits, Vocabulary vocab);

// Each image has `slots` regions. Region features are [slot one-hot;
// color one-hot; shape one-hot] plus Gaussian noise, stored in a random row
// order. The caption names each slot's color and shape in slot order,
// joined by "and". Attribute assignments are distinct across all examples.
struct ToyTaskSpec {
  std::size_t slots = 6;
  std::size_t colors = 5;
  std::size_t shapes = 4;
  double noise = 0.1;
  std::size_t train = 4000;
  std::size_t val = 100;
  std::size_t test = 200;
  std::uint64_t seed = 1;

  std::size_t feature_dim() const { return slots + colors + shapes; }
  std::size_t caption_length() const { return 3 * slots - 1; }
  void validate() const;
};

std::vector<std::string> toy_color_names(std::size_t colors);
std::vector<std::string> toy_shape_names(std::size_t shapes);
inline const std::string kToyJoinWord = "and";

// Example at global index g (train, then val, then test). Pure in (spec, g).
RawExample toy_example(const ToyTaskSpec& spec, std::uint64_t g);
RawSplits gen_toy_dataset(const ToyTaskSpec& spec);

struct RegionFeatures {
  std::size_t regions = 0;
  std::size_t dim = 0;
  std::vector<double> values;
};

inline constexpr std::uint32_t kRegionFileVersion = 1;

void write_region_features(const std::filesystem::path& path, const RegionFeatures& f);
RegionFeatures read_region_features(const std::filesystem::path& path);

void write_dataset(const std::filesystem::path& dir, const RawSplits& splits, std::size_t min_count);
RawSplits read_raw_splits(const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace xlan
