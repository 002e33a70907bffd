#include "xlan/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "binary_io.hpp"

namespace xlan {

namespace fs = std::filesystem;

namespace {

const char* const kReservedNames[kReservedTokens] = {"<pad>", "<bos>", "<eos>", "<unk>"};

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, '\t')) out.push_back(cur);
  if (!line.empty() && line.back() == '\t') out.emplace_back();
  return out;
}

void expect_header(const std::string& line, const std::string& magic, const std::string& version,
                   const fs::path& path) {
  const auto parts = split_tabs(line);
  const std::string found_magic = parts.empty() ? "" : parts[0];
  if (found_magic != magic)
    throw FormatError(path.string() + ": expected magic '" + magic + "', found '" + found_magic + "'");
  const std::string found_version = parts.size() > 1 ? parts[1] : "";
  if (found_version != version)
    throw FormatError(path.string() + ": expected " + magic + " version " + version + ", found '" + found_version + "'");
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  if (lines.empty()) throw FormatError(path.string() + ": empty file");
  return lines;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t combo_count(const ToyTaskSpec& spec) {
  const std::uint64_t alphabet = spec.colors * spec.shapes;
  std::uint64_t total = 1;
  for (std::size_t i = 0; i < spec.slots; ++i) {
    if (total > (std::uint64_t{1} << 62) / alphabet)
      throw ContractError("toy task: too many attribute combinations to index");
    total *= alphabet;
  }
  return total;
}

// Affine bijection on [0, total) keyed by the seed; distinct indices get
// distinct attribute assignments.
std::uint64_t scramble(std::uint64_t g, std::uint64_t total, std::uint64_t seed) {
  std::uint64_t a = splitmix64(seed) % total;
  if (a == 0) a = 1;
  while (std::gcd(a, total) != 1) a = a + 1 == total ? 1 : a + 1;
  const std::uint64_t b = splitmix64(seed ^ 0x5bd1e995ULL) % total;
  const auto prod = static_cast<unsigned __int128>(a) * g + b;
  return static_cast<std::uint64_t>(prod % total);
}

}  // namespace

// ---- vocabulary -------------------------------------------------------------------

std::string lowercase(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::vector<std::string> split_words(const std::string& text) {
  std::istringstream is(text);
  std::vector<std::string> out;
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

TokenId Vocabulary::id(const std::string& token) const {
  auto it = index.find(lowercase(token));
  return it == index.end() ? kUnk : it->second;
}

std::vector<TokenId> Vocabulary::encode(const std::vector<std::string>& words) const {
  std::vector<TokenId> out;
  out.reserve(words.size());
  for (const auto& w : words) out.push_back(id(w));
  return out;
}

std::vector<std::string> Vocabulary::decode(const std::vector<TokenId>& ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (auto i : ids) out.push_back(i < tokens.size() ? tokens[i] : tokens[kUnk]);
  return out;
}

std::string Vocabulary::join(const std::vector<TokenId>& ids) const {
  std::string out;
  for (const auto& w : decode(ids)) out += (out.empty() ? "" : " ") + w;
  return out;
}

Vocabulary build_vocab(const std::vector<std::vector<std::string>>& corpus, std::size_t min_count) {
  if (corpus.empty()) throw ContractError("build_vocab: empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& sentence : corpus)
    for (const auto& w : sentence) ++counts[lowercase(w)];

  std::vector<std::pair<std::string, std::size_t>> kept;
  for (const auto& [w, c] : counts) {
    const bool reserved = std::find(std::begin(kReservedNames), std::end(kReservedNames), w) != std::end(kReservedNames);
    if (!reserved && c >= min_count) kept.emplace_back(w, c);
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocabulary v;
  v.min_count = min_count;
  for (std::size_t i = 0; i < kReservedTokens; ++i) {
    v.tokens.emplace_back(kReservedNames[i]);
    v.counts.push_back(0);
    v.index[kReservedNames[i]] = static_cast<TokenId>(i);
  }
  for (const auto& [w, c] : kept) {
    v.index[w] = static_cast<TokenId>(v.tokens.size());
    v.tokens.push_back(w);
    v.counts.push_back(c);
  }
  return v;
}

void save_vocab(const fs::path& path, const Vocabulary& vocab) {
  std::ostringstream os;
  os << "xlan-vocab\t1\t" << vocab.min_count << '\n';
  for (std::size_t i = kReservedTokens; i < vocab.size(); ++i) os << vocab.tokens[i] << '\t' << vocab.counts[i] << '\n';
  bin::write_file_atomic(path, os.str());
}

Vocabulary load_vocab(const fs::path& path) {
  const auto lines = read_lines(path);
  expect_header(lines[0], "xlan-vocab", "1", path);
  const auto head = split_tabs(lines[0]);
  Vocabulary v;
  v.min_count = head.size() > 2 ? std::stoull(head[2]) : 1;
  for (std::size_t i = 0; i < kReservedTokens; ++i) {
    v.tokens.emplace_back(kReservedNames[i]);
    v.counts.push_back(0);
    v.index[kReservedNames[i]] = static_cast<TokenId>(i);
  }
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto parts = split_tabs(lines[i]);
    if (parts.size() != 2 || v.index.count(parts[0]))
      throw FormatError(path.string() + ": bad vocabulary line " + std::to_string(i + 1));
    v.index[parts[0]] = static_cast<TokenId>(v.tokens.size());
    v.tokens.push_back(parts[0]);
    v.counts.push_back(std::stoull(parts[1]));
  }
  return v;
}

// ---- examples ------------------------------------------------------------------------

std::size_t Dataset::feature_dim() const {
  for (const auto* split : {&train, &val, &test})
    if (!split->empty()) return split->front().regions.cols();
  return 0;
}

Example make_example(const RawExample& raw, const Vocabulary& vocab) {
  if (raw.regions == 0 || raw.dim == 0) throw ContractError("example '" + raw.id + "' has no regions");
  if (raw.features.size() != raw.regions * raw.dim)
    throw DimensionError("example '" + raw.id + "': " + std::to_string(raw.features.size()) +
                         " feature values for " + std::to_string(raw.regions) + "x" + std::to_string(raw.dim));
  Example e;
  e.id = raw.id;
  e.regions = Tensor::matrix(raw.regions, raw.dim, raw.features);
  e.caption = vocab.encode(raw.words);
  e.references = {e.caption};
  return e;
}

Dataset make_dataset(const RawSplits& splits, Vocabulary vocab) {
  Dataset d;
  d.vocab = std::move(vocab);
  for (const auto& r : splits.train) d.train.push_back(make_example(r, d.vocab));
  for (const auto& r : splits.val) d.val.push_back(make_example(r, d.vocab));
  for (const auto& r : splits.test) d.test.push_back(make_example(r, d.vocab));
  return d;
}

Dataset make_dataset(const RawSplits& splits, std::size_t min_count) {
  std::vector<std::vector<std::string>> corpus;
  for (const auto& r : splits.train) corpus.push_back(r.words);
  return make_dataset(splits, build_vocab(corpus, min_count));
}

// ---- toy task -----------------------------------------------------------------------------

void ToyTaskSpec::validate() const {
  if (slots == 0 || colors == 0 || shapes == 0) throw ContractError("toy task: slots, colors and shapes must be positive");
  if (noise < 0) throw ContractError("toy task: noise must be non-negative");
  if (train == 0) throw ContractError("toy task: training split must be non-empty");
  if (train + val + test > combo_count(*this))
    throw ContractError("toy task: more examples requested than distinct attribute assignments");
}

std::vector<std::string> toy_color_names(std::size_t colors) {
  static const char* const names[] = {"red", "green", "blue", "yellow", "purple", "orange", "white", "black"};
  std::vector<std::string> out;
  for (std::size_t i = 0; i < colors; ++i) out.push_back(i < std::size(names) ? names[i] : "color" + std::to_string(i));
  return out;
}

std::vector<std::string> toy_shape_names(std::size_t shapes) {
  static const char* const names[] = {"circle", "square", "triangle", "star", "hexagon", "cross"};
  std::vector<std::string> out;
  for (std::size_t i = 0; i < shapes; ++i) out.push_back(i < std::size(names) ? names[i] : "shape" + std::to_string(i));
  return out;
}

RawExample toy_example(const ToyTaskSpec& spec, std::uint64_t g) {
  const std::uint64_t total = combo_count(spec);
  std::uint64_t code = scramble(g, total, spec.seed);
  const std::size_t alphabet = spec.colors * spec.shapes;
  const auto colors = toy_color_names(spec.colors);
  const auto shapes = toy_shape_names(spec.shapes);

  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(g), static_cast<std::uint32_t>(g >> 32)};
  Rng rng(seq);
  std::normal_distribution<double> noise(0.0, 1.0);

  std::vector<std::size_t> order(spec.slots);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  RawExample ex;
  char id[32];
  std::snprintf(id, sizeof id, "toy-%06llu", static_cast<unsigned long long>(g));
  ex.id = id;
  ex.regions = spec.slots;
  ex.dim = spec.feature_dim();
  ex.features.assign(ex.regions * ex.dim, 0.0);

  std::vector<std::size_t> color_of(spec.slots), shape_of(spec.slots);
  for (std::size_t s = 0; s < spec.slots; ++s) {
    const std::size_t attr = code % alphabet;
    code /= alphabet;
    color_of[s] = attr / spec.shapes;
    shape_of[s] = attr % spec.shapes;
  }
  for (std::size_t r = 0; r < spec.slots; ++r) {
    const std::size_t s = order[r];
    double* row = ex.features.data() + r * ex.dim;
    row[s] = 1.0;
    row[spec.slots + color_of[s]] = 1.0;
    row[spec.slots + spec.colors + shape_of[s]] = 1.0;
  }
  for (auto& x : ex.features) {
    if (spec.noise > 0) x += spec.noise * noise(rng);
    x = static_cast<double>(static_cast<float>(x));  // matches the f32 file payload
  }
  for (std::size_t s = 0; s < spec.slots; ++s) {
    if (s) ex.words.push_back(kToyJoinWord);
    ex.words.push_back(colors[color_of[s]]);
    ex.words.push_back(shapes[shape_of[s]]);
  }
  return ex;
}

RawSplits gen_toy_dataset(const ToyTaskSpec& spec) {
  spec.validate();
  RawSplits out;
  std::uint64_t g = 0;
  for (std::size_t i = 0; i < spec.train; ++i) out.train.push_back(toy_example(spec, g++));
  for (std::size_t i = 0; i < spec.val; ++i) out.val.push_back(toy_example(spec, g++));
  for (std::size_t i = 0; i < spec.test; ++i) out.test.push_back(toy_example(spec, g++));
  return out;
}

// ---- feature files ---------------------------------------------------------------------------

void write_region_features(const fs::path& path, const RegionFeatures& f) {
  if (f.values.size() != f.regions * f.dim)
    throw DimensionError("region features: " + std::to_string(f.values.size()) + " values for " +
                         std::to_string(f.regions) + "x" + std::to_string(f.dim));
  bin::Writer w;
  w.raw("XLRF");
  w.u32(kRegionFileVersion);
  w.u32(static_cast<std::uint32_t>(f.regions));
  w.u32(static_cast<std::uint32_t>(f.dim));
  for (double v : f.values) w.f32(static_cast<float>(v));
  bin::write_file_atomic(path, w.bytes());
}

RegionFeatures read_region_features(const fs::path& path) {
  bin::Reader r(bin::read_file(path), path.string());
  const auto magic = r.raw(4);
  if (magic != "XLRF") throw FormatError(path.string() + ": expected magic 'XLRF', found '" + magic + "'");
  const auto version = r.u32();
  if (version != kRegionFileVersion)
    throw FormatError(path.string() + ": expected XLRF version " + std::to_string(kRegionFileVersion) + ", found " +
                      std::to_string(version));
  RegionFeatures f;
  f.regions = r.u32();
  f.dim = r.u32();
  if (f.regions == 0 || f.dim == 0) throw FormatError(path.string() + ": empty region set");
  const std::size_t expected = f.regions * f.dim * 4;
  if (r.remaining() != expected)
    throw FormatError(path.string() + ": payload is " + std::to_string(r.remaining()) + " bytes, expected " +
                      std::to_string(expected));
  f.values.resize(f.regions * f.dim);
  for (auto& v : f.values) v = r.f32();
  return f;
}

// ---- dataset directories ----------------------------------------------------------------------

void write_dataset(const fs::path& dir, const RawSplits& splits, std::size_t min_count) {
  fs::create_directories(dir / "features");
  std::ostringstream manifest, captions;
  manifest << "xlan-manifest\t1\n";
  captions << "xlan-captions\t1\n";
  std::vector<std::vector<std::string>> corpus;
  auto emit = [&](const std::vector<RawExample>& split, const char* name) {
    for (const auto& ex : split) {
      const auto rel = fs::path("features") / (ex.id + ".xlrf");
      write_region_features(dir / rel, {ex.regions, ex.dim, ex.features});
      manifest << ex.id << '\t' << name << '\t' << rel.generic_string() << '\n';
      captions << ex.id << '\t';
      for (std::size_t i = 0; i < ex.words.size(); ++i) captions << (i ? " " : "") << ex.words[i];
      captions << '\n';
    }
  };
  emit(splits.train, "train");
  emit(splits.val, "val");
  emit(splits.test, "test");
  for (const auto& r : splits.train) corpus.push_back(r.words);
  bin::write_file_atomic(dir / "manifest.txt", manifest.str());
  bin::write_file_atomic(dir / "captions.txt", captions.str());
  save_vocab(dir / "vocab.txt", build_vocab(corpus, min_count));
}

RawSplits read_raw_splits(const fs::path& dir) {
  const auto manifest = read_lines(dir / "manifest.txt");
  expect_header(manifest[0], "xlan-manifest", "1", dir / "manifest.txt");
  const auto caption_lines = read_lines(dir / "captions.txt");
  expect_header(caption_lines[0], "xlan-captions", "1", dir / "captions.txt");
  std::map<std::string, std::vector<std::string>> captions;
  for (std::size_t i = 1; i < caption_lines.size(); ++i) {
    if (caption_lines[i].empty()) continue;
    const auto tab = caption_lines[i].find('\t');
    if (tab == std::string::npos) throw FormatError("captions.txt: bad line " + std::to_string(i + 1));
    captions[caption_lines[i].substr(0, tab)] = split_words(caption_lines[i].substr(tab + 1));
  }
  RawSplits out;
  for (std::size_t i = 1; i < manifest.size(); ++i) {
    if (manifest[i].empty()) continue;
    const auto parts = split_tabs(manifest[i]);
    if (parts.size() != 3) throw FormatError("manifest.txt: bad line " + std::to_string(i + 1));
    const auto f = read_region_features(dir / parts[2]);
    RawExample ex{parts[0], f.regions, f.dim, f.values, {}};
    auto it = captions.find(ex.id);
    if (it == captions.end()) throw FormatError("captions.txt: no caption for '" + ex.id + "'");
    ex.words = it->second;
    if (parts[1] == "train") out.train.push_back(std::move(ex));
    else if (parts[1] == "val") out.val.push_back(std::move(ex));
    else if (parts[1] == "test") out.test.push_back(std::move(ex));
    else throw FormatError("manifest.txt: unknown split '" + parts[1] + "'");
  }
  if (out.train.empty()) throw FormatError(dir.string() + ": dataset has no training examples");
  return out;
}

Dataset load_dataset(const fs::path& dir) {
  return make_dataset(read_raw_splits(dir), load_vocab(dir / "vocab.txt"));
}

}  // namespace xlan
