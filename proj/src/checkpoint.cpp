#include "xlan/checkpoint.hpp"

#include <map>

#include "binary_io.hpp"

namespace xlan {

namespace {

constexpr char kMagic[] = "XLCK";

void put_tensor(bin::Writer& w, const std::string& name, const Shape& shape, std::span<const double> values) {
  w.str(name);
  w.u32(static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) w.u64(d);
  for (double v : values) w.f64(v);
}

struct Record {
  Shape shape;
  std::vector<double> values;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  bin::Writer w;
  w.raw(std::string(kMagic, 4));
  w.u32(kCheckpointVersion);
  w.str(format_key_values(config_to_map(ckpt.config)));
  w.str(to_string(ckpt.phase));
  w.u64(ckpt.state.step);
  w.u64(ckpt.config.train.seed);
  const auto& adam = ckpt.state.adam;
  w.u64(adam.step);
  w.f64(adam.beta1);
  w.f64(adam.beta2);
  w.f64(adam.eps);
  w.u32(static_cast<std::uint32_t>(ckpt.vocab.size()));
  for (std::size_t i = 0; i < ckpt.vocab.size(); ++i) {
    w.str(ckpt.vocab.tokens[i]);
    w.u64(i < ckpt.vocab.counts.size() ? ckpt.vocab.counts[i] : 0);
  }

  auto model = ckpt.model;  // handle copy; for_each_param needs a mutable view
  std::vector<std::pair<std::string, Tensor>> params;
  model.for_each_param([&](const std::string& name, Tensor& t) { params.emplace_back(name, t); });
  const bool moments = !adam.m.empty();
  if (moments && (adam.m.size() != params.size() || adam.v.size() != params.size()))
    throw ContractError("checkpoint: optimizer state does not match the model's parameter list");
  w.u32(static_cast<std::uint32_t>(params.size() * (moments ? 3 : 1)));
  for (const auto& [name, t] : params) put_tensor(w, name, t.shape(), t.values());
  if (moments) {
    for (std::size_t i = 0; i < params.size(); ++i)
      put_tensor(w, "adam.m/" + params[i].first, params[i].second.shape(), adam.m[i]);
    for (std::size_t i = 0; i < params.size(); ++i)
      put_tensor(w, "adam.v/" + params[i].first, params[i].second.shape(), adam.v[i]);
  }
  return w.bytes();
}

Checkpoint decode_checkpoint(const std::string& bytes, const std::string& what) {
  bin::Reader r(bytes, what);
  const auto magic = r.raw(4);
  if (magic != std::string(kMagic, 4))
    throw FormatError(what + ": bad magic: expected \"XLCK\", found \"" + magic + "\"");
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError(what + ": unsupported version: expected " + std::to_string(kCheckpointVersion) + ", found " +
                      std::to_string(version));

  Checkpoint ck;
  try {
    ck.config = apply_config(RunConfig{}, parse_key_values(r.str(), what));
    ck.phase = parse_phase(r.str());
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception& e) {
    throw FormatError(what + ": invalid header: " + e.what());
  }
  ck.state.step = r.u64();
  const auto seed = r.u64();
  if (seed != ck.config.train.seed)
    throw FormatError(what + ": seed field " + std::to_string(seed) + " disagrees with configured seed " +
                      std::to_string(ck.config.train.seed));
  AdamState adam;
  adam.step = r.u64();
  adam.beta1 = r.f64();
  adam.beta2 = r.f64();
  adam.eps = r.f64();

  const auto vocab_size = r.u32();
  if (vocab_size != ck.config.model.vocab_size)
    throw FormatError(what + ": vocabulary has " + std::to_string(vocab_size) + " tokens, config expects " +
                      std::to_string(ck.config.model.vocab_size));
  ck.vocab.min_count = ck.config.min_count;
  for (std::uint32_t i = 0; i < vocab_size; ++i) {
    auto tok = r.str();
    ck.vocab.counts.push_back(r.u64());
    if (!ck.vocab.index.emplace(tok, i).second) throw FormatError(what + ": duplicate vocabulary token '" + tok + "'");
    ck.vocab.tokens.push_back(std::move(tok));
  }

  std::map<std::string, Record> records;
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name = r.str();
    Record rec;
    const auto rank = r.u32();
    if (rank == 0 || rank > 2) throw FormatError(what + ": record '" + name + "' has rank " + std::to_string(rank));
    for (std::uint32_t d = 0; d < rank; ++d) rec.shape.push_back(r.u64());
    const auto n = shape_numel(rec.shape);
    if (n > r.remaining() / 8) throw FormatError(what + ": record '" + name + "' is truncated");
    rec.values.resize(n);
    for (auto& v : rec.values) v = r.f64();
    if (!records.emplace(name, std::move(rec)).second)
      throw FormatError(what + ": duplicate record '" + name + "'");
  }
  if (!r.done()) throw FormatError(what + ": " + std::to_string(r.remaining()) + " trailing bytes");

  ck.model = XLanModel::create(ck.config.model, 0);
  std::vector<std::string> names;
  auto take = [&](const std::string& name, const Shape& shape) -> std::vector<double> {
    auto it = records.find(name);
    if (it == records.end()) throw FormatError(what + ": missing record '" + name + "'");
    if (it->second.shape != shape)
      throw FormatError(what + ": record '" + name + "' has shape " + shape_str(it->second.shape) + ", config expects " +
                        shape_str(shape));
    auto v = std::move(it->second.values);
    records.erase(it);
    return v;
  };
  ck.model.for_each_param([&](const std::string& name, Tensor& t) {
    auto v = take(name, t.shape());
    std::copy(v.begin(), v.end(), t.mutable_values().begin());
    names.push_back(name);
  });
  if (!records.empty()) {
    auto shapes = ck.model.parameters();
    for (std::size_t i = 0; i < names.size(); ++i) adam.m.push_back(take("adam.m/" + names[i], shapes[i].shape()));
    for (std::size_t i = 0; i < names.size(); ++i) adam.v.push_back(take("adam.v/" + names[i], shapes[i].shape()));
  }
  if (!records.empty()) throw FormatError(what + ": unexpected record '" + records.begin()->first + "'");
  ck.state.adam = std::move(adam);
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  bin::write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(bin::read_file(path), path.string());
}

}  // namespace xlan
