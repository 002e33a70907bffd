#pragma once

// Checkpoint container, little-endian:
//   bytes 0..3  magic "XLCK"
//   u32         format version (1)
//   str         run configuration (key = value lines)
//   str         phase ("ce" or "scst")
//   u64         optimizer steps taken in that phase
//   u64         run seed
//   u64         Adam step, f64 β₁, f64 β₂, f64 ε
//   u32         vocabulary size, then per token: str token, u64 count
//   u32         record count, then per record:
//                 str name, u32 rank, u64[rank] extents, f64[numel] values
// where str is a u32 byte length followed by the bytes. Parameters use their
// model names; Adam moments are stored as "adam.m/<name>" and "adam.v/<name>".
// Batches and samples derive from (seed, step), so these fields are the full
// random state of a run.

#include <filesystem>

#include "xlan/config.hpp"
#include "xlan/data.hpp"
#include "xlan/training.hpp"

namespace xlan {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  RunConfig config;
  Phase phase = Phase::ce;
  TrainerState state;
  Vocabulary vocab;
  XLanModel model;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes, const std::string& what = "checkpoint");

// Written to a temporary sibling and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
// Fully validates before returning; nothing is returned on any error.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace xlan
