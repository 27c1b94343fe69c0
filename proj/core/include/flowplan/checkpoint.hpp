#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowplan/corpus.hpp"
#include "flowplan/training.hpp"

namespace flowplan {

// On-disk layout:
//   "FLOWPLAN-CKPT 1\n"
//   uint64 little-endian header length, then a JSON header:
//     config, vocabulary (token list), vocab_hash, params [{name, rows, cols}],
//     optimizer {step, moments}, epoch, rng_state, charts, corpus_size, reports
//   raw little-endian float64 blocks: every parameter in manifest order, then
//   the Adam first and second moments in the same order when present.
struct Checkpoint {
  TrainState state;
  std::vector<Flowchart> charts;
  std::size_t corpus_size = 0;

  const Model& model() const { return *state.model; }
  std::string hash() const;  // hex fingerprint of vocabulary + parameters
};

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint deserialize_checkpoint(const std::string& bytes);

// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::string& path, const std::string& bytes);
std::string read_file(const std::string& path);

std::string to_hex(std::uint64_t value);

}  // namespace flowplan
