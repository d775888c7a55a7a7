// SPDX-License-Identifier: Apache-2.0
//
// File formats: protein records as JSON lines, aligned FASTA, dataset
// splits and the flat `key = value` run configuration.
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "naepro/fragments.hpp"
#include "naepro/model.hpp"
#include "naepro/record.hpp"
#include "naepro/training.hpp"

namespace naepro::io {

// ---- protein records ------------------------------------------------------------
// {"id": str, "sequence": str, "coords": [[x, y, z], ...], "fragments": [1-based ints]}
// Lowercase letters are accepted and stored uppercase. Blank lines are skipped.

std::vector<ProteinRecord> parse_records(std::string_view text, const std::string& source = "records");
std::vector<ProteinRecord> load_records(const std::string& path);

std::string serialize_record(const ProteinRecord& record);  // one line, no newline
std::string serialize_records(std::span<const ProteinRecord> records);
void save_records(const std::string& path, std::span<const ProteinRecord> records);

// ---- aligned FASTA -----------------------------------------------------------------

fragments::Alignment parse_aligned_fasta(std::string_view text, const std::string& source = "alignment");
fragments::Alignment load_aligned_fasta(const std::string& path);

/// Replaces each record's fragment set with the mined indices of the row
/// carrying the same id; records without a row are left untouched.
void apply_fragment_mask(std::vector<ProteinRecord>& records, const fragments::FragmentMask& mask);

// ---- dataset splits --------------------------------------------------------------

struct DatasetSplit {
  std::vector<std::string> train, validation, test;
};

/// Seeded shuffle, then validation and test take floor(n·r) records each
/// (r = normalised ratio, at least one for a non-zero ratio) and the
/// remainder goes to training.
DatasetSplit split_dataset(std::span<const ProteinRecord> records, std::array<double, 3> ratios, std::uint64_t seed);

std::vector<ProteinRecord> select(std::span<const ProteinRecord> records, const std::vector<std::string>& ids);

// ---- run configuration ---------------------------------------------------------------

struct RunConfig {
  model::ModelConfig model;
  training::TrainConfig train;
  std::array<double, 3> split{8.0, 1.0, 1.0};
};

/// Flat `key = value` lines, '#' starts a comment. Keys: L, d, H, k,
/// lambda_half, variant, freeze_fragments, seed, epochs, batch_size,
/// learning_rate, anneal_epochs, anneal_max_fraction, grad_clip_norm,
/// anneal_literal, resample_init, split. `seed` drives both the model and
/// the trainer. Unknown or repeated keys are errors.
RunConfig parse_config(std::string_view text, const std::string& source = "config");
RunConfig load_config(const std::string& path);
std::string serialize_config(const RunConfig& config);

}  // namespace naepro::io
