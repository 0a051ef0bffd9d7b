// File formats: token corpora, parameter checkpoints, tabular artifacts.
//
// Binary layouts are explicit little-endian:
//   token corpus   "OCDSTOK1" | u32 vocab | { u32 len | len * u32 token } ...
//   checkpoint     "OCDSPAR1" | u64 count | count * f64
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ocds/types.hpp"

namespace ocds {

struct Vocab {
  std::vector<std::string> id_to_token;
  std::unordered_map<std::string, std::uint32_t> token_to_id;

  std::uint32_t size() const { return static_cast<std::uint32_t>(id_to_token.size()); }
};

// One token per line; the line number is the id.
Vocab read_vocab(const std::filesystem::path& path);

enum class TokenizerMode { kWhitespace, kCharacter };

struct TokenCorpus {
  Dataset data;
  std::uint32_t vocab_size = 0;
};

// Newline-delimited text; one instance per line. kWhitespace splits on blanks,
// kCharacter takes each UTF-8 code point as a token. Unknown tokens raise
// ConfigError naming the token and line.
TokenCorpus read_text_corpus(const std::filesystem::path& path, const Vocab& vocab,
                             TokenizerMode mode,
                             DatasetRole role = DatasetRole::kFullCorpus);

TokenCorpus read_binary_corpus(const std::filesystem::path& path,
                               DatasetRole role = DatasetRole::kFullCorpus);
void write_binary_corpus(const std::filesystem::path& path, const Dataset& data,
                         std::uint32_t vocab_size);

void write_checkpoint(const std::filesystem::path& path, const ParamVector& theta);
ParamVector read_checkpoint(const std::filesystem::path& path);
// "ckpt_000017.bin" style names used by trajectory spill and pipeline stages.
std::string checkpoint_filename(std::size_t step);

// Two-column tab-separated tables keyed by instance id, with a header row.
void write_id_value_tsv(const std::filesystem::path& path,
                        const std::string& value_column,
                        const std::vector<std::int64_t>& ids,
                        const std::vector<double>& values);
struct IdValueTable {
  std::vector<std::int64_t> ids;
  std::vector<double> values;
};
IdValueTable read_id_value_tsv(const std::filesystem::path& path);

// Loss observations for scaling-law fits; CSV with header "N,D,L".
struct LossPoint {
  double n = 0.0;
  double d = 0.0;
  double loss = 0.0;
};
std::vector<LossPoint> read_loss_points(const std::filesystem::path& path);
void write_loss_points(const std::filesystem::path& path,
                       const std::vector<LossPoint>& points);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& content);

// FNV-1a over the raw bytes, rendered as 16 hex digits.
std::string file_digest(const std::filesystem::path& path);
std::string hex64(std::uint64_t value);

}  // namespace ocds
