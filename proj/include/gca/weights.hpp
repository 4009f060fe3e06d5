#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gca/config.hpp"
#include "gca/corpus.hpp"
#include "gca/tape.hpp"

namespace gca {

// Weight file layout (all integers and floats little-endian):
//   magic "GCAWGHT\0" (8 bytes) | u32 version
//   u32 field count (7) | 7 x u64: s_s s_v s_e s_se s_sed N_u h
//   u64 parameter count
//   per parameter: u32 name length | name bytes | u32 rank | rank x u64 extents
//                  | row-major f64 data
inline constexpr std::uint32_t kWeightFormatVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct WeightFile {
  ModelConfig config;
  std::vector<NamedTensor> tensors;

  const Tensor* find(const std::string& name) const;
};

void save_weights(std::span<const Parameter* const> params, const ModelConfig& config,
                  const std::filesystem::path& path);
std::string serialize_weights(std::span<const Parameter* const> params, const ModelConfig& config);

// Throws FormatError (naming the byte offset) on bad magic, version, or truncation.
WeightFile load_weights(const std::filesystem::path& path);
WeightFile parse_weights(std::string_view bytes);

// Reads `token f1 ... f_{embed_dim}` lines into an embed_dim x vocab.size()
// matrix. Tokens missing from the file get uniform [-0.05, 0.05] columns
// drawn from `seed`; the PAD column is zero.
Tensor load_pretrained_vectors(const std::filesystem::path& path, const Vocabulary& vocab, std::size_t embed_dim,
                               std::uint64_t seed);

}  // namespace gca
