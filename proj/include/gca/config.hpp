#pragma once

#include <cstddef>
#include <string>

namespace gca {

// Architecture sizes shared by the generator and the discriminator.
struct ModelConfig {
  std::size_t seq_len = 50;              // s_s: padded sequence length
  std::size_t vocab_size = 7000;         // s_v
  std::size_t embed_dim = 100;           // s_e
  std::size_t gen_hidden = 300;          // s_se: generator sentence-embedding width
  std::size_t disc_hidden = 300;         // s_sed: discriminator sentence-embedding width
  std::size_t context_utterances = 2;    // N_u
  std::size_t dense_width = 300;         // h: hidden width of the generator head

  // Sizes used for the published experiments.
  static ModelConfig full_scale() { return {}; }
  // Small sizes for laptop runs on the bundled corpus.
  static ModelConfig desk_scale();

  // Throws ConfigError when a field is zero or vocab_size < 5.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
  std::string to_string() const;
};

}  // namespace gca
