#include "gca/config.hpp"

#include "gca/errors.hpp"

namespace gca {

ModelConfig ModelConfig::desk_scale() {
  ModelConfig c;
  c.seq_len = 12;
  c.vocab_size = 150;
  c.embed_dim = 16;
  c.gen_hidden = 32;
  c.disc_hidden = 16;
  c.context_utterances = 2;
  c.dense_width = 32;
  return c;
}

void ModelConfig::validate() const {
  if (seq_len == 0 || vocab_size == 0 || embed_dim == 0 || gen_hidden == 0 || disc_hidden == 0 ||
      context_utterances == 0 || dense_width == 0) {
    throw ConfigError("model config fields must be positive: " + to_string());
  }
  if (vocab_size < 5) throw ConfigError("vocab_size must be at least 5, got " + std::to_string(vocab_size));
}

std::string ModelConfig::to_string() const {
  return "{s_s=" + std::to_string(seq_len) + ", s_v=" + std::to_string(vocab_size) +
         ", s_e=" + std::to_string(embed_dim) + ", s_se=" + std::to_string(gen_hidden) +
         ", s_sed=" + std::to_string(disc_hidden) + ", N_u=" + std::to_string(context_utterances) +
         ", h=" + std::to_string(dense_width) + "}";
}

}  // namespace gca
