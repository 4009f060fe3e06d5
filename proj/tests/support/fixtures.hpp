#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gca/corpus.hpp"
#include "gca/model.hpp"
#include "gca/optim.hpp"
#include "gca/random.hpp"

namespace fixtures {

// s_v=8, s_e=3, s_se=4, s_sed=4, s_s=5, N_u=2, h=4.
gca::ModelConfig tiny_config();

// Initialized model with every weight and bias redrawn uniformly in
// [-scale, scale] so activations are far from the near-linear init regime.
// The PAD embedding column stays zero.
gca::Model random_model(const gca::ModelConfig& config, std::uint64_t seed, double scale = 0.5);

// Random real tokens (UNK and words, never PAD/BOS/EOS) of length in [lo, hi].
std::vector<gca::TokenId> random_tokens(gca::Rng& rng, std::size_t vocab, std::size_t lo, std::size_t hi);

// Context without EOS, answer ending in EOS, both padded to seq_len.
gca::EncodedPair random_pair(gca::Rng& rng, const gca::ModelConfig& config);

struct ToyData {
  gca::ModelConfig config;
  std::vector<gca::Dialogue> dialogues;
  gca::PreparedCorpus corpus;
};

// The bundled 10-dialogue corpus at desk scale.
ToyData load_toy();

std::string toy_corpus_path();

enum class LossKind { teacher_forcing, discriminator_bce, adversarial_mse };
const char* to_string(LossKind k);

// Finite-difference check of one loss over a few random pairs. Checks every
// parameter the loss depends on; for the adversarial loss the discriminator
// is frozen and its gradients must stay zero.
gca::GradientCheckReport check_gradients(LossKind kind, gca::Model& model, const std::vector<gca::EncodedPair>& pairs,
                                         double tolerance);

}  // namespace fixtures
