#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gca/config.hpp"
#include "gca/corpus.hpp"
#include "gca/tape.hpp"

namespace gca {

// Single-layer LSTM, no peepholes. Each gate matrix is hidden x (input + hidden)
// and multiplies the concatenation [x_t; h_{t-1}].
struct LstmParams {
  Parameter w_input, w_forget, w_output, w_cell;
  Parameter b_input, b_forget, b_output, b_cell;

  static LstmParams make(const std::string& prefix, std::size_t input_dim, std::size_t hidden);
  std::size_t hidden() const { return b_input.value.size(); }
  std::size_t input_dim() const { return w_input.value.cols() - hidden(); }
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
};

// Context encoder, answer encoder and the two-layer head producing p.
struct GeneratorParams {
  LstmParams context;
  LstmParams answer;
  Parameter w1, b1, w2, b2;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
};

// Context encoder, prefix encoder and the sigmoid head producing l.
struct DiscriminatorParams {
  LstmParams context;
  LstmParams answer;
  Parameter wd, bd;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
};

// A generator and a discriminator sharing one embedding matrix (s_e x s_v).
struct Model {
  ModelConfig config;
  Parameter embedding;
  GeneratorParams generator;
  DiscriminatorParams discriminator;

  // Uniform [-0.08, 0.08] weights, zero biases except forget gates (1.0),
  // uniform [-0.05, 0.05] embedding with a zero PAD column.
  static Model initialize(const ModelConfig& config, std::uint64_t seed);

  std::vector<Parameter*> generator_parameters(bool include_embedding);
  std::vector<Parameter*> discriminator_parameters(bool include_embedding);
  // Embedding, generator, discriminator: the order used in weight files.
  std::vector<Parameter*> all_parameters();
  std::vector<const Parameter*> all_parameters() const;

  std::uint64_t generator_checksum() const;
  std::uint64_t discriminator_checksum() const;

  void save(const std::filesystem::path& path) const;
  // When `expected` is given and differs from the file's config, throws a
  // DimensionError listing both.
  static Model load(const std::filesystem::path& path, const std::optional<ModelConfig>& expected = std::nullopt);
};

struct DecodeResult {
  EncodedSequence answer;  // no BOS; ends with EOS unless forced to stop
  double probability = 1.0;
  std::vector<double> step_probabilities;
};

// Column t is the embedding column of seq[t]; PAD positions map to the zero column.
Tensor embed(const EncodedSequence& seq, const Tensor& embedding);

// Final hidden state after the first `mask` columns of `inputs`; zero vector when mask == 0.
Tensor lstm_encode(const Tensor& inputs, const LstmParams& params, std::size_t mask);

// Next-token distribution given context x and a BOS-initial partial answer.
Tensor generator_forward(const EncodedSequence& x, const EncodedSequence& y_partial, const Parameter& embedding,
                         const GeneratorParams& gen);

// Probability that `current` is a human token after the prefix y_partial.
// `current` is a distribution over the vocabulary (one-hot for stored tokens).
double discriminator_forward(const EncodedSequence& x, const EncodedSequence& y_partial, const Tensor& current,
                             const Parameter& embedding, const DiscriminatorParams& disc);

// Argmax decoding from BOS, lowest index on ties, PAD excluded; stops after
// EOS or seq_len - 1 tokens.
DecodeResult greedy_decode(const EncodedSequence& x, const Parameter& embedding, const GeneratorParams& gen);
inline DecodeResult greedy_decode(const EncodedSequence& x, const Model& m) {
  return greedy_decode(x, m.embedding, m.generator);
}

// l_i for each real token of y (EOS included), scored as one-hot current tokens.
std::vector<double> token_scores(const EncodedSequence& x, const EncodedSequence& y, const Parameter& embedding,
                                 const DiscriminatorParams& disc);

// Product of the token scores; 1.0 for an empty list.
double probability_from_token_scores(std::span<const double> scores);
// exp(mean(log l_i)); DomainError for an empty list.
double score_from_token_scores(std::span<const double> scores);

double answer_probability(const EncodedSequence& x, const EncodedSequence& y, const Parameter& embedding,
                          const DiscriminatorParams& disc);
double answer_score(const EncodedSequence& x, const EncodedSequence& y, const Parameter& embedding,
                    const DiscriminatorParams& disc);

Tensor one_hot(TokenId id, std::size_t vocab_size);
// Index of the largest entry at or after `first`; lowest index on ties.
TokenId argmax(const Tensor& p, TokenId first = 0);

}  // namespace gca
