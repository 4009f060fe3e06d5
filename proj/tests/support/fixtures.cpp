#include "fixtures.hpp"

#include "gca/errors.hpp"
#include "gca/training.hpp"

namespace fixtures {

using namespace gca;

ModelConfig tiny_config() {
  ModelConfig c;
  c.vocab_size = 8;
  c.embed_dim = 3;
  c.gen_hidden = 4;
  c.disc_hidden = 4;
  c.seq_len = 5;
  c.context_utterances = 2;
  c.dense_width = 4;
  return c;
}

Model random_model(const ModelConfig& config, std::uint64_t seed, double scale) {
  Model m = Model::initialize(config, seed);
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  for (Parameter* p : m.all_parameters()) {
    for (double& v : p->value.data()) v = rng.uniform(-scale, scale);
  }
  for (std::size_t r = 0; r < config.embed_dim; ++r) m.embedding.value.at(r, kPad) = 0.0;
  return m;
}

std::vector<TokenId> random_tokens(Rng& rng, std::size_t vocab, std::size_t lo, std::size_t hi) {
  const std::size_t n = lo + rng.index(hi - lo + 1);
  std::vector<TokenId> out(n);
  for (auto& t : out) t = static_cast<TokenId>(kUnk + rng.index(vocab - kUnk));
  return out;
}

EncodedPair random_pair(Rng& rng, const ModelConfig& config) {
  const auto x = random_tokens(rng, config.vocab_size, 1, config.seq_len);
  auto y = random_tokens(rng, config.vocab_size, 0, config.seq_len - 1);
  y.push_back(kEos);
  return {encode_ids(x, config.seq_len), encode_ids(y, config.seq_len)};
}

std::string toy_corpus_path() { return std::string(GCA_DATA_DIR) + "/toy_dialogues.txt"; }

ToyData load_toy() {
  ToyData d;
  d.config = ModelConfig::desk_scale();
  d.dialogues = read_corpus(toy_corpus_path(), d.config.seq_len - 2);
  d.corpus = prepare_corpus(d.dialogues, d.config);
  return d;
}

const char* to_string(LossKind k) {
  switch (k) {
    case LossKind::teacher_forcing:
      return "teacher-forcing cross-entropy";
    case LossKind::discriminator_bce:
      return "discriminator binary cross-entropy";
    case LossKind::adversarial_mse:
      return "generator MSE through frozen discriminator";
  }
  return "?";
}

GradientCheckReport check_gradients(LossKind kind, Model& model, const std::vector<EncodedPair>& pairs,
                                    double tolerance) {
  std::vector<Parameter*> params;
  switch (kind) {
    case LossKind::teacher_forcing:
      params = model.generator_parameters(true);
      break;
    case LossKind::discriminator_bce:
      params = model.discriminator_parameters(true);
      break;
    case LossKind::adversarial_mse:
      params = model.all_parameters();
      break;
  }
  TrainableScope all(model.all_parameters(), true);
  TrainableScope frozen(kind == LossKind::adversarial_mse ? model.discriminator.parameters()
                                                          : std::vector<Parameter*>{},
                        false);
  auto build = [&](Tape& t) {
    std::vector<Var> parts;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      PairLoss l;
      if (kind == LossKind::teacher_forcing) {
        l = teacher_forcing_loss(t, model, pairs[i]);
      } else if (kind == LossKind::discriminator_bce) {
        l = discriminator_loss(t, model, pairs[i], i % 2 == 0 ? 1.0 : 0.0);
      } else {
        l = adversarial_loss(t, model, pairs[i]);
      }
      if (l.tokens > 0) parts.push_back(l.sum);
    }
    return add_n(parts);
  };
  GradientCheckReport report = gradient_check(build, params, tolerance);
  if (kind == LossKind::adversarial_mse) {
    for (const Parameter* p : model.discriminator.parameters()) {
      for (double g : p->grad.values()) {
        if (g != 0.0) {
          report.passed = false;
          report.entries.push_back({p->name + " (frozen, gradient not zero)", 1.0, false});
          break;
        }
      }
    }
  }
  return report;
}

}  // namespace fixtures
