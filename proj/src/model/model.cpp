#include "gca/model.hpp"

#include <cmath>

#include "gca/errors.hpp"
#include "gca/graph.hpp"
#include "gca/random.hpp"
#include "gca/weights.hpp"

namespace gca {

namespace {

constexpr double kInitRange = 0.08;
constexpr double kEmbeddingInitRange = 0.05;

Parameter uniform_param(std::string name, Shape shape, Rng& rng, double range) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(-range, range);
  return Parameter(std::move(name), std::move(t));
}

Parameter zero_param(std::string name, std::size_t n, double fill = 0.0) {
  return Parameter(std::move(name), Tensor({n}, fill));
}

template <class T, class P>
std::vector<P*> collect(T& lstm) {
  return {&lstm.w_input, &lstm.w_forget, &lstm.w_output, &lstm.w_cell,
          &lstm.b_input, &lstm.b_forget, &lstm.b_output, &lstm.b_cell};
}

void append(std::vector<Parameter*>& out, std::vector<Parameter*> more) {
  out.insert(out.end(), more.begin(), more.end());
}

std::uint64_t checksum_of(const std::vector<const Parameter*>& params) {
  std::vector<const Tensor*> ts;
  ts.reserve(params.size());
  for (const Parameter* p : params) ts.push_back(&p->value);
  return checksum(ts);
}

LstmParams random_lstm(const std::string& prefix, std::size_t input_dim, std::size_t hidden, Rng& rng) {
  LstmParams l = LstmParams::make(prefix, input_dim, hidden);
  for (Parameter* w : {&l.w_input, &l.w_forget, &l.w_output, &l.w_cell}) {
    for (double& v : w->value.data()) v = rng.uniform(-kInitRange, kInitRange);
  }
  return l;
}

void require_bos(const EncodedSequence& y) {
  if (y.effective_length == 0 || y.ids[0] != kBos) throw UsageError("partial answer must begin with BOS");
}

// Incremental generator: context encoded once, answer LSTM advanced per token.
class GeneratorStepper {
 public:
  GeneratorStepper(const EncodedSequence& x, const Parameter& embedding, const GeneratorParams& gen)
      : gen_(gen), emb_(tape_.alias(embedding.value)), answer_(tape_, gen.answer) {
    check_tokens(x, embedding);
    context_ = graph::encode(tape_, emb_, gen.context, x.tokens());
  }

  const Tensor& step(TokenId token) {
    const Var e_a = answer_.step(column(emb_, token));
    return graph::generator_head(tape_, gen_, context_, e_a).value();
  }

  static void check_tokens(const EncodedSequence& s, const Parameter& embedding) {
    for (TokenId t : s.tokens()) {
      if (t >= embedding.value.cols()) {
        throw DomainError("token index " + std::to_string(t) + " outside vocabulary of " +
                          std::to_string(embedding.value.cols()));
      }
    }
  }

 private:
  Tape tape_;
  const GeneratorParams& gen_;
  Var emb_;
  graph::LstmRunner<const LstmParams> answer_;
  Var context_;
};

class DiscriminatorStepper {
 public:
  DiscriminatorStepper(const EncodedSequence& x, const Parameter& embedding, const DiscriminatorParams& disc)
      : disc_(disc), emb_(tape_.alias(embedding.value)), answer_(tape_, disc.answer) {
    GeneratorStepper::check_tokens(x, embedding);
    context_ = graph::encode(tape_, emb_, disc.context, x.tokens());
  }

  void advance(TokenId token) { answer_.step(column(emb_, token)); }

  double score(const Tensor& current) {
    if (current.size() != disc_.wd.value.cols() - context_.value().size() - answer_.hidden().value().size()) {
      throw DimensionError("current-token vector has length " + std::to_string(current.size()) +
                           ", discriminator expects the vocabulary size");
    }
    const Var cur = tape_.constant(current);
    return graph::discriminator_head(tape_, disc_, cur, context_, answer_.hidden()).value()[0];
  }

 private:
  Tape tape_;
  const DiscriminatorParams& disc_;
  Var emb_;
  graph::LstmRunner<const LstmParams> answer_;
  Var context_;
};

}  // namespace

LstmParams LstmParams::make(const std::string& prefix, std::size_t input_dim, std::size_t hidden) {
  const Shape w{hidden, input_dim + hidden};
  LstmParams l;
  l.w_input = Parameter(prefix + ".w_input", Tensor(w));
  l.w_forget = Parameter(prefix + ".w_forget", Tensor(w));
  l.w_output = Parameter(prefix + ".w_output", Tensor(w));
  l.w_cell = Parameter(prefix + ".w_cell", Tensor(w));
  l.b_input = zero_param(prefix + ".b_input", hidden);
  l.b_forget = zero_param(prefix + ".b_forget", hidden, 1.0);
  l.b_output = zero_param(prefix + ".b_output", hidden);
  l.b_cell = zero_param(prefix + ".b_cell", hidden);
  return l;
}

std::vector<Parameter*> LstmParams::parameters() { return collect<LstmParams, Parameter>(*this); }
std::vector<const Parameter*> LstmParams::parameters() const {
  return collect<const LstmParams, const Parameter>(*this);
}

std::vector<Parameter*> GeneratorParams::parameters() {
  std::vector<Parameter*> out = context.parameters();
  append(out, answer.parameters());
  out.insert(out.end(), {&w1, &b1, &w2, &b2});
  return out;
}

std::vector<const Parameter*> GeneratorParams::parameters() const {
  std::vector<const Parameter*> out = context.parameters();
  const auto a = answer.parameters();
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), {&w1, &b1, &w2, &b2});
  return out;
}

std::vector<Parameter*> DiscriminatorParams::parameters() {
  std::vector<Parameter*> out = context.parameters();
  append(out, answer.parameters());
  out.insert(out.end(), {&wd, &bd});
  return out;
}

std::vector<const Parameter*> DiscriminatorParams::parameters() const {
  std::vector<const Parameter*> out = context.parameters();
  const auto a = answer.parameters();
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), {&wd, &bd});
  return out;
}

Model Model::initialize(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  Model m;
  m.config = config;
  m.embedding = uniform_param("embedding", {config.embed_dim, config.vocab_size}, rng, kEmbeddingInitRange);
  for (std::size_t r = 0; r < config.embed_dim; ++r) m.embedding.value.at(r, kPad) = 0.0;

  auto& g = m.generator;
  g.context = random_lstm("gen.context", config.embed_dim, config.gen_hidden, rng);
  g.answer = random_lstm("gen.answer", config.embed_dim, config.gen_hidden, rng);
  g.w1 = uniform_param("gen.w1", {config.dense_width, 2 * config.gen_hidden}, rng, kInitRange);
  g.b1 = zero_param("gen.b1", config.dense_width);
  g.w2 = uniform_param("gen.w2", {config.vocab_size, config.dense_width}, rng, kInitRange);
  g.b2 = zero_param("gen.b2", config.vocab_size);

  auto& d = m.discriminator;
  d.context = random_lstm("disc.context", config.embed_dim, config.disc_hidden, rng);
  d.answer = random_lstm("disc.answer", config.embed_dim, config.disc_hidden, rng);
  d.wd = uniform_param("disc.wd", {1, config.vocab_size + 2 * config.disc_hidden}, rng, kInitRange);
  d.bd = zero_param("disc.bd", 1);
  return m;
}

std::vector<Parameter*> Model::generator_parameters(bool include_embedding) {
  std::vector<Parameter*> out;
  if (include_embedding) out.push_back(&embedding);
  append(out, generator.parameters());
  return out;
}

std::vector<Parameter*> Model::discriminator_parameters(bool include_embedding) {
  std::vector<Parameter*> out;
  if (include_embedding) out.push_back(&embedding);
  append(out, discriminator.parameters());
  return out;
}

std::vector<Parameter*> Model::all_parameters() {
  std::vector<Parameter*> out{&embedding};
  append(out, generator.parameters());
  append(out, discriminator.parameters());
  return out;
}

std::vector<const Parameter*> Model::all_parameters() const {
  std::vector<const Parameter*> out{&embedding};
  for (const auto* p : generator.parameters()) out.push_back(p);
  for (const auto* p : discriminator.parameters()) out.push_back(p);
  return out;
}

std::uint64_t Model::generator_checksum() const {
  std::vector<const Parameter*> ps{&embedding};
  for (const auto* p : generator.parameters()) ps.push_back(p);
  return checksum_of(ps);
}

std::uint64_t Model::discriminator_checksum() const { return checksum_of(discriminator.parameters()); }

void Model::save(const std::filesystem::path& path) const { save_weights(all_parameters(), config, path); }

Model Model::load(const std::filesystem::path& path, const std::optional<ModelConfig>& expected) {
  const WeightFile wf = load_weights(path);
  if (expected && !(*expected == wf.config)) {
    throw DimensionError("weight file config " + wf.config.to_string() + " does not match requested config " +
                         expected->to_string());
  }
  Model m = initialize(wf.config, 0);
  auto params = m.all_parameters();
  if (params.size() != wf.tensors.size()) {
    throw FormatError("weight file holds " + std::to_string(wf.tensors.size()) + " parameters, model needs " +
                      std::to_string(params.size()));
  }
  for (Parameter* p : params) {
    const Tensor* t = wf.find(p->name);
    if (!t) throw FormatError("weight file is missing parameter '" + p->name + "'");
    if (!t->same_shape(p->value)) {
      throw DimensionError("parameter '" + p->name + "' has shape " + t->shape_string() + ", expected " +
                           p->value.shape_string());
    }
    p->value = *t;
    p->zero_grad();
  }
  return m;
}

// ---------------------------------------------------------------------------

Tensor embed(const EncodedSequence& seq, const Tensor& embedding) {
  const std::size_t rows = embedding.rows(), vocab = embedding.cols();
  Tensor out({rows, seq.ids.size()});
  for (std::size_t t = 0; t < seq.ids.size(); ++t) {
    const TokenId id = seq.ids[t];
    if (id >= vocab) {
      throw DomainError("token index " + std::to_string(id) + " outside vocabulary of " + std::to_string(vocab));
    }
    if (id == kPad) continue;
    for (std::size_t r = 0; r < rows; ++r) out.at(r, t) = embedding.at(r, id);
  }
  return out;
}

Tensor lstm_encode(const Tensor& inputs, const LstmParams& params, std::size_t mask) {
  if (!inputs.is_matrix()) throw DimensionError("LSTM input must be a matrix, got " + inputs.shape_string());
  if (mask > inputs.cols()) {
    throw DimensionError("mask " + std::to_string(mask) + " exceeds sequence length " + std::to_string(inputs.cols()));
  }
  Tape tape;
  const Var e = tape.alias(inputs);
  graph::LstmRunner<const LstmParams> run(tape, params);
  for (std::size_t t = 0; t < mask; ++t) run.step(column(e, t));
  return run.hidden().value();
}

Tensor generator_forward(const EncodedSequence& x, const EncodedSequence& y_partial, const Parameter& embedding,
                         const GeneratorParams& gen) {
  require_bos(y_partial);
  GeneratorStepper::check_tokens(y_partial, embedding);
  GeneratorStepper stepper(x, embedding, gen);
  const Tensor* p = nullptr;
  for (TokenId t : y_partial.tokens()) p = &stepper.step(t);
  return *p;
}

double discriminator_forward(const EncodedSequence& x, const EncodedSequence& y_partial, const Tensor& current,
                             const Parameter& embedding, const DiscriminatorParams& disc) {
  GeneratorStepper::check_tokens(y_partial, embedding);
  DiscriminatorStepper stepper(x, embedding, disc);
  for (TokenId t : y_partial.tokens()) stepper.advance(t);
  return stepper.score(current);
}

TokenId argmax(const Tensor& p, TokenId first) {
  if (first >= p.size()) throw DomainError("argmax over an empty range");
  std::size_t best = first;
  for (std::size_t i = first + 1; i < p.size(); ++i)
    if (p[i] > p[best]) best = i;
  return static_cast<TokenId>(best);
}

Tensor one_hot(TokenId id, std::size_t vocab_size) {
  if (id >= vocab_size) throw DomainError("one-hot index " + std::to_string(id) + " outside vocabulary");
  Tensor t({vocab_size});
  t[id] = 1.0;
  return t;
}

DecodeResult greedy_decode(const EncodedSequence& x, const Parameter& embedding, const GeneratorParams& gen) {
  const std::size_t seq_len = x.ids.size();
  const std::size_t max_tokens = seq_len > 0 ? seq_len - 1 : 0;
  GeneratorStepper stepper(x, embedding, gen);
  std::vector<TokenId> out;
  DecodeResult r;
  TokenId y = kBos;
  while (out.size() < max_tokens) {
    const Tensor& p = stepper.step(y);
    // PAD only ever marks the unused tail, so it is never emitted.
    y = argmax(p, kBos);
    out.push_back(y);
    r.step_probabilities.push_back(p[y]);
    r.probability *= p[y];
    if (y == kEos) break;
  }
  r.answer = encode_ids(out, seq_len);
  return r;
}

std::vector<double> token_scores(const EncodedSequence& x, const EncodedSequence& y, const Parameter& embedding,
                                 const DiscriminatorParams& disc) {
  GeneratorStepper::check_tokens(y, embedding);
  DiscriminatorStepper stepper(x, embedding, disc);
  const std::size_t vocab = embedding.value.cols();
  std::vector<double> scores;
  scores.reserve(y.effective_length);
  stepper.advance(kBos);
  for (TokenId t : y.tokens()) {
    scores.push_back(stepper.score(one_hot(t, vocab)));
    stepper.advance(t);
  }
  return scores;
}

// Both accumulate in long double so short answers come out correctly rounded.
double probability_from_token_scores(std::span<const double> scores) {
  long double p = 1.0L;
  for (double l : scores) p *= l;
  return static_cast<double>(p);
}

double score_from_token_scores(std::span<const double> scores) {
  if (scores.empty()) throw DomainError("geometric-mean score of an empty answer");
  long double total = 0.0L;
  for (double l : scores) total += std::log(static_cast<long double>(std::max(l, kProbabilityEpsilon)));
  return static_cast<double>(std::exp(total / static_cast<long double>(scores.size())));
}

double answer_probability(const EncodedSequence& x, const EncodedSequence& y, const Parameter& embedding,
                          const DiscriminatorParams& disc) {
  return probability_from_token_scores(token_scores(x, y, embedding, disc));
}

double answer_score(const EncodedSequence& x, const EncodedSequence& y, const Parameter& embedding,
                    const DiscriminatorParams& disc) {
  if (y.effective_length == 0) throw DomainError("geometric-mean score of an empty answer");
  return score_from_token_scores(token_scores(x, y, embedding, disc));
}

}  // namespace gca
