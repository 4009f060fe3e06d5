#include "gca/training.hpp"

#include <chrono>
#include <map>
#include "json.hpp"
#include <ostream>

#include "gca/errors.hpp"
#include "gca/graph.hpp"

namespace gca {

namespace {

using Clock = std::chrono::steady_clock;

// Answer-LSTM inputs for scoring y_1..y_n: [BOS, y_1, ..., y_{n-1}].
std::vector<TokenId> shifted_prefix(const EncodedSequence& answer) {
  std::vector<TokenId> in;
  in.reserve(answer.effective_length);
  in.push_back(kBos);
  for (std::size_t i = 0; i + 1 < answer.effective_length; ++i) in.push_back(answer.ids[i]);
  return in;
}

// Generator distributions p_1..p_n over the gold prefixes of `answer`.
template <class M>
std::vector<Var> generator_outputs(Tape& tape, M& model, Var emb, const EncodedPair& pair) {
  const Var e_c = graph::encode(tape, emb, model.generator.context, pair.context.tokens());
  const auto states = graph::encode_states(tape, emb, model.generator.answer, shifted_prefix(pair.answer));
  std::vector<Var> ps;
  ps.reserve(states.size());
  for (const Var& h : states) ps.push_back(graph::generator_head(tape, model.generator, e_c, h));
  return ps;
}

// Discriminator outputs l_i with current-token vectors supplied per position.
template <class M>
std::vector<Var> discriminator_outputs(Tape& tape, M& model, Var emb, const EncodedPair& pair,
                                       std::span<const Var> currents) {
  const Var e_cd = graph::encode(tape, emb, model.discriminator.context, pair.context.tokens());
  const auto states = graph::encode_states(tape, emb, model.discriminator.answer, shifted_prefix(pair.answer));
  std::vector<Var> ls;
  ls.reserve(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) {
    ls.push_back(graph::discriminator_head(tape, model.discriminator, currents[i], e_cd, states[i]));
  }
  return ls;
}

template <class M>
std::vector<Var> combined_outputs(Tape& tape, M& model, const EncodedPair& pair) {
  const Var emb = graph::leaf(tape, model.embedding);
  const auto ps = generator_outputs(tape, model, emb, pair);
  return discriminator_outputs(tape, model, emb, pair, ps);
}

PairLoss sum_losses(std::vector<Var> losses) {
  if (losses.empty()) return {Var(), 0};
  return {add_n(losses), losses.size()};
}

// Runs fn(pair, tape) -> PairLoss for each pair of each batch, accumulating
// gradients scaled by 1/tokens-in-batch, then takes one Adam step.
template <class Item, class LossFn>
double run_epoch(std::span<const Item> items, std::span<Parameter* const> params, AdamState& optimizer, double lr,
                 std::size_t batch_size, Rng& rng, LossFn&& loss_fn, auto&& token_count) {
  std::vector<std::size_t> order(items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);

  double total_loss = 0.0;
  std::size_t total_tokens = 0;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    std::size_t batch_tokens = 0;
    for (std::size_t k = start; k < end; ++k) batch_tokens += token_count(items[order[k]]);
    if (batch_tokens == 0) continue;
    zero_grads(params);
    const double inv = 1.0 / static_cast<double>(batch_tokens);
    for (std::size_t k = start; k < end; ++k) {
      Tape tape;
      const PairLoss pl = loss_fn(tape, items[order[k]]);
      if (pl.tokens == 0) continue;
      total_loss += pl.sum.value()[0];
      tape.backward(scale(pl.sum, inv));
    }
    total_tokens += batch_tokens;
    optimizer.step(params, lr);
  }
  return total_tokens ? total_loss / static_cast<double>(total_tokens) : 0.0;
}

void require_nonempty(std::span<const EncodedPair> s, const char* what) {
  if (s.empty()) throw UsageError(std::string(what) + " must not be empty");
}

struct LabelledPair {
  const EncodedPair* pair;
  double label;
};

}  // namespace

TrainingConfig TrainingConfig::desk_scale() {
  TrainingConfig c;
  c.generator_epochs = 1;
  c.discriminator_epochs = 15;
  c.teacher_forcing_epochs = 1;
  c.machine_set_size = 32;
  c.adversarial_epochs = 2;
  c.initial_teacher_forcing_epochs = 300;
  c.generator_lr = 1e-3;
  c.discriminator_lr = 5e-3;
  c.teacher_forcing_lr = 1e-2;
  c.batch_size = 4;
  c.seed = 7;
  return c;
}

void TrainingConfig::validate() const {
  if (generator_epochs == 0 || discriminator_epochs == 0 || teacher_forcing_epochs == 0 || machine_set_size == 0 ||
      adversarial_epochs == 0 || batch_size == 0 || self_conversation_turns < 2) {
    throw ConfigError("training counts must be at least 1 (self-conversation turns at least 2)");
  }
  for (double lr : {generator_lr, discriminator_lr, teacher_forcing_lr}) {
    if (!(lr > 0.0)) throw ConfigError("learning rates must be positive");
  }
}

PairLoss teacher_forcing_loss(Tape& tape, Model& model, const EncodedPair& pair) {
  const Var emb = graph::leaf(tape, model.embedding);
  const auto ps = generator_outputs(tape, model, emb, pair);
  const std::size_t vocab = model.config.vocab_size;
  std::vector<Var> losses;
  losses.reserve(ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i) {
    losses.push_back(loss_eval(Loss::categorical_ce, ps[i], one_hot(pair.answer.ids[i], vocab)));
  }
  return sum_losses(std::move(losses));
}

PairLoss discriminator_loss(Tape& tape, Model& model, const EncodedPair& pair, double label) {
  const Var emb = graph::leaf(tape, model.embedding);
  const std::size_t vocab = model.config.vocab_size;
  std::vector<Var> currents;
  for (TokenId t : pair.answer.tokens()) currents.push_back(tape.constant(one_hot(t, vocab)));
  const auto ls = discriminator_outputs(tape, model, emb, pair, currents);
  const Tensor target = Tensor::scalar(label);
  std::vector<Var> losses;
  losses.reserve(ls.size());
  for (const Var& l : ls) losses.push_back(loss_eval(Loss::binary_ce, l, target));
  return sum_losses(std::move(losses));
}

PairLoss adversarial_loss(Tape& tape, Model& model, const EncodedPair& pair) {
  const auto ls = combined_outputs(tape, model, pair);
  const Tensor ones = Tensor::scalar(1.0);
  std::vector<Var> losses;
  losses.reserve(ls.size());
  for (const Var& l : ls) losses.push_back(loss_eval(Loss::mse, l, ones));
  return sum_losses(std::move(losses));
}

TrainableScope::TrainableScope(std::span<Parameter* const> params, bool trainable) {
  for (Parameter* p : params) {
    saved_.emplace_back(p, p->trainable);
    p->trainable = trainable;
  }
}

TrainableScope::~TrainableScope() {
  for (auto it = saved_.rbegin(); it != saved_.rend(); ++it) it->first->trainable = it->second;
}

double teacher_forcing_epoch(std::span<const EncodedPair> human, Model& model, AdamState& optimizer, double lr,
                             std::size_t batch_size, Rng& rng, bool train_embedding) {
  require_nonempty(human, "human data set");
  auto params = model.generator_parameters(true);
  TrainableScope gen(model.generator.parameters(), true);
  Parameter* emb = &model.embedding;
  TrainableScope embedding(std::span<Parameter* const>(&emb, 1), train_embedding);
  return run_epoch(
      human, params, optimizer, lr, batch_size, rng,
      [&](Tape& t, const EncodedPair& p) { return teacher_forcing_loss(t, model, p); },
      [](const EncodedPair& p) { return p.answer.effective_length; });
}

std::vector<EncodedPair> MachineSet::encoded() const {
  std::vector<EncodedPair> out;
  out.reserve(pairs.size());
  for (const auto& mp : pairs) out.push_back(mp.pair);
  return out;
}

MachineSet self_conversation(std::span<const EncodedPair> human, const Model& model, std::size_t machine_set_size,
                             std::size_t turns, std::uint64_t seed) {
  require_nonempty(human, "human data set");
  if (turns < 2) throw ConfigError("self-conversation needs at least 2 turns");
  const std::size_t seq_len = model.config.seq_len;

  std::vector<std::size_t> order(human.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  auto strip_eos = [seq_len](const EncodedSequence& s) {
    std::vector<TokenId> ids;
    for (TokenId t : s.tokens()) {
      if (t == kEos) break;
      ids.push_back(t);
    }
    return encode_ids(ids, seq_len);
  };

  // Greedy decoding is deterministic, so a reused seed reproduces its chain.
  std::map<std::size_t, std::vector<EncodedPair>> chains;
  MachineSet m;
  m.generator_checksum = model.generator_checksum();
  for (std::size_t k = 0; m.pairs.size() < machine_set_size; ++k) {
    const std::size_t seed_index = order[k % order.size()];
    auto [it, fresh] = chains.try_emplace(seed_index);
    if (fresh) {
      EncodedSequence prev = strip_eos(greedy_decode(human[seed_index].context, model).answer);
      for (std::size_t turn = 2; turn <= turns; ++turn) {
        EncodedSequence answer = greedy_decode(prev, model).answer;
        EncodedSequence next = strip_eos(answer);
        it->second.push_back({std::move(prev), std::move(answer)});
        prev = std::move(next);
      }
    }
    for (const auto& p : it->second) {
      if (m.pairs.size() == machine_set_size) break;
      m.pairs.push_back({p, seed_index});
    }
  }
  return m;
}

std::vector<double> train_discriminator(std::span<const EncodedPair> human, std::span<const EncodedPair> machine,
                                        Model& model, AdamState& optimizer, std::size_t epochs, double lr,
                                        std::size_t batch_size, Rng& rng) {
  require_nonempty(human, "human data set");
  require_nonempty(machine, "machine data set");
  std::vector<LabelledPair> items;
  items.reserve(human.size() + machine.size());
  for (const auto& p : human) items.push_back({&p, 1.0});
  for (const auto& p : machine) items.push_back({&p, 0.0});

  auto params = model.discriminator_parameters(false);
  TrainableScope disc(params, true);
  Parameter* emb = &model.embedding;
  TrainableScope frozen_embedding(std::span<Parameter* const>(&emb, 1), false);

  std::vector<double> losses;
  for (std::size_t e = 0; e < epochs; ++e) {
    losses.push_back(run_epoch(
        std::span<const LabelledPair>(items), params, optimizer, lr, batch_size, rng,
        [&](Tape& t, const LabelledPair& item) { return discriminator_loss(t, model, *item.pair, item.label); },
        [](const LabelledPair& item) { return item.pair->answer.effective_length; }));
  }
  return losses;
}

std::vector<double> adversarial_generator_update(std::span<const EncodedPair> machine, Model& combined,
                                                 AdamState& optimizer, std::size_t epochs, double lr,
                                                 std::size_t batch_size, Rng& rng, bool train_embedding) {
  require_nonempty(machine, "machine data set");
  for (const Parameter* p : combined.discriminator.parameters()) {
    if (p->trainable) throw UsageError("discriminator parameter '" + p->name + "' must be frozen");
  }
  auto params = combined.generator_parameters(true);
  TrainableScope gen(combined.generator.parameters(), true);
  Parameter* emb = &combined.embedding;
  TrainableScope embedding(std::span<Parameter* const>(&emb, 1), train_embedding);

  std::vector<double> losses;
  for (std::size_t e = 0; e < epochs; ++e) {
    losses.push_back(run_epoch(
        machine, params, optimizer, lr, batch_size, rng,
        [&](Tape& t, const EncodedPair& p) { return adversarial_loss(t, combined, p); },
        [](const EncodedPair& p) { return p.answer.effective_length; }));
  }
  return losses;
}

double mean_discriminator_output(std::span<const EncodedPair> pairs, const Model& model) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& pair : pairs) {
    Tape tape;
    for (const Var& l : combined_outputs(tape, model, pair)) {
      total += l.value()[0];
      ++n;
    }
  }
  return n ? total / static_cast<double>(n) : 0.0;
}

double discriminator_accuracy(std::span<const EncodedPair> human, std::span<const EncodedPair> machine,
                              const Model& model) {
  std::size_t correct = 0, total = 0;
  auto tally = [&](std::span<const EncodedPair> set, bool is_human) {
    for (const auto& p : set) {
      for (double l : token_scores(p.context, p.answer, model.embedding, model.discriminator)) {
        correct += ((l >= 0.5) == is_human) ? 1 : 0;
        ++total;
      }
    }
  };
  tally(human, true);
  tally(machine, false);
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

double reproduction_rate(std::span<const EncodedPair> pairs, const Model& model) {
  if (pairs.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& p : pairs) {
    if (greedy_decode(p.context, model).answer == p.answer) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

std::string to_json_line(const PhaseRecord& r) {
  nlohmann::json j{{"epoch", r.epoch},
                   {"phase", r.phase},
                   {"mean_loss", r.mean_loss},
                   {"wall_seconds", r.wall_seconds},
                   {"generator_checksum_before", r.generator_checksum_before},
                   {"generator_checksum_after", r.generator_checksum_after},
                   {"discriminator_checksum_before", r.discriminator_checksum_before},
                   {"discriminator_checksum_after", r.discriminator_checksum_after}};
  if (r.phase == "g-adversarial") {
    j["mean_output_before"] = r.mean_output_before;
    j["mean_output_after"] = r.mean_output_after;
    j["imports_exact"] = r.imports_exact;
  }
  return j.dump();
}

TrainingResult adversarial_training(std::span<const EncodedPair> human, Model model, const TrainingConfig& config,
                                    const TrainingOptions& options) {
  config.validate();
  require_nonempty(human, "human data set");
  Rng rng(config.seed);
  AdamState gen_opt;       // the standalone generator (teacher forcing)
  AdamState disc_opt;      // the discriminator
  AdamState combined_opt;  // the generator inside the combined model

  TrainingResult result{std::move(model), {}, {}};
  Model& gca = result.model;

  auto emit = [&](PhaseRecord rec, Clock::time_point started) {
    rec.wall_seconds = std::chrono::duration<double>(Clock::now() - started).count();
    if (options.log) *options.log << to_json_line(rec) << '\n' << std::flush;
    if (options.on_phase) options.on_phase(rec, gca);
    result.history.push_back(std::move(rec));
  };
  auto begin = [&](std::size_t epoch, const char* phase) {
    PhaseRecord r;
    r.epoch = epoch;
    r.phase = phase;
    r.generator_checksum_before = gca.generator_checksum();
    r.discriminator_checksum_before = gca.discriminator_checksum();
    return r;
  };
  auto finish = [&](PhaseRecord& r) {
    r.generator_checksum_after = gca.generator_checksum();
    r.discriminator_checksum_after = gca.discriminator_checksum();
  };

  {
    const auto t0 = Clock::now();
    PhaseRecord r = begin(0, "initial-tf");
    for (std::size_t e = 0; e < config.initial_teacher_forcing_epochs; ++e) {
      r.mean_loss = teacher_forcing_epoch(human, gca, gen_opt, config.teacher_forcing_lr, config.batch_size, rng,
                                          config.train_embedding_teacher_forcing);
    }
    finish(r);
    emit(std::move(r), t0);
  }

  for (std::size_t epoch = 1; epoch <= config.adversarial_epochs; ++epoch) {
    // Fresh machine set from the current generator.
    auto t0 = Clock::now();
    PhaseRecord sc = begin(epoch, "selfconv");
    MachineSet machine = self_conversation(human, gca, config.machine_set_size, config.self_conversation_turns,
                                           rng.next());
    const std::vector<EncodedPair> machine_pairs = machine.encoded();
    result.machine_sets.push_back(std::move(machine));
    finish(sc);
    emit(std::move(sc), t0);

    t0 = Clock::now();
    PhaseRecord dt = begin(epoch, "d-train");
    const auto d_losses = train_discriminator(human, machine_pairs, gca, disc_opt, config.discriminator_epochs,
                                              config.discriminator_lr, config.batch_size, rng);
    dt.mean_loss = d_losses.back();
    finish(dt);
    emit(std::move(dt), t0);

    // Import D and G into the combined model, freeze D, update G, export G.
    t0 = Clock::now();
    PhaseRecord ga = begin(epoch, "g-adversarial");
    Model combined;
    combined.config = gca.config;
    combined.discriminator = gca.discriminator;
    combined.generator = gca.generator;
    combined.embedding = gca.embedding;
    bool exact = combined.discriminator_checksum() == gca.discriminator_checksum() &&
                 combined.generator_checksum() == gca.generator_checksum();
    {
      TrainableScope frozen(combined.discriminator.parameters(), false);
      const std::uint64_t d_before = combined.discriminator_checksum();
      ga.mean_output_before = mean_discriminator_output(machine_pairs, combined);
      const auto g_losses =
          adversarial_generator_update(machine_pairs, combined, combined_opt, config.generator_epochs,
                                       config.generator_lr, config.batch_size, rng, config.train_embedding_adversarial);
      ga.mean_loss = g_losses.back();
      ga.mean_output_after = mean_discriminator_output(machine_pairs, combined);
      exact = exact && combined.discriminator_checksum() == d_before;
    }
    gca.generator = combined.generator;
    gca.embedding = combined.embedding;
    exact = exact && gca.generator_checksum() == combined.generator_checksum();
    ga.imports_exact = exact;
    finish(ga);
    emit(std::move(ga), t0);

    t0 = Clock::now();
    PhaseRecord tf = begin(epoch, "teacher-forcing");
    for (std::size_t e = 0; e < config.teacher_forcing_epochs; ++e) {
      tf.mean_loss = teacher_forcing_epoch(human, gca, gen_opt, config.teacher_forcing_lr, config.batch_size, rng,
                                           config.train_embedding_teacher_forcing);
    }
    finish(tf);
    emit(std::move(tf), t0);

    if (options.checkpoint_dir) {
      std::filesystem::create_directories(*options.checkpoint_dir);
      gca.save(*options.checkpoint_dir / ("epoch_" + std::to_string(epoch) + ".gcaw"));
    }
  }
  return result;
}

}  // namespace gca
