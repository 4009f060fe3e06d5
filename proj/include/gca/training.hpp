#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gca/corpus.hpp"
#include "gca/model.hpp"
#include "gca/optim.hpp"
#include "gca/random.hpp"

namespace gca {

struct TrainingConfig {
  std::size_t generator_epochs = 1;                 // N_G
  std::size_t discriminator_epochs = 15;            // N_D
  std::size_t teacher_forcing_epochs = 1;           // N_tf
  std::size_t machine_set_size = 7900;              // N_m
  std::size_t adversarial_epochs = 1;
  std::size_t initial_teacher_forcing_epochs = 100; // pre-training before the adversarial loop
  double generator_lr = 5e-5;                       // alpha_g, adversarial generator update
  double discriminator_lr = 1e-4;                   // alpha_d
  double teacher_forcing_lr = 5e-5;
  std::size_t batch_size = 32;
  std::size_t self_conversation_turns = 2;
  bool train_embedding_teacher_forcing = true;
  bool train_embedding_adversarial = false;
  std::uint64_t seed = 1;

  static TrainingConfig full_scale() { return {}; }
  static TrainingConfig desk_scale();
  void validate() const;
};

// ---- per-pair loss graphs -------------------------------------------------

struct PairLoss {
  Var sum;             // summed over answer tokens
  std::size_t tokens;  // real answer tokens, EOS included
};

// Categorical cross-entropy of the generator on the gold answer prefixes.
PairLoss teacher_forcing_loss(Tape& tape, Model& model, const EncodedPair& pair);
// Binary cross-entropy of the discriminator on one-hot stored tokens.
PairLoss discriminator_loss(Tape& tape, Model& model, const EncodedPair& pair, double label);
// MSE(l, 1) of the combined model: generator output p fills the
// discriminator's current-token slot.
PairLoss adversarial_loss(Tape& tape, Model& model, const EncodedPair& pair);

// Marks parameters trainable or frozen for the lifetime of the scope and
// restores the previous flags on exit.
class TrainableScope {
 public:
  TrainableScope(std::span<Parameter* const> params, bool trainable);
  ~TrainableScope();
  TrainableScope(const TrainableScope&) = delete;
  TrainableScope& operator=(const TrainableScope&) = delete;

 private:
  std::vector<std::pair<Parameter*, bool>> saved_;
};

// ---- phases ----------------------------------------------------------------

// One pass over H in shuffled batches; one Adam step per batch. Returns the
// mean per-token loss over the epoch.
double teacher_forcing_epoch(std::span<const EncodedPair> human, Model& model, AdamState& optimizer, double lr,
                             std::size_t batch_size, Rng& rng, bool train_embedding = true);

struct MachinePair {
  EncodedPair pair;
  std::size_t seed_index = 0;  // index into H of the seed context x+
};

struct MachineSet {
  std::vector<MachinePair> pairs;
  std::uint64_t generator_checksum = 0;  // generator that produced the set

  std::vector<EncodedPair> encoded() const;
};

// Seeds are H contexts in a seeded shuffled order, cycled when N_m > |H|.
// Each seed yields x- = G(x+), then each further turn decodes from the
// previous output alone; every (previous, next) turn is one machine pair.
MachineSet self_conversation(std::span<const EncodedPair> human, const Model& model, std::size_t machine_set_size,
                             std::size_t turns, std::uint64_t seed);

// N_D epochs of binary cross-entropy: H tokens labelled 1, M tokens 0.
// The shared embedding is frozen. Returns per-epoch mean loss.
std::vector<double> train_discriminator(std::span<const EncodedPair> human, std::span<const EncodedPair> machine,
                                        Model& model, AdamState& optimizer, std::size_t epochs, double lr,
                                        std::size_t batch_size, Rng& rng);

// N_G epochs of MSE(l, 1) on M through the frozen discriminator. Throws
// UsageError if any discriminator parameter is trainable. Returns per-epoch
// mean loss.
std::vector<double> adversarial_generator_update(std::span<const EncodedPair> machine, Model& combined,
                                                 AdamState& optimizer, std::size_t epochs, double lr,
                                                 std::size_t batch_size, Rng& rng, bool train_embedding = false);

// ---- diagnostics -----------------------------------------------------------

// Mean l of the combined model over all answer tokens of `pairs`.
double mean_discriminator_output(std::span<const EncodedPair> pairs, const Model& model);
// Token-level accuracy of the discriminator at threshold 0.5.
double discriminator_accuracy(std::span<const EncodedPair> human, std::span<const EncodedPair> machine,
                              const Model& model);
// Fraction of pairs whose greedy decode equals the gold answer exactly.
double reproduction_rate(std::span<const EncodedPair> pairs, const Model& model);

// ---- the full loop ---------------------------------------------------------

struct PhaseRecord {
  std::size_t epoch = 0;  // 0 for the initial teacher forcing
  std::string phase;      // initial-tf | selfconv | d-train | g-adversarial | teacher-forcing
  double mean_loss = 0.0;
  double wall_seconds = 0.0;
  std::uint64_t generator_checksum_before = 0;
  std::uint64_t generator_checksum_after = 0;
  std::uint64_t discriminator_checksum_before = 0;
  std::uint64_t discriminator_checksum_after = 0;
  // g-adversarial only: mean l on M before/after the update, and whether the
  // imports into and out of the combined model were bit-exact.
  double mean_output_before = 0.0;
  double mean_output_after = 0.0;
  bool imports_exact = true;
};

struct TrainingOptions {
  std::optional<std::filesystem::path> checkpoint_dir;  // epoch_<k>.gcaw written per epoch
  std::ostream* log = nullptr;                          // JSON-lines, one record per phase
  std::function<void(const PhaseRecord&, const Model&)> on_phase;
};

struct TrainingResult {
  Model model;
  std::vector<PhaseRecord> history;
  std::vector<MachineSet> machine_sets;  // one per adversarial epoch
};

// Initial teacher forcing, then per epoch: regenerate M, train D, import G
// and D into the combined model, freeze D and update G, export G back,
// teacher-force on H.
TrainingResult adversarial_training(std::span<const EncodedPair> human, Model model, const TrainingConfig& config,
                                    const TrainingOptions& options = {});

std::string to_json_line(const PhaseRecord& record);

}  // namespace gca
