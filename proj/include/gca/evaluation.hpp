#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "gca/model.hpp"

namespace gca {

inline constexpr const char* kTie = "TIE";
// Two top scores tie when they differ by less than this fraction of the smaller.
inline constexpr double kTieFraction = 0.05;

struct Candidate {
  std::string model_id;
  EncodedSequence answer;
  double score = 0.0;        // geometric mean of the token scores
  double probability = 0.0;  // product of the token scores
};

enum class RankBy { score, probability };

struct Ranking {
  std::vector<Candidate> ordered;  // best first
  bool tie = false;                // top two tied

  // Model id of the best candidate, or kTie.
  std::string winner() const;
};

bool scores_tie(double a, double b) noexcept;

// Sorts descending by the chosen key (model id ascending breaks exact
// equality) and flags a tie between the top two.
Ranking rank_candidates(std::vector<Candidate> candidates, RankBy by = RankBy::score);

struct AnswerSource {
  std::string model_id;
  EncodedSequence answer;
};

// Scores each answer with the scorer's discriminator and ranks them.
Ranking rank_answers(const EncodedSequence& context, std::span<const AnswerSource> answers, const Model& scorer,
                     RankBy by = RankBy::score);

enum class VoteSource { human, adversarial };

struct VoteRecord {
  std::string line_id;
  std::string winner;  // model id or kTie
  VoteSource source = VoteSource::human;

  bool is_tie() const { return winner == kTie; }
  bool operator==(const VoteRecord&) const = default;
};

const char* to_string(VoteSource s) noexcept;
VoteSource vote_source_from_string(const std::string& s);

struct TallySummary {
  std::map<std::string, std::size_t> counts;
  std::size_t contested = 0;  // non-tie records
  // Exact shares of the contested lines, in percent; empty when contested == 0.
  std::map<std::string, double> percentages;

  bool percentages_defined() const { return contested > 0; }
};

// `models` pre-seeds zero counts so every model appears in the summary.
TallySummary tally(std::span<const VoteRecord> votes, std::span<const std::string> models = {});

// Half-up rounding to two decimals, as percentages are reported.
double round2(double value);

// |a ∩ b| / |a ∪ b|; 1.0 when both are empty.
double jaccard_index(const std::set<std::string>& a, const std::set<std::string>& b);

// Winning answers ("<line id>#<model id>") of the non-tie votes from `source`.
std::set<std::string> winner_set(std::span<const VoteRecord> votes, VoteSource source);

struct AbLine {
  std::string line_id;
  EncodedSequence context;
  Ranking ranking;
  VoteRecord adversarial_vote;
};

// Decodes every context with both generators and lets the scorer pick.
std::vector<AbLine> ab_session(std::span<const EncodedSequence> contexts, const Model& generator_a,
                               const std::string& id_a, const Model& generator_b, const std::string& id_b,
                               const Model& scorer, RankBy by = RankBy::score);

// Append-only JSON-lines vote file. A later record for the same
// (line id, source) supersedes earlier ones when read back.
class VoteStore {
 public:
  explicit VoteStore(std::filesystem::path path);

  void append(const VoteRecord& record);
  std::vector<VoteRecord> latest() const;
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
  mutable std::mutex mutex_;
};

std::string to_json_line(const VoteRecord& record);
VoteRecord vote_from_json_line(const std::string& line);

}  // namespace gca
