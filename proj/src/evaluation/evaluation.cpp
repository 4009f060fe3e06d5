#include "gca/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include "json.hpp"

#include "gca/errors.hpp"

namespace gca {

std::string Ranking::winner() const {
  if (ordered.empty()) return kTie;
  return tie ? std::string(kTie) : ordered.front().model_id;
}

bool scores_tie(double a, double b) noexcept { return std::abs(a - b) < kTieFraction * std::min(a, b); }

Ranking rank_candidates(std::vector<Candidate> candidates, RankBy by) {
  if (candidates.empty()) throw UsageError("cannot rank an empty candidate list");
  auto key = [by](const Candidate& c) { return by == RankBy::score ? c.score : c.probability; };
  std::sort(candidates.begin(), candidates.end(), [&](const Candidate& a, const Candidate& b) {
    if (key(a) != key(b)) return key(a) > key(b);
    return a.model_id < b.model_id;
  });
  Ranking r;
  r.tie = candidates.size() > 1 && scores_tie(key(candidates[0]), key(candidates[1]));
  r.ordered = std::move(candidates);
  return r;
}

Ranking rank_answers(const EncodedSequence& context, std::span<const AnswerSource> answers, const Model& scorer,
                     RankBy by) {
  if (answers.empty()) throw UsageError("cannot rank an empty candidate list");
  std::vector<Candidate> cands;
  cands.reserve(answers.size());
  for (const auto& a : answers) {
    const auto l = token_scores(context, a.answer, scorer.embedding, scorer.discriminator);
    cands.push_back({a.model_id, a.answer, l.empty() ? 0.0 : score_from_token_scores(l),
                     probability_from_token_scores(l)});
  }
  return rank_candidates(std::move(cands), by);
}

const char* to_string(VoteSource s) noexcept { return s == VoteSource::human ? "human" : "adversarial"; }

VoteSource vote_source_from_string(const std::string& s) {
  if (s == "human") return VoteSource::human;
  if (s == "adversarial") return VoteSource::adversarial;
  throw ValidationError("unknown vote source '" + s + "'");
}

double round2(double value) { return std::floor(value * 100.0 + 0.5) / 100.0; }

TallySummary tally(std::span<const VoteRecord> votes, std::span<const std::string> models) {
  TallySummary t;
  for (const auto& m : models) t.counts[m] = 0;
  for (const auto& v : votes) {
    if (v.is_tie()) continue;
    ++t.counts[v.winner];
    ++t.contested;
  }
  if (t.contested > 0) {
    for (const auto& [model, n] : t.counts) {
      t.percentages[model] = 100.0 * static_cast<double>(n) / static_cast<double>(t.contested);
    }
  }
  return t;
}

double jaccard_index(const std::set<std::string>& a, const std::set<std::string>& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t common = 0;
  for (const auto& x : a) common += b.count(x);
  const std::size_t total = a.size() + b.size() - common;
  return static_cast<double>(common) / static_cast<double>(total);
}

std::set<std::string> winner_set(std::span<const VoteRecord> votes, VoteSource source) {
  std::set<std::string> out;
  for (const auto& v : votes) {
    if (v.source == source && !v.is_tie()) out.insert(v.line_id + "#" + v.winner);
  }
  return out;
}

std::vector<AbLine> ab_session(std::span<const EncodedSequence> contexts, const Model& generator_a,
                               const std::string& id_a, const Model& generator_b, const std::string& id_b,
                               const Model& scorer, RankBy by) {
  std::vector<AbLine> lines;
  lines.reserve(contexts.size());
  for (std::size_t i = 0; i < contexts.size(); ++i) {
    const EncodedSequence& x = contexts[i];
    const AnswerSource answers[] = {{id_a, greedy_decode(x, generator_a).answer},
                                    {id_b, greedy_decode(x, generator_b).answer}};
    AbLine line;
    line.line_id = "line-" + std::to_string(i);
    line.context = x;
    line.ranking = rank_answers(x, answers, scorer, by);
    line.adversarial_vote = {line.line_id, line.ranking.winner(), VoteSource::adversarial};
    lines.push_back(std::move(line));
  }
  return lines;
}

std::string to_json_line(const VoteRecord& r) {
  return nlohmann::json{{"line_id", r.line_id}, {"winner", r.winner}, {"source", to_string(r.source)}}.dump();
}

VoteRecord vote_from_json_line(const std::string& line) {
  try {
    const auto j = nlohmann::json::parse(line);
    return {j.at("line_id").get<std::string>(), j.at("winner").get<std::string>(),
            vote_source_from_string(j.at("source").get<std::string>())};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad vote record: ") + e.what());
  }
}

VoteStore::VoteStore(std::filesystem::path path) : path_(std::move(path)) {}

void VoteStore::append(const VoteRecord& record) {
  const std::string line = to_json_line(record) + "\n";
  std::lock_guard lock(mutex_);
  std::ofstream out(path_, std::ios::app | std::ios::binary);
  if (!out) throw FormatError("cannot open vote store " + path_.string());
  out << line;
  out.flush();
  if (!out) throw FormatError("write failed for vote store " + path_.string());
}

std::vector<VoteRecord> VoteStore::latest() const {
  std::lock_guard lock(mutex_);
  std::ifstream in(path_);
  std::vector<VoteRecord> out;
  if (!in) return out;
  std::map<std::pair<std::string, VoteSource>, std::size_t> where;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    VoteRecord r;
    try {
      r = vote_from_json_line(line);
    } catch (const FormatError& e) {
      throw FormatError(path_.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    auto key = std::make_pair(r.line_id, r.source);
    if (auto it = where.find(key); it != where.end()) {
      out[it->second] = std::move(r);
    } else {
      where.emplace(std::move(key), out.size());
      out.push_back(std::move(r));
    }
  }
  return out;
}

}  // namespace gca
