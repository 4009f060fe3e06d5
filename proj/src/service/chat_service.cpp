#include <algorithm>
#include <chrono>
#include <ctime>
#include <initializer_list>

#include "gca/errors.hpp"
#include "gca/service.hpp"

namespace gca {

using nlohmann::json;

namespace {

// Rejects non-objects and unknown keys.
void require_fields(const json& j, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ValidationError("request body must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw ValidationError("unknown field '" + key + "'");
    }
  }
}

std::string string_field(const json& j, const char* key, bool required) {
  auto it = j.find(key);
  if (it == j.end()) {
    if (required) throw ValidationError(std::string("missing field '") + key + "'");
    return {};
  }
  if (!it->is_string()) throw ValidationError(std::string("field '") + key + "' must be a string");
  return it->get<std::string>();
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json percentages_json(const TallySummary& t) {
  if (!t.percentages_defined()) return nullptr;
  json out = json::object();
  for (const auto& [m, p] : t.percentages) out[m] = round2(p);
  return out;
}

}  // namespace

ModelBundle ModelBundle::load(const std::filesystem::path& dir) {
  ModelBundle b{Model::load(dir / "weights.gcaw"), Vocabulary::load(dir / "vocab.txt")};
  if (b.vocab.size() != b.model.config.vocab_size) {
    throw FormatError("bundle " + dir.string() + ": vocabulary has " + std::to_string(b.vocab.size()) +
                      " entries but the weights expect " + std::to_string(b.model.config.vocab_size));
  }
  return b;
}

void ModelBundle::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  model.save(dir / "weights.gcaw");
  vocab.save(dir / "vocab.txt");
}

ChatService::ChatService(Vocabulary vocab, std::vector<ServedModel> models, Model scorer, ServiceOptions options)
    : vocab_(std::move(vocab)),
      models_(std::move(models)),
      scorer_(std::move(scorer)),
      options_(std::move(options)),
      votes_(options_.vote_store) {
  if (models_.empty()) throw ConfigError("the service needs at least one model");
  if (options_.context_utterances == 0) throw ConfigError("context_utterances must be positive");
  for (const auto& m : models_) {
    if (m.id.empty() || m.id == kTie) throw ConfigError("invalid model id '" + m.id + "'");
    if (std::find(model_ids_.begin(), model_ids_.end(), m.id) != model_ids_.end()) {
      throw ConfigError("duplicate model id '" + m.id + "'");
    }
    if (m.model.config.vocab_size != vocab_.size()) {
      throw DimensionError("model '" + m.id + "' expects a vocabulary of " +
                           std::to_string(m.model.config.vocab_size) + ", have " + std::to_string(vocab_.size()));
    }
    model_ids_.push_back(m.id);
  }
  if (scorer_.config.vocab_size != vocab_.size()) throw DimensionError("scorer vocabulary size mismatch");
  // Line ids are "s<session>-<n>"; continue numbering after any stored ones
  // so a restarted service never reuses a voted line id.
  for (const auto& v : votes_.latest()) {
    const auto& id = v.line_id;
    const auto dash = id.find('-');
    if (id.size() < 2 || id[0] != 's' || dash == std::string::npos) continue;
    try {
      const std::uint64_t n = std::stoull(id.substr(1, dash - 1));
      next_session_ = std::max(next_session_, n + 1);
    } catch (const std::exception&) {
    }
  }
}

const ServedModel& ChatService::model(const std::string& id) const {
  for (const auto& m : models_) {
    if (m.id == id) return m;
  }
  throw ValidationError("unknown model '" + id + "'");
}

ChatSession& ChatService::find_session(const std::string& id) {
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFoundError("unknown session '" + id + "'");
  return it->second;
}

const ChatSession& ChatService::find_session(const std::string& id) const {
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFoundError("unknown session '" + id + "'");
  return it->second;
}

json ChatService::create_session(const json& request) {
  json req = request.is_null() ? json::object() : request;
  require_fields(req, {"models"});
  std::vector<std::string> ids = model_ids_;
  if (auto it = req.find("models"); it != req.end()) {
    if (!it->is_array() || it->empty()) throw ValidationError("'models' must be a non-empty array of model ids");
    ids.clear();
    for (const auto& v : *it) {
      if (!v.is_string()) throw ValidationError("'models' must be a non-empty array of model ids");
      const auto id = v.get<std::string>();
      model(id);
      if (std::find(ids.begin(), ids.end(), id) != ids.end()) throw ValidationError("model '" + id + "' listed twice");
      ids.push_back(id);
    }
  }
  std::lock_guard lock(mutex_);
  ChatSession s;
  s.id = "s" + std::to_string(next_session_++);
  s.model_ids = std::move(ids);
  s.created = utc_now();
  json out{{"session_id", s.id}, {"models", s.model_ids}, {"created", s.created}};
  sessions_.emplace(s.id, std::move(s));
  return out;
}

std::vector<Utterance> ChatService::history_locked(const ChatSession& s) const {
  std::vector<Utterance> h;
  for (const auto& line : s.lines) {
    h.push_back(line.utterance);
    std::string pick = line.vote && *line.vote != kTie ? *line.vote : line.adversarial_winner;
    if (pick == kTie) pick = line.ranking.ordered.front().model_id;
    for (const auto& c : line.ranking.ordered) {
      if (c.model_id == pick) h.push_back(decode(c.answer, vocab_));
    }
  }
  return h;
}

std::vector<Utterance> ChatService::history(const std::string& session_id) const {
  std::lock_guard lock(mutex_);
  auto h = history_locked(find_session(session_id));
  const std::size_t keep = options_.context_utterances;
  if (h.size() > keep) h.erase(h.begin(), h.end() - static_cast<std::ptrdiff_t>(keep));
  return h;
}

json ChatService::line_json(const ChatLine& line) const {
  json answers = json::array();
  for (const auto& c : line.ranking.ordered) {
    answers.push_back({{"model_id", c.model_id},
                       {"text", detokenize(decode(c.answer, vocab_))},
                       {"score", c.score},
                       {"probability", c.probability}});
  }
  return {{"line_id", line.line_id},
          {"utterance", detokenize(line.utterance)},
          {"answers", answers},
          {"tie", line.ranking.tie},
          {"adversarial_winner", line.adversarial_winner},
          {"vote", line.vote ? json(*line.vote) : json(nullptr)}};
}

json ChatService::chat(const json& request) {
  require_fields(request, {"session_id", "utterance"});
  std::string session_id = string_field(request, "session_id", false);
  const std::string text = string_field(request, "utterance", true);
  Utterance utterance = tokenize(text);
  if (utterance.empty()) throw ValidationError("utterance is empty");
  // Keep room for the separator inside the fixed-length context.
  const std::size_t seq_len = scorer_.config.seq_len;
  if (seq_len > 2 && utterance.size() > seq_len - 2) utterance.resize(seq_len - 2);

  if (session_id.empty()) session_id = create_session(json::object())["session_id"].get<std::string>();

  std::lock_guard lock(mutex_);
  ChatSession& s = find_session(session_id);
  auto h = history_locked(s);
  h.push_back(utterance);
  const std::size_t keep = options_.context_utterances;
  if (h.size() > keep) h.erase(h.begin(), h.end() - static_cast<std::ptrdiff_t>(keep));
  const Utterance joined = join_context(h);
  const EncodedSequence x = encode_pad(joined, vocab_, seq_len, false);

  std::vector<AnswerSource> answers;
  for (const auto& id : s.model_ids) answers.push_back({id, greedy_decode(x, model(id).model).answer});

  ChatLine line;
  line.line_id = s.id + "-" + std::to_string(s.lines.size() + 1);
  line.utterance = std::move(utterance);
  line.ranking = rank_answers(x, answers, scorer_, options_.rank_by);
  line.adversarial_winner = line.ranking.winner();
  votes_.append({line.line_id, line.adversarial_winner, VoteSource::adversarial});

  json out = line_json(line);
  out["session_id"] = s.id;
  line_owner_[line.line_id] = s.id;
  s.lines.push_back(std::move(line));
  return out;
}

json ChatService::vote(const json& request) {
  require_fields(request, {"line_id", "winner"});
  const std::string line_id = string_field(request, "line_id", true);
  const std::string winner = string_field(request, "winner", true);
  std::lock_guard lock(mutex_);
  auto owner = line_owner_.find(line_id);
  if (owner == line_owner_.end()) throw ValidationError("unknown line '" + line_id + "'");
  ChatSession& s = find_session(owner->second);
  auto line = std::find_if(s.lines.begin(), s.lines.end(), [&](const ChatLine& l) { return l.line_id == line_id; });
  if (winner != kTie && std::find(s.model_ids.begin(), s.model_ids.end(), winner) == s.model_ids.end()) {
    throw ValidationError("winner must be one of the session's models or TIE, got '" + winner + "'");
  }
  const VoteRecord record{line_id, winner, VoteSource::human};
  votes_.append(record);
  line->vote = winner;
  return json::parse(to_json_line(record));
}

json vote_report(std::span<const VoteRecord> votes, std::span<const std::string> models) {
  std::vector<VoteRecord> human;
  std::set<std::string> voted_lines;
  for (const auto& v : votes) {
    if (v.source == VoteSource::human) {
      human.push_back(v);
      voted_lines.insert(v.line_id);
    }
  }
  std::vector<VoteRecord> adversarial;
  for (const auto& v : votes) {
    if (v.source == VoteSource::adversarial && voted_lines.count(v.line_id)) adversarial.push_back(v);
  }
  const TallySummary t = tally(human, models);
  return {{"counts", t.counts},
          {"contested", t.contested},
          {"human_votes", human.size()},
          {"percentages", percentages_json(t)},
          {"jaccard", jaccard_index(winner_set(human, VoteSource::human),
                                    winner_set(adversarial, VoteSource::adversarial))}};
}

json ChatService::report() const { return vote_report(votes_.latest(), model_ids_); }

json ChatService::dialogue(const std::string& session_id) const {
  std::lock_guard lock(mutex_);
  const ChatSession& s = find_session(session_id);
  json lines = json::array();
  for (const auto& l : s.lines) lines.push_back(line_json(l));
  return {{"session_id", s.id}, {"models", s.model_ids}, {"created", s.created}, {"lines", lines}};
}

ListenAddress parse_listen_address(const std::string& text) {
  ListenAddress a;
  std::string port = text;
  if (auto colon = text.rfind(':'); colon != std::string::npos) {
    if (colon > 0) a.host = text.substr(0, colon);
    port = text.substr(colon + 1);
  }
  try {
    std::size_t used = 0;
    a.port = std::stoi(port, &used);
    if (used != port.size() || a.port < 0 || a.port > 65535) throw std::out_of_range("port");
  } catch (const std::exception&) {
    throw UsageError("bad listen address '" + text + "'");
  }
  return a;
}

}  // namespace gca
