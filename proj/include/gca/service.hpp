#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "gca/corpus.hpp"
#include "gca/evaluation.hpp"
#include "gca/model.hpp"

namespace gca {

// Tally of the human votes plus the Jaccard agreement between human and
// discriminator winners, over the lines a human has judged.
nlohmann::json vote_report(std::span<const VoteRecord> votes, std::span<const std::string> models);

// A trained model on disk: <dir>/weights.gcaw and <dir>/vocab.txt.
struct ModelBundle {
  Model model;
  Vocabulary vocab;

  static ModelBundle load(const std::filesystem::path& dir);
  void save(const std::filesystem::path& dir) const;
};

struct ServedModel {
  std::string id;
  Model model;
};

struct ServiceOptions {
  std::filesystem::path vote_store;
  std::size_t context_utterances = 2;  // N_u
  RankBy rank_by = RankBy::score;
};

struct ChatLine {
  std::string line_id;
  Utterance utterance;
  Ranking ranking;
  std::string adversarial_winner;     // model id or TIE
  std::optional<std::string> vote;    // latest human vote
};

struct ChatSession {
  std::string id;
  std::vector<std::string> model_ids;
  std::string created;  // UTC, ISO 8601
  std::vector<ChatLine> lines;
};

// Chat, ranking and vote collection behind JSON requests. Model weights are
// read-only after construction; sessions live in memory, votes on disk.
class ChatService {
 public:
  ChatService(Vocabulary vocab, std::vector<ServedModel> models, Model scorer, ServiceOptions options);

  nlohmann::json create_session(const nlohmann::json& request);
  nlohmann::json chat(const nlohmann::json& request);
  nlohmann::json vote(const nlohmann::json& request);
  nlohmann::json report() const;
  nlohmann::json dialogue(const std::string& session_id) const;

  // Context fed to the generators for the session's next answer: the last
  // N_u utterances, where each past answer is the human-chosen one or,
  // without a usable vote, the discriminator's pick.
  std::vector<Utterance> history(const std::string& session_id) const;

  const std::vector<std::string>& model_ids() const noexcept { return model_ids_; }

 private:
  ChatSession& find_session(const std::string& id);
  const ChatSession& find_session(const std::string& id) const;
  std::vector<Utterance> history_locked(const ChatSession& s) const;
  const ServedModel& model(const std::string& id) const;
  nlohmann::json line_json(const ChatLine& line) const;

  Vocabulary vocab_;
  std::vector<ServedModel> models_;
  std::vector<std::string> model_ids_;
  Model scorer_;
  ServiceOptions options_;
  VoteStore votes_;

  mutable std::mutex mutex_;
  std::map<std::string, ChatSession> sessions_;
  std::map<std::string, std::string> line_owner_;  // line id -> session id
  std::uint64_t next_session_ = 1;
};

// HTTP front end for ChatService. Routes: POST /session, POST /chat,
// POST /vote, GET /report, GET /dialogues/{id}.
class HttpServer {
 public:
  explicit HttpServer(ChatService& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  void listen();  // blocks until stop()
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct ListenAddress {
  std::string host = "127.0.0.1";
  int port = 8080;
};

// "host:port" or ":port" or "port".
ListenAddress parse_listen_address(const std::string& text);
inline constexpr const char* kListenEnv = "GCA_LISTEN_ADDR";

}  // namespace gca
