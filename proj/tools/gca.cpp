// Command-line front end: training, chatting, ranking, evaluation, serving.
// Exit codes: 0 success, 1 usage, 2 data-format error.

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "gca/errors.hpp"
#include "gca/evaluation.hpp"
#include "gca/service.hpp"
#include "gca/training.hpp"
#include "gca/weights.hpp"

using namespace gca;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

struct Settings {
  ModelConfig model;
  TrainingConfig training;
};

// Every configurable field, by the name used on the command line and in
// config files.
struct Field {
  std::string name;
  std::function<void(Settings&, const json&)> set;
};

template <typename T, typename Owner>
Field field(const char* name, Owner Settings::*owner, T Owner::*member) {
  return {name, [=](Settings& s, const json& v) {
            if constexpr (std::is_same_v<T, bool>) {
              if (!v.is_boolean()) throw UsageError(std::string(name) + " must be true or false");
            } else if constexpr (std::is_floating_point_v<T>) {
              if (!v.is_number()) throw UsageError(std::string(name) + " must be a number");
            } else {
              if (!v.is_number_unsigned()) throw UsageError(std::string(name) + " must be a non-negative integer");
            }
            (s.*owner).*member = v.get<T>();
          }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> all = {
      field("seq_len", &Settings::model, &ModelConfig::seq_len),
      field("vocab_size", &Settings::model, &ModelConfig::vocab_size),
      field("embed_dim", &Settings::model, &ModelConfig::embed_dim),
      field("gen_hidden", &Settings::model, &ModelConfig::gen_hidden),
      field("disc_hidden", &Settings::model, &ModelConfig::disc_hidden),
      field("context_utterances", &Settings::model, &ModelConfig::context_utterances),
      field("dense_width", &Settings::model, &ModelConfig::dense_width),
      field("generator_epochs", &Settings::training, &TrainingConfig::generator_epochs),
      field("discriminator_epochs", &Settings::training, &TrainingConfig::discriminator_epochs),
      field("teacher_forcing_epochs", &Settings::training, &TrainingConfig::teacher_forcing_epochs),
      field("machine_set_size", &Settings::training, &TrainingConfig::machine_set_size),
      field("adversarial_epochs", &Settings::training, &TrainingConfig::adversarial_epochs),
      field("initial_teacher_forcing_epochs", &Settings::training, &TrainingConfig::initial_teacher_forcing_epochs),
      field("generator_lr", &Settings::training, &TrainingConfig::generator_lr),
      field("discriminator_lr", &Settings::training, &TrainingConfig::discriminator_lr),
      field("teacher_forcing_lr", &Settings::training, &TrainingConfig::teacher_forcing_lr),
      field("batch_size", &Settings::training, &TrainingConfig::batch_size),
      field("self_conversation_turns", &Settings::training, &TrainingConfig::self_conversation_turns),
      field("train_embedding_teacher_forcing", &Settings::training, &TrainingConfig::train_embedding_teacher_forcing),
      field("train_embedding_adversarial", &Settings::training, &TrainingConfig::train_embedding_adversarial),
      field("seed", &Settings::training, &TrainingConfig::seed),
  };
  return all;
}

struct SettingsOptions {
  std::string preset = "full";
  std::string config_file;
  std::map<std::string, std::string> flags;  // raw flag values by field name

  void attach(CLI::App* app) {
    app->add_option("--preset", preset, "Default sizes: full or desk")
        ->check(CLI::IsMember({"full", "desk"}))
        ->capture_default_str();
    app->add_option("--config", config_file, "JSON file of field overrides");
    for (const auto& f : fields()) {
      flags[f.name];
      app->add_option("--" + f.name, flags[f.name]);
    }
  }

  // Defaults, then flags, then the config file.
  Settings resolve(const CLI::App* app) const {
    Settings s;
    if (preset == "desk") s = {ModelConfig::desk_scale(), TrainingConfig::desk_scale()};
    for (const auto& f : fields()) {
      if (app->count("--" + f.name) == 0) continue;
      const std::string& raw = flags.at(f.name);
      json v;
      try {
        v = json::parse(raw);
      } catch (const json::parse_error&) {
        throw UsageError("bad value '" + raw + "' for --" + f.name);
      }
      f.set(s, v);
    }
    if (!config_file.empty()) {
      std::ifstream in(config_file);
      if (!in) throw FormatError("cannot open config file " + config_file);
      json j;
      try {
        j = json::parse(in);
      } catch (const json::parse_error& e) {
        throw FormatError("config file " + config_file + ": " + e.what());
      }
      if (!j.is_object()) throw FormatError("config file " + config_file + " must hold a JSON object");
      for (const auto& [key, value] : j.items()) {
        auto it = std::find_if(fields().begin(), fields().end(), [&](const Field& f) { return f.name == key; });
        if (it == fields().end()) throw UsageError("unknown config field '" + key + "'");
        it->set(s, value);
      }
    }
    s.model.validate();
    s.training.validate();
    return s;
  }
};

std::string default_corpus() { return std::string(GCA_DATA_DIR) + "/toy_dialogues.txt"; }

// "id=path" pairs.
std::pair<std::string, std::string> split_assignment(const std::string& text, const char* what) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == text.size()) {
    throw UsageError(std::string(what) + " must look like ID=VALUE, got '" + text + "'");
  }
  return {text.substr(0, eq), text.substr(eq + 1)};
}

void print_progress(const PhaseRecord& r) {
  std::cerr << "epoch " << r.epoch << " " << r.phase << " loss " << r.mean_loss << " (" << r.wall_seconds << " s)\n";
}

int run_train(const Settings& s, const std::string& corpus_path, const std::string& out_dir,
              const std::string& pretrained, bool adversarial, const std::string& checkpoint_dir,
              const std::string& log_path) {
  ModelConfig mc = s.model;
  const auto dialogues = read_corpus(corpus_path, mc.seq_len > 2 ? mc.seq_len - 2 : mc.seq_len);
  PreparedCorpus corpus = prepare_corpus(dialogues, mc);
  std::cerr << "corpus: " << dialogues.size() << " dialogues, " << corpus.encoded.size() << " pairs, vocabulary "
            << corpus.vocab.size() << "\n";

  Model model = Model::initialize(mc, s.training.seed);
  if (!pretrained.empty()) {
    model.embedding.value = load_pretrained_vectors(pretrained, corpus.vocab, mc.embed_dim, s.training.seed);
  }

  std::ofstream log_file;
  if (!log_path.empty()) {
    log_file.open(log_path);
    if (!log_file) throw FormatError("cannot open log file " + log_path);
  }

  if (adversarial) {
    TrainingOptions options;
    if (!checkpoint_dir.empty()) options.checkpoint_dir = checkpoint_dir;
    if (log_file.is_open()) options.log = &log_file;
    options.on_phase = [](const PhaseRecord& r, const Model&) { print_progress(r); };
    TrainingResult result = adversarial_training(corpus.encoded, std::move(model), s.training, options);
    model = std::move(result.model);
  } else {
    AdamState optimizer;
    Rng rng(s.training.seed);
    for (std::size_t e = 1; e <= s.training.initial_teacher_forcing_epochs; ++e) {
      const double loss = teacher_forcing_epoch(corpus.encoded, model, optimizer, s.training.teacher_forcing_lr,
                                                s.training.batch_size, rng, s.training.train_embedding_teacher_forcing);
      if (log_file.is_open()) log_file << json{{"epoch", e}, {"phase", "teacher-forcing"}, {"mean_loss", loss}}.dump() << '\n';
      if (e % 25 == 0 || e == s.training.initial_teacher_forcing_epochs) {
        std::cerr << "epoch " << e << " loss " << loss << "\n";
      }
    }
  }
  std::cerr << "exact reproduction on the training pairs: " << reproduction_rate(corpus.encoded, model) << "\n";
  ModelBundle{std::move(model), std::move(corpus.vocab)}.save(out_dir);
  std::cout << out_dir << "\n";
  return 0;
}

EncodedSequence encode_context(const std::vector<Utterance>& history, const ModelBundle& b) {
  return encode_pad(join_context(history), b.vocab, b.model.config.seq_len, false);
}

int run_chat(const std::string& model_dir, const std::string& scorer_dir) {
  const ModelBundle bundle = ModelBundle::load(model_dir);
  std::optional<ModelBundle> scorer;
  if (!scorer_dir.empty()) scorer = ModelBundle::load(scorer_dir);
  const std::size_t keep = bundle.model.config.context_utterances;
  const std::size_t max_tokens = bundle.model.config.seq_len > 2 ? bundle.model.config.seq_len - 2 : 1;
  std::vector<Utterance> history;
  std::string line;
  std::cout << "> " << std::flush;
  while (std::getline(std::cin, line)) {
    if (line == "/quit") break;
    Utterance u = tokenize(line);
    if (u.empty()) {
      std::cout << "> " << std::flush;
      continue;
    }
    if (u.size() > max_tokens) u.resize(max_tokens);
    history.push_back(std::move(u));
    while (history.size() > keep) history.erase(history.begin());
    const EncodedSequence x = encode_context(history, bundle);
    const DecodeResult r = greedy_decode(x, bundle.model);
    Utterance answer = decode(r.answer, bundle.vocab);
    std::cout << detokenize(answer);
    if (scorer && r.answer.effective_length > 0) {
      std::cout << "  [score " << answer_score(x, r.answer, scorer->model.embedding, scorer->model.discriminator)
                << "]";
    }
    std::cout << "\n> " << std::flush;
    history.push_back(std::move(answer));
    while (history.size() > keep) history.erase(history.begin());
  }
  std::cout << "\n";
  return 0;
}

int run_selfconv(const Settings& s, const std::string& model_dir, const std::string& corpus_path,
                 const std::string& out_path) {
  const ModelBundle b = ModelBundle::load(model_dir);
  const ModelConfig& mc = b.model.config;
  const auto dialogues = read_corpus(corpus_path, mc.seq_len > 2 ? mc.seq_len - 2 : mc.seq_len);
  const auto pairs = make_pairs(dialogues, mc.context_utterances);
  const auto human = encode_pairs(pairs, b.vocab, mc.seq_len);
  const MachineSet m = self_conversation(human, b.model, s.training.machine_set_size,
                                         s.training.self_conversation_turns, s.training.seed);
  std::ofstream out(out_path);
  if (!out) throw FormatError("cannot open " + out_path);
  for (const auto& mp : m.pairs) {
    out << json{{"seed_index", mp.seed_index},
                {"context", detokenize(decode(mp.pair.context, b.vocab))},
                {"answer", detokenize(decode(mp.pair.answer, b.vocab))}}
               .dump()
        << '\n';
  }
  std::cerr << m.pairs.size() << " machine pairs written to " << out_path << "\n";
  return 0;
}

RankBy parse_rank_by(const std::string& s) { return s == "probability" ? RankBy::probability : RankBy::score; }

int run_rank(const std::string& scorer_dir, const std::string& context, const std::vector<std::string>& answers,
             const std::vector<std::string>& generators, const std::string& rank_by) {
  const ModelBundle scorer = ModelBundle::load(scorer_dir);
  const ModelConfig& mc = scorer.model.config;
  std::vector<Utterance> history;
  for (auto& part : tokenize(context)) {
    if (part == kSeparator) {
      history.emplace_back();
      continue;
    }
    if (history.empty()) history.emplace_back();
    history.back().push_back(part);
  }
  const EncodedSequence x = encode_pad(join_context(history), scorer.vocab, mc.seq_len, false);

  std::vector<AnswerSource> sources;
  for (const auto& a : answers) {
    auto [id, text] = split_assignment(a, "--answer");
    sources.push_back({id, encode_pad(tokenize(text), scorer.vocab, mc.seq_len, true)});
  }
  for (const auto& g : generators) {
    auto [id, dir] = split_assignment(g, "--generator");
    const ModelBundle gen = ModelBundle::load(dir);
    if (!(gen.vocab == scorer.vocab)) throw DimensionError("generator " + id + " uses a different vocabulary");
    sources.push_back({id, greedy_decode(x, gen.model).answer});
  }
  if (sources.empty()) throw UsageError("give at least one --answer or --generator");
  const Ranking r = rank_answers(x, sources, scorer.model, parse_rank_by(rank_by));
  json out{{"winner", r.winner()}, {"tie", r.tie}, {"candidates", json::array()}};
  for (const auto& c : r.ordered) {
    out["candidates"].push_back({{"model_id", c.model_id},
                                 {"text", detokenize(decode(c.answer, scorer.vocab))},
                                 {"score", c.score},
                                 {"probability", c.probability}});
  }
  std::cout << out.dump(2) << "\n";
  return 0;
}

int run_report(const std::string& votes_path, const std::vector<std::string>& models) {
  if (!std::filesystem::exists(votes_path)) throw FormatError("vote store " + votes_path + " does not exist");
  const VoteStore store(votes_path);
  std::cout << vote_report(store.latest(), models).dump(2) << "\n";
  return 0;
}

HttpServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

int run_serve(const std::vector<std::string>& model_args, const std::string& scorer_dir, const std::string& votes,
              const std::string& listen, const std::string& rank_by) {
  std::vector<ServedModel> models;
  std::optional<Vocabulary> vocab;
  std::optional<Model> first;
  for (const auto& arg : model_args) {
    auto [id, dir] = split_assignment(arg, "--model");
    ModelBundle b = ModelBundle::load(dir);
    if (vocab && !(b.vocab == *vocab)) throw DimensionError("model " + id + " uses a different vocabulary");
    if (!vocab) vocab = b.vocab;
    if (!first) first = b.model;
    models.push_back({id, std::move(b.model)});
  }
  Model scorer = scorer_dir.empty() ? *first : ModelBundle::load(scorer_dir).model;
  ServiceOptions options;
  options.vote_store = votes;
  options.context_utterances = first->config.context_utterances;
  options.rank_by = parse_rank_by(rank_by);
  ChatService service(std::move(*vocab), std::move(models), std::move(scorer), options);

  std::string address = listen;
  if (address.empty()) {
    const char* env = std::getenv(kListenEnv);
    address = env ? env : "127.0.0.1:8080";
  }
  const ListenAddress where = parse_listen_address(address);
  HttpServer server(service);
  const int port = server.bind(where.host, where.port);
  std::cerr << "listening on " << where.host << ":" << port << ", votes in " << votes << "\n";
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  server.listen();
  g_server = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generative conversational agent with adversarial training"};
  app.require_subcommand(1);

  std::string corpus = default_corpus(), out_dir, pretrained, checkpoint_dir, log_path;
  std::string model_dir, scorer_dir, out_path, context, votes = "votes.jsonl", listen, rank_by = "score";
  std::vector<std::string> answers, generators, model_args, report_models;

  SettingsOptions train_opts, adv_opts, selfconv_opts;

  auto* train = app.add_subcommand("train", "Teacher forcing on a dialogue corpus");
  train_opts.attach(train);
  train->add_option("--corpus", corpus, "Dialogue corpus")->capture_default_str();
  train->add_option("--out", out_dir, "Output model directory")->required();
  train->add_option("--pretrained", pretrained, "Word vectors (token f1 ... f_e per line)");
  train->add_option("--log", log_path, "JSON-lines training log");

  auto* adv = app.add_subcommand("adversarial-train", "Teacher forcing followed by adversarial epochs");
  adv_opts.attach(adv);
  adv->add_option("--corpus", corpus, "Dialogue corpus")->capture_default_str();
  adv->add_option("--out", out_dir, "Output model directory")->required();
  adv->add_option("--pretrained", pretrained, "Word vectors (token f1 ... f_e per line)");
  adv->add_option("--checkpoint-dir", checkpoint_dir, "Per-epoch checkpoints");
  adv->add_option("--log", log_path, "JSON-lines phase log");

  auto* chat = app.add_subcommand("chat", "Talk to a model in the terminal");
  chat->add_option("--model", model_dir, "Model directory")->required();
  chat->add_option("--scorer", scorer_dir, "Model directory whose discriminator scores the answers");

  auto* selfconv = app.add_subcommand("selfconv", "Write a self-conversation machine set");
  selfconv_opts.attach(selfconv);
  selfconv->add_option("--model", model_dir, "Model directory")->required();
  selfconv->add_option("--corpus", corpus, "Seed dialogues")->capture_default_str();
  selfconv->add_option("--out", out_path, "Output JSON-lines file")->required();

  auto* rank = app.add_subcommand("rank", "Rank candidate answers with a discriminator");
  rank->add_option("--scorer", scorer_dir, "Model directory providing the discriminator")->required();
  rank->add_option("--context", context, "Context text; separate utterances with <sep>")->required();
  rank->add_option("--answer", answers, "ID=answer text");
  rank->add_option("--generator", generators, "ID=model directory; its greedy answer is ranked");
  rank->add_option("--rank-by", rank_by)->check(CLI::IsMember({"score", "probability"}))->capture_default_str();

  auto* report = app.add_subcommand("eval-report", "Tally votes and the human/discriminator agreement");
  report->add_option("--votes", votes, "Vote store")->capture_default_str();
  report->add_option("--models", report_models, "Model ids to list even without votes");

  auto* serve = app.add_subcommand("serve", "HTTP/JSON chat and voting service");
  serve->add_option("--model", model_args, "ID=model directory (one or more)")->required();
  serve->add_option("--scorer", scorer_dir, "Discriminator model directory (default: first model)");
  serve->add_option("--votes", votes, "Vote store")->capture_default_str();
  serve->add_option("--listen", listen, std::string("host:port (default: $") + kListenEnv + " or 127.0.0.1:8080)");
  serve->add_option("--rank-by", rank_by)->check(CLI::IsMember({"score", "probability"}))->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*train) return run_train(train_opts.resolve(train), corpus, out_dir, pretrained, false, "", log_path);
    if (*adv) return run_train(adv_opts.resolve(adv), corpus, out_dir, pretrained, true, checkpoint_dir, log_path);
    if (*chat) return run_chat(model_dir, scorer_dir);
    if (*selfconv) return run_selfconv(selfconv_opts.resolve(selfconv), model_dir, corpus, out_path);
    if (*rank) return run_rank(scorer_dir, context, answers, generators, rank_by);
    if (*report) return run_report(votes, report_models);
    if (*serve) return run_serve(model_args, scorer_dir, votes, listen, rank_by);
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const DimensionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
