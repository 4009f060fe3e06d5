#include "gca/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <map>
#include <unordered_set>

#include "gca/errors.hpp"
#include "io_util.hpp"

namespace gca {

namespace {

const std::vector<std::string>& reserved_tokens() {
  static const std::vector<std::string> r{"<pad>", "<bos>", "<eos>", "<unk>"};
  return r;
}

bool is_split_punct(char c) { return c == '.' || c == ',' || c == '!' || c == '?' || c == '\''; }

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace

Utterance tokenize(std::string_view text) {
  Utterance out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (is_split_punct(ch)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return out;
}

std::string detokenize(std::span<const std::string> tokens) {
  std::string s;
  bool glue_next = false;
  for (const auto& t : tokens) {
    const bool punct = t.size() == 1 && is_split_punct(t[0]);
    if (!s.empty() && !glue_next && !punct) s += ' ';
    s += t;
    glue_next = t == "'";
  }
  return s;
}

// ---------------------------------------------------------------------------

Vocabulary::Vocabulary() {
  for (const auto& r : reserved_tokens()) {
    index_.emplace(r, static_cast<TokenId>(tokens_.size()));
    tokens_.push_back(r);
  }
}

Vocabulary Vocabulary::from_index_list(std::vector<std::string> tokens) {
  const auto& reserved = reserved_tokens();
  if (tokens.size() < reserved.size() || !std::equal(reserved.begin(), reserved.end(), tokens.begin())) {
    throw FormatError("vocabulary must start with the reserved tokens <pad> <bos> <eos> <unk>");
  }
  Vocabulary v;
  for (std::size_t i = reserved.size(); i < tokens.size(); ++i) {
    if (!v.index_.emplace(tokens[i], static_cast<TokenId>(i)).second) {
      throw FormatError("duplicate vocabulary token '" + tokens[i] + "' at index " + std::to_string(i));
    }
    v.tokens_.push_back(tokens[i]);
  }
  return v;
}

TokenId Vocabulary::id(std::string_view token) const { return find(token).value_or(kUnk); }

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  if (auto it = index_.find(std::string(token)); it != index_.end()) return it->second;
  return std::nullopt;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id >= tokens_.size()) throw DomainError("token index " + std::to_string(id) + " outside vocabulary");
  return tokens_[id];
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::string body;
  for (const auto& t : tokens_) body += t + "\n";
  detail::atomic_write(path, body);
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open vocabulary file " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return from_index_list(std::move(tokens));
}

Vocabulary build_vocabulary(std::span<const Dialogue> corpus, std::size_t vocab_size,
                            std::span<const std::string> always_include) {
  if (vocab_size < 5) throw ConfigError("vocabulary size must be at least 5, got " + std::to_string(vocab_size));
  if (corpus.empty()) throw ConfigError("cannot build a vocabulary from an empty corpus");

  std::map<std::string, std::size_t> counts;
  for (const auto& d : corpus)
    for (const auto& u : d.utterances)
      for (const auto& t : u) ++counts[t];

  std::vector<std::string> order;
  std::unordered_set<std::string> seen;
  auto install = [&](const std::string& t) {
    if (seen.insert(t).second) order.push_back(t);
  };
  for (const auto& r : reserved_tokens()) install(r);
  for (const auto& t : always_include) {
    if (order.size() >= vocab_size) break;
    install(t);
  }

  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  for (const auto& [tok, n] : ranked) {
    if (order.size() >= vocab_size) break;
    install(tok);
  }
  return Vocabulary::from_index_list(std::move(order));
}

EncodedSequence encode_pad(std::span<const std::string> tokens, const Vocabulary& vocab, std::size_t seq_len,
                           bool with_eos) {
  std::vector<TokenId> ids;
  ids.reserve(tokens.size() + 1);
  for (const auto& t : tokens) ids.push_back(vocab.id(t));
  if (with_eos) ids.push_back(kEos);
  return encode_ids(ids, seq_len);
}

EncodedSequence encode_ids(std::span<const TokenId> ids, std::size_t seq_len) {
  EncodedSequence s;
  s.ids.assign(seq_len, kPad);
  for (TokenId id : ids) {
    if (s.effective_length == seq_len) break;
    if (id == kPad) break;
    s.ids[s.effective_length++] = id;
  }
  return s;
}

Utterance decode(const EncodedSequence& seq, const Vocabulary& vocab, bool drop_eos) {
  Utterance out;
  for (TokenId id : seq.tokens()) {
    if (drop_eos && id == kEos) break;
    out.push_back(vocab.token(id));
  }
  return out;
}

Utterance join_context(std::span<const Utterance> context) {
  Utterance out;
  for (std::size_t i = 0; i < context.size(); ++i) {
    if (i) out.emplace_back(kSeparator);
    out.insert(out.end(), context[i].begin(), context[i].end());
  }
  return out;
}

std::vector<DialoguePair> make_pairs(std::span<const Dialogue> corpus, std::size_t context_utterances) {
  if (context_utterances == 0) throw ConfigError("context window N_u must be at least 1");
  std::vector<DialoguePair> pairs;
  for (const auto& d : corpus) {
    const auto& u = d.utterances;
    for (std::size_t k = 1; k < u.size(); ++k) {
      const std::size_t first = k > context_utterances ? k - context_utterances : 0;
      DialoguePair p;
      p.context.assign(u.begin() + static_cast<std::ptrdiff_t>(first), u.begin() + static_cast<std::ptrdiff_t>(k));
      p.answer = u[k];
      pairs.push_back(std::move(p));
    }
  }
  return pairs;
}

std::vector<EncodedPair> encode_pairs(std::span<const DialoguePair> pairs, const Vocabulary& vocab,
                                      std::size_t seq_len) {
  std::vector<EncodedPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    out.push_back({encode_pad(join_context(p.context), vocab, seq_len, false),
                   encode_pad(p.answer, vocab, seq_len, true)});
  }
  return out;
}

std::vector<Dialogue> parse_corpus(std::istream& in, std::size_t max_utterance_tokens) {
  std::vector<Dialogue> corpus;
  Dialogue cur;
  std::string line;
  auto flush = [&] {
    if (!cur.utterances.empty()) corpus.push_back(std::move(cur));
    cur = Dialogue{};
  };
  while (std::getline(in, line)) {
    const std::string text = trim(line);
    if (text.empty()) {
      flush();
      continue;
    }
    Utterance u = tokenize(text);
    if (u.size() > max_utterance_tokens) u.resize(max_utterance_tokens);
    cur.utterances.push_back(std::move(u));
  }
  flush();
  return corpus;
}

std::vector<Dialogue> read_corpus(const std::filesystem::path& path, std::size_t max_utterance_tokens) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open corpus file " + path.string());
  return parse_corpus(in, max_utterance_tokens);
}

PreparedCorpus prepare_corpus(std::span<const Dialogue> corpus, ModelConfig& config) {
  config.validate();
  std::vector<std::string> reserved;
  if (config.context_utterances > 1) reserved.emplace_back(kSeparator);
  PreparedCorpus out;
  out.vocab = build_vocabulary(corpus, config.vocab_size, reserved);
  config.vocab_size = out.vocab.size();
  out.pairs = make_pairs(corpus, config.context_utterances);
  out.encoded = encode_pairs(out.pairs, out.vocab, config.seq_len);
  return out;
}

}  // namespace gca
