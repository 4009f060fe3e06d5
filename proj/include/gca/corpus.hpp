#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "gca/config.hpp"

namespace gca {

using TokenId = std::uint32_t;
using Utterance = std::vector<std::string>;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr TokenId kFirstWord = 4;

// Joins the utterances of a multi-utterance context.
inline constexpr std::string_view kSeparator = "<sep>";

// Lowercases, splits on whitespace, and splits . , ! ? ' into standalone tokens.
Utterance tokenize(std::string_view text);

// Inverse-ish of tokenize for display: space-joined, punctuation attached.
std::string detokenize(std::span<const std::string> tokens);

// Bidirectional token/index map. Indices 0-3 are PAD, BOS, EOS, UNK.
class Vocabulary {
 public:
  Vocabulary();

  // Builds from an index-ordered token list whose first four entries are the
  // reserved tokens. Throws FormatError on duplicates or misplaced reserved tokens.
  static Vocabulary from_index_list(std::vector<std::string> tokens);

  TokenId id(std::string_view token) const;  // UNK on miss
  std::optional<TokenId> find(std::string_view token) const;
  const std::string& token(TokenId id) const;
  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

  // One token per line; line number is the index.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

struct Dialogue {
  std::vector<Utterance> utterances;
};

// `context` holds up to N_u utterances, oldest first.
struct DialoguePair {
  std::vector<Utterance> context;
  Utterance answer;
};

// Fixed-length index vector; non-PAD entries form a prefix of length effective_length.
struct EncodedSequence {
  std::vector<TokenId> ids;
  std::size_t effective_length = 0;

  std::span<const TokenId> tokens() const { return {ids.data(), effective_length}; }
  bool operator==(const EncodedSequence&) const = default;
};

struct EncodedPair {
  EncodedSequence context;
  EncodedSequence answer;
  bool operator==(const EncodedPair&) const = default;
};

// Ranks tokens by descending frequency, ties lexicographic, and keeps the
// first vocab_size - 4 after the reserved entries. `always_include` tokens
// (e.g. the context separator) are installed first, ahead of the ranking.
Vocabulary build_vocabulary(std::span<const Dialogue> corpus, std::size_t vocab_size,
                            std::span<const std::string> always_include = {});

EncodedSequence encode_pad(std::span<const std::string> tokens, const Vocabulary& vocab, std::size_t seq_len,
                           bool with_eos);
// Raw ids (already vocabulary indices) truncated and tail-padded.
EncodedSequence encode_ids(std::span<const TokenId> ids, std::size_t seq_len);
Utterance decode(const EncodedSequence& seq, const Vocabulary& vocab, bool drop_eos = true);

// Contexts are the utterances concatenated with kSeparator between them.
Utterance join_context(std::span<const Utterance> context);

std::vector<DialoguePair> make_pairs(std::span<const Dialogue> corpus, std::size_t context_utterances);
std::vector<EncodedPair> encode_pairs(std::span<const DialoguePair> pairs, const Vocabulary& vocab,
                                      std::size_t seq_len);

// Corpus text: one utterance per line, blank lines between dialogues.
// Utterances longer than max_utterance_tokens are truncated.
std::vector<Dialogue> parse_corpus(std::istream& in, std::size_t max_utterance_tokens);
std::vector<Dialogue> read_corpus(const std::filesystem::path& path, std::size_t max_utterance_tokens);

struct PreparedCorpus {
  Vocabulary vocab;
  std::vector<DialoguePair> pairs;
  std::vector<EncodedPair> encoded;
};

// Vocabulary (with the separator when N_u > 1), pairs and encodings in one
// go. Shrinks config.vocab_size to the size of the built vocabulary.
PreparedCorpus prepare_corpus(std::span<const Dialogue> corpus, ModelConfig& config);

}  // namespace gca
