#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"

#include "fixtures.hpp"
#include "gca/errors.hpp"
#include "gca/weights.hpp"

using namespace gca;

namespace {

Dialogue dialogue(std::initializer_list<const char*> lines) {
  Dialogue d;
  for (const char* l : lines) d.utterances.push_back(tokenize(l));
  return d;
}

std::filesystem::path temp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "gca_test_corpus";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("tokenize") {
  CHECK(tokenize("Hello, world!") == Utterance{"hello", ",", "world", "!"});
  CHECK(tokenize("").empty());
  CHECK(tokenize("don't") == Utterance{"don", "'", "t"});
  CHECK(tokenize("  A  b?\tC.") == Utterance{"a", "b", "?", "c", "."});
  CHECK(detokenize(tokenize("Hello, world!")) == "hello, world!");
}

TEST_CASE("build_vocabulary") {
  SUBCASE("frequency order") {
    const std::vector<Dialogue> c{dialogue({"a a b", "a"})};
    const Vocabulary v = build_vocabulary(c, 6);
    CHECK(v.tokens() == std::vector<std::string>{"<pad>", "<bos>", "<eos>", "<unk>", "a", "b"});
  }
  SUBCASE("lexicographic tie-break") {
    const std::vector<Dialogue> c{dialogue({"y x", "y x"})};
    const Vocabulary v = build_vocabulary(c, 10);
    CHECK(v.id("x") == 4);
    CHECK(v.id("y") == 5);
  }
  SUBCASE("overflow tokens become UNK") {
    const std::vector<Dialogue> c{dialogue({"a a a b b c"})};
    const Vocabulary v = build_vocabulary(c, 5);
    CHECK(v.size() == 5);
    CHECK(v.id("a") == 4);
    CHECK(v.id("b") == kUnk);
    const auto e = encode_pad(tokenize("c a b"), v, 4, false);
    CHECK(e.ids == std::vector<TokenId>{kUnk, 4, kUnk, kPad});
  }
  SUBCASE("reserved spellings in the text never take a reserved index twice") {
    const std::vector<Dialogue> c{dialogue({"<eos> <eos> hi"})};
    const Vocabulary v = build_vocabulary(c, 10);
    CHECK(v.id("<eos>") == kEos);
    CHECK(v.id("hi") == 4);
    CHECK(v.size() == 5);
  }
  SUBCASE("separator installed first when requested") {
    const std::vector<Dialogue> c{dialogue({"b b", "a"})};
    const std::string sep(kSeparator);
    const Vocabulary v = build_vocabulary(c, 10, std::span<const std::string>(&sep, 1));
    CHECK(v.id(sep) == 4);
    CHECK(v.id("b") == 5);
  }
  SUBCASE("errors") {
    const std::vector<Dialogue> c{dialogue({"a"})};
    CHECK_THROWS_AS(build_vocabulary(c, 4), ConfigError);
    CHECK_THROWS_AS(build_vocabulary(std::vector<Dialogue>{}, 10), ConfigError);
  }
  SUBCASE("deterministic") {
    const auto toy = read_corpus(fixtures::toy_corpus_path(), 10);
    CHECK(build_vocabulary(toy, 150) == build_vocabulary(toy, 150));
  }
}

TEST_CASE("vocabulary lookups and persistence") {
  const Vocabulary v = build_vocabulary(std::vector<Dialogue>{dialogue({"hi there"})}, 10);
  CHECK(v.id("nope") == kUnk);
  CHECK_FALSE(v.find("nope").has_value());
  CHECK(v.token(kBos) == "<bos>");
  CHECK_THROWS_AS(v.token(99), DomainError);
  const auto path = temp_file("vocab.txt");
  v.save(path);
  CHECK(Vocabulary::load(path) == v);
  CHECK_THROWS_AS(Vocabulary::from_index_list({"<pad>", "<bos>", "<eos>", "<unk>", "a", "a"}), FormatError);
  CHECK_THROWS_AS(Vocabulary::from_index_list({"<bos>", "<pad>", "<eos>", "<unk>"}), FormatError);
  CHECK_THROWS_AS(Vocabulary::load(temp_file("missing_vocab.txt")), FormatError);
}

TEST_CASE("encode_pad") {
  Vocabulary v = Vocabulary::from_index_list({"<pad>", "<bos>", "<eos>", "<unk>", "w4", "w5", "w6", "w7", "w8", "w9"});
  auto e = encode_pad(Utterance{"w5", "w9"}, v, 4, false);
  CHECK(e.ids == std::vector<TokenId>{5, 9, 0, 0});
  CHECK(e.effective_length == 2);
  e = encode_pad(Utterance{}, v, 3, true);
  CHECK(e.ids == std::vector<TokenId>{2, 0, 0});
  CHECK(e.effective_length == 1);
  e = encode_pad(Utterance{"w4", "w5", "w6", "w7", "w8", "w9"}, v, 4, false);
  CHECK(e.ids == std::vector<TokenId>{4, 5, 6, 7});
  CHECK(e.effective_length == 4);
  // Round trip through decode for in-vocabulary input shorter than s_s.
  const Utterance u{"w6", "w4", "w8"};
  CHECK(decode(encode_pad(u, v, 6, true), v) == u);
  CHECK(decode(encode_pad(u, v, 6, false), v) == u);
}

TEST_CASE("make_pairs") {
  const std::vector<Dialogue> c{dialogue({"u1", "u2", "u3"})};
  const auto pairs = make_pairs(c, 2);
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0].context == std::vector<Utterance>{{"u1"}});
  CHECK(pairs[0].answer == Utterance{"u2"});
  CHECK(pairs[1].context == std::vector<Utterance>{{"u1"}, {"u2"}});
  CHECK(pairs[1].answer == Utterance{"u3"});
  CHECK(make_pairs(std::vector<Dialogue>{dialogue({"alone"})}, 3).empty());
  for (const auto& p : make_pairs(std::vector<Dialogue>{dialogue({"a", "b", "c", "d"})}, 1)) CHECK(p.context.size() == 1);
  CHECK_THROWS_AS(make_pairs(c, 0), ConfigError);

  const auto toy = read_corpus(fixtures::toy_corpus_path(), 10);
  std::size_t expected = 0;
  for (const auto& d : toy) expected += d.utterances.size() > 0 ? d.utterances.size() - 1 : 0;
  CHECK(make_pairs(toy, 2).size() == expected);
  CHECK(join_context(pairs[1].context) == Utterance{"u1", std::string(kSeparator), "u2"});
}

TEST_CASE("corpus parsing") {
  std::istringstream in("Hi there!\nHello.\n\n\nHow are you doing today my friend?\nFine\n");
  const auto d = parse_corpus(in, 4);
  REQUIRE(d.size() == 2);
  CHECK(d[0].utterances.size() == 2);
  CHECK(d[1].utterances[0] == Utterance{"how", "are", "you", "doing"});
  CHECK_THROWS_AS(read_corpus(temp_file("missing_corpus.txt"), 10), FormatError);

  SUBCASE("the bundled corpus fits the desk config") {
    const auto toy = fixtures::load_toy();
    CHECK(toy.dialogues.size() == 10);
    CHECK(toy.config.vocab_size <= 150);
    for (const auto& p : toy.corpus.encoded) {
      // No truncation of contexts or answers.
      CHECK(p.context.effective_length < toy.config.seq_len);
      CHECK(p.answer.ids[p.answer.effective_length - 1] == kEos);
    }
  }
}

TEST_CASE("pretrained vectors") {
  Vocabulary v = Vocabulary::from_index_list({"<pad>", "<bos>", "<eos>", "<unk>", "cat", "dog"});
  const auto path = temp_file("vectors.txt");
  {
    std::ofstream out(path);
    out << "cat 0.5 -1 2\nzebra 9 9 9\n<pad> 7 7 7\n";
  }
  const Tensor e = load_pretrained_vectors(path, v, 3, 42);
  CHECK(e.rows() == 3);
  CHECK(e.cols() == 6);
  CHECK(e.at(0, 4) == 0.5);
  CHECK(e.at(1, 4) == -1.0);
  CHECK(e.at(2, 4) == 2.0);
  for (std::size_t r = 0; r < 3; ++r) {
    CHECK(e.at(r, kPad) == 0.0);
    CHECK(std::abs(e.at(r, 5)) <= 0.05);
  }
  CHECK(load_pretrained_vectors(path, v, 3, 42).bit_equal(e));
  CHECK_FALSE(load_pretrained_vectors(path, v, 3, 43).bit_equal(e));

  {
    std::ofstream out(path);
    out << "cat 0.5 -1 2\ndog 1 2\n";
  }
  try {
    load_pretrained_vectors(path, v, 3, 42);
    FAIL("expected a FormatError");
  } catch (const FormatError& err) {
    CHECK(std::string(err.what()).find("line 2") != std::string::npos);
  }
}
