#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "mae/corpus.hpp"

using namespace mae;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
    std::string path = "/tmp/mae_test_" + name;
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    out << content;
    return path;
}

}  // namespace

TEST_CASE("tokenize lowercases and splits punctuation") {
    CHECK(tokenize("Hello, world!") == std::vector<std::string>{"hello", ",", "world", "!"});
    CHECK(tokenize("a  b") == std::vector<std::string>{"a", "b"});
    CHECK(tokenize("").empty());
    CHECK(tokenize("don't") == std::vector<std::string>{"don", "'", "t"});
}

TEST_CASE("tokenize is idempotent on its own joined output") {
    for (const std::string& text :
         {"Hello, world!", "A  B...C", "what's up?", "x1,y2;z3"}) {
        auto once = tokenize(text);
        auto twice = tokenize(join_tokens(once));
        CHECK(once == twice);
    }
}

TEST_CASE("load_corpus keeps file order and assigns dense ids") {
    auto path = write_temp("corpus_ok.tsv", "hi there\tgood morning\na b\tc d\nx\ty z\n");
    Corpus corpus = load_corpus(path, Split::Train);
    REQUIRE(corpus.size() == 3);
    CHECK(corpus.pairs[0].id == 0);
    CHECK(corpus.pairs[1].id == 1);
    CHECK(corpus.pairs[2].id == 2);
    CHECK(corpus.pairs[0].raw_query == "hi there");
    CHECK(corpus.pairs[2].response == std::vector<std::string>{"y", "z"});
}

TEST_CASE("load_corpus rejects malformed input") {
    CHECK_THROWS_WITH_AS(load_corpus(write_temp("corpus_empty.tsv", ""), Split::Train),
                         doctest::Contains("empty corpus"), std::runtime_error);
    CHECK_THROWS_WITH_AS(load_corpus(write_temp("corpus_notab.tsv", "hello world\n"), Split::Train),
                         doctest::Contains(":1"), std::runtime_error);
    CHECK_THROWS_WITH_AS(
        load_corpus(write_temp("corpus_noresp.tsv", "a\tb\nhello\t\n"), Split::Train),
        doctest::Contains(":2"), std::runtime_error);
}

TEST_CASE("load_corpus is reproducible") {
    auto path = write_temp("corpus_repro.tsv", "q one\tr one\nq two\tr two\n");
    Corpus a = load_corpus(path, Split::Train);
    Corpus b = load_corpus(path, Split::Train);
    REQUIRE(a.size() == b.size());
    for (int64_t i = 0; i < a.size(); ++i) {
        CHECK(a.pairs[static_cast<size_t>(i)].query == b.pairs[static_cast<size_t>(i)].query);
        CHECK(a.pairs[static_cast<size_t>(i)].response ==
              b.pairs[static_cast<size_t>(i)].response);
    }
}

TEST_CASE("build_vocab ranks by frequency with lexicographic ties") {
    auto path = write_temp("vocab.tsv", "a a b\tc\n");
    Corpus corpus = load_corpus(path, Split::Train);
    Vocab vocab = build_vocab(corpus, 10);
    CHECK(vocab.size() == 7);  // 4 reserved + a, b, c
    CHECK(vocab.encode_token("a") == 4);
    // b and c tie at count 1; b sorts first.
    CHECK(vocab.encode_token("b") == 5);
    CHECK(vocab.encode_token("c") == 6);
}

TEST_CASE("build_vocab truncates and maps the rest to UNK") {
    auto path = write_temp("vocab_trunc.tsv", "a b c\td e\n");
    Corpus corpus = load_corpus(path, Split::Train);
    Vocab vocab = build_vocab(corpus, 6);
    CHECK(vocab.size() == 6);
    CHECK(vocab.encode_token("a") == 4);
    CHECK(vocab.encode_token("b") == 5);
    CHECK(vocab.encode_token("e") == Vocab::kUnk);
    CHECK_THROWS(build_vocab(corpus, 4));
}

TEST_CASE("encode then decode over in-vocab tokens is identity") {
    auto path = write_temp("vocab_rt.tsv", "the quick brown fox\tjumps over lazy dogs\n");
    Corpus corpus = load_corpus(path, Split::Train);
    Vocab vocab = build_vocab(corpus, 100);
    for (const auto& pair : corpus.pairs) {
        CHECK(vocab.decode(vocab.encode(pair.query)) == pair.query);
        CHECK(vocab.decode(vocab.encode(pair.response)) == pair.response);
    }
}

TEST_CASE("reserved ids are fixed") {
    CHECK(Vocab::kPad == 0);
    CHECK(Vocab::kBos == 1);
    CHECK(Vocab::kEos == 2);
    CHECK(Vocab::kUnk == 3);
}
