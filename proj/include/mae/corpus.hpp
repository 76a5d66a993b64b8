// Dialogue corpus loading, tokenization, vocabulary.
#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "mae/common.hpp"

namespace mae {

enum class Split { Train, Valid, Test };

std::string split_name(Split s);

struct DialoguePair {
    int64_t id = 0;
    std::vector<std::string> query;     // tokenized
    std::vector<std::string> response;  // tokenized
    std::string raw_query;
    std::string raw_response;
};

struct Corpus {
    std::vector<DialoguePair> pairs;
    Split split = Split::Train;

    int64_t size() const { return static_cast<int64_t>(pairs.size()); }
};

// Lowercase, split punctuation into single-character tokens, collapse
// whitespace. Idempotent on its own space-joined output.
std::vector<std::string> tokenize(const std::string& text);

std::string join_tokens(const std::vector<std::string>& tokens);

// One "query<TAB>response" pair per line, UTF-8, LF endings.
Corpus load_corpus(const std::string& path, Split split);

class Vocab {
public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kUnk = 3;
    static constexpr int kNumReserved = 4;

    int64_t size() const { return static_cast<int64_t>(id_to_token_.size()); }

    int encode_token(const std::string& token) const;
    std::vector<int> encode(const std::vector<std::string>& tokens) const;
    const std::string& token(int id) const;
    std::vector<std::string> decode(const std::vector<int>& ids) const;

    friend Vocab build_vocab(const Corpus& corpus, int64_t max_size);

private:
    std::unordered_map<std::string, int> token_to_id_;
    std::vector<std::string> id_to_token_;
};

// Tokens ranked by frequency (ties: lexicographically smaller first),
// truncated to max_size entries including the 4 reserved ids.
Vocab build_vocab(const Corpus& corpus, int64_t max_size);

}  // namespace mae
