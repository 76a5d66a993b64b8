#include "mae/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

namespace mae {

std::string split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Valid: return "valid";
        case Split::Test: return "test";
    }
    return "?";
}

namespace {

bool is_word_char(unsigned char c) {
    return std::isalnum(c) != 0 || c >= 0x80;  // keep multi-byte UTF-8 intact
}

}  // namespace

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            if (!cur.empty()) { out.push_back(cur); cur.clear(); }
        } else if (is_word_char(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else {
            if (!cur.empty()) { out.push_back(cur); cur.clear(); }
            out.emplace_back(1, static_cast<char>(c));
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
    std::string s;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (i) s.push_back(' ');
        s += tokens[i];
    }
    return s;
}

Corpus load_corpus(const std::string& path, Split split) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open corpus file: " + path);

    Corpus corpus;
    corpus.split = split;
    std::string line;
    int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        size_t tab = line.find('\t');
        require(tab != std::string::npos,
                path + ":" + std::to_string(line_no) + ": missing tab separator");
        DialoguePair pair;
        pair.raw_query = line.substr(0, tab);
        pair.raw_response = line.substr(tab + 1);
        pair.query = tokenize(pair.raw_query);
        pair.response = tokenize(pair.raw_response);
        require(!pair.query.empty(),
                path + ":" + std::to_string(line_no) + ": empty query");
        require(!pair.response.empty(),
                path + ":" + std::to_string(line_no) + ": empty response");
        pair.id = static_cast<int64_t>(corpus.pairs.size());
        corpus.pairs.push_back(std::move(pair));
    }
    require(!corpus.pairs.empty(), "empty corpus: " + path);
    return corpus;
}

int Vocab::encode_token(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnk : it->second;
}

std::vector<int> Vocab::encode(const std::vector<std::string>& tokens) const {
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(encode_token(t));
    return ids;
}

const std::string& Vocab::token(int id) const {
    require(id >= 0 && id < size(), "token id out of range: " + std::to_string(id));
    return id_to_token_[static_cast<size_t>(id)];
}

std::vector<std::string> Vocab::decode(const std::vector<int>& ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (int id : ids) out.push_back(token(id));
    return out;
}

Vocab build_vocab(const Corpus& corpus, int64_t max_size) {
    require(max_size >= Vocab::kNumReserved + 1,
            "vocab max_size must be at least 5 (reserved tokens plus content)");

    std::unordered_map<std::string, int64_t> counts;
    for (const auto& pair : corpus.pairs) {
        for (const auto& t : pair.query) ++counts[t];
        for (const auto& t : pair.response) ++counts[t];
    }
    std::vector<std::pair<std::string, int64_t>> ranked(counts.begin(), counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    Vocab vocab;
    vocab.id_to_token_ = {"<pad>", "<bos>", "<eos>", "<unk>"};
    for (const auto& [token, count] : ranked) {
        (void)count;
        if (vocab.size() >= max_size) break;
        vocab.token_to_id_[token] = static_cast<int>(vocab.id_to_token_.size());
        vocab.id_to_token_.push_back(token);
    }
    return vocab;
}

}  // namespace mae
