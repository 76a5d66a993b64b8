// Per-sample quality scores: Consistency (key-phrase co-occurrence plus
// embedding cosine), Entropy_Src (query-distribution entropy per response),
// and Specificity (mean normalized inverse document frequency).
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mae/corpus.hpp"

namespace mae {

enum class ScoreMethod { Con, Ent, Spe };

std::string method_name(ScoreMethod m);
ScoreMethod method_from_name(const std::string& name);

struct SampleScore {
    int64_t sample_id = 0;
    ScoreMethod method = ScoreMethod::Con;
    double value = 0.0;
};

struct Phrase {
    std::string text;  // words joined by single spaces
    int words = 0;     // 1 for unigrams, 2 for bigrams
};

// Content-word unigrams and contiguous content-word bigrams, stopwords and
// punctuation removed, deduplicated in first-occurrence order.
std::vector<Phrase> extract_key_phrases(const std::vector<std::string>& utterance);

bool is_stopword(const std::string& token);

struct CorpusStats {
    int64_t pair_count = 0;  // R

    // Pair-level presence counts of key-phrases.
    std::unordered_map<std::string, int64_t> query_phrase_count;
    std::unordered_map<std::string, int64_t> response_phrase_count;
    // Key: query-phrase + '\x1f' + response-phrase.
    std::unordered_map<std::string, int64_t> joint_phrase_count;

    // Response string -> (query string -> occurrence count).
    std::unordered_map<std::string, std::unordered_map<std::string, int64_t>> response_queries;

    // Token -> number of distinct responses containing it (R_t).
    std::unordered_map<std::string, int64_t> response_doc_freq;
    double min_idf = 0.0;
    double max_idf = 0.0;

    // Response-side n-gram frequencies, used by the word-entropy metric.
    std::unordered_map<std::string, int64_t> unigram_count;
    std::unordered_map<std::string, int64_t> bigram_count;
    int64_t unigram_total = 0;
    int64_t bigram_total = 0;

    double p_query_phrase(const std::string& p) const;
    double p_response_phrase(const std::string& h) const;
    double p_joint(const std::string& p, const std::string& h) const;
    double idf(const std::string& token) const;  // log(R / R_t)
};

CorpusStats build_corpus_stats(const Corpus& train);

// Normalized pointwise mutual information in [-1, 1]; -1 when the phrases
// never co-occur, 1 when they only occur together.
double npmi(const Phrase& p, const Phrase& h, const CorpusStats& stats);

// S_C: sum over query/response key-phrase pairs of
// max(nPMI, 0) * |p| * |h| / (|q| * |r|).
double score_connectivity(const DialoguePair& pair, const CorpusStats& stats);

struct EmbeddingTable {
    int64_t dim = 0;
    std::vector<std::string> tokens;                // index -> token
    std::unordered_map<std::string, int> index;     // token -> index
    std::vector<double> vectors;                    // row-major [n, dim]

    bool has(const std::string& token) const { return index.count(token) > 0; }
    const double* vec(const std::string& token) const;
    // Mean of the vectors of the utterance's in-table tokens; empty optional
    // if none of the tokens are embedded.
    std::optional<std::vector<double>> utterance_vector(
        const std::vector<std::string>& tokens) const;
};

// Positive-PMI token co-occurrence matrix (window = whole utterance),
// factorized by truncated eigendecomposition.
EmbeddingTable build_embeddings(const Corpus& train, int64_t d_emb, uint64_t seed);

double cosine(const std::vector<double>& a, const std::vector<double>& b);

// S_R = max(cos(q_emb, r_emb), 0).
double score_relatedness(const DialoguePair& pair, const EmbeddingTable& emb);

struct ConsistencyWeights {
    double alpha = 1.0;  // weight on S_C
    double beta = 1.0;   // weight on S_R
};

// alpha = 1 / mean(S_C), beta = 1 / mean(S_R) over the training corpus, so
// both components have unit mean.
ConsistencyWeights compute_consistency_weights(const Corpus& train,
                                               const CorpusStats& stats,
                                               const EmbeddingTable& emb);

double score_consistency(const DialoguePair& pair, const CorpusStats& stats,
                         const EmbeddingTable& emb, double alpha, double beta);

// H_src(r|D) in bits over the empirical query distribution of the response.
double score_entropy_src(const DialoguePair& pair, const CorpusStats& stats);

// Mean NIDF of the response tokens, in [0, 1].
double score_specificity(const DialoguePair& pair, const CorpusStats& stats);

// Scores every sample of `corpus` against statistics built from `train`.
std::vector<SampleScore> score_corpus(ScoreMethod method, const Corpus& corpus,
                                      const CorpusStats& stats,
                                      const EmbeddingTable* emb,
                                      const ConsistencyWeights* weights);

}  // namespace mae
