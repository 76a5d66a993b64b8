// Automatic response-quality metrics: Dist-{1,2}, KL-{1,2}, BLEU, Coherence,
// and word entropy H-{1,2}.
#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "mae/scoring.hpp"

namespace mae::metrics {

using TokenSeq = std::vector<std::string>;

struct NgramDist {
    int n = 1;
    std::unordered_map<std::string, int64_t> counts;
    int64_t total = 0;
};

NgramDist build_ngram_dist(const std::vector<TokenSeq>& responses, int n);

// Distinct n-grams over the whole response set divided by total n-grams.
double distinct_n(const std::vector<TokenSeq>& responses, int n);

// KL(reference || generated) in bits, over the union support with add-eps
// smoothing (eps = 1e-9, renormalized). Set reverse to flip the direction.
double kl_n(const NgramDist& reference, const NgramDist& generated, bool reverse = false);

// Corpus-level BLEU-4, one reference per candidate, brevity penalty, and
// eps-smoothed precisions when a higher order has no matches. Zero unigram
// overlap gives exactly 0.
double bleu(const std::vector<TokenSeq>& candidates, const std::vector<TokenSeq>& references);

// Mean cosine between query and generated-response utterance vectors,
// unclamped. Pairs with no embeddable tokens are skipped and counted.
double coherence(const std::vector<std::pair<TokenSeq, TokenSeq>>& pairs,
                 const EmbeddingTable& emb, int64_t* skipped = nullptr);

// Mean over responses of H(U) = -(1/|U|) sum log2 p(w) with p from training
// n-gram frequencies (unseen n-grams add-one smoothed).
double word_entropy(const std::vector<TokenSeq>& responses, const CorpusStats& stats, int n);

struct MetricTable {
    std::vector<std::pair<std::string, double>> rows;

    void add(const std::string& name, double value) { rows.emplace_back(name, value); }
    double get(const std::string& name) const;
};

// Every metric in one pass: generated vs reference responses, query context
// for coherence, training statistics for H.
MetricTable evaluate_all(const std::vector<std::pair<std::string, std::string>>& generated,
                         const std::vector<std::pair<std::string, std::string>>& reference,
                         const CorpusStats& stats, const EmbeddingTable& emb);

void write_metric_tsv(const std::string& path, const MetricTable& table);
void write_metric_text(const std::string& path, const MetricTable& table);
MetricTable read_metric_tsv(const std::string& path);

}  // namespace mae::metrics
