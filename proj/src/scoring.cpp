#include "mae/scoring.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace mae {

std::string method_name(ScoreMethod m) {
    switch (m) {
        case ScoreMethod::Con: return "con";
        case ScoreMethod::Ent: return "ent";
        case ScoreMethod::Spe: return "spe";
    }
    return "?";
}

ScoreMethod method_from_name(const std::string& name) {
    if (name == "con") return ScoreMethod::Con;
    if (name == "ent") return ScoreMethod::Ent;
    if (name == "spe") return ScoreMethod::Spe;
    fail("unknown scoring method: " + name + " (expected con|ent|spe)");
}

namespace {

const std::unordered_set<std::string>& stopwords() {
    static const std::unordered_set<std::string> kStopwords = {
        "a", "about", "above", "after", "again", "all", "am", "an", "and",
        "any", "are", "as", "at", "be", "because", "been", "before", "being",
        "below", "between", "both", "but", "by", "can", "could", "did", "do",
        "does", "doing", "down", "during", "each", "few", "for", "from",
        "further", "had", "has", "have", "having", "he", "her", "here",
        "hers", "him", "his", "how", "i", "if", "in", "into", "is", "it",
        "its", "just", "me", "more", "most", "my", "no", "nor", "not", "now",
        "of", "off", "on", "once", "only", "or", "other", "our", "ours",
        "out", "over", "own", "s", "same", "she", "should", "so", "some",
        "such", "t", "than", "that", "the", "their", "theirs", "them",
        "then", "there", "these", "they", "this", "those", "through", "to",
        "too", "under", "until", "up", "very", "was", "we", "were", "what",
        "when", "where", "which", "while", "who", "whom", "why", "will",
        "with", "would", "you", "your", "yours",
    };
    return kStopwords;
}

bool is_punct_token(const std::string& token) {
    for (unsigned char c : token) {
        if (std::isalnum(c) || c >= 0x80) return false;
    }
    return true;
}

std::string joint_key(const std::string& p, const std::string& h) {
    std::string k;
    k.reserve(p.size() + h.size() + 1);
    k += p;
    k.push_back('\x1f');
    k += h;
    return k;
}

}  // namespace

bool is_stopword(const std::string& token) {
    return stopwords().count(token) > 0 || is_punct_token(token);
}

std::vector<Phrase> extract_key_phrases(const std::vector<std::string>& utterance) {
    std::vector<std::string> content;
    content.reserve(utterance.size());
    for (const auto& t : utterance) {
        if (!is_stopword(t)) content.push_back(t);
    }
    std::vector<Phrase> phrases;
    std::unordered_set<std::string> seen;
    for (const auto& w : content) {
        if (seen.insert(w).second) phrases.push_back({w, 1});
    }
    for (size_t i = 0; i + 1 < content.size(); ++i) {
        std::string bigram = content[i] + " " + content[i + 1];
        if (seen.insert(bigram).second) phrases.push_back({std::move(bigram), 2});
    }
    return phrases;
}

double CorpusStats::p_query_phrase(const std::string& p) const {
    auto it = query_phrase_count.find(p);
    return it == query_phrase_count.end()
               ? 0.0
               : static_cast<double>(it->second) / static_cast<double>(pair_count);
}

double CorpusStats::p_response_phrase(const std::string& h) const {
    auto it = response_phrase_count.find(h);
    return it == response_phrase_count.end()
               ? 0.0
               : static_cast<double>(it->second) / static_cast<double>(pair_count);
}

double CorpusStats::p_joint(const std::string& p, const std::string& h) const {
    auto it = joint_phrase_count.find(joint_key(p, h));
    return it == joint_phrase_count.end()
               ? 0.0
               : static_cast<double>(it->second) / static_cast<double>(pair_count);
}

double CorpusStats::idf(const std::string& token) const {
    auto it = response_doc_freq.find(token);
    require(it != response_doc_freq.end(), "token has no document frequency: " + token);
    return std::log(static_cast<double>(pair_count) / static_cast<double>(it->second));
}

CorpusStats build_corpus_stats(const Corpus& train) {
    require(!train.pairs.empty(), "cannot build statistics from an empty corpus");
    CorpusStats stats;
    stats.pair_count = train.size();

    for (const auto& pair : train.pairs) {
        auto q_phrases = extract_key_phrases(pair.query);
        auto r_phrases = extract_key_phrases(pair.response);
        for (const auto& p : q_phrases) ++stats.query_phrase_count[p.text];
        for (const auto& h : r_phrases) ++stats.response_phrase_count[h.text];
        for (const auto& p : q_phrases) {
            for (const auto& h : r_phrases) {
                ++stats.joint_phrase_count[joint_key(p.text, h.text)];
            }
        }

        ++stats.response_queries[join_tokens(pair.response)][join_tokens(pair.query)];

        std::unordered_set<std::string> distinct(pair.response.begin(), pair.response.end());
        for (const auto& t : distinct) ++stats.response_doc_freq[t];

        for (const auto& t : pair.response) {
            ++stats.unigram_count[t];
            ++stats.unigram_total;
        }
        for (size_t i = 0; i + 1 < pair.response.size(); ++i) {
            ++stats.bigram_count[pair.response[i] + " " + pair.response[i + 1]];
            ++stats.bigram_total;
        }
    }

    bool first = true;
    for (const auto& [token, rt] : stats.response_doc_freq) {
        (void)token;
        double idf = std::log(static_cast<double>(stats.pair_count) / static_cast<double>(rt));
        if (first || idf < stats.min_idf) stats.min_idf = idf;
        if (first || idf > stats.max_idf) stats.max_idf = idf;
        first = false;
    }
    return stats;
}

double npmi(const Phrase& p, const Phrase& h, const CorpusStats& stats) {
    double pp = stats.p_query_phrase(p.text);
    double ph = stats.p_response_phrase(h.text);
    require(pp > 0.0 && ph > 0.0, "phrase has zero marginal: " +
                                      (pp > 0.0 ? h.text : p.text));
    double pj = stats.p_joint(p.text, h.text);
    if (pj == 0.0) return -1.0;
    if (pj >= 1.0) return 1.0;  // degenerate: phrases present in every pair
    return std::log(pj / (pp * ph)) / (-std::log(pj));
}

double score_connectivity(const DialoguePair& pair, const CorpusStats& stats) {
    require(!pair.query.empty() && !pair.response.empty(),
            "score_connectivity requires non-empty query and response");
    auto q_phrases = extract_key_phrases(pair.query);
    auto r_phrases = extract_key_phrases(pair.response);
    double q_len = static_cast<double>(pair.query.size());
    double r_len = static_cast<double>(pair.response.size());
    double sum = 0.0;
    for (const auto& p : q_phrases) {
        if (stats.p_query_phrase(p.text) == 0.0) continue;  // unseen at scoring time
        for (const auto& h : r_phrases) {
            if (stats.p_response_phrase(h.text) == 0.0) continue;
            double v = npmi(p, h, stats);
            if (v <= 0.0) continue;
            sum += v * p.words * h.words / (q_len * r_len);
        }
    }
    return sum;
}

const double* EmbeddingTable::vec(const std::string& token) const {
    auto it = index.find(token);
    require(it != index.end(), "token has no embedding: " + token);
    return vectors.data() + static_cast<size_t>(it->second) * static_cast<size_t>(dim);
}

std::optional<std::vector<double>> EmbeddingTable::utterance_vector(
    const std::vector<std::string>& toks) const {
    std::vector<double> mean(static_cast<size_t>(dim), 0.0);
    int64_t n = 0;
    for (const auto& t : toks) {
        auto it = index.find(t);
        if (it == index.end()) continue;
        const double* v = vectors.data() + static_cast<size_t>(it->second) * static_cast<size_t>(dim);
        for (int64_t d = 0; d < dim; ++d) mean[static_cast<size_t>(d)] += v[d];
        ++n;
    }
    if (n == 0) return std::nullopt;
    for (auto& x : mean) x /= static_cast<double>(n);
    return mean;
}

EmbeddingTable build_embeddings(const Corpus& train, int64_t d_emb, uint64_t seed) {
    (void)seed;  // the dense eigensolver below is deterministic on its own
    EmbeddingTable table;

    // Token indexing in first-occurrence order keeps the result independent
    // of hash-map iteration order.
    for (const auto& pair : train.pairs) {
        for (const auto* utt : {&pair.query, &pair.response}) {
            for (const auto& t : *utt) {
                if (table.index.emplace(t, static_cast<int>(table.tokens.size())).second) {
                    table.tokens.push_back(t);
                }
            }
        }
    }
    const int64_t n = static_cast<int64_t>(table.tokens.size());
    require(d_emb >= 1, "embedding dimension must be positive");
    require(d_emb <= n, "embedding dimension " + std::to_string(d_emb) +
                            " exceeds distinct token count " + std::to_string(n));

    // Co-occurrence over distinct position pairs within one utterance.
    Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(n, n);
    for (const auto& pair : train.pairs) {
        for (const auto* utt : {&pair.query, &pair.response}) {
            const auto& toks = *utt;
            for (size_t i = 0; i < toks.size(); ++i) {
                int a = table.index.at(toks[i]);
                for (size_t j = i + 1; j < toks.size(); ++j) {
                    int b = table.index.at(toks[j]);
                    counts(a, b) += 1.0;
                    counts(b, a) += 1.0;
                }
            }
        }
    }

    Eigen::VectorXd row_sums = counts.rowwise().sum();
    double total = row_sums.sum();
    require(total > 0.0, "corpus has no token co-occurrences");

    Eigen::MatrixXd ppmi = Eigen::MatrixXd::Zero(n, n);
    for (int64_t a = 0; a < n; ++a) {
        for (int64_t b = 0; b < n; ++b) {
            double c = counts(a, b);
            if (c <= 0.0 || row_sums(a) <= 0.0 || row_sums(b) <= 0.0) continue;
            double pmi = std::log(c * total / (row_sums(a) * row_sums(b)));
            if (pmi > 0.0) ppmi(a, b) = pmi;
        }
    }

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(ppmi);
    require(solver.info() == Eigen::Success, "eigendecomposition failed");
    // Eigenvalues come back ascending; take the top d_emb.
    const auto& evals = solver.eigenvalues();
    const auto& evecs = solver.eigenvectors();

    table.dim = d_emb;
    table.vectors.assign(static_cast<size_t>(n * d_emb), 0.0);
    for (int64_t k = 0; k < d_emb; ++k) {
        int64_t col = n - 1 - k;
        double lam = std::max(evals(col), 0.0);
        double scale = std::sqrt(lam);
        // Fix the eigenvector sign: largest-magnitude component positive.
        int64_t arg = 0;
        double best = 0.0;
        for (int64_t a = 0; a < n; ++a) {
            if (std::abs(evecs(a, col)) > best) {
                best = std::abs(evecs(a, col));
                arg = a;
            }
        }
        double sign = evecs(arg, col) >= 0.0 ? 1.0 : -1.0;
        for (int64_t a = 0; a < n; ++a) {
            table.vectors[static_cast<size_t>(a * d_emb + k)] = sign * scale * evecs(a, col);
        }
    }
    return table;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    require(a.size() == b.size(), "cosine: dimension mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

double score_relatedness(const DialoguePair& pair, const EmbeddingTable& emb) {
    auto q = emb.utterance_vector(pair.query);
    auto r = emb.utterance_vector(pair.response);
    require(q.has_value() && r.has_value(), "no embeddable tokens in utterance");
    return std::max(cosine(*q, *r), 0.0);
}

ConsistencyWeights compute_consistency_weights(const Corpus& train,
                                               const CorpusStats& stats,
                                               const EmbeddingTable& emb) {
    double sum_c = 0.0, sum_r = 0.0;
    for (const auto& pair : train.pairs) {
        sum_c += score_connectivity(pair, stats);
        sum_r += score_relatedness(pair, emb);
    }
    double mean_c = sum_c / static_cast<double>(train.size());
    double mean_r = sum_r / static_cast<double>(train.size());
    require(mean_c > 0.0, "mean connectivity is zero; cannot normalize alpha");
    require(mean_r > 0.0, "mean relatedness is zero; cannot normalize beta");
    return {1.0 / mean_c, 1.0 / mean_r};
}

double score_consistency(const DialoguePair& pair, const CorpusStats& stats,
                         const EmbeddingTable& emb, double alpha, double beta) {
    require(alpha > 0.0 && beta > 0.0, "consistency weights must be positive");
    return alpha * score_connectivity(pair, stats) + beta * score_relatedness(pair, emb);
}

double score_entropy_src(const DialoguePair& pair, const CorpusStats& stats) {
    auto it = stats.response_queries.find(join_tokens(pair.response));
    require(it != stats.response_queries.end(),
            "response not present in training statistics: " + pair.raw_response);
    int64_t total = 0;
    for (const auto& [query, count] : it->second) {
        (void)query;
        total += count;
    }
    double h = 0.0;
    for (const auto& [query, count] : it->second) {
        (void)query;
        double p = static_cast<double>(count) / static_cast<double>(total);
        h -= p * std::log2(p);
    }
    return std::max(h, 0.0);  // avoid -0.0 from single-query responses
}

double score_specificity(const DialoguePair& pair, const CorpusStats& stats) {
    require(!pair.response.empty(), "specificity of an empty response is undefined");
    double range = stats.max_idf - stats.min_idf;
    require(range > 0.0, "NIDF undefined: all tokens have identical document frequency");
    double sum = 0.0;
    for (const auto& t : pair.response) {
        sum += (stats.idf(t) - stats.min_idf) / range;
    }
    return sum / static_cast<double>(pair.response.size());
}

std::vector<SampleScore> score_corpus(ScoreMethod method, const Corpus& corpus,
                                      const CorpusStats& stats,
                                      const EmbeddingTable* emb,
                                      const ConsistencyWeights* weights) {
    std::vector<SampleScore> scores;
    scores.reserve(corpus.pairs.size());
    for (const auto& pair : corpus.pairs) {
        double v = 0.0;
        switch (method) {
            case ScoreMethod::Con:
                require(emb != nullptr && weights != nullptr,
                        "consistency scoring needs embeddings and weights");
                v = score_consistency(pair, stats, *emb, weights->alpha, weights->beta);
                break;
            case ScoreMethod::Ent:
                v = score_entropy_src(pair, stats);
                break;
            case ScoreMethod::Spe:
                v = score_specificity(pair, stats);
                break;
        }
        scores.push_back({pair.id, method, v});
    }
    return scores;
}

}  // namespace mae
