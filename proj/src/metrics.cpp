#include "mae/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <unordered_set>

namespace mae::metrics {

namespace {

constexpr double kEps = 1e-9;

std::vector<std::string> ngrams(const TokenSeq& tokens, int n) {
    std::vector<std::string> out;
    if (static_cast<int>(tokens.size()) < n) return out;
    for (size_t i = 0; i + static_cast<size_t>(n) <= tokens.size(); ++i) {
        std::string g = tokens[i];
        for (int j = 1; j < n; ++j) {
            g += ' ';
            g += tokens[i + static_cast<size_t>(j)];
        }
        out.push_back(std::move(g));
    }
    return out;
}

}  // namespace

NgramDist build_ngram_dist(const std::vector<TokenSeq>& responses, int n) {
    require(n == 1 || n == 2, "n-gram order must be 1 or 2");
    NgramDist dist;
    dist.n = n;
    for (const auto& r : responses) {
        for (auto& g : ngrams(r, n)) {
            ++dist.counts[g];
            ++dist.total;
        }
    }
    return dist;
}

double distinct_n(const std::vector<TokenSeq>& responses, int n) {
    NgramDist dist = build_ngram_dist(responses, n);
    require(dist.total > 0, "no " + std::to_string(n) + "-grams in response set");
    return static_cast<double>(dist.counts.size()) / static_cast<double>(dist.total);
}

double kl_n(const NgramDist& reference, const NgramDist& generated, bool reverse) {
    require(reference.total > 0 && generated.total > 0, "KL over empty distribution");
    const NgramDist& p = reverse ? generated : reference;
    const NgramDist& q = reverse ? reference : generated;

    std::unordered_set<std::string> support;
    for (const auto& [g, c] : p.counts) {
        (void)c;
        support.insert(g);
    }
    for (const auto& [g, c] : q.counts) {
        (void)c;
        support.insert(g);
    }

    auto n_support = static_cast<double>(support.size());
    double p_norm = static_cast<double>(p.total) + kEps * n_support;
    double q_norm = static_cast<double>(q.total) + kEps * n_support;

    double kl = 0.0;
    for (const auto& g : support) {
        auto pit = p.counts.find(g);
        auto qit = q.counts.find(g);
        double pp = ((pit != p.counts.end() ? static_cast<double>(pit->second) : 0.0) + kEps) / p_norm;
        double qq = ((qit != q.counts.end() ? static_cast<double>(qit->second) : 0.0) + kEps) / q_norm;
        kl += pp * std::log2(pp / qq);
    }
    return std::max(kl, 0.0);
}

double bleu(const std::vector<TokenSeq>& candidates, const std::vector<TokenSeq>& references) {
    require(candidates.size() == references.size(),
            "BLEU: candidate and reference counts differ");
    require(!candidates.empty(), "BLEU over an empty set");
    constexpr int kMaxOrder = 4;

    int64_t cand_len = 0, ref_len = 0;
    int64_t matched[kMaxOrder] = {0, 0, 0, 0};
    int64_t total[kMaxOrder] = {0, 0, 0, 0};

    for (size_t i = 0; i < candidates.size(); ++i) {
        cand_len += static_cast<int64_t>(candidates[i].size());
        ref_len += static_cast<int64_t>(references[i].size());
        for (int n = 1; n <= kMaxOrder; ++n) {
            auto cand_grams = ngrams(candidates[i], n);
            auto ref_grams = ngrams(references[i], n);
            std::unordered_map<std::string, int64_t> ref_counts;
            for (auto& g : ref_grams) ++ref_counts[g];
            std::unordered_map<std::string, int64_t> cand_counts;
            for (auto& g : cand_grams) ++cand_counts[g];
            for (const auto& [g, c] : cand_counts) {
                auto it = ref_counts.find(g);
                if (it != ref_counts.end()) matched[n - 1] += std::min(c, it->second);
            }
            total[n - 1] += static_cast<int64_t>(cand_grams.size());
        }
    }

    if (matched[0] == 0) return 0.0;
    double log_precision = 0.0;
    for (int n = 0; n < kMaxOrder; ++n) {
        if (total[n] == 0) continue;  // set too short for this order
        double p = matched[n] > 0
                       ? static_cast<double>(matched[n]) / static_cast<double>(total[n])
                       : kEps;
        log_precision += std::log(p) / kMaxOrder;
    }
    double bp = cand_len >= ref_len
                    ? 1.0
                    : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));
    return bp * std::exp(log_precision);
}

double coherence(const std::vector<std::pair<TokenSeq, TokenSeq>>& pairs,
                 const EmbeddingTable& emb, int64_t* skipped) {
    require(!pairs.empty(), "coherence over an empty set");
    double sum = 0.0;
    int64_t used = 0, skip = 0;
    for (const auto& [query, response] : pairs) {
        auto qv = emb.utterance_vector(query);
        auto rv = emb.utterance_vector(response);
        if (!qv || !rv) {
            ++skip;
            continue;
        }
        sum += cosine(*qv, *rv);
        ++used;
    }
    if (skip > 0)
        std::fprintf(stderr, "warning: coherence skipped %lld unembeddable pairs\n",
                     static_cast<long long>(skip));
    if (skipped) *skipped = skip;
    require(used > 0, "coherence: no embeddable pairs");
    return sum / static_cast<double>(used);
}

double word_entropy(const std::vector<TokenSeq>& responses, const CorpusStats& stats, int n) {
    require(n == 1 || n == 2, "word entropy order must be 1 or 2");
    const auto& counts = n == 1 ? stats.unigram_count : stats.bigram_count;
    int64_t total = n == 1 ? stats.unigram_total : stats.bigram_total;
    auto types = static_cast<double>(counts.size());

    double sum = 0.0;
    int64_t used = 0;
    for (const auto& r : responses) {
        auto grams = ngrams(r, n);
        if (grams.empty()) continue;
        double h = 0.0;
        for (const auto& g : grams) {
            auto it = counts.find(g);
            double p = it != counts.end()
                           ? static_cast<double>(it->second) / static_cast<double>(total)
                           : 1.0 / (static_cast<double>(total) + types + 1.0);
            h -= std::log2(p);
        }
        sum += h / static_cast<double>(grams.size());
        ++used;
    }
    return used > 0 ? sum / static_cast<double>(used) : 0.0;
}

double MetricTable::get(const std::string& name) const {
    for (const auto& [n, v] : rows)
        if (n == name) return v;
    fail("metric not found: " + name);
}

MetricTable evaluate_all(const std::vector<std::pair<std::string, std::string>>& generated,
                         const std::vector<std::pair<std::string, std::string>>& reference,
                         const CorpusStats& stats, const EmbeddingTable& emb) {
    require(generated.size() == reference.size(),
            "generated and reference sets have different sizes");
    std::vector<TokenSeq> gen_tokens, ref_tokens;
    std::vector<std::pair<TokenSeq, TokenSeq>> coh_pairs;
    for (size_t i = 0; i < generated.size(); ++i) {
        gen_tokens.push_back(tokenize(generated[i].second));
        ref_tokens.push_back(tokenize(reference[i].second));
        coh_pairs.emplace_back(tokenize(generated[i].first), gen_tokens.back());
    }

    MetricTable table;
    table.add("dist1", distinct_n(gen_tokens, 1));
    table.add("dist2", distinct_n(gen_tokens, 2));
    table.add("kl1", kl_n(build_ngram_dist(ref_tokens, 1), build_ngram_dist(gen_tokens, 1)));
    table.add("kl2", kl_n(build_ngram_dist(ref_tokens, 2), build_ngram_dist(gen_tokens, 2)));
    table.add("bleu", bleu(gen_tokens, ref_tokens));
    table.add("coherence", coherence(coh_pairs, emb));
    table.add("h1", word_entropy(gen_tokens, stats, 1));
    table.add("h2", word_entropy(gen_tokens, stats, 2));
    return table;
}

void write_metric_tsv(const std::string& path, const MetricTable& table) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    require(out.good(), "cannot write metrics: " + path);
    char buf[96];
    for (const auto& [name, value] : table.rows) {
        std::snprintf(buf, sizeof(buf), "%s\t%.6f\n", name.c_str(), value);
        out << buf;
    }
}

void write_metric_text(const std::string& path, const MetricTable& table) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    require(out.good(), "cannot write metrics: " + path);
    char buf[96];
    for (const auto& [name, value] : table.rows) {
        std::snprintf(buf, sizeof(buf), "%-12s %10.6f\n", name.c_str(), value);
        out << buf;
    }
}

MetricTable read_metric_tsv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open metrics: " + path);
    MetricTable table;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        size_t tab = line.find('\t');
        require(tab != std::string::npos, "bad metric line: " + line);
        table.add(line.substr(0, tab), std::stod(line.substr(tab + 1)));
    }
    return table;
}

}  // namespace mae::metrics
