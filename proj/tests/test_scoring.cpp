#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "mae/scoring.hpp"

using namespace mae;

namespace {

Corpus make_corpus(const std::vector<std::pair<std::string, std::string>>& rows) {
    Corpus corpus;
    for (const auto& [q, r] : rows) {
        DialoguePair pair;
        pair.id = static_cast<int64_t>(corpus.pairs.size());
        pair.raw_query = q;
        pair.raw_response = r;
        pair.query = tokenize(q);
        pair.response = tokenize(r);
        corpus.pairs.push_back(std::move(pair));
    }
    return corpus;
}

// The corpus behind the hand-verifiable oracle values: one response shared
// by three pairs, one perfectly co-occurring single-word pair, and one pair
// with no content words at all.
Corpus five_pair_corpus() {
    return make_corpus({
        {"hello there", "ok"},
        {"hello there", "ok"},
        {"good morning", "ok"},
        {"zig", "zag"},
        {"the of", "is a"},
    });
}

// Independent brute-force recount of the phrase tables: its own phrase
// extraction (set-based dedup), its own presence counting.
struct BruteTables {
    std::map<std::string, int64_t> q_phrase, r_phrase;
    std::map<std::pair<std::string, std::string>, int64_t> joint;
    int64_t pairs = 0;
};

std::set<std::string> brute_phrases(const std::vector<std::string>& utterance) {
    std::vector<std::string> content;
    for (const auto& t : utterance)
        if (!is_stopword(t)) content.push_back(t);
    std::set<std::string> out(content.begin(), content.end());
    for (size_t i = 0; i + 1 < content.size(); ++i) out.insert(content[i] + " " + content[i + 1]);
    return out;
}

BruteTables brute_count(const Corpus& corpus) {
    BruteTables t;
    t.pairs = corpus.size();
    for (const auto& pair : corpus.pairs) {
        auto qs = brute_phrases(pair.query);
        auto rs = brute_phrases(pair.response);
        for (const auto& p : qs) ++t.q_phrase[p];
        for (const auto& h : rs) ++t.r_phrase[h];
        for (const auto& p : qs)
            for (const auto& h : rs) ++t.joint[{p, h}];
    }
    return t;
}

double brute_npmi(const BruteTables& t, const std::string& p, const std::string& h) {
    auto n = static_cast<double>(t.pairs);
    double pp = static_cast<double>(t.q_phrase.at(p)) / n;
    double ph = static_cast<double>(t.r_phrase.at(h)) / n;
    auto it = t.joint.find({p, h});
    if (it == t.joint.end()) return -1.0;
    double pj = static_cast<double>(it->second) / n;
    if (pj >= 1.0) return 1.0;
    return std::log(pj / (pp * ph)) / (-std::log(pj));
}

double brute_connectivity(const BruteTables& t, const DialoguePair& pair) {
    auto qs = brute_phrases(pair.query);
    auto rs = brute_phrases(pair.response);
    double sum = 0.0;
    for (const auto& p : qs) {
        for (const auto& h : rs) {
            if (!t.q_phrase.count(p) || !t.r_phrase.count(h)) continue;
            double v = brute_npmi(t, p, h);
            if (v <= 0.0) continue;
            double pw = 1.0 + static_cast<double>(std::count(p.begin(), p.end(), ' '));
            double hw = 1.0 + static_cast<double>(std::count(h.begin(), h.end(), ' '));
            sum += v * pw * hw /
                   (static_cast<double>(pair.query.size()) *
                    static_cast<double>(pair.response.size()));
        }
    }
    return sum;
}

}  // namespace

TEST_CASE("extract_key_phrases keeps content unigrams and contiguous bigrams") {
    auto phrases = extract_key_phrases({"the", "red", "car"});
    REQUIRE(phrases.size() == 3);
    CHECK(phrases[0].text == "red");
    CHECK(phrases[1].text == "car");
    CHECK(phrases[2].text == "red car");
    CHECK(phrases[2].words == 2);

    CHECK(extract_key_phrases({"the", "of"}).empty());

    auto nice = extract_key_phrases({"nice", "day"});
    REQUIRE(nice.size() == 3);
    CHECK(nice[2].text == "nice day");
}

TEST_CASE("build_corpus_stats counts phrase presence per pair") {
    Corpus corpus = make_corpus({
        {"coffee please", "sure"},
        {"more coffee", "sure"},
        {"tea please", "no tea"},
        {"water", "sure water"},
    });
    CorpusStats stats = build_corpus_stats(corpus);
    CHECK(stats.pair_count == 4);
    CHECK(stats.p_query_phrase("coffee") == doctest::Approx(0.5));
    CHECK(stats.p_response_phrase("sure") == doctest::Approx(0.75));
    // "sure" appears in 3 of 4 responses; idf = log(4/3).
    CHECK(stats.idf("sure") == doctest::Approx(std::log(4.0 / 3.0)));
}

TEST_CASE("idf of a token present in every response is zero") {
    Corpus corpus = make_corpus({{"a", "yes"}, {"b", "yes"}, {"c", "yes fine"}});
    CorpusStats stats = build_corpus_stats(corpus);
    CHECK(stats.idf("yes") == doctest::Approx(0.0));
}

TEST_CASE("full stats tables match a brute-force recount") {
    Corpus corpus = five_pair_corpus();
    CorpusStats stats = build_corpus_stats(corpus);
    BruteTables brute = brute_count(corpus);

    for (const auto& [p, c] : brute.q_phrase)
        CHECK(stats.p_query_phrase(p) == doctest::Approx(static_cast<double>(c) / 5.0).epsilon(1e-12));
    for (const auto& [h, c] : brute.r_phrase)
        CHECK(stats.p_response_phrase(h) ==
              doctest::Approx(static_cast<double>(c) / 5.0).epsilon(1e-12));
    for (const auto& [ph, c] : brute.joint)
        CHECK(stats.p_joint(ph.first, ph.second) ==
              doctest::Approx(static_cast<double>(c) / 5.0).epsilon(1e-12));
    CHECK(stats.query_phrase_count.size() == brute.q_phrase.size());
    CHECK(stats.response_phrase_count.size() == brute.r_phrase.size());
    CHECK(stats.joint_phrase_count.size() == brute.joint.size());
}

TEST_CASE("npmi bounds and reference values") {
    Corpus corpus = five_pair_corpus();
    CorpusStats stats = build_corpus_stats(corpus);

    // "zig"/"zag" co-occur perfectly: P(p)=P(h)=P(p,h)=1/5.
    CHECK(npmi({"zig", 1}, {"zag", 1}, stats) == doctest::Approx(1.0));
    // "hello there" query phrase never co-occurs with "zag".
    CHECK(npmi({"hello", 1}, {"zag", 1}, stats) == doctest::Approx(-1.0));
    CHECK_THROWS_WITH_AS(npmi({"unseen", 1}, {"zag", 1}, stats),
                         doctest::Contains("zero marginal"), std::runtime_error);

    // Hand-built independence: P(p,h) = P(p)P(h).
    Corpus ind = make_corpus({
        {"cat", "dog"},
        {"cat", "bird"},
        {"fish", "dog"},
        {"fish", "bird"},
    });
    CorpusStats ind_stats = build_corpus_stats(ind);
    CHECK(npmi({"cat", 1}, {"dog", 1}, ind_stats) == doctest::Approx(0.0).epsilon(1e-12));

    // Every phrase pair stays within [-1, 1] and matches the brute recount.
    BruteTables brute = brute_count(corpus);
    for (const auto& [p, cp] : brute.q_phrase) {
        (void)cp;
        for (const auto& [h, ch] : brute.r_phrase) {
            (void)ch;
            double v = npmi({p, 1}, {h, 1}, stats);
            CHECK(v >= -1.0);
            CHECK(v <= 1.0);
            CHECK(v == doctest::Approx(brute_npmi(brute, p, h)).epsilon(1e-12));
        }
    }
}

TEST_CASE("connectivity oracle values on the five-pair corpus") {
    Corpus corpus = five_pair_corpus();
    CorpusStats stats = build_corpus_stats(corpus);

    // All content words stripped: no phrase pairs at all.
    CHECK(score_connectivity(corpus.pairs[4], stats) == doctest::Approx(0.0));
    // Single-word query and response that always co-occur.
    CHECK(score_connectivity(corpus.pairs[3], stats) == doctest::Approx(1.0));

    BruteTables brute = brute_count(corpus);
    for (const auto& pair : corpus.pairs)
        CHECK(score_connectivity(pair, stats) ==
              doctest::Approx(brute_connectivity(brute, pair)).epsilon(1e-12));
}

TEST_CASE("connectivity depends only on counts, not corpus order") {
    Corpus corpus = make_corpus({
        {"red car", "fast car"},
        {"blue sky", "clear sky"},
        {"red sun", "warm sun"},
        {"green tree", "tall tree"},
    });
    Corpus shuffled = make_corpus({
        {"green tree", "tall tree"},
        {"red car", "fast car"},
        {"red sun", "warm sun"},
        {"blue sky", "clear sky"},
    });
    CorpusStats a = build_corpus_stats(corpus);
    CorpusStats b = build_corpus_stats(shuffled);
    for (const auto& pair : corpus.pairs)
        CHECK(score_connectivity(pair, a) == doctest::Approx(score_connectivity(pair, b)));
}

TEST_CASE("embeddings: identical utterances have cosine 1") {
    Corpus corpus = make_corpus({
        {"alpha beta gamma", "alpha beta gamma"},
        {"delta epsilon", "delta epsilon zeta"},
    });
    EmbeddingTable emb = build_embeddings(corpus, 3, 1);
    auto a = emb.utterance_vector(tokenize("alpha beta gamma"));
    auto b = emb.utterance_vector(tokenize("alpha beta gamma"));
    REQUIRE(a.has_value());
    CHECK(cosine(*a, *b) == doctest::Approx(1.0));
}

TEST_CASE("embeddings: disjoint co-occurrence clusters are near orthogonal") {
    Corpus corpus = make_corpus({
        {"aa bb", "cc aa"},
        {"bb cc", "aa bb"},
        {"cc aa", "bb cc"},
        {"xx yy", "zz xx"},
        {"yy zz", "xx yy"},
        {"zz xx", "yy zz"},
    });
    EmbeddingTable emb = build_embeddings(corpus, 4, 1);
    auto a = emb.utterance_vector(tokenize("aa bb"));
    auto x = emb.utterance_vector(tokenize("xx yy"));
    REQUIRE(a.has_value());
    REQUIRE(x.has_value());
    CHECK(std::abs(cosine(*a, *x)) < 0.2);
}

TEST_CASE("embedding reconstruction error decreases with dimension") {
    Corpus corpus = make_corpus({
        {"aa bb cc", "bb dd"},
        {"cc dd ee", "aa ee"},
        {"bb ee", "cc dd aa"},
    });
    // Dense PPMI recomputed here, independently of the library path.
    std::vector<std::string> toks;
    std::map<std::string, int> idx;
    for (const auto& pair : corpus.pairs)
        for (const auto* utt : {&pair.query, &pair.response})
            for (const auto& t : *utt)
                if (idx.emplace(t, static_cast<int>(toks.size())).second) toks.push_back(t);
    size_t n = toks.size();
    std::vector<double> counts(n * n, 0.0);
    for (const auto& pair : corpus.pairs)
        for (const auto* utt : {&pair.query, &pair.response})
            for (size_t i = 0; i < utt->size(); ++i)
                for (size_t j = i + 1; j < utt->size(); ++j) {
                    auto a = static_cast<size_t>(idx[(*utt)[i]]);
                    auto b = static_cast<size_t>(idx[(*utt)[j]]);
                    counts[a * n + b] += 1.0;
                    counts[b * n + a] += 1.0;
                }
    std::vector<double> row(n, 0.0);
    double total = 0.0;
    for (size_t a = 0; a < n; ++a)
        for (size_t b = 0; b < n; ++b) {
            row[a] += counts[a * n + b];
            total += counts[a * n + b];
        }
    std::vector<double> ppmi(n * n, 0.0);
    for (size_t a = 0; a < n; ++a)
        for (size_t b = 0; b < n; ++b)
            if (counts[a * n + b] > 0)
                ppmi[a * n + b] =
                    std::max(0.0, std::log(counts[a * n + b] * total / (row[a] * row[b])));

    double prev = 1e100;
    for (int64_t k = 1; k <= 4; ++k) {
        EmbeddingTable emb = build_embeddings(corpus, k, 1);
        double err = 0.0;
        for (size_t a = 0; a < n; ++a)
            for (size_t b = 0; b < n; ++b) {
                double rec = 0.0;
                const double* va = emb.vec(toks[a]);
                const double* vb = emb.vec(toks[b]);
                for (int64_t d = 0; d < emb.dim; ++d) rec += va[d] * vb[d];
                err += (ppmi[a * n + b] - rec) * (ppmi[a * n + b] - rec);
            }
        CHECK(err <= prev + 1e-9);
        prev = err;
    }
}

TEST_CASE("embeddings reject oversized dimension") {
    Corpus corpus = make_corpus({{"aa bb", "cc"}});
    CHECK_THROWS(build_embeddings(corpus, 10, 1));
}

TEST_CASE("relatedness: clamped cosine of mean vectors") {
    Corpus corpus = make_corpus({{"sun moon", "sun moon"}, {"rock tree", "leaf rock"}});
    EmbeddingTable emb = build_embeddings(corpus, 3, 1);

    DialoguePair self;
    self.query = tokenize("sun moon");
    self.response = tokenize("sun moon");
    CHECK(score_relatedness(self, emb) == doctest::Approx(1.0));

    DialoguePair missing;
    missing.query = tokenize("unknown words");
    missing.response = tokenize("sun");
    CHECK_THROWS_WITH_AS(score_relatedness(missing, emb),
                         doctest::Contains("no embeddable"), std::runtime_error);

    // Hand-built table: q=(1,0), r=(1,1) -> 1/sqrt(2); q=(1,0), s=(-1,0) -> clamp.
    EmbeddingTable toy;
    toy.dim = 2;
    toy.tokens = {"q", "r", "s"};
    toy.index = {{"q", 0}, {"r", 1}, {"s", 2}};
    toy.vectors = {1, 0, 1, 1, -1, 0};
    DialoguePair qr;
    qr.query = {"q"};
    qr.response = {"r"};
    CHECK(score_relatedness(qr, toy) == doctest::Approx(1.0 / std::sqrt(2.0)));
    DialoguePair qs;
    qs.query = {"q"};
    qs.response = {"s"};
    CHECK(score_relatedness(qs, toy) == doctest::Approx(0.0));
}

TEST_CASE("consistency combines the parts linearly") {
    Corpus corpus = five_pair_corpus();
    CorpusStats stats = build_corpus_stats(corpus);
    EmbeddingTable emb = build_embeddings(corpus, 3, 1);

    const auto& pair = corpus.pairs[3];
    double sc = score_connectivity(pair, stats);
    double sr = score_relatedness(pair, emb);
    CHECK(score_consistency(pair, stats, emb, 1.0, 1.0) == doctest::Approx(sc + sr));
    CHECK(score_consistency(pair, stats, emb, 2.0, 0.5) == doctest::Approx(2.0 * sc + 0.5 * sr));
}

TEST_CASE("inverse-mean weights give the combined score corpus mean 2") {
    Corpus corpus = make_corpus({
        {"red car", "fast red car"},
        {"blue sky", "blue sky high"},
        {"green tree", "tall green tree"},
        {"warm sun", "warm sun bright"},
    });
    CorpusStats stats = build_corpus_stats(corpus);
    EmbeddingTable emb = build_embeddings(corpus, 4, 1);
    ConsistencyWeights w = compute_consistency_weights(corpus, stats, emb);
    double mean = 0.0;
    for (const auto& pair : corpus.pairs)
        mean += score_consistency(pair, stats, emb, w.alpha, w.beta);
    mean /= static_cast<double>(corpus.size());
    CHECK(mean == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("entropy_src oracle values") {
    Corpus corpus = five_pair_corpus();
    CorpusStats stats = build_corpus_stats(corpus);

    // "ok" is paired with "hello there" twice and "good morning" once.
    double expected = -(2.0 / 3.0) * std::log2(2.0 / 3.0) - (1.0 / 3.0) * std::log2(1.0 / 3.0);
    CHECK(score_entropy_src(corpus.pairs[0], stats) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(score_entropy_src(corpus.pairs[0], stats) == doctest::Approx(0.9182958).epsilon(1e-6));
    // "zag" has a single query.
    CHECK(score_entropy_src(corpus.pairs[3], stats) == doctest::Approx(0.0));

    DialoguePair absent;
    absent.raw_response = "never seen";
    absent.response = tokenize("never seen");
    CHECK_THROWS(score_entropy_src(absent, stats));
}

TEST_CASE("entropy_src: two distinct queries once each is one bit") {
    Corpus corpus = make_corpus({{"q one", "same reply"}, {"q two", "same reply"}});
    CorpusStats stats = build_corpus_stats(corpus);
    CHECK(score_entropy_src(corpus.pairs[0], stats) == doctest::Approx(1.0));
}

TEST_CASE("entropy_src is invariant under corpus duplication") {
    Corpus base = make_corpus({
        {"q one", "same reply"},
        {"q one", "same reply"},
        {"q two", "same reply"},
        {"other", "different"},
    });
    std::vector<std::pair<std::string, std::string>> twice;
    for (int k = 0; k < 2; ++k)
        for (const auto& pair : base.pairs) twice.emplace_back(pair.raw_query, pair.raw_response);
    Corpus doubled = make_corpus(twice);
    CorpusStats s1 = build_corpus_stats(base);
    CorpusStats s2 = build_corpus_stats(doubled);
    CHECK(score_entropy_src(base.pairs[0], s1) ==
          doctest::Approx(score_entropy_src(base.pairs[0], s2)).epsilon(1e-12));
}

TEST_CASE("specificity oracle values") {
    Corpus corpus = make_corpus({{"a", "yes"}, {"b", "yes"}, {"c", "yes rare"}, {"d", "yes"}});
    CorpusStats stats = build_corpus_stats(corpus);

    // "yes" is in every response: NIDF 0. "rare" is in exactly one: NIDF 1.
    CHECK(score_specificity(corpus.pairs[0], stats) == doctest::Approx(0.0));
    DialoguePair rare;
    rare.response = {"rare"};
    CHECK(score_specificity(rare, stats) == doctest::Approx(1.0));
    // Mean of one minimum and one maximum token.
    CHECK(score_specificity(corpus.pairs[2], stats) == doctest::Approx(0.5));
}

TEST_CASE("specificity errors when every idf is identical") {
    Corpus corpus = make_corpus({{"a", "same"}, {"b", "same"}});
    CorpusStats stats = build_corpus_stats(corpus);
    CHECK_THROWS_WITH_AS(score_specificity(corpus.pairs[0], stats),
                         doctest::Contains("NIDF undefined"), std::runtime_error);
}

TEST_CASE("NIDF decreases as document frequency rises") {
    Corpus corpus = make_corpus({
        {"a", "w1"},
        {"b", "w1 w2"},
        {"c", "w1 w2 w3"},
        {"d", "w1 w2 w3 w4"},
    });
    CorpusStats stats = build_corpus_stats(corpus);
    double range = stats.max_idf - stats.min_idf;
    double prev = 2.0;
    for (const std::string& t : {"w4", "w3", "w2", "w1"}) {  // doc freq 1,2,3,4
        double nidf = (stats.idf(t) - stats.min_idf) / range;
        CHECK(nidf < prev);
        prev = nidf;
    }
}

TEST_CASE("scorers are bit-identical across repeated runs") {
    Corpus corpus = five_pair_corpus();
    CorpusStats s1 = build_corpus_stats(corpus);
    CorpusStats s2 = build_corpus_stats(corpus);
    EmbeddingTable e1 = build_embeddings(corpus, 3, 42);
    EmbeddingTable e2 = build_embeddings(corpus, 3, 42);
    CHECK(e1.vectors == e2.vectors);
    for (const auto& pair : corpus.pairs) {
        CHECK(score_connectivity(pair, s1) == score_connectivity(pair, s2));
        CHECK(score_entropy_src(pair, s1) == score_entropy_src(pair, s2));
        CHECK(score_specificity(pair, s1) == score_specificity(pair, s2));
        CHECK(score_relatedness(pair, e1) == score_relatedness(pair, e2));
    }
}
