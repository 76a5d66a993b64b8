#include "mae/inference.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

namespace mae::infer {

void GenConfig::validate() const {
    require(beam_size >= 1, "gen config: beam_size must be at least 1");
    require(max_len >= 2, "gen config: max_len must be at least 2");
}

namespace {

struct Hypothesis {
    std::vector<int> ids;  // BOS-prefixed
    double log_prob = 0.0;
    bool done = false;

    double score() const {
        auto steps = static_cast<double>(ids.size() - 1);  // tokens emitted so far
        return steps > 0 ? log_prob / steps : log_prob;
    }
};

std::vector<double> log_softmax_values(const std::vector<ad::Real>& logits) {
    double mx = -std::numeric_limits<double>::infinity();
    for (ad::Real v : logits) mx = std::max(mx, static_cast<double>(v));
    double sum = 0.0;
    for (ad::Real v : logits) sum += std::exp(static_cast<double>(v) - mx);
    double lse = std::log(sum) + mx;
    std::vector<double> out(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<double>(logits[i]) - lse;
    return out;
}

}  // namespace

std::vector<int> beam_search(const model::ModelView& view, const std::vector<int>& query_ids,
                             const GenConfig& cfg) {
    cfg.validate();
    require(!query_ids.empty(), "beam_search: query must be non-empty");
    ad::NoGradGuard no_grad;

    model::EncodedQuery enc = model::encode_query(view, query_ids);

    std::vector<Hypothesis> live{{{Vocab::kBos}, 0.0, false}};
    std::vector<Hypothesis> completed;

    for (int64_t step = 0; step < cfg.max_len && !live.empty(); ++step) {
        struct Candidate {
            double score;
            double log_prob;
            size_t hyp;
            int token;
        };
        std::vector<Candidate> candidates;
        for (size_t h = 0; h < live.size(); ++h) {
            auto logits = model::decode_next_logits(view, enc, live[h].ids);
            auto logp = log_softmax_values(logits);
            for (int token = 0; token < static_cast<int>(logp.size()); ++token) {
                if (token == Vocab::kPad || token == Vocab::kBos) continue;
                double lp = live[h].log_prob + logp[static_cast<size_t>(token)];
                double steps = static_cast<double>(live[h].ids.size());  // tokens after this one
                candidates.push_back({lp / steps, lp, h, token});
            }
        }
        std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
            if (a.score != b.score) return a.score > b.score;
            if (a.token != b.token) return a.token < b.token;
            return a.hyp < b.hyp;
        });

        // Top beam_size continuations overall; an EOS continuation takes a
        // slot and retires its hypothesis.
        std::vector<Hypothesis> next;
        int64_t taken = 0;
        for (const auto& c : candidates) {
            if (taken >= cfg.beam_size) break;
            ++taken;
            Hypothesis hyp = live[c.hyp];
            hyp.ids.push_back(c.token);
            hyp.log_prob = c.log_prob;
            if (c.token == Vocab::kEos) {
                hyp.done = true;
                completed.push_back(std::move(hyp));
            } else {
                next.push_back(std::move(hyp));
            }
        }
        live = std::move(next);
    }

    const Hypothesis* best = nullptr;
    for (const auto& h : completed)
        if (!best || h.score() > best->score()) best = &h;
    if (!best)
        for (const auto& h : live)
            if (!best || h.score() > best->score()) best = &h;
    require(best != nullptr, "beam_search produced no hypotheses");

    std::vector<int> out;
    for (size_t i = 1; i < best->ids.size(); ++i) {
        if (best->ids[i] == Vocab::kEos) break;
        out.push_back(best->ids[i]);
    }
    return out;
}

std::vector<Generation> generate_set(const model::ModelView& view, const Corpus& test,
                                     const Vocab& vocab, const GenConfig& cfg) {
    std::vector<Generation> out;
    out.reserve(test.pairs.size());
    for (const auto& pair : test.pairs) {
        std::vector<int> query_ids = vocab.encode(pair.query);
        if (static_cast<int64_t>(query_ids.size()) > view.base->cfg.max_len)
            query_ids.resize(static_cast<size_t>(view.base->cfg.max_len));
        Generation gen;
        gen.query = pair.raw_query;
        gen.ids = beam_search(view, query_ids, cfg);
        gen.response = join_tokens(vocab.decode(gen.ids));
        out.push_back(std::move(gen));
    }
    return out;
}

void write_generations(const std::string& path, const std::vector<Generation>& generations) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    require(out.good(), "cannot write generations: " + path);
    for (const auto& g : generations) out << g.query << '\t' << g.response << '\n';
}

std::vector<std::pair<std::string, std::string>> read_generations(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open generations: " + path);
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        size_t tab = line.find('\t');
        require(tab != std::string::npos,
                path + ":" + std::to_string(line_no) + ": missing tab separator");
        out.emplace_back(line.substr(0, tab), line.substr(tab + 1));
    }
    return out;
}

std::vector<bool> parse_mask_selector(const std::string& selector,
                                      const model::ModelConfig& cfg) {
    auto positions = model::adapter_positions(cfg);
    std::vector<bool> mask(positions.size(), false);
    if (selector.empty()) return mask;
    if (selector == "all") {
        std::fill(mask.begin(), mask.end(), true);
        return mask;
    }

    auto split = [](const std::string& s, char sep) {
        std::vector<std::string> parts;
        std::string cur;
        for (char c : s + sep) {
            if (c == sep) {
                if (!cur.empty()) parts.push_back(cur);
                cur.clear();
            } else if (!std::isspace(static_cast<unsigned char>(c))) {
                cur.push_back(c);
            }
        }
        return parts;
    };

    for (const std::string& clause : split(selector, ';')) {
        int want_block = -1;  // 1-based
        int want_stack = -1;  // 0 enc, 1 dec
        int want_type = -1;
        for (const std::string& term : split(clause, ',')) {
            size_t eq = term.find('=');
            require(eq != std::string::npos, "bad mask selector term: " + term);
            std::string key = term.substr(0, eq);
            std::string value = term.substr(eq + 1);
            if (key == "block") {
                want_block = std::stoi(value);
                require(want_block >= 1, "mask selector: block indices are 1-based");
            } else if (key == "stack") {
                if (value == "enc") want_stack = 0;
                else if (value == "dec") want_stack = 1;
                else fail("mask selector: unknown stack " + value);
            } else if (key == "type") {
                if (value == "self_attn") want_type = 0;
                else if (value == "cross_attn") want_type = 1;
                else if (value == "ffn") want_type = 2;
                else fail("mask selector: unknown position type " + value);
            } else {
                fail("mask selector: unknown key " + key);
            }
        }
        bool matched = false;
        for (size_t p = 0; p < positions.size(); ++p) {
            const auto& pos = positions[p];
            if (want_block >= 0 && pos.block != want_block - 1) continue;
            if (want_stack >= 0 && (pos.decoder ? 1 : 0) != want_stack) continue;
            if (want_type >= 0 && static_cast<int>(pos.type) != want_type) continue;
            mask[p] = true;
            matched = true;
        }
        require(matched, "mask selector matches no adapter position: " + clause);
    }
    return mask;
}

model::ModelView mask_adapters(const model::ModelView& view, const std::string& selector) {
    model::ModelView masked = view;
    std::vector<bool> add = parse_mask_selector(selector, view.base->cfg);
    if (masked.mask.empty()) masked.mask.assign(add.size(), false);
    for (size_t i = 0; i < add.size(); ++i)
        if (add[i]) masked.mask[i] = true;
    return masked;
}

void dump_fusion_heatmap(const model::ModelView& view,
                         const std::vector<const DialoguePair*>& samples, const Vocab& vocab,
                         const std::string& out_path) {
    require(view.fusion == model::Fusion::AF, "fusion heatmap requires an AF view");
    require(!samples.empty(), "fusion heatmap needs at least one sample");

    auto positions = model::adapter_positions(view.base->cfg);
    size_t n_adapt = view.adapters.size();
    std::vector<std::vector<double>> lambda(positions.size(), std::vector<double>(n_adapt, 0.0));
    std::vector<std::vector<double>> distance(positions.size(), std::vector<double>(n_adapt, 0.0));

    for (const auto* pair : samples) {
        auto q = vocab.encode(pair->query);
        auto r = vocab.encode(pair->response);
        if (static_cast<int64_t>(q.size()) > view.base->cfg.max_len)
            q.resize(static_cast<size_t>(view.base->cfg.max_len));
        if (static_cast<int64_t>(r.size()) > view.base->cfg.max_len - 1)
            r.resize(static_cast<size_t>(view.base->cfg.max_len - 1));
        model::FusionReport report = model::collect_fusion_weights(view, q, r);
        for (size_t p = 0; p < positions.size(); ++p)
            for (size_t m = 0; m < n_adapt; ++m) {
                lambda[p][m] += report.lambda[p][m];
                distance[p][m] += report.distance[p][m];
            }
    }

    std::ofstream out(out_path, std::ios::trunc | std::ios::binary);
    require(out.good(), "cannot write heatmap: " + out_path);
    out << "stack\tblock\tposition\tadapter\tmean_lambda\tmean_distance\n";
    char buf[160];
    auto n = static_cast<double>(samples.size());
    for (size_t p = 0; p < positions.size(); ++p) {
        const auto& pos = positions[p];
        for (size_t m = 0; m < n_adapt; ++m) {
            std::snprintf(buf, sizeof(buf), "%s\t%d\t%s\t%s\t%.6f\t%.6f\n",
                          pos.decoder ? "dec" : "enc", pos.block + 1,
                          model::pos_type_name(pos.type).c_str(),
                          view.adapters[m]->view.c_str(), lambda[p][m] / n, distance[p][m] / n);
            out << buf;
        }
    }
}

}  // namespace mae::infer
