#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "common.hpp"
#include "model.hpp"
#include "ops.hpp"
#include "tokenizer.hpp"

namespace kc {

struct Demo {
    std::string prompt;
    std::string answer;
};

struct KnowledgeTriplet {
    std::string subject;
    std::string relation_id;
    std::string template_text;  // contains {subject} exactly once
    std::string object;
    std::vector<std::string> relation_hint_tokens;
    std::vector<Demo> demos;
    std::optional<std::vector<std::size_t>> relation_span_hint;  // explicit relation token positions
    std::string category;
};

struct Span {
    std::size_t begin = 0;
    std::size_t end = 0;  // exclusive

    bool empty() const { return begin >= end; }
    std::size_t size() const { return end - begin; }
    bool contains(std::size_t i) const { return i >= begin && i < end; }
};

struct TokenizedPrompt {
    Tokens tokens;
    Span subject_span;
    std::vector<std::size_t> relation_positions;
    TokenId target_first_token = 0;
    std::size_t source_index = 0;  // index into the dataset records
    std::string text;

    std::size_t last() const { return tokens.size() - 1; }
    std::size_t last_subject() const { return subject_span.end - 1; }
};

struct Splits {
    std::uint64_t seed = 0;
    std::vector<std::size_t> d_val;
    std::vector<std::size_t> d_test;
};

struct KnowledgeDataset {
    std::vector<KnowledgeTriplet> records;
    std::string category = "factual";
    std::string id;

    std::vector<KnowledgeTriplet> with_relation(const std::string& relation) const {
        std::vector<KnowledgeTriplet> out;
        for (const auto& r : records) {
            if (r.relation_id == relation) out.push_back(r);
        }
        return out;
    }
};

inline constexpr std::string_view k_placeholder = "{subject}";

namespace detail {

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

inline std::size_t count_occurrences(std::string_view hay, std::string_view needle) {
    if (needle.empty()) return 0;
    std::size_t n = 0;
    for (auto pos = hay.find(needle); pos != std::string_view::npos; pos = hay.find(needle, pos + 1)) ++n;
    return n;
}

}  // namespace detail

inline void validate_triplet(const KnowledgeTriplet& t) {
    require(!detail::trim(t.subject).empty(), "dataset: empty subject");
    require(!t.relation_id.empty(), "dataset: empty relation_id");
    require(detail::count_occurrences(t.template_text, k_placeholder) == 1,
            "dataset: template must contain {subject} exactly once: '" + t.template_text + "'");
    require(!detail::trim(t.object).empty(), "dataset: empty object");
}

inline KnowledgeTriplet triplet_from_json(const nlohmann::json& j) {
    require(j.is_object(), "expected a JSON object");
    KnowledgeTriplet t;
    t.subject = j.at("subject").get<std::string>();
    t.relation_id = j.at("relation_id").get<std::string>();
    t.template_text = j.at("template").get<std::string>();
    t.object = j.at("object").get<std::string>();
    t.relation_hint_tokens = j.value("relation_hint_tokens", std::vector<std::string>{});
    if (j.contains("demos")) {
        for (const auto& d : j.at("demos")) {
            t.demos.push_back({d.at("prompt").get<std::string>(), d.at("answer").get<std::string>()});
        }
    }
    if (j.contains("relation_span_hint")) {
        t.relation_span_hint = j.at("relation_span_hint").get<std::vector<std::size_t>>();
    }
    t.category = j.value("category", std::string());
    validate_triplet(t);
    return t;
}

inline nlohmann::json triplet_to_json(const KnowledgeTriplet& t) {
    nlohmann::json j{{"subject", t.subject},
                     {"relation_id", t.relation_id},
                     {"template", t.template_text},
                     {"object", t.object},
                     {"relation_hint_tokens", t.relation_hint_tokens}};
    if (!t.demos.empty()) {
        j["demos"] = nlohmann::json::array();
        for (const auto& d : t.demos) j["demos"].push_back({{"prompt", d.prompt}, {"answer", d.answer}});
    }
    if (t.relation_span_hint) j["relation_span_hint"] = *t.relation_span_hint;
    if (!t.category.empty()) j["category"] = t.category;
    return j;
}

inline KnowledgeDataset parse_dataset(std::istream& in, const std::string& id = "dataset") {
    KnowledgeDataset ds;
    ds.id = id;
    std::set<std::pair<std::string, std::string>> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        KnowledgeTriplet t;
        try {
            t = triplet_from_json(nlohmann::json::parse(line));
        } catch (const std::exception& e) {
            throw Error("dataset: " + id + ":" + std::to_string(line_no) + ": " + e.what());
        }
        const auto key = std::make_pair(detail::trim(t.subject), t.relation_id);
        require(seen.insert(key).second, "dataset: " + id + ":" + std::to_string(line_no) + ": duplicate (subject, relation) ('" +
                                             key.first + "', '" + key.second + "')");
        ds.records.push_back(std::move(t));
    }
    if (!ds.records.empty() && !ds.records.front().category.empty()) ds.category = ds.records.front().category;
    return ds;
}

inline KnowledgeDataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "dataset: cannot open " + path);
    std::string id = path;
    const auto slash = id.find_last_of('/');
    if (slash != std::string::npos) id = id.substr(slash + 1);
    const auto dot = id.rfind('.');
    if (dot != std::string::npos) id = id.substr(0, dot);
    return parse_dataset(in, id);
}

inline void save_dataset(const std::vector<KnowledgeTriplet>& records, const std::string& path) {
    std::ofstream out(path);
    require(out.good(), "dataset: cannot write " + path);
    for (const auto& r : records) out << triplet_to_json(r).dump() << "\n";
}

inline std::string render_query(const KnowledgeTriplet& t) {
    std::string s = t.template_text;
    s.replace(s.find(k_placeholder), k_placeholder.size(), detail::trim(t.subject));
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
    return s;
}

// Zero-shot prompt, or with `icl` the demonstrations ("prompt answer\n") followed by the query.
inline std::string render_prompt(const KnowledgeTriplet& t, bool icl = false) {
    validate_triplet(t);
    std::string q = render_query(t);
    if (!icl) return q;
    std::string prefix;
    for (const auto& d : t.demos) {
        std::string demo = detail::trim(d.prompt);
        const std::string ans = detail::trim(d.answer);
        if (!demo.empty() || !ans.empty()) {
            prefix += demo + (ans.empty() ? "" : " " + ans) + "\n";
        }
    }
    return prefix + q;
}

inline bool is_leading_article(std::string_view token_text) {
    std::string t = detail::trim(token_text);
    std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return t == "the" || t == "a" || t == "an";
}

// Encodes the prompt and aligns the subject occurrence to a contiguous token span.
inline TokenizedPrompt tokenize_align(const Tokenizer& tok, const KnowledgeTriplet& t, bool icl = false) {
    validate_triplet(t);
    const std::string subject = detail::trim(t.subject);
    const std::string prompt = render_prompt(t, icl);
    const std::string query = render_query(t);
    require(detail::count_occurrences(query, subject) == 1,
            "tokenize: subject '" + subject + "' must occur exactly once in '" + query + "'");
    const std::size_t query_offset = prompt.size() - query.size();
    const std::size_t s_begin = query_offset + query.find(subject);
    const std::size_t s_end = s_begin + subject.size();

    TokenizedPrompt tp;
    tp.text = prompt;
    tp.tokens = tok.encode(prompt);
    require(!tp.tokens.empty(), "tokenize: empty prompt");

    std::vector<std::size_t> starts;
    std::size_t off = 0;
    for (auto id : tp.tokens) {
        starts.push_back(off);
        off += tok.token_bytes(id).size();
    }
    std::optional<std::size_t> first, last;
    for (std::size_t i = 0; i < tp.tokens.size(); ++i) {
        const std::size_t b = starts[i], e = b + tok.token_bytes(tp.tokens[i]).size();
        if (e > s_begin && b < s_end) {
            if (!first) first = i;
            last = i;
        }
    }
    require(first.has_value(), "tokenize: subject '" + subject + "' not found in token stream");
    const std::size_t b0 = starts[*first];
    const bool start_ok = b0 == s_begin || (b0 + 1 == s_begin && prompt[b0] == ' ');
    const bool end_ok = starts[*last] + tok.token_bytes(tp.tokens[*last]).size() == s_end;
    require(start_ok && end_ok,
            "tokenize: subject '" + subject + "' is not a contiguous token span in '" + query + "'");
    tp.subject_span = {*first, *last + 1};

    if (t.relation_span_hint) {
        // hints index the full token sequence
        for (auto p : *t.relation_span_hint) {
            require(p < tp.tokens.size() && !tp.subject_span.contains(p),
                    "tokenize: relation_span_hint position " + std::to_string(p) + " is invalid");
            tp.relation_positions.push_back(p);
        }
    } else {
        // complement of the subject inside the query, minus a sentence-initial article
        std::size_t query_first = 0;
        while (query_first < tp.tokens.size() && starts[query_first] < query_offset) ++query_first;
        for (std::size_t i = query_first; i < tp.tokens.size(); ++i) {
            if (tp.subject_span.contains(i)) continue;
            if (i == query_first && is_leading_article(tok.token_bytes(tp.tokens[i]))) continue;
            tp.relation_positions.push_back(i);
        }
    }

    const Tokens target = tok.encode(" " + detail::trim(t.object));
    require(!target.empty(), "tokenize: empty object");
    tp.target_first_token = target.front();
    return tp;
}

struct TokenizeReport {
    std::vector<TokenizedPrompt> prompts;
    std::vector<std::string> skipped;  // one message per rejected record
};

// Tokenizes every record; records that cannot be aligned are skipped with a warning.
inline TokenizeReport tokenize_all(const Tokenizer& tok, const std::vector<KnowledgeTriplet>& records, bool icl = false,
                                   WarningSink* warnings = nullptr) {
    TokenizeReport r;
    for (std::size_t i = 0; i < records.size(); ++i) {
        try {
            auto tp = tokenize_align(tok, records[i], icl);
            tp.source_index = i;
            r.prompts.push_back(std::move(tp));
        } catch (const Error& e) {
            const std::string msg = "skipping record " + std::to_string(i) + ": " + e.what();
            r.skipped.push_back(msg);
            if (warnings) warnings->warn(msg);
        }
    }
    return r;
}

// Seeded 1:1 split; d_val receives the extra element for odd counts.
inline Splits make_splits(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng(seed);
    rng.shuffle(idx);
    Splits s;
    s.seed = seed;
    const std::size_t n_val = (n + 1) / 2;
    s.d_val.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
    s.d_test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
    std::sort(s.d_val.begin(), s.d_val.end());
    std::sort(s.d_test.begin(), s.d_test.end());
    return s;
}

inline nlohmann::json splits_to_json(const Splits& s) {
    return {{"seed", s.seed}, {"d_val", s.d_val}, {"d_test", s.d_test}};
}

inline Splits splits_from_json(const nlohmann::json& j) {
    Splits s;
    s.seed = j.at("seed").get<std::uint64_t>();
    s.d_val = j.at("d_val").get<std::vector<std::size_t>>();
    s.d_test = j.at("d_test").get<std::vector<std::size_t>>();
    return s;
}

template <typename T>
std::vector<T> select(const std::vector<T>& items, const std::vector<std::size_t>& idx) {
    std::vector<T> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(items.at(i));
    return out;
}

// Rank of the target's first token at the last prompt position (1 = argmax).
inline std::size_t target_rank(const ActivationCache& cache, std::size_t vocab, TokenId target) {
    require(target >= 0 && static_cast<std::size_t>(target) < vocab, "target token out of vocabulary");
    return ops::rank_of(cache.last_logits(), vocab, static_cast<std::size_t>(target));
}

struct RelationRetention {
    std::size_t total = 0;
    std::size_t kept = 0;
};

struct FilterReport {
    std::vector<std::size_t> kept;  // indices into the input prompt list
    std::map<std::string, RelationRetention> by_relation;
    std::size_t k = 10;
};

// Keeps prompts whose target first token ranks within the top k under the full model.
inline FilterReport filter_known(const Model& model, const std::vector<TokenizedPrompt>& prompts,
                                 const std::vector<KnowledgeTriplet>& records, std::size_t k = 10,
                                 std::size_t threads = 0) {
    std::vector<std::size_t> ranks(prompts.size());
    parallel_for(prompts.size(), threads, [&](std::size_t i) {
        const auto r = run_full(model, prompts[i].tokens);
        ranks[i] = target_rank(r.cache, model.vocab_size(), prompts[i].target_first_token);
    });
    FilterReport rep;
    rep.k = k;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        const auto& rel = records.at(prompts[i].source_index).relation_id;
        auto& rr = rep.by_relation[rel];
        ++rr.total;
        if (ranks[i] <= k) {
            ++rr.kept;
            rep.kept.push_back(i);
        }
    }
    return rep;
}

}  // namespace kc
