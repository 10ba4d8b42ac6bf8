#pragma once

#include <cctype>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace kct {

// Minimal DOT reader for the subset export_dot emits; throws on anything else.
struct DotGraph {
    std::set<std::string> nodes;
    struct E {
        std::string src, dst;
        std::map<std::string, std::string> attrs;
    };
    std::vector<E> edges;
    std::vector<std::set<std::string>> same_rank;
};

class DotReader {
public:
    explicit DotReader(const std::string& s) : s_(s) {}

    DotGraph parse() {
        expect_word("digraph");
        ident();
        expect('{');
        while (!peek('}')) stmt(false);
        expect('}');
        skip();
        if (i_ != s_.size()) fail("trailing text");
        for (const auto& e : g_.edges) {
            if (!g_.nodes.count(e.src) || !g_.nodes.count(e.dst)) fail("edge endpoint not declared: " + e.src + " -> " + e.dst);
        }
        return g_;
    }

private:
    [[noreturn]] void fail(const std::string& what) { throw std::runtime_error("dot: " + what + " at " + std::to_string(i_)); }
    void skip() {
        while (i_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[i_]))) ++i_;
    }
    bool peek(char c) {
        skip();
        return i_ < s_.size() && s_[i_] == c;
    }
    void expect(char c) {
        if (!peek(c)) fail(std::string("expected '") + c + "'");
        ++i_;
    }
    void expect_word(const std::string& w) {
        if (ident() != w) fail("expected " + w);
    }
    std::string ident() {
        skip();
        std::string out;
        if (i_ < s_.size() && s_[i_] == '"') {
            ++i_;
            while (i_ < s_.size() && s_[i_] != '"') {
                if (s_[i_] == '\\') ++i_;
                out += s_[i_++];
            }
            expect('"');
            return out;
        }
        while (i_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[i_])) || s_[i_] == '_' || s_[i_] == '.')) {
            out += s_[i_++];
        }
        if (out.empty()) fail("expected identifier");
        return out;
    }
    std::map<std::string, std::string> attrs() {
        std::map<std::string, std::string> a;
        if (!peek('[')) return a;
        expect('[');
        while (!peek(']')) {
            const auto k = ident();
            expect('=');
            a[k] = ident();
            if (peek(',')) expect(',');
        }
        expect(']');
        return a;
    }
    void stmt(bool in_rank) {
        if (peek('{')) {
            expect('{');
            std::set<std::string> group;
            expect_word("rank");
            expect('=');
            expect_word("same");
            expect(';');
            while (!peek('}')) {
                const auto n = ident();
                attrs();
                expect(';');
                g_.nodes.insert(n);
                group.insert(n);
            }
            expect('}');
            g_.same_rank.push_back(group);
            return;
        }
        const auto a = ident();
        if (peek('=')) {
            expect('=');
            ident();
            expect(';');
            return;
        }
        if (a == "node" || a == "edge") {
            attrs();
            expect(';');
            return;
        }
        skip();
        if (s_.compare(i_, 2, "->") == 0) {
            i_ += 2;
            const auto b = ident();
            g_.edges.push_back({a, b, attrs()});
            expect(';');
            return;
        }
        (void)in_rank;
        attrs();
        expect(';');
        g_.nodes.insert(a);
    }

    const std::string& s_;
    std::size_t i_ = 0;
    DotGraph g_;
};

}  // namespace kct
