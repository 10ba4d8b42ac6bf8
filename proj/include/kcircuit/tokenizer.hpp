#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "common.hpp"
#include "detail/unicode_tables.hpp"

namespace kc {

namespace unicode {

template <std::size_t N>
bool in_ranges(const std::array<detail::CodepointRange, N>& ranges, std::uint32_t cp) {
    auto it = std::upper_bound(ranges.begin(), ranges.end(), cp,
                               [](std::uint32_t v, const detail::CodepointRange& r) { return v < r.lo; });
    if (it == ranges.begin()) return false;
    --it;
    return cp >= it->lo && cp <= it->hi;
}

inline bool is_letter(std::uint32_t cp) { return in_ranges(detail::k_letter_ranges, cp); }
inline bool is_number(std::uint32_t cp) { return in_ranges(detail::k_number_ranges, cp); }
inline bool is_space(std::uint32_t cp) { return in_ranges(detail::k_space_ranges, cp); }

inline void append_utf8(std::string& out, std::uint32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

struct Codepoint {
    std::uint32_t cp;
    std::size_t offset;  // byte offset
    std::size_t len;     // byte length
};

// Malformed sequences decode byte-by-byte as U+FFFD so offsets still cover every input byte.
inline std::vector<Codepoint> decode_utf8(std::string_view s) {
    std::vector<Codepoint> out;
    std::size_t i = 0;
    while (i < s.size()) {
        const auto b0 = static_cast<unsigned char>(s[i]);
        std::size_t len = 0;
        std::uint32_t cp = 0;
        if (b0 < 0x80) {
            len = 1;
            cp = b0;
        } else if ((b0 & 0xE0) == 0xC0) {
            len = 2;
            cp = b0 & 0x1F;
        } else if ((b0 & 0xF0) == 0xE0) {
            len = 3;
            cp = b0 & 0x0F;
        } else if ((b0 & 0xF8) == 0xF0) {
            len = 4;
            cp = b0 & 0x07;
        }
        bool ok = len > 0 && i + len <= s.size();
        for (std::size_t k = 1; ok && k < len; ++k) {
            const auto b = static_cast<unsigned char>(s[i + k]);
            ok = (b & 0xC0) == 0x80;
            cp = (cp << 6) | (b & 0x3F);
        }
        if (!ok) {
            out.push_back({0xFFFD, i, 1});
            ++i;
        } else {
            out.push_back({cp, i, len});
            i += len;
        }
    }
    return out;
}

}  // namespace unicode

// GPT-2 byte-level BPE.
class Tokenizer {
public:
    static Tokenizer from_files(const std::string& vocab_json, const std::string& merges_txt) {
        std::ifstream vf(vocab_json);
        require(vf.good(), "tokenizer: cannot open " + vocab_json);
        std::ifstream mf(merges_txt);
        require(mf.good(), "tokenizer: cannot open " + merges_txt);
        std::stringstream vs, ms;
        vs << vf.rdbuf();
        ms << mf.rdbuf();
        return from_strings(vs.str(), ms.str());
    }

    static Tokenizer from_strings(const std::string& vocab_json, const std::string& merges_txt) {
        Tokenizer t;
        t.init_byte_maps();
        nlohmann::json vocab;
        try {
            vocab = nlohmann::json::parse(vocab_json);
        } catch (const nlohmann::json::exception& e) {
            throw Error(std::string("tokenizer: malformed vocab: ") + e.what());
        }
        require(vocab.is_object() && !vocab.empty(), "tokenizer: malformed vocab: expected a non-empty object");
        std::size_t max_id = 0;
        for (const auto& [key, value] : vocab.items()) {
            require(value.is_number_integer() && value.get<long long>() >= 0,
                    "tokenizer: malformed vocab: bad id for '" + key + "'");
            max_id = std::max(max_id, value.get<std::size_t>());
        }
        t.id_to_bytes_.assign(max_id + 1, std::string());
        std::vector<bool> seen(max_id + 1, false);
        for (const auto& [key, value] : vocab.items()) {
            const auto id = value.get<std::size_t>();
            std::string bytes;
            if (!t.proxy_to_bytes(key, bytes)) {
                // special tokens such as <|endoftext|> are plain text, not byte proxies
                bytes = key;
            }
            require(!seen[id], "tokenizer: malformed vocab: duplicate id " + std::to_string(id));
            seen[id] = true;
            t.id_to_bytes_[id] = bytes;
            t.bytes_to_id_.emplace(bytes, static_cast<TokenId>(id));
        }
        for (int b = 0; b < 256; ++b) {
            require(t.bytes_to_id_.count(std::string(1, static_cast<char>(b))) != 0,
                    "tokenizer: malformed vocab: byte " + std::to_string(b) + " has no token");
        }

        std::istringstream ms(merges_txt);
        std::string line;
        int rank = 0;
        std::size_t line_no = 0;
        while (std::getline(ms, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty() || line.rfind("#version", 0) == 0) continue;
            const auto sp = line.find(' ');
            require(sp != std::string::npos && sp > 0 && sp + 1 < line.size() && line.find(' ', sp + 1) == std::string::npos,
                    "tokenizer: unknown merge entry on line " + std::to_string(line_no) + ": '" + line + "'");
            std::string a, b;
            require(t.proxy_to_bytes(line.substr(0, sp), a) && t.proxy_to_bytes(line.substr(sp + 1), b),
                    "tokenizer: unknown merge entry on line " + std::to_string(line_no) + ": '" + line + "'");
            require(t.bytes_to_id_.count(a) && t.bytes_to_id_.count(b) && t.bytes_to_id_.count(a + b),
                    "tokenizer: unknown merge entry on line " + std::to_string(line_no) + ": '" + line +
                        "' (not in vocab)");
            t.merge_rank_.emplace(pair_key(a, b), rank++);
        }
        return t;
    }

    std::size_t vocab_size() const { return id_to_bytes_.size(); }

    Tokens encode(std::string_view text) const {
        Tokens out;
        for (const auto& piece : pretokenize(text)) {
            bpe(piece, out);
        }
        return out;
    }

    std::string decode(const Tokens& ids) const {
        std::string out;
        for (auto id : ids) out += token_bytes(id);
        return out;
    }

    const std::string& token_bytes(TokenId id) const {
        require(id >= 0 && static_cast<std::size_t>(id) < id_to_bytes_.size(),
                "tokenizer: token id " + std::to_string(id) + " out of range");
        return id_to_bytes_[static_cast<std::size_t>(id)];
    }

    std::optional<TokenId> token_id(std::string_view bytes) const {
        auto it = bytes_to_id_.find(std::string(bytes));
        if (it == bytes_to_id_.end()) return std::nullopt;
        return it->second;
    }

    // Splits text into the pieces BPE runs on, following the GPT-2 pattern
    //   's|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+
    static std::vector<std::string_view> pretokenize(std::string_view text) {
        using namespace unicode;
        const auto cps = decode_utf8(text);
        const std::size_t n = cps.size();
        auto cls = [&](std::size_t i) {
            const auto c = cps[i].cp;
            if (is_letter(c)) return 'L';
            if (is_number(c)) return 'N';
            if (is_space(c)) return 'S';
            return 'O';
        };
        auto byte_at = [&](std::size_t i) { return i < n ? cps[i].offset : text.size(); };
        std::vector<std::string_view> out;
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            if (cps[i].cp == '\'' && i + 1 < n) {
                static constexpr std::array<std::string_view, 7> k_suffixes = {"s", "t", "re", "ve", "m", "ll", "d"};
                const auto rest = text.substr(cps[i + 1].offset);
                for (auto suf : k_suffixes) {
                    if (rest.substr(0, suf.size()) == suf) {
                        j = i + 1 + suf.size();  // suffixes are ASCII: one codepoint per byte
                        break;
                    }
                }
            }
            if (j == i) {
                const char c0 = cls(i);
                const bool lead_space = cps[i].cp == ' ' && i + 1 < n;
                const char c1 = lead_space ? cls(i + 1) : 'S';
                char run = 0;
                std::size_t start = i;
                if (c0 == 'L' || c0 == 'N' || c0 == 'O') {
                    run = c0;
                } else if (lead_space && c1 != 'S') {
                    run = c1;
                    start = i + 1;
                }
                if (run) {
                    j = start;
                    while (j < n && cls(j) == run) ++j;
                } else {
                    std::size_t k = i;
                    while (k < n && cls(k) == 'S') ++k;
                    if (k == n || k - i == 1) {
                        j = k;
                    } else {
                        j = k - 1;
                    }
                }
            }
            out.push_back(text.substr(cps[i].offset, byte_at(j) - cps[i].offset));
            i = j;
        }
        return out;
    }

private:
    static std::string pair_key(const std::string& a, const std::string& b) {
        return std::to_string(a.size()) + ":" + a + b;
    }

    void init_byte_maps() {
        std::vector<int> direct;
        for (int b = '!'; b <= '~'; ++b) direct.push_back(b);
        for (int b = 0xA1; b <= 0xAC; ++b) direct.push_back(b);
        for (int b = 0xAE; b <= 0xFF; ++b) direct.push_back(b);
        std::array<std::uint32_t, 256> proxy{};
        std::vector<bool> is_direct(256, false);
        for (int b : direct) is_direct[static_cast<std::size_t>(b)] = true;
        std::uint32_t next = 256;
        for (int b = 0; b < 256; ++b) {
            proxy[static_cast<std::size_t>(b)] = is_direct[static_cast<std::size_t>(b)] ? static_cast<std::uint32_t>(b) : next++;
        }
        for (int b = 0; b < 256; ++b) {
            proxy_to_byte_[proxy[static_cast<std::size_t>(b)]] = static_cast<unsigned char>(b);
        }
    }

    // Maps the printable proxy alphabet back to raw bytes; false if a codepoint is not a proxy.
    bool proxy_to_bytes(std::string_view s, std::string& out) const {
        out.clear();
        for (const auto& c : unicode::decode_utf8(s)) {
            auto it = proxy_to_byte_.find(c.cp);
            if (it == proxy_to_byte_.end() || (c.cp == 0xFFFD && c.len == 1)) return false;
            out.push_back(static_cast<char>(it->second));
        }
        return !out.empty();
    }

    void bpe(std::string_view piece, Tokens& out) const {
        std::vector<std::string> parts;
        parts.reserve(piece.size());
        for (char c : piece) parts.emplace_back(1, c);
        while (parts.size() > 1) {
            int best = std::numeric_limits<int>::max();
            std::size_t best_i = 0;
            for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
                auto it = merge_rank_.find(pair_key(parts[i], parts[i + 1]));
                if (it != merge_rank_.end() && it->second < best) {
                    best = it->second;
                    best_i = i;
                }
            }
            if (best == std::numeric_limits<int>::max()) break;
            const std::string a = parts[best_i], b = parts[best_i + 1];
            std::vector<std::string> merged;
            merged.reserve(parts.size());
            for (std::size_t i = 0; i < parts.size();) {
                if (i + 1 < parts.size() && parts[i] == a && parts[i + 1] == b) {
                    merged.push_back(a + b);
                    i += 2;
                } else {
                    merged.push_back(parts[i]);
                    ++i;
                }
            }
            parts = std::move(merged);
        }
        for (const auto& p : parts) {
            auto it = bytes_to_id_.find(p);
            require(it != bytes_to_id_.end(), "tokenizer: piece has no token id");
            out.push_back(it->second);
        }
    }

    std::unordered_map<std::uint32_t, unsigned char> proxy_to_byte_;
    std::vector<std::string> id_to_bytes_;
    std::unordered_map<std::string, TokenId> bytes_to_id_;
    std::unordered_map<std::string, int> merge_rank_;
};

}  // namespace kc
