#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace rolepatch {

struct TokenizerError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct FileMissing : TokenizerError {
    using TokenizerError::TokenizerError;
};
struct MalformedVocab : TokenizerError {
    using TokenizerError::TokenizerError;
};
struct MalformedMerges : TokenizerError {
    using TokenizerError::TokenizerError;
};
struct NoSingleTokenForm : TokenizerError {
    using TokenizerError::TokenizerError;
};
struct OutOfVocabWord : TokenizerError {
    using TokenizerError::TokenizerError;
};

enum class TokenizerKind { Bpe, Whitespace };

// The single-token surface forms used at the answer position, with their ids.
struct AnswerTokens {
    int yes_id = -1;
    int no_id = -1;
    std::string yes_surface;
    std::string no_surface;
};

namespace detail {

struct Utf8Char {
    std::uint32_t cp;
    std::size_t len;
};

// Tolerant decode: invalid sequences fall back to single bytes.
inline Utf8Char decode_utf8(std::string_view text, std::size_t i) {
    unsigned char c = static_cast<unsigned char>(text[i]);
    if ((c & 0x80u) == 0) return {c, 1};
    if ((c & 0xE0u) == 0xC0 && i + 1 < text.size())
        return {static_cast<std::uint32_t>(((c & 0x1Fu) << 6) |
                    (static_cast<unsigned char>(text[i + 1]) & 0x3Fu)),
                2};
    if ((c & 0xF0u) == 0xE0 && i + 2 < text.size())
        return {static_cast<std::uint32_t>(((c & 0x0Fu) << 12) |
                    ((static_cast<unsigned char>(text[i + 1]) & 0x3Fu) << 6) |
                    (static_cast<unsigned char>(text[i + 2]) & 0x3Fu)),
                3};
    if ((c & 0xF8u) == 0xF0 && i + 3 < text.size())
        return {static_cast<std::uint32_t>(((c & 0x07u) << 18) |
                    ((static_cast<unsigned char>(text[i + 1]) & 0x3Fu) << 12) |
                    ((static_cast<unsigned char>(text[i + 2]) & 0x3Fu) << 6) |
                    (static_cast<unsigned char>(text[i + 3]) & 0x3Fu)),
                4};
    return {c, 1};
}

inline void append_utf8(std::string& out, std::uint32_t cp) {
    if (cp < 0x80) {
        out += static_cast<char>(cp);
    } else if (cp < 0x800) {
        out += static_cast<char>(0xC0 | (cp >> 6));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
        out += static_cast<char>(0xE0 | (cp >> 12));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
        out += static_cast<char>(0xF0 | (cp >> 18));
        out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    }
}

// Character classes for the GPT-2 pre-tokenizer pattern. Covers the scripts
// that occur in ranking prompts and the parity corpus; not a full Unicode
// category table.
inline bool is_space_cp(std::uint32_t cp) {
    switch (cp) {
        case ' ': case '\t': case '\n': case '\r': case 0x0B: case 0x0C:
        case 0x1C: case 0x1D: case 0x1E: case 0x1F:
        case 0x85: case 0xA0: case 0x1680: case 0x2028: case 0x2029:
        case 0x202F: case 0x205F: case 0x3000:
            return true;
        default:
            return cp >= 0x2000 && cp <= 0x200A;
    }
}

inline bool is_number_cp(std::uint32_t cp) {
    if (cp < 128) return cp >= '0' && cp <= '9';
    if (cp >= 0x0660 && cp <= 0x0669) return true; // Arabic-Indic
    if (cp >= 0x0966 && cp <= 0x096F) return true; // Devanagari
    if (cp >= 0xFF10 && cp <= 0xFF19) return true; // fullwidth
    return false;
}

inline bool is_letter_cp(std::uint32_t cp) {
    if (cp < 128)
        return (cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z');
    if (cp == 0x00D7 || cp == 0x00F7) return false; // multiply/divide signs
    if (cp >= 0x00C0 && cp <= 0x024F) return true;  // Latin-1 sup + extended
    if (cp == 0x00AA || cp == 0x00B5 || cp == 0x00BA) return true;
    if (cp >= 0x0370 && cp <= 0x03FF && cp != 0x03A2) return true; // Greek
    if (cp >= 0x0400 && cp <= 0x052F) return true;  // Cyrillic
    if (cp >= 0x0530 && cp <= 0x058F) return true;  // Armenian
    if (cp >= 0x05D0 && cp <= 0x05EA) return true;  // Hebrew
    if (cp >= 0x0620 && cp <= 0x064A) return true;  // Arabic
    if (cp >= 0x0900 && cp <= 0x097F && !(cp >= 0x0966 && cp <= 0x096F))
        return true;                                // Devanagari
    if (cp >= 0x0E01 && cp <= 0x0E5B) return true;  // Thai
    if (cp >= 0x3040 && cp <= 0x30FF && cp != 0x3097 && cp != 0x3098)
        return true;                                // Hiragana/Katakana
    if (cp >= 0x3400 && cp <= 0x4DBF) return true;  // CJK ext A
    if (cp >= 0x4E00 && cp <= 0x9FFF) return true;  // CJK unified
    if (cp >= 0xAC00 && cp <= 0xD7A3) return true;  // Hangul
    if (cp >= 0xF900 && cp <= 0xFAFF) return true;  // CJK compat
    return false;
}

// Splits text into the pieces produced by the GPT-2 pre-tokenizer regex
//   's|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+
// implemented directly over codepoints (std::regex lacks \p classes).
inline std::vector<std::string> pretokenize(std::string_view text) {
    // Decode once; keep byte offsets so pieces can be sliced from the input.
    std::vector<std::uint32_t> cps;
    std::vector<std::size_t> offs; // byte offset of each codepoint
    for (std::size_t i = 0; i < text.size();) {
        Utf8Char u = decode_utf8(text, i);
        cps.push_back(u.cp);
        offs.push_back(i);
        i += u.len;
    }
    offs.push_back(text.size());

    std::vector<std::string> pieces;
    auto slice = [&](std::size_t a, std::size_t b) {
        pieces.emplace_back(text.substr(offs[a], offs[b] - offs[a]));
    };

    std::size_t n = cps.size();
    std::size_t i = 0;
    bool pending_space = false; // a single ' ' consumed by the next piece
    while (i < n) {
        std::size_t start = pending_space ? i - 1 : i;
        std::uint32_t c = cps[i];

        if (!pending_space && c == '\'') {
            // Contraction alternatives, case-sensitive, tried first.
            auto rest = [&](std::size_t k) {
                return i + k < n ? cps[i + k] : 0u;
            };
            std::size_t len = 0;
            std::uint32_t c1 = rest(1), c2 = rest(2);
            if (c1 == 's' || c1 == 't' || c1 == 'm' || c1 == 'd') len = 2;
            else if ((c1 == 'r' && c2 == 'e') || (c1 == 'v' && c2 == 'e') ||
                     (c1 == 'l' && c2 == 'l')) len = 3;
            if (len > 0) {
                slice(i, i + len);
                i += len;
                continue;
            }
        }

        if (is_letter_cp(c)) {
            std::size_t j = i;
            while (j < n && is_letter_cp(cps[j])) ++j;
            slice(start, j);
            i = j;
            pending_space = false;
            continue;
        }
        if (is_number_cp(c)) {
            std::size_t j = i;
            while (j < n && is_number_cp(cps[j])) ++j;
            slice(start, j);
            i = j;
            pending_space = false;
            continue;
        }
        if (!is_space_cp(c)) {
            std::size_t j = i;
            while (j < n && !is_space_cp(cps[j]) && !is_letter_cp(cps[j]) &&
                   !is_number_cp(cps[j]))
                ++j;
            slice(start, j);
            i = j;
            pending_space = false;
            continue;
        }

        // Whitespace run [i, j).
        std::size_t j = i;
        while (j < n && is_space_cp(cps[j])) ++j;
        if (j == n) {
            slice(i, j); // \s+ at end of text
            i = j;
        } else if (j - i >= 2) {
            // \s+(?!\S) backtracks exactly one char when a non-space follows.
            slice(i, j - 1);
            i = j - 1;
            if (cps[i] == ' ') {
                pending_space = true;
                ++i;
            }
        } else if (c == ' ') {
            pending_space = true; // joins the following piece via " ?"
            ++i;
        } else {
            slice(i, i + 1); // lone non-space-char whitespace, e.g. "\n"
            ++i;
        }
    }
    if (pending_space) pieces.emplace_back(" "); // text ended on that space
    return pieces;
}

} // namespace detail

// Text <-> token ids. Two flavors: byte-level BPE loaded from GPT-2-format
// vocab.json/merges.txt, and a whitespace tokenizer for toy models.
// Immutable after construction; concurrent reads are safe.
class Tokenizer {
public:
    static Tokenizer load_bpe(const std::string& vocab_file,
                              const std::string& merges_file) {
        Tokenizer t;
        t.kind_ = TokenizerKind::Bpe;
        t.load_vocab_json(vocab_file);
        t.load_merges(merges_file);
        t.build_byte_maps();
        return t;
    }

    static Tokenizer whitespace(const std::map<std::string, int>& vocab) {
        Tokenizer t;
        t.kind_ = TokenizerKind::Whitespace;
        int max_id = -1;
        for (const auto& [word, id] : vocab) {
            if (id < 0) throw MalformedVocab("negative token id for: " + word);
            t.vocab_[word] = id;
            max_id = std::max(max_id, id);
        }
        t.id_to_token_.assign(static_cast<std::size_t>(max_id) + 1, "");
        for (const auto& [word, id] : vocab)
            t.id_to_token_[static_cast<std::size_t>(id)] = word;
        return t;
    }

    static Tokenizer load_whitespace(const std::string& vocab_file) {
        std::ifstream in(vocab_file);
        if (!in) throw FileMissing("vocab file missing: " + vocab_file);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const std::exception& e) {
            throw MalformedVocab(std::string("vocab parse error: ") + e.what());
        }
        if (!j.is_object()) throw MalformedVocab("vocab must be a JSON object");
        std::map<std::string, int> vocab;
        for (auto& [k, v] : j.items()) vocab[k] = v.get<int>();
        return whitespace(vocab);
    }

    TokenizerKind kind() const { return kind_; }
    int vocab_size() const { return static_cast<int>(id_to_token_.size()); }

    std::optional<int> token_id(std::string_view token) const {
        auto it = vocab_.find(std::string(token));
        if (it == vocab_.end()) return std::nullopt;
        return it->second;
    }

    std::vector<int> encode(std::string_view text) const {
        if (kind_ == TokenizerKind::Whitespace) return encode_whitespace(text);
        std::vector<int> ids;
        for (const auto& piece : detail::pretokenize(text)) {
            std::string proxied;
            proxied.reserve(piece.size() * 2);
            for (unsigned char b : piece) proxied += byte_encoder_[b];
            bpe_piece(proxied, ids);
        }
        return ids;
    }

    std::string decode(std::span<const int> ids) const {
        std::string out;
        if (kind_ == TokenizerKind::Whitespace) {
            for (std::size_t i = 0; i < ids.size(); ++i) {
                if (i > 0) out += ' ';
                out += token_string(ids[i]);
            }
            return out;
        }
        std::string proxied;
        for (int id : ids) proxied += token_string(id);
        for (std::size_t i = 0; i < proxied.size();) {
            auto u = detail::decode_utf8(proxied, i);
            std::string key = proxied.substr(i, u.len);
            auto it = byte_decoder_.find(key);
            if (it == byte_decoder_.end())
                throw TokenizerError("unmapped proxy character in decode");
            out += static_cast<char>(it->second);
            i += u.len;
        }
        return out;
    }

    // Picks the answer-token surface forms. Prompt skeletons end with a
    // non-whitespace character ("Answer:"), so the leading-space variant is
    // preferred when it is a single token.
    AnswerTokens resolve_answer_tokens() const {
        AnswerTokens a;
        auto pick = [&](std::string_view word, int& id, std::string& surface) {
            std::vector<std::string> candidates;
            if (kind_ == TokenizerKind::Bpe)
                candidates.push_back(" " + std::string(word));
            candidates.emplace_back(word);
            for (const std::string& cand : candidates) {
                std::vector<int> ids = try_encode(cand);
                if (ids.size() == 1) {
                    id = ids[0];
                    surface = cand;
                    return;
                }
            }
            throw NoSingleTokenForm("no single-token form for \"" +
                                    std::string(word) + "\"");
        };
        pick("Yes", a.yes_id, a.yes_surface);
        pick("No", a.no_id, a.no_surface);
        return a;
    }

private:
    Tokenizer() = default;

    const std::string& token_string(int id) const {
        if (id < 0 || id >= vocab_size() ||
            id_to_token_[static_cast<std::size_t>(id)].empty())
            throw TokenizerError("token id out of range: " + std::to_string(id));
        return id_to_token_[static_cast<std::size_t>(id)];
    }

    std::vector<int> try_encode(std::string_view text) const {
        try {
            return encode(text);
        } catch (const OutOfVocabWord&) {
            return {};
        }
    }

    std::vector<int> encode_whitespace(std::string_view text) const {
        std::vector<int> ids;
        std::size_t i = 0;
        while (i < text.size()) {
            while (i < text.size() &&
                   std::isspace(static_cast<unsigned char>(text[i])))
                ++i;
            std::size_t j = i;
            while (j < text.size() &&
                   !std::isspace(static_cast<unsigned char>(text[j])))
                ++j;
            if (j > i) {
                std::string word(text.substr(i, j - i));
                auto it = vocab_.find(word);
                if (it == vocab_.end())
                    throw OutOfVocabWord("word not in vocab: " + word);
                ids.push_back(it->second);
            }
            i = j;
        }
        return ids;
    }

    void load_vocab_json(const std::string& vocab_file) {
        std::ifstream in(vocab_file);
        if (!in) throw FileMissing("vocab file missing: " + vocab_file);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const std::exception& e) {
            throw MalformedVocab(std::string("vocab parse error: ") + e.what());
        }
        if (!j.is_object() || j.empty())
            throw MalformedVocab("vocab must be a non-empty JSON object");
        int max_id = -1;
        vocab_.reserve(j.size());
        for (auto& [token, v] : j.items()) {
            if (!v.is_number_integer())
                throw MalformedVocab("non-integer id for token: " + token);
            int id = v.get<int>();
            if (id < 0) throw MalformedVocab("negative id for token: " + token);
            vocab_[token] = id;
            max_id = std::max(max_id, id);
        }
        id_to_token_.assign(static_cast<std::size_t>(max_id) + 1, "");
        for (const auto& [token, id] : vocab_)
            id_to_token_[static_cast<std::size_t>(id)] = token;
    }

    void load_merges(const std::string& merges_file) {
        std::ifstream in(merges_file);
        if (!in) throw FileMissing("merges file missing: " + merges_file);
        std::string line;
        int rank = 0;
        bool first = true;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (first && line.rfind("#version", 0) == 0) {
                first = false;
                continue;
            }
            first = false;
            if (line.empty()) continue;
            std::size_t sp = line.find(' ');
            if (sp == std::string::npos || sp == 0 || sp + 1 >= line.size() ||
                line.find(' ', sp + 1) != std::string::npos)
                throw MalformedMerges("bad merge line: " + line);
            merge_ranks_.emplace(line, rank++);
        }
        if (merge_ranks_.empty())
            throw MalformedMerges("merges file has no merge pairs");
    }

    void build_byte_maps() {
        // bytes_to_unicode: printable latin bytes map to themselves, the rest
        // to codepoints 256+, matching the published GPT-2 byte encoder.
        std::array<bool, 256> direct{};
        auto mark = [&](int lo, int hi) {
            for (int b = lo; b <= hi; ++b) direct[static_cast<std::size_t>(b)] = true;
        };
        mark('!', '~');
        mark(0xA1, 0xAC);
        mark(0xAE, 0xFF);
        int next = 0;
        for (int b = 0; b < 256; ++b) {
            std::uint32_t cp = direct[static_cast<std::size_t>(b)]
                                   ? static_cast<std::uint32_t>(b)
                                   : static_cast<std::uint32_t>(256 + next++);
            std::string s;
            detail::append_utf8(s, cp);
            byte_encoder_[static_cast<std::size_t>(b)] = s;
            byte_decoder_[s] = static_cast<std::uint8_t>(b);
        }
    }

    // Greedy BPE over one pre-tokenized piece: repeatedly merge the pair with
    // the lowest merge rank until none remains, then emit vocabulary ids.
    void bpe_piece(const std::string& proxied, std::vector<int>& ids) const {
        if (proxied.empty()) return;
        auto whole = vocab_.find(proxied);
        if (whole != vocab_.end()) {
            ids.push_back(whole->second);
            return;
        }
        std::vector<std::string> word;
        for (std::size_t i = 0; i < proxied.size();) {
            auto u = detail::decode_utf8(proxied, i);
            word.push_back(proxied.substr(i, u.len));
            i += u.len;
        }
        std::string key;
        while (word.size() > 1) {
            int best_rank = std::numeric_limits<int>::max();
            std::size_t best = 0;
            for (std::size_t i = 0; i + 1 < word.size(); ++i) {
                key.assign(word[i]);
                key += ' ';
                key += word[i + 1];
                auto it = merge_ranks_.find(key);
                if (it != merge_ranks_.end() && it->second < best_rank) {
                    best_rank = it->second;
                    best = i;
                }
            }
            if (best_rank == std::numeric_limits<int>::max()) break;
            // Merge every occurrence of the winning pair, left to right.
            const std::string first = word[best];
            const std::string second = word[best + 1];
            std::vector<std::string> merged;
            merged.reserve(word.size());
            for (std::size_t i = 0; i < word.size();) {
                if (i + 1 < word.size() && word[i] == first &&
                    word[i + 1] == second) {
                    merged.push_back(first + second);
                    i += 2;
                } else {
                    merged.push_back(word[i]);
                    ++i;
                }
            }
            word = std::move(merged);
        }
        for (const auto& tok : word) {
            auto it = vocab_.find(tok);
            if (it == vocab_.end())
                throw TokenizerError("BPE produced unknown token: " + tok);
            ids.push_back(it->second);
        }
    }

    TokenizerKind kind_ = TokenizerKind::Bpe;
    std::unordered_map<std::string, int> vocab_;
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int> merge_ranks_;
    std::array<std::string, 256> byte_encoder_;
    std::unordered_map<std::string, std::uint8_t> byte_decoder_;
};

} // namespace rolepatch
