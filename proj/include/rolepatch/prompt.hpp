#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "rolepatch/rng.hpp"
#include "rolepatch/tokenizer.hpp"

namespace rolepatch {

struct PromptError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct UnknownSlotWord : PromptError {
    using PromptError::PromptError;
};
struct MixedPolarity : PromptError {
    using PromptError::PromptError;
};
struct TokenBudgetExceeded : PromptError {
    using PromptError::PromptError;
};
struct MissingLabel : PromptError {
    using PromptError::PromptError;
};
struct InvalidOrder : PromptError {
    using PromptError::PromptError;
};
struct SlotNotAligned : PromptError {
    using PromptError::PromptError;
};

enum class Polarity { Positive, Negative };
enum class Answer { Yes, No };
enum class Mode { Pointwise, Pairwise };

inline const char* to_string(Polarity p) {
    return p == Polarity::Positive ? "positive" : "negative";
}
inline const char* to_string(Answer a) { return a == Answer::Yes ? "Yes" : "No"; }
inline const char* to_string(Mode m) {
    return m == Mode::Pointwise ? "pointwise" : "pairwise";
}

// The lexical slots of the role template: 10 positive and 10 negative words
// for the adjective and adverb slots, 3 shared modal verbs.
struct LexiconSlots {
    std::vector<std::string> adjectives_positive;
    std::vector<std::string> adjectives_negative;
    std::vector<std::string> adverbs_positive;
    std::vector<std::string> adverbs_negative;
    std::vector<std::string> modals;

    static LexiconSlots default_slots() {
        LexiconSlots s;
        s.adjectives_positive = {"talented", "expert",    "superb",
                                 "capable",  "reliable",  "gifted",
                                 "brilliant", "focused",  "clear",
                                 "knowledgeable"};
        s.adjectives_negative = {"faulty",   "confused", "clumsy",
                                 "sluggish", "incorrect", "awful",
                                 "hopeless", "flawed",   "problematic",
                                 "unreliable"};
        s.adverbs_positive = {"carefully", "correctly", "swiftly",
                              "wisely",    "perfectly", "accurately",
                              "nicely",    "fairly",    "logically",
                              "clearly"};
        s.adverbs_negative = {"wrongly",  "poorly",      "mistakenly",
                              "slowly",   "falsely",     "terribly",
                              "badly",    "incorrectly", "sadly",
                              "horribly"};
        s.modals = {"can", "will", "shall"};
        return s;
    }

    void validate() const {
        auto check = [](const std::vector<std::string>& words,
                        const char* name) {
            if (words.empty())
                throw PromptError(std::string("empty slot list: ") + name);
            std::set<std::string> seen(words.begin(), words.end());
            if (seen.size() != words.size())
                throw PromptError(std::string("duplicate word in ") + name);
        };
        check(adjectives_positive, "adjectives_positive");
        check(adjectives_negative, "adjectives_negative");
        check(adverbs_positive, "adverbs_positive");
        check(adverbs_negative, "adverbs_negative");
        check(modals, "modals");
    }

    std::optional<Polarity> adjective_polarity(const std::string& w) const {
        if (contains(adjectives_positive, w)) return Polarity::Positive;
        if (contains(adjectives_negative, w)) return Polarity::Negative;
        return std::nullopt;
    }
    std::optional<Polarity> adverb_polarity(const std::string& w) const {
        if (contains(adverbs_positive, w)) return Polarity::Positive;
        if (contains(adverbs_negative, w)) return Polarity::Negative;
        return std::nullopt;
    }
    bool is_modal(const std::string& w) const { return contains(modals, w); }

    static LexiconSlots load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw PromptError("lexicon file missing: " + path);
        nlohmann::json j;
        in >> j;
        LexiconSlots s;
        j.at("adjectives").at("positive").get_to(s.adjectives_positive);
        j.at("adjectives").at("negative").get_to(s.adjectives_negative);
        j.at("adverbs").at("positive").get_to(s.adverbs_positive);
        j.at("adverbs").at("negative").get_to(s.adverbs_negative);
        j.at("modals").get_to(s.modals);
        s.validate();
        return s;
    }

    nlohmann::json to_json() const {
        return {{"adjectives",
                 {{"positive", adjectives_positive},
                  {"negative", adjectives_negative}}},
                {"adverbs",
                 {{"positive", adverbs_positive},
                  {"negative", adverbs_negative}}},
                {"modals", modals}};
    }

private:
    static bool contains(const std::vector<std::string>& v,
                         const std::string& w) {
        return std::find(v.begin(), v.end(), w) != v.end();
    }
};

// One rendered role sentence plus its slot fillers.
struct RolePrompt {
    std::string adjective;
    std::string modal;
    std::string adverb;
    Polarity polarity = Polarity::Positive;
    std::string text;
};

// Clean (positive role) and corrupted (negative role) counterparts sharing
// the same modal verb.
struct PromptPair {
    RolePrompt clean;
    RolePrompt corrupted;
};

inline bool starts_with_vowel(const std::string& word) {
    if (word.empty()) return false;
    switch (word.front()) {
        case 'a': case 'e': case 'i': case 'o': case 'u':
        case 'A': case 'E': case 'I': case 'O': case 'U':
            return true;
        default:
            return false;
    }
}

inline std::string article_for(const std::string& adjective) {
    return starts_with_vowel(adjective) ? "an" : "a";
}

// Renders the role template with the given slots. Adjective and adverb must
// come from the lexicon and share a polarity; the article follows the
// vowel-initial spelling rule.
inline RolePrompt render_role(const LexiconSlots& lexicon,
                              const std::string& adjective,
                              const std::string& modal,
                              const std::string& adverb) {
    auto adj_pol = lexicon.adjective_polarity(adjective);
    if (!adj_pol) throw UnknownSlotWord("unknown adjective: " + adjective);
    auto adv_pol = lexicon.adverb_polarity(adverb);
    if (!adv_pol) throw UnknownSlotWord("unknown adverb: " + adverb);
    if (!lexicon.is_modal(modal))
        throw UnknownSlotWord("unknown modal: " + modal);
    if (*adj_pol != *adv_pol)
        throw MixedPolarity("adjective \"" + adjective + "\" and adverb \"" +
                            adverb + "\" have different polarities");
    RolePrompt r;
    r.adjective = adjective;
    r.modal = modal;
    r.adverb = adverb;
    r.polarity = *adj_pol;
    r.text = "You are " + article_for(adjective) + " " + adjective +
             " search assistant that " + modal + " rank passages " + adverb +
             ", based on their relevance to a query.";
    return r;
}

// All adjective x modal x adverb combinations for one polarity, in
// adjective-major, then modal, then adverb order.
inline std::vector<RolePrompt> enumerate_roles(const LexiconSlots& lexicon,
                                               Polarity polarity) {
    lexicon.validate();
    const auto& adjectives = polarity == Polarity::Positive
                                 ? lexicon.adjectives_positive
                                 : lexicon.adjectives_negative;
    const auto& adverbs = polarity == Polarity::Positive
                              ? lexicon.adverbs_positive
                              : lexicon.adverbs_negative;
    std::vector<RolePrompt> roles;
    roles.reserve(adjectives.size() * lexicon.modals.size() * adverbs.size());
    for (const auto& adj : adjectives)
        for (const auto& modal : lexicon.modals)
            for (const auto& adv : adverbs)
                roles.push_back(render_role(lexicon, adj, modal, adv));
    return roles;
}

// Builds counter pairs for patching: every positive adjective/adverb and
// every negative adjective/adverb is used exactly once across the pairs;
// modals may repeat and are shared within a pair. Deterministic per seed.
inline std::vector<PromptPair> make_counter_pairs(const LexiconSlots& lexicon,
                                                  std::uint64_t seed,
                                                  std::size_t n_pairs = 10) {
    lexicon.validate();
    const std::size_t capacity = std::min(
        {lexicon.adjectives_positive.size(), lexicon.adjectives_negative.size(),
         lexicon.adverbs_positive.size(), lexicon.adverbs_negative.size()});
    if (capacity == 0) throw PromptError("lexicon has an empty slot list");
    const std::size_t n = std::min(n_pairs, capacity);

    Rng rng(seed);
    auto shuffled = [&](std::vector<std::string> v) {
        rng.shuffle(v);
        return v;
    };
    auto adj_pos = shuffled(lexicon.adjectives_positive);
    auto adv_pos = shuffled(lexicon.adverbs_positive);
    auto adj_neg = shuffled(lexicon.adjectives_negative);
    auto adv_neg = shuffled(lexicon.adverbs_negative);

    std::vector<PromptPair> pairs;
    pairs.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::string& modal =
            lexicon.modals[rng.next_below(lexicon.modals.size())];
        PromptPair p;
        p.clean = render_role(lexicon, adj_pos[i], modal, adv_pos[i]);
        p.corrupted = render_role(lexicon, adj_neg[i], modal, adv_neg[i]);
        pairs.push_back(std::move(p));
    }
    return pairs;
}

// Prompt segments. LastToken is always the final token of the instruction
// tail where the next-token prediction is read.
enum class Segment {
    Role,
    Document,
    DocumentA,
    DocumentB,
    Query,
    Instruction,
    LastToken
};

inline const char* to_string(Segment s) {
    switch (s) {
        case Segment::Role: return "role";
        case Segment::Document: return "document";
        case Segment::DocumentA: return "document_a";
        case Segment::DocumentB: return "document_b";
        case Segment::Query: return "query";
        case Segment::Instruction: return "instruction";
        case Segment::LastToken: return "last_token";
    }
    return "?";
}

inline Segment parse_segment(const std::string& s) {
    for (Segment seg : {Segment::Role, Segment::Document, Segment::DocumentA,
                        Segment::DocumentB, Segment::Query,
                        Segment::Instruction, Segment::LastToken})
        if (s == to_string(seg)) return seg;
    throw PromptError("unknown segment name: " + s);
}

// Order of the reorderable body segments. Instruction must come last so the
// answer position stays at the end of the prompt.
using SegmentOrder = std::vector<Segment>;

inline SegmentOrder default_order(Mode mode) {
    if (mode == Mode::Pointwise)
        return {Segment::Role, Segment::Document, Segment::Query,
                Segment::Instruction};
    return {Segment::Role, Segment::DocumentA, Segment::DocumentB,
            Segment::Query, Segment::Instruction};
}

struct SegmentRange {
    int begin = 0;
    int end = 0; // half-open
    int size() const { return end - begin; }
};

struct PromptOptions {
    bool add_bos = false;
    int bos_id = 0;
    int doc_token_budget = 220;
    int max_prompt_tokens = 0; // 0 = unlimited
};

// A fully assembled ranking prompt: token ids plus the token span of every
// segment, built by tokenizing segments in order and concatenating, which
// makes spans tile the sequence exactly.
struct RankingPrompt {
    Mode mode = Mode::Pointwise;
    std::string text;
    std::vector<int> token_ids;
    std::map<Segment, SegmentRange> segments;
    // adjective/modal/adverb token spans, absolute, when a role is present
    std::map<std::string, SegmentRange> slot_ranges;
    std::optional<RolePrompt> role;
    Answer expected_answer = Answer::Yes;

    const SegmentRange& span(Segment s) const {
        auto it = segments.find(s);
        if (it == segments.end())
            throw PromptError(std::string("prompt has no segment: ") +
                              to_string(s));
        return it->second;
    }

    std::vector<int> positions_of(Segment s) const {
        const SegmentRange& r = span(s);
        std::vector<int> p;
        p.reserve(static_cast<std::size_t>(r.size()));
        for (int i = r.begin; i < r.end; ++i) p.push_back(i);
        return p;
    }

    int length() const { return static_cast<int>(token_ids.size()); }

    nlohmann::json to_json() const {
        nlohmann::json segs = nlohmann::json::object();
        for (const auto& [seg, range] : segments)
            segs[to_string(seg)] = {range.begin, range.end};
        nlohmann::json slots = nlohmann::json::object();
        for (const auto& [slot, range] : slot_ranges)
            slots[slot] = {range.begin, range.end};
        nlohmann::json j{{"mode", to_string(mode)},
                         {"text", text},
                         {"token_ids", token_ids},
                         {"segments", segs},
                         {"expected_answer", to_string(expected_answer)}};
        if (role) {
            j["role"] = {{"adjective", role->adjective},
                         {"modal", role->modal},
                         {"adverb", role->adverb},
                         {"polarity", to_string(role->polarity)}};
            j["slot_ranges"] = slots;
        }
        return j;
    }
};

namespace detail {

// Truncates text to at most `budget` tokens, re-rendered as text.
inline std::string truncate_to_budget(const Tokenizer& tok,
                                      const std::string& text, int budget) {
    if (budget <= 0) return text;
    std::vector<int> ids = tok.encode(text);
    if (static_cast<int>(ids.size()) <= budget) return text;
    ids.resize(static_cast<std::size_t>(budget));
    return tok.decode(ids);
}

// Token count of a slot word as it appears in the template (after a space
// for BPE; a bare word for the whitespace tokenizer).
inline int slot_token_count(const Tokenizer& tok, const std::string& word) {
    if (tok.kind() == TokenizerKind::Whitespace) return 1;
    return static_cast<int>(tok.encode(" " + word).size());
}

} // namespace detail

struct PromptContent {
    std::optional<RolePrompt> role; // nullopt = no-role baseline
    std::string query;
    std::vector<std::string> docs;  // 1 for pointwise, 2 for pairwise
    std::vector<int> labels;        // graded relevance, aligned with docs
};

// Assembles a RankingPrompt. Segment strings are tokenized in order and
// concatenated; spans are recorded per segment and the slot spans inside the
// role are located by prefix token counting.
inline RankingPrompt build_prompt(const Tokenizer& tok, Mode mode,
                                  const PromptContent& content,
                                  const SegmentOrder& order,
                                  const PromptOptions& opts = {}) {
    const std::size_t expected_docs = mode == Mode::Pointwise ? 1 : 2;
    if (content.docs.size() != expected_docs)
        throw PromptError("expected " + std::to_string(expected_docs) +
                          " documents, got " +
                          std::to_string(content.docs.size()));
    if (content.labels.size() != content.docs.size())
        throw MissingLabel("every document needs a relevance label");

    SegmentOrder body = order.empty() ? default_order(mode) : order;
    {
        SegmentOrder expected_set = default_order(mode);
        SegmentOrder sorted_body = body, sorted_expected = expected_set;
        std::sort(sorted_body.begin(), sorted_body.end());
        std::sort(sorted_expected.begin(), sorted_expected.end());
        if (sorted_body != sorted_expected)
            throw InvalidOrder("segment order must be a permutation of the "
                               "mode's segment set");
        if (body.back() != Segment::Instruction)
            throw InvalidOrder("instruction segment must come last");
    }

    RankingPrompt out;
    out.mode = mode;
    out.role = content.role;

    // Per-segment strings; concatenated they form the prompt skeleton.
    std::map<Segment, std::string> parts;
    if (content.role)
        parts[Segment::Role] = content.role->text + "\n";
    if (mode == Mode::Pointwise) {
        parts[Segment::Document] =
            "Document: " +
            detail::truncate_to_budget(tok, content.docs[0],
                                       opts.doc_token_budget) +
            "\n";
        parts[Segment::Instruction] =
            "Does the document answer the query? Answer only 'Yes' or "
            "'No'.\nAnswer:";
        out.expected_answer =
            content.labels[0] > 0 ? Answer::Yes : Answer::No;
    } else {
        parts[Segment::DocumentA] =
            "Document A: " +
            detail::truncate_to_budget(tok, content.docs[0],
                                       opts.doc_token_budget) +
            "\n";
        parts[Segment::DocumentB] =
            "Document B: " +
            detail::truncate_to_budget(tok, content.docs[1],
                                       opts.doc_token_budget) +
            "\n";
        parts[Segment::Instruction] =
            "Is Document A more relevant to the query than Document B? "
            "Answer only 'Yes' or 'No'.\nAnswer:";
        if (content.labels[0] == content.labels[1])
            throw MissingLabel(
                "pairwise documents must have different relevance");
        out.expected_answer =
            content.labels[0] > content.labels[1] ? Answer::Yes : Answer::No;
    }
    parts[Segment::Query] = "Query: " + content.query + "\n";

    if (opts.add_bos) out.token_ids.push_back(opts.bos_id);

    for (Segment seg : body) {
        if (seg == Segment::Role && !content.role) continue;
        const std::string& part = parts.at(seg);
        const int begin = static_cast<int>(out.token_ids.size());
        std::vector<int> ids = tok.encode(part);
        out.token_ids.insert(out.token_ids.end(), ids.begin(), ids.end());
        const int end = static_cast<int>(out.token_ids.size());
        out.text += part;

        if (seg == Segment::Instruction) {
            // The final token is its own segment: the answer read-out point.
            const int split = std::max(begin, end - 1);
            out.segments[Segment::Instruction] = {begin, split};
            out.segments[Segment::LastToken] = {split, end};
        } else {
            out.segments[seg] = {begin, end};
        }

        if (seg == Segment::Role && content.role) {
            // Locate slot spans by prefix token counts within the role text.
            const RolePrompt& r = *content.role;
            const std::string article = article_for(r.adjective);
            auto count = [&](const std::string& prefix) {
                return static_cast<int>(tok.encode(prefix).size());
            };
            const std::string p0 = "You are " + article;
            const std::string p1 = p0 + " " + r.adjective;
            const std::string p2 = p1 + " search assistant that";
            const std::string p3 = p2 + " " + r.modal;
            const std::string p4 = p3 + " rank passages";
            const std::string p5 = p4 + " " + r.adverb;
            out.slot_ranges["adjective"] = {begin + count(p0),
                                            begin + count(p1)};
            out.slot_ranges["modal"] = {begin + count(p2), begin + count(p3)};
            out.slot_ranges["adverb"] = {begin + count(p4),
                                         begin + count(p5)};
        }
    }

    if (opts.max_prompt_tokens > 0 &&
        static_cast<int>(out.token_ids.size()) > opts.max_prompt_tokens)
        throw TokenBudgetExceeded(
            "prompt has " + std::to_string(out.token_ids.size()) +
            " tokens, budget is " + std::to_string(opts.max_prompt_tokens));
    return out;
}

inline RankingPrompt build_pointwise_prompt(
    const Tokenizer& tok, const std::optional<RolePrompt>& role,
    const std::string& query, const std::string& doc, int label,
    const SegmentOrder& order = {}, const PromptOptions& opts = {}) {
    PromptContent c{role, query, {doc}, {label}};
    return build_prompt(tok, Mode::Pointwise, c, order, opts);
}

inline RankingPrompt build_pairwise_prompt(
    const Tokenizer& tok, const std::optional<RolePrompt>& role,
    const std::string& query, const std::string& doc_a,
    const std::string& doc_b, int label_a, int label_b,
    const SegmentOrder& order = {}, const PromptOptions& opts = {}) {
    PromptContent c{role, query, {doc_a, doc_b}, {label_a, label_b}};
    return build_prompt(tok, Mode::Pairwise, c, order, opts);
}

struct AlignmentOffender {
    std::size_t prompt_index = 0;
    std::string slot; // "adjective" / "modal" / "adverb" / "" for total
    std::string word;
    int tokens = 0;
    int expected = 0;
};

// Token-length report over prompts that share all non-role content. Pass
// means every prompt tokenizes to the same length, the template guarantee
// that makes patching across a pair well defined.
struct AlignmentReport {
    std::vector<int> lengths;
    int modal_length = 0;
    bool pass = false;
    std::vector<AlignmentOffender> offenders;

    nlohmann::json to_json() const {
        nlohmann::json off = nlohmann::json::array();
        for (const auto& o : offenders)
            off.push_back({{"prompt_index", o.prompt_index},
                           {"slot", o.slot},
                           {"word", o.word},
                           {"tokens", o.tokens},
                           {"expected", o.expected}});
        return {{"lengths", lengths},
                {"modal_length", modal_length},
                {"pass", pass},
                {"offenders", off}};
    }
};

inline AlignmentReport check_token_alignment(
    const std::vector<RankingPrompt>& prompts) {
    AlignmentReport report;
    if (prompts.empty()) {
        report.pass = true;
        return report;
    }
    std::map<int, int> freq;
    for (const auto& p : prompts) {
        report.lengths.push_back(p.length());
        ++freq[p.length()];
    }
    int best_count = 0;
    for (const auto& [len, count] : freq)
        if (count > best_count) {
            best_count = count;
            report.modal_length = len;
        }
    report.pass = static_cast<int>(prompts.size()) == best_count;

    if (!report.pass) {
        // Attribute deviations to slot words where slot spans are available.
        std::map<std::string, std::map<int, int>> slot_freq;
        for (const auto& p : prompts)
            for (const auto& [slot, range] : p.slot_ranges)
                ++slot_freq[slot][range.size()];
        std::map<std::string, int> slot_modal;
        for (const auto& [slot, counts] : slot_freq) {
            int best = 0;
            for (const auto& [size, count] : counts)
                if (count > best) {
                    best = count;
                    slot_modal[slot] = size;
                }
        }
        for (std::size_t i = 0; i < prompts.size(); ++i) {
            const auto& p = prompts[i];
            if (p.length() == report.modal_length) continue;
            bool attributed = false;
            for (const auto& [slot, range] : p.slot_ranges) {
                if (range.size() == slot_modal[slot]) continue;
                std::string word;
                if (p.role) {
                    if (slot == "adjective") word = p.role->adjective;
                    else if (slot == "modal") word = p.role->modal;
                    else if (slot == "adverb") word = p.role->adverb;
                }
                report.offenders.push_back(
                    {i, slot, word, range.size(), slot_modal[slot]});
                attributed = true;
            }
            if (!attributed)
                report.offenders.push_back(
                    {i, "", "", p.length(), report.modal_length});
        }
    }
    return report;
}

// Drops slot words whose token count deviates from the modal count for the
// slot, so prompts built from the filtered lexicon align. Exclusions are
// returned for logging.
struct LexiconFilterResult {
    LexiconSlots lexicon;
    std::vector<AlignmentOffender> exclusions;
};

inline LexiconFilterResult filter_aligned_lexicon(const LexiconSlots& lexicon,
                                                  const Tokenizer& tok) {
    LexiconFilterResult result;
    result.lexicon = lexicon;
    auto filter = [&](std::vector<std::string>& pos,
                      std::vector<std::string>& neg, const char* slot) {
        std::map<int, int> freq;
        auto count_all = [&](const std::vector<std::string>& words) {
            for (const auto& w : words)
                ++freq[detail::slot_token_count(tok, w)];
        };
        count_all(pos);
        count_all(neg);
        int modal_count = 0, best = 0;
        for (const auto& [c, n] : freq)
            if (n > best) {
                best = n;
                modal_count = c;
            }
        auto apply = [&](std::vector<std::string>& words) {
            std::vector<std::string> kept;
            for (const auto& w : words) {
                const int c = detail::slot_token_count(tok, w);
                if (c == modal_count) {
                    kept.push_back(w);
                } else {
                    result.exclusions.push_back({0, slot, w, c, modal_count});
                }
            }
            words = std::move(kept);
        };
        apply(pos);
        apply(neg);
    };
    filter(result.lexicon.adjectives_positive,
           result.lexicon.adjectives_negative, "adjective");
    filter(result.lexicon.adverbs_positive, result.lexicon.adverbs_negative,
           "adverb");
    // Modals are shared across polarities; filter them the same way.
    std::map<int, int> freq;
    for (const auto& w : result.lexicon.modals)
        ++freq[detail::slot_token_count(tok, w)];
    int modal_count = 0, best = 0;
    for (const auto& [c, n] : freq)
        if (n > best) {
            best = n;
            modal_count = c;
        }
    std::vector<std::string> kept;
    for (const auto& w : result.lexicon.modals) {
        const int c = detail::slot_token_count(tok, w);
        if (c == modal_count)
            kept.push_back(w);
        else
            result.exclusions.push_back({0, "modal", w, c, modal_count});
    }
    result.lexicon.modals = std::move(kept);
    return result;
}

// Convenience for toy setups: a whitespace vocabulary covering every word in
// the given corpus. Ids are assigned in sorted word order.
inline Tokenizer whitespace_from_corpus(const std::vector<std::string>& texts) {
    std::set<std::string> words;
    for (const auto& text : texts) {
        std::size_t i = 0;
        while (i < text.size()) {
            while (i < text.size() &&
                   std::isspace(static_cast<unsigned char>(text[i])))
                ++i;
            std::size_t j = i;
            while (j < text.size() &&
                   !std::isspace(static_cast<unsigned char>(text[j])))
                ++j;
            if (j > i) words.insert(text.substr(i, j - i));
            i = j;
        }
    }
    std::map<std::string, int> vocab;
    int id = 0;
    for (const auto& w : words) vocab[w] = id++;
    return Tokenizer::whitespace(vocab);
}

} // namespace rolepatch
