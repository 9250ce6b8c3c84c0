#include <catch_amalgamated.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "rolepatch/prompt.hpp"
#include "rolepatch/rng.hpp"
#include "rolepatch/tokenizer.hpp"

using namespace rolepatch;

namespace {

const std::string kFixtures = ROLEPATCH_FIXTURES;

Tokenizer gpt2() {
    static Tokenizer tok = Tokenizer::load_bpe(
        kFixtures + "/gpt2_tokenizer/vocab.json",
        kFixtures + "/gpt2_tokenizer/merges.txt");
    return tok;
}

LexiconSlots lexicon() { return LexiconSlots::default_slots(); }

std::multiset<std::string> as_multiset(const std::vector<std::string>& v) {
    return {v.begin(), v.end()};
}

} // namespace

TEST_CASE("render_role produces the exact template sentence") {
    CHECK(render_role(lexicon(), "expert", "can", "carefully").text ==
          "You are an expert search assistant that can rank passages "
          "carefully, based on their relevance to a query.");
    CHECK(render_role(lexicon(), "unreliable", "will", "wrongly").text ==
          "You are an unreliable search assistant that will rank passages "
          "wrongly, based on their relevance to a query.");
}

TEST_CASE("article follows the vowel rule") {
    CHECK(render_role(lexicon(), "faulty", "can", "wrongly").text.rfind(
              "You are a faulty", 0) == 0);
    CHECK(render_role(lexicon(), "awful", "can", "wrongly").text.rfind(
              "You are an awful", 0) == 0);
    CHECK(article_for("expert") == "an");
    CHECK(article_for("talented") == "a");
    CHECK(article_for("incorrect") == "an");
}

TEST_CASE("render_role rejects bad slots") {
    CHECK_THROWS_AS(render_role(lexicon(), "amazing", "can", "carefully"),
                    UnknownSlotWord);
    CHECK_THROWS_AS(render_role(lexicon(), "expert", "must", "carefully"),
                    UnknownSlotWord);
    CHECK_THROWS_AS(render_role(lexicon(), "expert", "can", "wrongly"),
                    MixedPolarity);
    CHECK_THROWS_AS(render_role(lexicon(), "faulty", "can", "carefully"),
                    MixedPolarity);
}

TEST_CASE("enumerate_roles yields 300 unique prompts per polarity") {
    for (Polarity p : {Polarity::Positive, Polarity::Negative}) {
        auto roles = enumerate_roles(lexicon(), p);
        REQUIRE(roles.size() == 300);
        std::set<std::string> texts;
        for (const auto& r : roles) {
            texts.insert(r.text);
            CHECK(r.polarity == p);
        }
        CHECK(texts.size() == 300); // no duplicates
    }
    // Documented order: adjective-major, then modal, then adverb.
    auto positive = enumerate_roles(lexicon(), Polarity::Positive);
    CHECK(positive[0].adjective == "talented");
    CHECK(positive[0].modal == "can");
    CHECK(positive[0].adverb == "carefully");
    CHECK(positive[1].adverb == "correctly");
    CHECK(positive[10].modal == "will");
    CHECK(positive[30].adjective == "expert");
}

TEST_CASE("counter pairs use each adjective and adverb exactly once") {
    auto pairs = make_counter_pairs(lexicon(), 5);
    REQUIRE(pairs.size() == 10);

    std::vector<std::string> adj_pos, adv_pos, adj_neg, adv_neg;
    for (const auto& p : pairs) {
        CHECK(p.clean.polarity == Polarity::Positive);
        CHECK(p.corrupted.polarity == Polarity::Negative);
        CHECK(p.clean.modal == p.corrupted.modal); // shared within a pair
        adj_pos.push_back(p.clean.adjective);
        adv_pos.push_back(p.clean.adverb);
        adj_neg.push_back(p.corrupted.adjective);
        adv_neg.push_back(p.corrupted.adverb);
    }
    CHECK(as_multiset(adj_pos) == as_multiset(lexicon().adjectives_positive));
    CHECK(as_multiset(adv_pos) == as_multiset(lexicon().adverbs_positive));
    CHECK(as_multiset(adj_neg) == as_multiset(lexicon().adjectives_negative));
    CHECK(as_multiset(adv_neg) == as_multiset(lexicon().adverbs_negative));
}

TEST_CASE("counter pairs are deterministic per seed") {
    auto a = make_counter_pairs(lexicon(), 5);
    auto b = make_counter_pairs(lexicon(), 5);
    auto c = make_counter_pairs(lexicon(), 6);
    REQUIRE(a.size() == b.size());
    bool same = true, different = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        same = same && a[i].clean.text == b[i].clean.text &&
               a[i].corrupted.text == b[i].corrupted.text;
        different = different || a[i].clean.text != c[i].clean.text;
    }
    CHECK(same);
    CHECK(different);
}

TEST_CASE("pointwise prompt skeleton and segment spans") {
    Tokenizer tok = gpt2();
    RolePrompt role = render_role(lexicon(), "expert", "can", "carefully");
    RankingPrompt p = build_pointwise_prompt(
        tok, role, "what is bm25", "BM25 is a ranking function.", 1);

    CHECK(p.text ==
          role.text +
              "\nDocument: BM25 is a ranking function.\nQuery: what is "
              "bm25\nDoes the document answer the query? Answer only 'Yes' "
              "or 'No'.\nAnswer:");
    CHECK(p.expected_answer == Answer::Yes);

    // Spans tile the sequence in order.
    std::vector<Segment> expected_order{Segment::Role, Segment::Document,
                                        Segment::Query, Segment::Instruction,
                                        Segment::LastToken};
    int cursor = 0;
    for (Segment s : expected_order) {
        const SegmentRange r = p.span(s);
        CHECK(r.begin == cursor);
        cursor = r.end;
    }
    CHECK(cursor == p.length());
    CHECK(p.span(Segment::LastToken).size() == 1);
    CHECK(p.span(Segment::LastToken).end == p.length());

    // Concatenating segment token slices reproduces token_ids exactly.
    std::vector<int> rebuilt;
    for (Segment s : expected_order)
        for (int pos : p.positions_of(s))
            rebuilt.push_back(p.token_ids[static_cast<std::size_t>(pos)]);
    CHECK(rebuilt == p.token_ids);

    // Irrelevant document flips the expected answer.
    RankingPrompt neg = build_pointwise_prompt(
        tok, role, "what is bm25", "Bananas are yellow.", 0);
    CHECK(neg.expected_answer == Answer::No);
}

TEST_CASE("no-role prompt is the role prompt minus the role span") {
    Tokenizer tok = gpt2();
    RolePrompt role = render_role(lexicon(), "expert", "can", "carefully");
    RankingPrompt with_role = build_pointwise_prompt(
        tok, role, "what is bm25", "BM25 is a ranking function.", 1);
    RankingPrompt baseline = build_pointwise_prompt(
        tok, std::nullopt, "what is bm25", "BM25 is a ranking function.", 1);

    CHECK(baseline.segments.count(Segment::Role) == 0);
    const SegmentRange role_span = with_role.span(Segment::Role);
    std::vector<int> stripped;
    for (int i = 0; i < with_role.length(); ++i)
        if (i < role_span.begin || i >= role_span.end)
            stripped.push_back(
                with_role.token_ids[static_cast<std::size_t>(i)]);
    CHECK(stripped == baseline.token_ids);
}

TEST_CASE("slot spans locate the slot tokens") {
    Tokenizer tok = gpt2();
    RolePrompt role = render_role(lexicon(), "expert", "can", "carefully");
    RankingPrompt p = build_pointwise_prompt(tok, role, "q", "d", 1);
    REQUIRE(p.slot_ranges.count("adjective") == 1);
    auto decode_range = [&](const SegmentRange& r) {
        std::vector<int> ids(p.token_ids.begin() + r.begin,
                             p.token_ids.begin() + r.end);
        return tok.decode(ids);
    };
    CHECK(decode_range(p.slot_ranges.at("adjective")) == " expert");
    CHECK(decode_range(p.slot_ranges.at("modal")) == " can");
    CHECK(decode_range(p.slot_ranges.at("adverb")) == " carefully");
}

TEST_CASE("segment order variants") {
    Tokenizer tok = gpt2();
    RolePrompt role = render_role(lexicon(), "expert", "can", "carefully");
    SegmentOrder swapped{Segment::Role, Segment::Query, Segment::Document,
                         Segment::Instruction};
    RankingPrompt def = build_pointwise_prompt(tok, role, "q text", "d text",
                                               1);
    RankingPrompt swp = build_pointwise_prompt(tok, role, "q text", "d text",
                                               1, swapped);

    CHECK(def.length() == swp.length());
    CHECK(def.span(Segment::Document).begin != swp.span(Segment::Document)
                                                    .begin);
    for (Segment s : {Segment::Role, Segment::Document, Segment::Query,
                      Segment::Instruction}) {
        std::multiset<int> a, b;
        for (int pos : def.positions_of(s))
            a.insert(def.token_ids[static_cast<std::size_t>(pos)]);
        for (int pos : swp.positions_of(s))
            b.insert(swp.token_ids[static_cast<std::size_t>(pos)]);
        CHECK(a == b); // same tokens, different offsets
    }

    SegmentOrder role_before_instruction{
        Segment::Document, Segment::Query, Segment::Role,
        Segment::Instruction};
    RankingPrompt moved = build_pointwise_prompt(
        tok, role, "q text", "d text", 1, role_before_instruction);
    CHECK(moved.span(Segment::Role).end ==
          moved.span(Segment::Instruction).begin);

    SegmentOrder bad{Segment::Instruction, Segment::Role, Segment::Document,
                     Segment::Query};
    CHECK_THROWS_AS(
        build_pointwise_prompt(tok, role, "q", "d", 1, bad), InvalidOrder);
    SegmentOrder wrong_set{Segment::Role, Segment::DocumentA, Segment::Query,
                           Segment::Instruction};
    CHECK_THROWS_AS(build_pointwise_prompt(tok, role, "q", "d", 1, wrong_set),
                    InvalidOrder);
}

TEST_CASE("pairwise prompts") {
    Tokenizer tok = gpt2();
    RolePrompt role = render_role(lexicon(), "expert", "can", "carefully");
    RankingPrompt p = build_pairwise_prompt(tok, role, "which is relevant",
                                            "doc a text", "doc b text", 1, 0);
    CHECK(p.expected_answer == Answer::Yes);
    CHECK(p.segments.count(Segment::DocumentA) == 1);
    CHECK(p.segments.count(Segment::DocumentB) == 1);

    RankingPrompt q = build_pairwise_prompt(tok, role, "which is relevant",
                                            "doc a text", "doc b text", 0, 2);
    CHECK(q.expected_answer == Answer::No);

    CHECK_THROWS_AS(build_pairwise_prompt(tok, role, "q", "a", "b", 1, 1),
                    MissingLabel);
}

TEST_CASE("document truncation and prompt budget") {
    Tokenizer tok = gpt2();
    std::string long_doc;
    for (int i = 0; i < 300; ++i) long_doc += "word" + std::to_string(i) + " ";

    PromptOptions opts;
    opts.doc_token_budget = 16;
    RankingPrompt p =
        build_pointwise_prompt(tok, std::nullopt, "q", long_doc, 1, {}, opts);
    CHECK(p.span(Segment::Document).size() <= 16 + 4); // label + newline

    PromptOptions tight;
    tight.doc_token_budget = 0; // no truncation
    tight.max_prompt_tokens = 50;
    CHECK_THROWS_AS(build_pointwise_prompt(tok, std::nullopt, "q", long_doc, 1,
                                           {}, tight),
                    TokenBudgetExceeded);
}

TEST_CASE("bos token sits outside all segments") {
    Tokenizer tok = gpt2();
    PromptOptions opts;
    opts.add_bos = true;
    opts.bos_id = 50256;
    RankingPrompt p =
        build_pointwise_prompt(tok, std::nullopt, "q", "d", 1, {}, opts);
    CHECK(p.token_ids[0] == 50256);
    for (const auto& [seg, range] : p.segments) CHECK(range.begin >= 1);
}

TEST_CASE("all 600 role renderings align under gpt2 bpe") {
    Tokenizer tok = gpt2();
    std::vector<RankingPrompt> prompts;
    for (Polarity pol : {Polarity::Positive, Polarity::Negative})
        for (const auto& role : enumerate_roles(lexicon(), pol))
            prompts.push_back(build_pointwise_prompt(
                tok, role, "what is bm25", "BM25 is a ranking function.", 1));
    REQUIRE(prompts.size() == 600);
    AlignmentReport report = check_token_alignment(prompts);
    CHECK(report.pass);
    CHECK(report.offenders.empty());
    CHECK(report.modal_length == prompts[0].length());
}

TEST_CASE("alignment report names the offending slot word") {
    Tokenizer tok = gpt2();
    LexiconSlots lex = lexicon();
    // "hyperfocused" is two BPE tokens; it must be caught and named.
    lex.adjectives_positive[1] = "hyperfocused";
    std::vector<RankingPrompt> prompts;
    for (const std::string& adj : lex.adjectives_positive)
        prompts.push_back(build_pointwise_prompt(
            tok, render_role(lex, adj, "can", "carefully"), "q", "d", 1));
    AlignmentReport report = check_token_alignment(prompts);
    CHECK_FALSE(report.pass);
    REQUIRE_FALSE(report.offenders.empty());
    bool named = false;
    for (const auto& o : report.offenders)
        if (o.word == "hyperfocused" && o.slot == "adjective" &&
            o.tokens == 2 && o.expected == 1)
            named = true;
    CHECK(named);
}

TEST_CASE("filter_aligned_lexicon drops misaligned words") {
    Tokenizer tok = gpt2();
    LexiconSlots lex = lexicon();
    lex.adjectives_positive[2] = "hyperfocused";
    LexiconFilterResult result = filter_aligned_lexicon(lex, tok);
    CHECK(result.lexicon.adjectives_positive.size() == 9);
    CHECK(std::find(result.lexicon.adjectives_positive.begin(),
                    result.lexicon.adjectives_positive.end(),
                    "hyperfocused") ==
          result.lexicon.adjectives_positive.end());
    REQUIRE(result.exclusions.size() == 1);
    CHECK(result.exclusions[0].word == "hyperfocused");

    // The full Table 1 lexicon needs no filtering under GPT-2 BPE.
    LexiconFilterResult clean = filter_aligned_lexicon(lexicon(), tok);
    CHECK(clean.exclusions.empty());
    CHECK(clean.lexicon.adjectives_positive.size() == 10);
}

TEST_CASE("lexicon json round trip and validation") {
    LexiconSlots lex = lexicon();
    const auto path =
        std::filesystem::temp_directory_path() / "rp_lexicon.json";
    {
        std::ofstream out(path);
        out << lex.to_json().dump(2);
    }
    LexiconSlots loaded = LexiconSlots::load(path.string());
    CHECK(loaded.adjectives_positive == lex.adjectives_positive);
    CHECK(loaded.modals == lex.modals);

    LexiconSlots dup = lex;
    dup.adverbs_negative.push_back("wrongly");
    CHECK_THROWS_AS(dup.validate(), PromptError);
}

TEST_CASE("whitespace prompts mirror the bpe construction") {
    LexiconSlots lex = lexicon();
    std::vector<std::string> corpus;
    for (Polarity pol : {Polarity::Positive, Polarity::Negative})
        for (const auto& r : enumerate_roles(lex, pol))
            corpus.push_back(r.text);
    for (const auto& list :
         {lex.adjectives_positive, lex.adjectives_negative,
          lex.adverbs_positive, lex.adverbs_negative, lex.modals})
        for (const auto& w : list) corpus.push_back(w);
    corpus.push_back("Document: Query: Answer: Yes No");
    corpus.push_back(
        "Does the document answer the query? Answer only 'Yes' or 'No'.");
    corpus.push_back("ranking functions score documents");
    Tokenizer tok = whitespace_from_corpus(corpus);

    RolePrompt role = render_role(lex, "expert", "can", "carefully");
    RankingPrompt p = build_pointwise_prompt(
        tok, role, "ranking functions", "documents score ranking", 1);
    int cursor = 0;
    for (Segment s : {Segment::Role, Segment::Document, Segment::Query,
                      Segment::Instruction, Segment::LastToken}) {
        CHECK(p.span(s).begin == cursor);
        cursor = p.span(s).end;
    }
    CHECK(cursor == p.length());
    CHECK(p.slot_ranges.at("adjective").size() == 1);
    CHECK(p.slot_ranges.at("modal").size() == 1);
    CHECK(p.slot_ranges.at("adverb").size() == 1);

    // Alignment needs identical non-role content across prompts.
    std::vector<RankingPrompt> prompts;
    for (const auto& pair : make_counter_pairs(lex, 3)) {
        prompts.push_back(build_pointwise_prompt(
            tok, pair.clean, "ranking functions", "documents score", 1));
        prompts.push_back(build_pointwise_prompt(
            tok, pair.corrupted, "ranking functions", "documents score", 1));
    }
    CHECK(check_token_alignment(prompts).pass);
}
