#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

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

Tokenizer toy_tokenizer() {
    return Tokenizer::whitespace(
        {{"a", 0}, {"b", 1}, {"c", 2}, {"Yes", 3}, {"No", 4}});
}

} // namespace

TEST_CASE("gpt2 bpe encodes reference strings") {
    Tokenizer tok = gpt2();
    CHECK(tok.encode("Hello world") == std::vector<int>{15496, 995});
    CHECK(tok.encode("").empty());
    CHECK(tok.encode(" Yes") == std::vector<int>{3363});
    CHECK(tok.encode(" No") == std::vector<int>{1400});
    CHECK(tok.vocab_size() == 50257);
}

TEST_CASE("gpt2 bpe matches the reference implementation on the parity "
          "corpus") {
    Tokenizer tok = gpt2();
    std::ifstream in(kFixtures + "/gpt2_tokenizer/bpe_parity.json");
    REQUIRE(in.good());
    nlohmann::json fixture;
    in >> fixture;
    REQUIRE(fixture.at("entries").size() == 50);
    for (const auto& entry : fixture.at("entries")) {
        const std::string text = entry.at("text").get<std::string>();
        const std::vector<int> expected =
            entry.at("ids").get<std::vector<int>>();
        INFO("text: " << text);
        CHECK(tok.encode(text) == expected);
    }
}

TEST_CASE("gpt2 bpe round trips the parity corpus and fuzzed strings") {
    Tokenizer tok = gpt2();
    std::ifstream in(kFixtures + "/gpt2_tokenizer/bpe_parity.json");
    nlohmann::json fixture;
    in >> fixture;
    for (const auto& entry : fixture.at("entries")) {
        const std::string text = entry.at("text").get<std::string>();
        CHECK(tok.decode(tok.encode(text)) == text);
    }

    // Fuzz: random printable-ASCII strings with whitespace runs.
    Rng rng(123);
    const std::string alphabet =
        " \t\nabcdefghijklmnopqrstuvwxyzABCDEFGHIJ0123456789.,!?'\"()-";
    for (int trial = 0; trial < 200; ++trial) {
        std::string s;
        const std::size_t len = rng.next_below(40);
        for (std::size_t i = 0; i < len; ++i)
            s += alphabet[rng.next_below(alphabet.size())];
        INFO("fuzz string: [" << s << "]");
        CHECK(tok.decode(tok.encode(s)) == s);
    }
}

TEST_CASE("encode decode identity on sampled ids") {
    Tokenizer tok = gpt2();
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<int> ids;
        for (int i = 0; i < 12; ++i)
            ids.push_back(static_cast<int>(
                rng.next_below(static_cast<std::uint64_t>(tok.vocab_size()))));
        // decode->encode does not always round trip arbitrary id soup (BPE
        // re-merges), but decode must stay within the byte decoder.
        CHECK_NOTHROW(tok.decode(ids));
    }
    // Whole-token ids from a real encoding do round trip.
    const std::vector<int> ids = tok.encode("The quick brown fox");
    CHECK(tok.encode(tok.decode(ids)) == ids);
}

TEST_CASE("encode is deterministic") {
    Tokenizer tok = gpt2();
    const std::string text =
        "You are an expert search assistant that can rank passages "
        "carefully, based on their relevance to a query.";
    CHECK(tok.encode(text) == tok.encode(text));
}

TEST_CASE("whitespace tokenizer basics") {
    Tokenizer tok = toy_tokenizer();
    CHECK(tok.encode("a b a") == std::vector<int>{0, 1, 0});
    CHECK(tok.encode("  a\tb\nc ") == std::vector<int>{0, 1, 2});
    CHECK(tok.decode(std::vector<int>{0, 1, 2}) == "a b c");
    CHECK(tok.encode("").empty());
    CHECK_THROWS_AS(tok.encode("missing"), OutOfVocabWord);
}

TEST_CASE("answer tokens") {
    SECTION("gpt2 picks leading-space single-token forms") {
        AnswerTokens a = gpt2().resolve_answer_tokens();
        CHECK(a.yes_id == 3363);
        CHECK(a.no_id == 1400);
        CHECK(a.yes_surface == " Yes");
        CHECK(a.no_surface == " No");
        CHECK(a.yes_id != a.no_id);
    }
    SECTION("whitespace vocab uses the bare words") {
        AnswerTokens a = toy_tokenizer().resolve_answer_tokens();
        CHECK(a.yes_id == 3);
        CHECK(a.no_id == 4);
        CHECK(a.yes_surface == "Yes");
    }
    SECTION("vocab lacking the words fails loudly") {
        Tokenizer tok = Tokenizer::whitespace({{"a", 0}, {"b", 1}});
        CHECK_THROWS_AS(tok.resolve_answer_tokens(), NoSingleTokenForm);
    }
}

TEST_CASE("loader error paths") {
    CHECK_THROWS_AS(Tokenizer::load_bpe("/nonexistent/vocab.json",
                                        "/nonexistent/merges.txt"),
                    FileMissing);

    const std::string tmp = std::filesystem::temp_directory_path().string();
    {
        std::ofstream bad(tmp + "/bad_vocab.json");
        bad << "not json at all {";
    }
    CHECK_THROWS_AS(Tokenizer::load_bpe(tmp + "/bad_vocab.json",
                                        kFixtures +
                                            "/gpt2_tokenizer/merges.txt"),
                    MalformedVocab);
    {
        std::ofstream bad(tmp + "/bad_merges.txt");
        bad << "#version: 0.2\n" << "three words here\n";
    }
    CHECK_THROWS_AS(Tokenizer::load_bpe(
                        kFixtures + "/gpt2_tokenizer/vocab.json",
                        tmp + "/bad_merges.txt"),
                    MalformedMerges);
}

TEST_CASE("token ids stay in range") {
    Tokenizer tok = gpt2();
    for (const std::string& s :
         {"hello", " world", "123", "...", "mixed 42 words!"})
        for (int id : tok.encode(s)) {
            CHECK(id >= 0);
            CHECK(id < tok.vocab_size());
        }
    CHECK_THROWS_AS(tok.decode(std::vector<int>{999999}), TokenizerError);
}
