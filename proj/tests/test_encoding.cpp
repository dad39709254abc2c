#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "a3sn/encoding.hpp"
#include "a3sn/rng.hpp"

using namespace a3sn;

namespace {

Example make_example(std::vector<std::string> sentence, std::vector<std::string> aspect,
                     Polarity label = Polarity::Positive) {
    Example ex;
    ex.sentence = std::move(sentence);
    ex.aspect = std::move(aspect);
    ex.label = label;
    return ex;
}

// The nine-token layout: [CLS] w1 a1 a2 w4 [SEP] a1 a2 [SEP].
Example nine_token_example() {
    return make_example({"w1", "a1", "a2", "w4"}, {"a1", "a2"});
}

std::string temp_path(const char* name) {
    return std::string("a3sn_test_") + name;
}

} // namespace

TEST_CASE("build_vocab keeps frequent tokens plus the reserved block") {
    Vocabulary v = build_vocab({make_example({"good", "food"}, {"food"})}, 1);
    CHECK(v.size() == 6);
    CHECK(v.contains("good"));
    CHECK(v.contains("food"));
    // "food" occurs twice (sentence + aspect) so it outranks "good".
    CHECK(v.id_of("food") == 4);
    CHECK(v.id_of("good") == 5);
}

TEST_CASE("build_vocab with min_count above all frequencies keeps only reserved ids") {
    Vocabulary v = build_vocab({make_example({"one", "two"}, {"three"})}, 2);
    CHECK(v.size() == 4);
    CHECK(v.id_of("one") == Vocabulary::kUnk);
}

TEST_CASE("build_vocab rejects an empty corpus") {
    CHECK_THROWS_AS(build_vocab({}, 1), DataError);
}

TEST_CASE("build_vocab is invariant under corpus permutation") {
    std::vector<Example> corpus;
    Rng rng(5);
    for (int i = 0; i < 30; ++i) {
        corpus.push_back(make_example({"t" + std::to_string(rng.next_below(12)),
                                       "t" + std::to_string(rng.next_below(12))},
                                      {"a" + std::to_string(rng.next_below(4))}));
    }
    std::vector<Example> shuffled = corpus;
    rng.shuffle(shuffled);
    Vocabulary v1 = build_vocab(corpus, 1);
    Vocabulary v2 = build_vocab(shuffled, 1);
    REQUIRE(v1.size() == v2.size());
    for (std::size_t id = 0; id < v1.size(); ++id) {
        CHECK(v1.token_of(static_cast<int>(id)) == v2.token_of(static_cast<int>(id)));
    }
}

TEST_CASE("encode lays out the nine-token sequence") {
    Vocabulary v = build_vocab({nine_token_example()}, 1);
    EncodedInput enc = encode(nine_token_example(), v, 9);
    const std::vector<Segment> expected = {Segment::CLS,  Segment::SENT, Segment::SENT,
                                           Segment::SENT, Segment::SENT, Segment::SEP1,
                                           Segment::ASP,  Segment::ASP,  Segment::SEP2};
    CHECK(enc.segments == expected);
    CHECK(enc.ids[0] == Vocabulary::kCls);
    CHECK(enc.ids[5] == Vocabulary::kSep);
    CHECK(enc.ids[8] == Vocabulary::kSep);
    for (double m : enc.pad_mask) CHECK(m == 1.0);
}

TEST_CASE("encode pads to max_len with PAD segments and zero mask") {
    Vocabulary v = build_vocab({nine_token_example()}, 1);
    EncodedInput enc = encode(nine_token_example(), v, 12);
    REQUIRE(enc.length() == 12);
    for (std::size_t i = 9; i < 12; ++i) {
        CHECK(enc.segments[i] == Segment::PAD);
        CHECK(enc.ids[i] == Vocabulary::kPad);
        CHECK(enc.pad_mask[i] == 0.0);
    }
}

TEST_CASE("encode maps unknown words to [UNK]") {
    Vocabulary v = build_vocab({make_example({"known"}, {"known"})}, 1);
    EncodedInput enc = encode(make_example({"mystery"}, {"known"}), v, 8);
    CHECK(enc.ids[1] == Vocabulary::kUnk);
}

TEST_CASE("encode truncates the sentence tail, never the aspect") {
    Vocabulary v = build_vocab({nine_token_example()}, 1);
    Example ex = nine_token_example(); // 4 sentence + 2 aspect tokens
    EncodedInput enc = encode(ex, v, 8); // room for only 3 sentence tokens
    std::size_t sent = 0, asp = 0;
    for (Segment s : enc.segments) {
        sent += s == Segment::SENT;
        asp += s == Segment::ASP;
    }
    CHECK(sent == 3);
    CHECK(asp == 2);
    Example back = decode(enc, v);
    CHECK(back.sentence == std::vector<std::string>{"w1", "a1", "a2"});
    CHECK(back.aspect == ex.aspect);
}

TEST_CASE("encode rejects aspects that cannot fit") {
    Vocabulary v = build_vocab({nine_token_example()}, 1);
    CHECK_THROWS_AS(encode(make_example({"w"}, {"a", "b", "c"}), v, 5), EncodingError);
    CHECK_THROWS_AS(encode(make_example({"w"}, {}), v, 8), EncodingError);
}

TEST_CASE("encode round-trips in-vocabulary examples") {
    Example ex = nine_token_example();
    Vocabulary v = build_vocab({ex}, 1);
    Example back = decode(encode(ex, v, 16), v);
    CHECK(back.sentence == ex.sentence);
    CHECK(back.aspect == ex.aspect);
    CHECK(back.label == ex.label);
}

TEST_CASE("encode is deterministic") {
    Example ex = nine_token_example();
    Vocabulary v = build_vocab({ex}, 1);
    CHECK(encode(ex, v, 12) == encode(ex, v, 12));
}

TEST_CASE("amplify matrix of the nine-token sequence doubles exactly the cross block") {
    Vocabulary v = build_vocab({nine_token_example()}, 1);
    EncodedInput enc = encode(nine_token_example(), v, 9);
    const std::size_t n = 9;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const bool sent_i = i >= 1 && i <= 4;
            const bool asp_i = i == 6 || i == 7;
            const bool sent_j = j >= 1 && j <= 4;
            const bool asp_j = j == 6 || j == 7;
            const double expected = ((sent_i && asp_j) || (asp_i && sent_j)) ? 2.0 : 1.0;
            CHECK(enc.amplify[i * n + j] == expected);
        }
    }
}

TEST_CASE("amplify matrix of an aspect-only input is all ones") {
    // Empty sentence: [CLS] [SEP] a [SEP] has no sentence-aspect pairs.
    Vocabulary v = build_vocab({make_example({}, {"a"})}, 1);
    EncodedInput enc = encode(make_example({}, {"a"}), v, 4);
    for (double g : enc.amplify) CHECK(g == 1.0);
}

TEST_CASE("amplify structure holds for random valid segment layouts") {
    Rng rng(77);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n_sent = rng.next_below(8);
        const std::size_t n_asp = 1 + rng.next_below(4);
        const std::size_t n_pad = rng.next_below(5);
        std::vector<Segment> segments;
        segments.push_back(Segment::CLS);
        segments.insert(segments.end(), n_sent, Segment::SENT);
        segments.push_back(Segment::SEP1);
        segments.insert(segments.end(), n_asp, Segment::ASP);
        segments.push_back(Segment::SEP2);
        segments.insert(segments.end(), n_pad, Segment::PAD);

        const std::size_t n = segments.size();
        std::vector<double> amp = build_amplify(segments);

        // Brute-force recount of every pair.
        std::size_t twos = 0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                const double g = amp[i * n + j];
                CHECK((g == 1.0 || g == 2.0));
                CHECK(g == amp[j * n + i]);
                if (i == j) CHECK(g == 1.0);
                twos += g == 2.0;
            }
        }
        CHECK(twos == 2 * n_sent * n_asp);
    }
}

TEST_CASE("encoded amplify equals an independent recomputation") {
    auto data = synth_dataset(25, 3, 50);
    Vocabulary v = build_vocab(data, 1);
    for (const Example& ex : data) {
        EncodedInput enc = encode(ex, v, 24);
        CHECK(enc.amplify == build_amplify(enc.segments));
        for (std::size_t i = 0; i < enc.length(); ++i) {
            CHECK((enc.pad_mask[i] == 0.0) == (enc.segments[i] == Segment::PAD));
        }
    }
}

TEST_CASE("load_jsonl parses records and reports malformed lines") {
    const std::string path = temp_path("data.jsonl");
    {
        std::ofstream out(path);
        out << R"({"text":"great battery","aspect":"battery","polarity":"positive"})" << "\n";
        out << R"({"text":"meh","aspect":"screen","polarity":"neutral","extra":42})" << "\n";
    }
    auto examples = load_jsonl(path);
    REQUIRE(examples.size() == 2);
    CHECK(examples[0].sentence == std::vector<std::string>{"great", "battery"});
    CHECK(examples[0].aspect == std::vector<std::string>{"battery"});
    CHECK(examples[0].label == Polarity::Positive);
    CHECK(examples[1].label == Polarity::Neutral);

    {
        std::ofstream out(path);
        out << R"({"text":"fine","aspect":"a","polarity":"positive"})" << "\n";
        out << "not json at all\n";
    }
    try {
        load_jsonl(path);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }

    {
        std::ofstream out(path);
        out << R"({"text":"fine","aspect":"a","polarity":"happy"})" << "\n";
    }
    CHECK_THROWS_AS(load_jsonl(path), DataError);
    std::remove(path.c_str());
}

TEST_CASE("save_jsonl round-trips through load_jsonl") {
    const std::string path = temp_path("roundtrip.jsonl");
    auto data = synth_dataset(40, 11, 50);
    save_jsonl(data, path);
    auto back = load_jsonl(path);
    CHECK(back == data);
    std::remove(path.c_str());
}

TEST_CASE("synth_dataset is seed-deterministic") {
    CHECK(synth_dataset(100, 7, 50) == synth_dataset(100, 7, 50));
    CHECK(synth_dataset(50, 7, 50) != synth_dataset(50, 8, 50));
}

TEST_CASE("synth_dataset labels are roughly balanced") {
    auto data = synth_dataset(300, 7, 50);
    std::array<int, 3> counts{};
    for (const Example& ex : data) counts[static_cast<std::size_t>(ex.label)] += 1;
    for (int c : counts) {
        const double frac = static_cast<double>(c) / 300.0;
        CHECK(frac >= 0.20);
        CHECK(frac <= 0.45);
    }
}

TEST_CASE("synth_dataset plants the labeling word next to the target aspect") {
    auto data = synth_dataset(100, 13, 50);
    for (const Example& ex : data) {
        REQUIRE(ex.aspect.size() == 1);
        auto it = std::find(ex.sentence.begin(), ex.sentence.end(), ex.aspect[0]);
        REQUIRE(it != ex.sentence.begin());
        REQUIRE(it != ex.sentence.end());
    }
    CHECK_THROWS_AS(synth_dataset(0, 1, 50), DataError);
}

TEST_CASE("tokenize lowercases and strips punctuation") {
    CHECK(tokenize("The waiter, was FRIENDLY!") ==
          std::vector<std::string>{"the", "waiter", "was", "friendly"});
    CHECK(tokenize("  ") == std::vector<std::string>{});
}
