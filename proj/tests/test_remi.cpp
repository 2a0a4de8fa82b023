#include <doctest.h>

#include "cpword/analysis.hpp"
#include "cpword/remi.hpp"
#include "cpword/rng.hpp"
#include "fixtures.hpp"

using namespace cpword;

namespace {

std::vector<std::string> names(const TokenSeq& seq, const Vocabulary& v) {
    std::vector<std::string> out;
    for (TokenId id : seq.ids) out.push_back(v.token_name(id));
    return out;
}

Song one_note_song() {
    Song s;
    s.n_bars = 1;
    s.notes.push_back({60, {0, 0}, 2, velocity_decode(12)});
    s.tempos.push_back({{0, 0}, 30});
    return s;
}

}  // namespace

TEST_CASE("encode_remi: one-note song produces the canonical ordering") {
    const Vocabulary v(Task::Unconditional);
    const TokenSeq seq = encode_remi(one_note_song(), v);
    CHECK(names(seq, v) == std::vector<std::string>{"bar", "position=1", "tempo=30", "pitch=60",
                                                    "duration=2", "velocity=12"});
}

TEST_CASE("encode_remi: empty song emits one bar token per bar") {
    const Vocabulary v(Task::Unconditional);
    Song s;
    s.n_bars = 2;
    CHECK(names(encode_remi(s, v), v) == std::vector<std::string>{"bar", "bar"});
}

TEST_CASE("encode_remi: notes at one position are ordered by descending pitch") {
    const Vocabulary v(Task::Unconditional);
    Song s;
    s.n_bars = 1;
    s.notes.push_back({60, {0, 2}, 4, velocity_decode(10)});
    s.notes.push_back({72, {0, 2}, 4, velocity_decode(10)});
    s.sort_events();
    const auto n = names(encode_remi(s, v), v);
    REQUIRE(n.size() == 8);
    CHECK(n[1] == "position=3");
    CHECK(n[2] == "pitch=72");
    CHECK(n[5] == "pitch=60");
}

TEST_CASE("decode_remi inverts encode_remi exactly") {
    const Vocabulary v(Task::Unconditional);
    SUBCASE("hand-written sequence") {
        TokenSeq seq;
        seq.task = Task::Unconditional;
        for (const char* t : {"bar", "position=1", "tempo=30", "pitch=60", "duration=2", "velocity=12"})
            seq.ids.push_back(v.parse_token(t));
        CHECK(decode_remi(seq, v) == one_note_song());
    }
    SUBCASE("randomized songs") {
        Rng rng(21);
        for (int i = 0; i < 100; ++i) {
            const Song song = testing::random_song(rng);
            CHECK(decode_remi(encode_remi(song, v), v) == song);
        }
    }
}

TEST_CASE("decode_remi reports the first violation with its index") {
    const Vocabulary v(Task::Unconditional);
    auto seq_of = [&](std::vector<std::string> tokens) {
        TokenSeq seq;
        seq.task = Task::Unconditional;
        for (const auto& t : tokens) seq.ids.push_back(v.parse_token(t));
        return seq;
    };

    SUBCASE("note missing duration") {
        try {
            decode_remi(seq_of({"bar", "position=1", "pitch=60"}), v);
            FAIL("expected codec_error");
        } catch (const codec_error& e) {
            CHECK(std::string(e.what()).find("note missing duration") != std::string::npos);
            CHECK(e.index == 3);
        }
    }
    SUBCASE("position before any bar") {
        CHECK_THROWS_AS(decode_remi(seq_of({"position=1"}), v), codec_error);
    }
    SUBCASE("orphan duration") {
        CHECK_THROWS_AS(decode_remi(seq_of({"bar", "position=1", "duration=2"}), v), codec_error);
    }
    SUBCASE("orphan velocity") {
        CHECK_THROWS_AS(decode_remi(seq_of({"bar", "velocity=2"}), v), codec_error);
    }
    SUBCASE("tempo off the beat grid") {
        CHECK_THROWS_AS(decode_remi(seq_of({"bar", "position=2", "tempo=5"}), v), codec_error);
    }
    SUBCASE("note before any position") {
        CHECK_THROWS_AS(decode_remi(seq_of({"bar", "pitch=60", "duration=2", "velocity=3"}), v),
                        codec_error);
    }
}

TEST_CASE("encode_remi enforces the sequence-length cap") {
    const Vocabulary v(Task::Unconditional);
    Rng rng(5);
    const Song song = testing::random_song(rng, 8, false);
    EncodeOptions opts;
    opts.max_tokens = 3;
    CHECK_THROWS_AS(encode_remi(song, v, opts), codec_error);
}

TEST_CASE("interleave_conditional: empty tracks produce the bar/track skeleton") {
    const Vocabulary v(Task::Conditional);
    LeadSheet lead;
    lead.n_bars = 1;
    Song piano;
    piano.n_bars = 1;
    CHECK(names(interleave_conditional(lead, piano, v), v) ==
          std::vector<std::string>{"bar", "track=leadsheet", "track=piano"});
}

TEST_CASE("interleave_conditional rejects bar-count mismatches") {
    const Vocabulary v(Task::Conditional);
    LeadSheet lead;
    lead.n_bars = 2;
    Song piano;
    piano.n_bars = 1;
    CHECK_THROWS_AS(interleave_conditional(lead, piano, v), codec_error);
}

TEST_CASE("deinterleave recovers both tracks exactly") {
    const Vocabulary v(Task::Conditional);
    Rng rng(33);
    for (int i = 0; i < 30; ++i) {
        const Song piano = testing::random_song(rng, 6, false);
        const LeadSheet lead = make_leadsheet(piano);
        const TokenSeq seq = interleave_conditional(lead, piano, v);
        const auto [lead2, piano2] = deinterleave_conditional(seq, v);
        CHECK(lead2 == lead);
        CHECK(piano2 == piano);
    }
}

TEST_CASE("lead-sheet segments contain only composition token types") {
    const Vocabulary v(Task::Conditional);
    Rng rng(44);
    for (int i = 0; i < 20; ++i) {
        const Song piano = testing::random_song(rng, 6, false);
        const LeadSheet lead = make_leadsheet(piano);
        const TokenSeq seq = interleave_conditional(lead, piano, v);
        bool in_lead = false;
        for (TokenId id : seq.ids) {
            const auto ref = v.describe(id);
            if (ref.type == TokenType::Track) in_lead = ref.value == 0;
            if (in_lead) {
                CHECK(ref.type != TokenType::Velocity);
                CHECK(ref.type != TokenType::Tempo);
            }
        }
    }
}

TEST_CASE("token text serialization round trips") {
    const Vocabulary v(Task::Unconditional);
    Rng rng(55);
    const Song song = testing::random_song(rng, 4, false);
    const TokenSeq seq = encode_remi(song, v);
    const TokenSeq back = tokens_from_text(tokens_to_text(seq, v), v, seq.task);
    CHECK(back == seq);
}
