#include <doctest.h>

#include <sstream>

#include "cpword/analysis.hpp"
#include "cpword/cp.hpp"
#include "cpword/rng.hpp"
#include "fixtures.hpp"

using namespace cpword;

namespace {

TokenSeq seq_of(const Vocabulary& v, Task task, std::initializer_list<const char*> tokens) {
    TokenSeq seq;
    seq.task = task;
    for (const char* t : tokens) seq.ids.push_back(v.parse_token(t));
    return seq;
}

}  // namespace

TEST_CASE("group_to_cp: position/chord/tempo run becomes one metric word") {
    const Vocabulary v(Task::Unconditional);
    const TokenSeq seq = seq_of(v, Task::Unconditional, {"bar", "position=1", "chord=C:maj", "tempo=9"});
    const CpSeq cps = group_to_cp(seq, v);

    REQUIRE(cps.words.size() == 4);  // BOS, bar word, metric word, EOS
    CHECK(cps.words[0] == make_bos_word(v));
    CHECK(cps.words.back() == make_eos_word(v));

    const CompoundWord& bar = cps.words[1];
    CHECK(bar.family == v.family_id(Family::Metric));
    CHECK(bar.slot(TokenType::PositionBar) == v.token_id(TokenType::PositionBar, 17));
    CHECK(bar.slot(TokenType::Tempo) == v.ignore_id(TokenType::Tempo));
    CHECK(bar.slot(TokenType::Chord) == v.ignore_id(TokenType::Chord));

    const CompoundWord& w = cps.words[2];
    CHECK(w.family == v.family_id(Family::Metric));
    CHECK(w.slot(TokenType::PositionBar) == v.token_id(TokenType::PositionBar, 1));
    CHECK(w.slot(TokenType::Tempo) == v.token_id(TokenType::Tempo, 9));
    CHECK(w.slot(TokenType::Chord) == v.token_id(TokenType::Chord, 0));
    CHECK(w.slot(TokenType::Pitch) == v.ignore_id(TokenType::Pitch));
    CHECK(w.slot(TokenType::Duration) == v.ignore_id(TokenType::Duration));
    CHECK(w.slot(TokenType::Velocity) == v.ignore_id(TokenType::Velocity));
}

TEST_CASE("group_to_cp: a pitch/duration/velocity run becomes one note word") {
    const Vocabulary v(Task::Unconditional);
    const TokenSeq seq =
        seq_of(v, Task::Unconditional, {"bar", "position=1", "pitch=60", "duration=2", "velocity=12"});
    const CpSeq cps = group_to_cp(seq, v);
    REQUIRE(cps.words.size() == 5);
    const CompoundWord& w = cps.words[3];
    CHECK(w.family == v.family_id(Family::Note));
    CHECK(w.slot(TokenType::Pitch) == v.token_id(TokenType::Pitch, 60));
    CHECK(w.slot(TokenType::Duration) == v.token_id(TokenType::Duration, 2));
    CHECK(w.slot(TokenType::Velocity) == v.token_id(TokenType::Velocity, 12));
    CHECK(w.slot(TokenType::PositionBar) == v.ignore_id(TokenType::PositionBar));
    CHECK(w.slot(TokenType::Tempo) == v.ignore_id(TokenType::Tempo));
    CHECK(w.slot(TokenType::Chord) == v.ignore_id(TokenType::Chord));
}

TEST_CASE("group_to_cp: beat positions without changes get [conti] fills") {
    const Vocabulary v(Task::Unconditional);
    const TokenSeq seq = seq_of(v, Task::Unconditional,
                                {"bar", "position=1", "position=2", "position=5"});
    const CpSeq cps = group_to_cp(seq, v);
    REQUIRE(cps.words.size() == 6);
    // position=1 is a beat with no tempo/chord tokens -> conti fills.
    CHECK(cps.words[2].slot(TokenType::Tempo) == v.conti_id(TokenType::Tempo));
    CHECK(cps.words[2].slot(TokenType::Chord) == v.conti_id(TokenType::Chord));
    // position=2 is off the beat grid -> ignore fills.
    CHECK(cps.words[3].slot(TokenType::Tempo) == v.ignore_id(TokenType::Tempo));
    CHECK(cps.words[3].slot(TokenType::Chord) == v.ignore_id(TokenType::Chord));
    // position=5 is the second beat.
    CHECK(cps.words[4].slot(TokenType::Tempo) == v.conti_id(TokenType::Tempo));
}

TEST_CASE("ungroup_from_cp inverts group_to_cp on fixtures and random songs") {
    const Vocabulary v(Task::Unconditional);
    Rng rng(77);
    for (const Song& song : testing::fixture_corpus()) {
        const TokenSeq seq = encode_remi(song, v);
        CHECK(ungroup_from_cp(group_to_cp(seq, v), v) == seq);
    }
    for (int i = 0; i < 100; ++i) {
        const Song song = testing::random_song(rng);
        const TokenSeq seq = encode_remi(song, v);
        CHECK(ungroup_from_cp(group_to_cp(seq, v), v) == seq);
    }
}

TEST_CASE("ungroup_from_cp inverts conditional interleaved sequences") {
    const Vocabulary v(Task::Conditional);
    Rng rng(78);
    for (int i = 0; i < 50; ++i) {
        const Song piano = testing::random_song(rng, 5, false);
        const LeadSheet lead = make_leadsheet(piano);
        const TokenSeq seq = interleave_conditional(lead, piano, v);
        const CpSeq cps = group_to_cp(seq, v);
        CHECK(validate_cp(cps, v).empty());
        CHECK(ungroup_from_cp(cps, v) == seq);
        // conditional sequences carry no EOS word
        CHECK(cps.words.back().family != v.family_id(Family::Eos));
    }
}

TEST_CASE("note word with an ignored pitch slot is rejected") {
    const Vocabulary v(Task::Unconditional);
    CpSeq cps;
    cps.task = Task::Unconditional;
    cps.words.push_back(make_bos_word(v));
    CompoundWord w = make_ignore_word(v, v.family_id(Family::Note));
    w.slot(TokenType::Duration) = v.token_id(TokenType::Duration, 2);
    w.slot(TokenType::Velocity) = v.token_id(TokenType::Velocity, 2);
    cps.words.push_back(w);
    cps.words.push_back(make_eos_word(v));

    CHECK_THROWS_AS(ungroup_from_cp(cps, v), codec_error);
    const auto violations = validate_cp(cps, v);
    REQUIRE(!violations.empty());
    CHECK(violations[0].index == 1);
    CHECK(violations[0].message.find("pitch") != std::string::npos);
}

TEST_CASE("validate_cp flags EOS words that are not terminal") {
    const Vocabulary v(Task::Unconditional);
    CpSeq cps;
    cps.task = Task::Unconditional;
    cps.words.push_back(make_bos_word(v));
    cps.words.push_back(make_eos_word(v));
    CompoundWord note = make_ignore_word(v, v.family_id(Family::Note));
    note.slot(TokenType::Pitch) = v.token_id(TokenType::Pitch, 60);
    note.slot(TokenType::Duration) = v.token_id(TokenType::Duration, 1);
    note.slot(TokenType::Velocity) = v.token_id(TokenType::Velocity, 1);
    cps.words.push_back(note);

    bool saw_eos_violation = false;
    for (const auto& viol : validate_cp(cps, v))
        saw_eos_violation |= viol.message.find("EOS") != std::string::npos;
    CHECK(saw_eos_violation);
}

TEST_CASE("validate_cp names real slots that contradict the family") {
    const Vocabulary v(Task::Unconditional);
    CpSeq cps;
    cps.task = Task::Unconditional;
    cps.words.push_back(make_bos_word(v));
    CompoundWord w = make_ignore_word(v, v.family_id(Family::Note));
    w.slot(TokenType::Pitch) = v.token_id(TokenType::Pitch, 60);
    w.slot(TokenType::Duration) = v.token_id(TokenType::Duration, 1);
    w.slot(TokenType::Velocity) = v.token_id(TokenType::Velocity, 1);
    w.slot(TokenType::Tempo) = v.token_id(TokenType::Tempo, 3);       // metric slot under note family
    w.slot(TokenType::PositionBar) = v.token_id(TokenType::PositionBar, 1);
    cps.words.push_back(w);
    cps.words.push_back(make_eos_word(v));

    const auto violations = validate_cp(cps, v);
    REQUIRE(!violations.empty());
    const bool names_metric_slot = violations[0].message.find("tempo") != std::string::npos ||
                                   violations[0].message.find("position") != std::string::npos;
    CHECK(names_metric_slot);
}

TEST_CASE("validate_cp rejects families outside the task") {
    const Vocabulary v(Task::Unconditional);
    CpSeq cps;
    cps.task = Task::Unconditional;
    cps.words.push_back(make_bos_word(v));
    CompoundWord w = make_ignore_word(v, v.family_id(Family::Track));
    w.slot(TokenType::Track) = v.token_id(TokenType::Track, 1);
    cps.words.push_back(w);
    cps.words.push_back(make_eos_word(v));
    REQUIRE(!validate_cp(cps, v).empty());
    CHECK(validate_cp(cps, v)[0].message.find("not allowed") != std::string::npos);
}

TEST_CASE("single-note song: compound word and token counts") {
    const Vocabulary v(Task::Unconditional);
    Song s;
    s.n_bars = 1;
    s.notes.push_back({60, {0, 0}, 2, velocity_decode(12)});
    const TokenSeq remi = encode_remi(s, v);
    const CpSeq cps = group_to_cp(remi, v);
    // words: BOS, bar, position, note, EOS
    CHECK(cps.words.size() == 5);
    CHECK(remi.ids.size() == 5);  // bar position pitch duration velocity
    const SongLengths len = measure_lengths("one", remi, cps, v);
    CHECK(len.cp_content == 3);
    CHECK(len.cp_with_specials == 5);
    CHECK(len.remi_content == 5);
    CHECK(len.remi_with_specials == 7);
}

TEST_CASE("length inequality: T_cp < T_remi < K * T_cp on songs with notes") {
    const Vocabulary v(Task::Unconditional);
    Rng rng(99);
    for (int i = 0; i < 100; ++i) {
        const Song song = testing::random_song(rng, 6, false);
        if (song.notes.empty()) continue;
        const TokenSeq remi = encode_remi(song, v);
        const CpSeq cps = group_to_cp(remi, v);
        const SongLengths len = measure_lengths("r", remi, cps, v);
        CHECK(len.cp_content < len.remi_content);
        CHECK(len.remi_content < static_cast<std::size_t>(v.num_slots()) * len.cp_content);
    }
}

TEST_CASE("every produced word passes validate_cp") {
    const Vocabulary v(Task::Unconditional);
    Rng rng(101);
    for (int i = 0; i < 50; ++i) {
        const Song song = testing::random_song(rng);
        const CpSeq cps = group_to_cp(encode_remi(song, v), v);
        CHECK(validate_cp(cps, v).empty());
    }
}

TEST_CASE("cp binary records round trip, dropping the unused track column") {
    const Vocabulary v(Task::Unconditional);
    Rng rng(103);
    const Song song = testing::random_song(rng, 4, false);
    const CpSeq cps = group_to_cp(encode_remi(song, v), v);

    std::stringstream buf;
    write_cp_record(buf, cps, v);
    // record size: 4-byte length + T * (K+1) * 2 bytes
    CHECK(buf.str().size() == 4 + cps.words.size() * (v.num_slots() + 1) * 2);

    CpSeq back;
    REQUIRE(read_cp_record(buf, back, v));
    CHECK(back == cps);
}

TEST_CASE("conditional words carry K+1 = 8 typed symbols per step") {
    const Vocabulary v(Task::Conditional);
    CHECK(v.num_slots() + 1 == 8);
}

TEST_CASE("summarize computes mean, stddev and max") {
    const LengthStats s = summarize({2, 4, 6});
    CHECK(s.mean == doctest::Approx(4.0));
    CHECK(s.stddev == doctest::Approx(std::sqrt(8.0 / 3.0)));
    CHECK(s.max == 6);
    const LengthStats empty = summarize({});
    CHECK(empty.mean == 0.0);
}
