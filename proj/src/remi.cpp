#include "cpword/remi.hpp"

#include <algorithm>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

namespace cpword {

namespace {

// Events of one bar, grouped by position in encoding order.
struct PositionContent {
    const TempoEvent* tempo = nullptr;
    const ChordEvent* chord = nullptr;
    std::vector<const Note*> notes;  // descending pitch
};

std::map<int, PositionContent> bar_content(const Song& song, int bar) {
    std::map<int, PositionContent> by_pos;
    for (const TempoEvent& t : song.tempos)
        if (t.onset.bar == bar) by_pos[t.onset.pos].tempo = &t;
    for (const ChordEvent& c : song.chords)
        if (c.onset.bar == bar) by_pos[c.onset.pos].chord = &c;
    for (const Note& n : song.notes)
        if (n.onset.bar == bar) by_pos[n.onset.pos].notes.push_back(&n);
    for (auto& [pos, content] : by_pos)
        std::stable_sort(content.notes.begin(), content.notes.end(),
                         [](const Note* a, const Note* b) { return a->pitch > b->pitch; });
    return by_pos;
}

class Emitter {
public:
    Emitter(const Vocabulary& vocab, const EncodeOptions& opts, Task task)
        : vocab_(vocab), opts_(opts) {
        seq_.task = task;
    }

    void push(TokenId id) {
        if (seq_.ids.size() >= opts_.max_tokens)
            throw codec_error("encode: sequence exceeds the maximum length of " +
                                  std::to_string(opts_.max_tokens),
                              seq_.ids.size());
        seq_.ids.push_back(id);
    }

    void value(TokenType t, int v) { push(vocab_.token_id(t, v)); }

    void bar() { value(TokenType::PositionBar, vocab_.bar_value()); }

    void note(const Note& n, bool with_velocity) {
        value(TokenType::Pitch, n.pitch);
        value(TokenType::Duration, duration_class(n.duration, vocab_.ranges()));
        if (with_velocity)
            value(TokenType::Velocity, velocity_class(n.velocity, vocab_.ranges()));
    }

    // Piano-track content of one bar: tempo, chord, then notes per position.
    void piano_bar(const Song& song, int bar) {
        for (const auto& [pos, content] : bar_content(song, bar)) {
            value(TokenType::PositionBar, pos + 1);
            if (content.tempo) value(TokenType::Tempo, content.tempo->klass);
            if (content.chord) value(TokenType::Chord, content.chord->label());
            for (const Note* n : content.notes) note(*n, true);
        }
    }

    // Lead-sheet content of one bar: composition tokens only.
    void lead_bar(const LeadSheet& lead, int bar) {
        std::map<int, PositionContent> by_pos;
        for (const ChordEvent& c : lead.chords)
            if (c.onset.bar == bar) by_pos[c.onset.pos].chord = &c;
        for (const Note& n : lead.melody)
            if (n.onset.bar == bar) by_pos[n.onset.pos].notes.push_back(&n);
        for (const auto& [pos, content] : by_pos) {
            value(TokenType::PositionBar, pos + 1);
            if (content.chord) value(TokenType::Chord, content.chord->label());
            for (const Note* n : content.notes) note(*n, false);
        }
    }

    TokenSeq take() { return std::move(seq_); }

private:
    const Vocabulary& vocab_;
    const EncodeOptions& opts_;
    TokenSeq seq_;
};

}  // namespace

TokenSeq encode_remi(const Song& song, const Vocabulary& vocab, const EncodeOptions& opts) {
    Emitter out(vocab, opts, vocab.task());
    for (int bar = 0; bar < song.n_bars; ++bar) {
        out.bar();
        out.piano_bar(song, bar);
    }
    return out.take();
}

TokenSeq interleave_conditional(const LeadSheet& lead, const Song& piano, const Vocabulary& vocab,
                                const EncodeOptions& opts) {
    if (vocab.task() != Task::Conditional)
        throw codec_error("interleave: vocabulary is not for the conditional task", 0);
    if (lead.n_bars != piano.n_bars)
        throw codec_error("interleave: lead sheet and piano bar counts differ", 0);
    Emitter out(vocab, opts, Task::Conditional);
    for (int bar = 0; bar < piano.n_bars; ++bar) {
        out.bar();
        out.value(TokenType::Track, 0);
        out.lead_bar(lead, bar);
        out.value(TokenType::Track, 1);
        out.piano_bar(piano, bar);
    }
    return out.take();
}

namespace {

// Shared decoding state machine. Track context decides whether notes carry
// velocity (piano) or not (lead sheet), and whether tempo tokens are legal.
class Decoder {
public:
    Decoder(const TokenSeq& seq, const Vocabulary& vocab) : seq_(seq), vocab_(vocab) {}

    void run(bool interleaved) {
        lead_.grid = vocab_.grid();
        piano_.grid = vocab_.grid();
        for (i_ = 0; i_ < seq_.ids.size(); ++i_) {
            const Vocabulary::TokenRef ref = describe(i_);
            if (ref.kind != Vocabulary::Kind::Value)
                fail("unexpected non-value token " + vocab_.token_name(seq_.ids[i_]));
            switch (ref.type) {
                case TokenType::PositionBar:
                    if (ref.value == vocab_.bar_value())
                        begin_bar(interleaved);
                    else
                        begin_position(ref.value);
                    break;
                case TokenType::Track: begin_track(ref.value, interleaved); break;
                case TokenType::Tempo: add_tempo(ref.value); break;
                case TokenType::Chord: add_chord(ref.value); break;
                case TokenType::Pitch: add_note(); break;
                case TokenType::Duration: fail("orphan duration token"); break;
                case TokenType::Velocity: fail("orphan velocity token"); break;
            }
        }
        finish();
    }

    Song take_piano() { return std::move(piano_); }
    LeadSheet take_lead() { return std::move(lead_); }

private:
    [[noreturn]] void fail(const std::string& what) const { throw codec_error("decode: " + what, i_); }

    Vocabulary::TokenRef describe(std::size_t i) const {
        if (seq_.ids[i] >= vocab_.total_ids()) throw codec_error("decode: id out of vocabulary", i);
        return vocab_.describe(seq_.ids[i]);
    }

    void begin_bar(bool interleaved) {
        bar_++;
        pos_ = -1;
        in_lead_ = false;
        track_declared_ = false;
        if (interleaved) expect_track_ = true;
    }

    void begin_track(int value, bool interleaved) {
        if (!interleaved) fail("unexpected track token outside the conditional layout");
        if (bar_ < 0) fail("track token before any bar");
        if (value == 0) {
            if (!expect_track_) fail("leadsheet track token not at the start of a bar");
            in_lead_ = true;
        } else {
            if (!track_declared_ || !in_lead_) fail("piano track token without a leadsheet segment");
            in_lead_ = false;
        }
        expect_track_ = false;
        track_declared_ = true;
        pos_ = -1;
    }

    void begin_position(int value) {
        if (bar_ < 0) fail("position before any bar");
        if (expect_track_) fail("expected a track token after bar");
        pos_ = value - 1;
    }

    Onset onset() const { return {bar_, pos_}; }

    void require_position(const char* what) {
        if (bar_ < 0) fail(std::string(what) + " before any bar");
        if (pos_ < 0) fail(std::string(what) + " before any position");
    }

    void add_tempo(int klass) {
        require_position("tempo");
        if (in_lead_) fail("tempo token inside a leadsheet segment");
        if (!on_beat(onset(), vocab_.grid())) fail("tempo token off the beat grid");
        piano_.tempos.push_back({onset(), klass});
    }

    void add_chord(int label) {
        require_position("chord");
        if (!on_beat(onset(), vocab_.grid())) fail("chord token off the beat grid");
        auto& chords = in_lead_ ? lead_.chords : piano_.chords;
        chords.push_back(ChordEvent::from_label(onset(), label));
    }

    void add_note() {
        require_position("note");
        const Vocabulary::TokenRef pitch = describe(i_);
        Note n;
        n.pitch = pitch.value;
        n.onset = onset();

        if (i_ + 1 >= seq_.ids.size()) {
            i_++;
            fail("note missing duration");
        }
        const Vocabulary::TokenRef dur = describe(++i_);
        if (dur.kind != Vocabulary::Kind::Value || dur.type != TokenType::Duration)
            fail("note missing duration");
        n.duration = duration_decode(dur.value, vocab_.ranges());

        if (in_lead_) {
            n.velocity = 64;
            lead_.melody.push_back(n);
            return;
        }
        if (i_ + 1 >= seq_.ids.size()) {
            i_++;
            fail("note missing velocity");
        }
        const Vocabulary::TokenRef vel = describe(++i_);
        if (vel.kind != Vocabulary::Kind::Value || vel.type != TokenType::Velocity)
            fail("note missing velocity");
        n.velocity = velocity_decode(vel.value, vocab_.ranges());
        piano_.notes.push_back(n);
    }

    void finish() {
        piano_.n_bars = bar_ + 1;
        lead_.n_bars = bar_ + 1;
        piano_.sort_events();

        // Sampled sequences may repeat a (onset, pitch) pair; the encoder
        // never does, so round-trips are unaffected by dropping repeats.
        auto drop_duplicate_notes = [](std::vector<Note>& notes) {
            std::vector<Note> kept;
            for (const Note& n : notes) {
                if (!kept.empty() && kept.back().onset == n.onset && kept.back().pitch == n.pitch)
                    continue;
                kept.push_back(n);
            }
            notes = std::move(kept);
        };
        drop_duplicate_notes(piano_.notes);

        auto keep_last = [](auto& events) {
            auto out = events;
            out.clear();
            for (const auto& e : events) {
                if (!out.empty() && out.back().onset == e.onset)
                    out.back() = e;
                else
                    out.push_back(e);
            }
            events = std::move(out);
        };
        keep_last(piano_.tempos);
        keep_last(piano_.chords);
        keep_last(lead_.chords);

        std::stable_sort(lead_.melody.begin(), lead_.melody.end(),
                         [](const Note& a, const Note& b) { return a.onset < b.onset; });
    }

    const TokenSeq& seq_;
    const Vocabulary& vocab_;
    std::size_t i_ = 0;
    int bar_ = -1;
    int pos_ = -1;
    bool in_lead_ = false;
    bool expect_track_ = false;
    bool track_declared_ = false;
    Song piano_;
    LeadSheet lead_;
};

}  // namespace

Song decode_remi(const TokenSeq& seq, const Vocabulary& vocab) {
    Decoder d(seq, vocab);
    d.run(false);
    return d.take_piano();
}

std::pair<LeadSheet, Song> deinterleave_conditional(const TokenSeq& seq, const Vocabulary& vocab) {
    Decoder d(seq, vocab);
    d.run(true);
    return {d.take_lead(), d.take_piano()};
}

std::string tokens_to_text(const TokenSeq& seq, const Vocabulary& vocab) {
    std::string out;
    for (TokenId id : seq.ids) {
        out += vocab.token_name(id);
        out += '\n';
    }
    return out;
}

TokenSeq tokens_from_text(const std::string& text, const Vocabulary& vocab, Task task) {
    TokenSeq seq;
    seq.task = task;
    std::istringstream in(text);
    std::string word;
    while (in >> word) seq.ids.push_back(vocab.parse_token(word));
    return seq;
}

void write_id_record(std::ostream& out, const std::vector<TokenId>& ids) {
    const auto n = static_cast<std::uint32_t>(ids.size());
    unsigned char head[4] = {static_cast<unsigned char>(n & 0xff),
                             static_cast<unsigned char>(n >> 8 & 0xff),
                             static_cast<unsigned char>(n >> 16 & 0xff),
                             static_cast<unsigned char>(n >> 24 & 0xff)};
    out.write(reinterpret_cast<const char*>(head), 4);
    for (TokenId id : ids) {
        unsigned char b[2] = {static_cast<unsigned char>(id & 0xff),
                              static_cast<unsigned char>(id >> 8 & 0xff)};
        out.write(reinterpret_cast<const char*>(b), 2);
    }
}

bool read_id_record(std::istream& in, std::vector<TokenId>& ids) {
    unsigned char head[4];
    if (!in.read(reinterpret_cast<char*>(head), 4)) return false;
    const std::uint32_t n = head[0] | head[1] << 8 | head[2] << 16 | static_cast<std::uint32_t>(head[3]) << 24;
    ids.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        unsigned char b[2];
        if (!in.read(reinterpret_cast<char*>(b), 2))
            throw std::runtime_error("corpus record truncated");
        ids[i] = static_cast<TokenId>(b[0] | b[1] << 8);
    }
    return true;
}

}  // namespace cpword
