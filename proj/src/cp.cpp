#include "cpword/cp.hpp"

#include <cmath>
#include <istream>
#include <ostream>

namespace cpword {

CompoundWord make_ignore_word(const Vocabulary& vocab, TokenId family) {
    CompoundWord w;
    w.family = family;
    for (int i = 0; i < kNumTokenTypes; ++i)
        w.slots[i] = vocab.ignore_id(static_cast<TokenType>(i));
    return w;
}

CompoundWord make_bos_word(const Vocabulary& vocab) { return make_ignore_word(vocab, vocab.bos_id()); }

CompoundWord make_eos_word(const Vocabulary& vocab) {
    return make_ignore_word(vocab, vocab.family_id(Family::Eos));
}

namespace {

bool is_beat_position(int pos_value, const Vocabulary& vocab) {
    return (pos_value - 1) % vocab.grid().positions_per_beat() == 0;
}

class Grouper {
public:
    Grouper(const TokenSeq& seq, const Vocabulary& vocab) : seq_(seq), vocab_(vocab) {
        out_.task = seq.task;
    }

    CpSeq run() {
        out_.words.push_back(make_bos_word(vocab_));
        const std::size_t n = seq_.ids.size();
        for (std::size_t i = 0; i < n;) {
            const auto ref = describe(i);
            if (ref.kind != Vocabulary::Kind::Value)
                throw codec_error("group: unexpected non-value token " + vocab_.token_name(seq_.ids[i]), i);
            switch (ref.type) {
                case TokenType::PositionBar: i = metric_word(i, ref.value); break;
                case TokenType::Pitch: i = note_word(i); break;
                case TokenType::Track: i = track_word(i, ref.value); break;
                default:
                    throw codec_error("group: stray " + vocab_.token_name(seq_.ids[i]) +
                                          " outside a metric or note group",
                                      i);
            }
        }
        if (seq_.task == Task::Unconditional) out_.words.push_back(make_eos_word(vocab_));
        return std::move(out_);
    }

private:
    Vocabulary::TokenRef describe(std::size_t i) const {
        if (seq_.ids[i] >= vocab_.total_ids()) throw codec_error("group: id out of vocabulary", i);
        return vocab_.describe(seq_.ids[i]);
    }

    std::size_t metric_word(std::size_t i, int pos_value) {
        CompoundWord w = make_ignore_word(vocab_, vocab_.family_id(Family::Metric));
        w.slot(TokenType::PositionBar) = seq_.ids[i];
        std::size_t j = i + 1;
        bool have_tempo = false, have_chord = false;
        for (; j < seq_.ids.size(); ++j) {
            const auto ref = describe(j);
            if (ref.kind != Vocabulary::Kind::Value) break;
            if (ref.type == TokenType::Tempo) {
                if (have_tempo) throw codec_error("group: duplicate tempo at one position", j);
                w.slot(TokenType::Tempo) = seq_.ids[j];
                have_tempo = true;
            } else if (ref.type == TokenType::Chord) {
                if (have_chord) throw codec_error("group: duplicate chord at one position", j);
                w.slot(TokenType::Chord) = seq_.ids[j];
                have_chord = true;
            } else {
                break;
            }
        }
        if (pos_value == vocab_.bar_value()) {
            if (have_tempo || have_chord)
                throw codec_error("group: tempo/chord attached to a bar token", i + 1);
            in_lead_ = false;
        } else if (is_beat_position(pos_value, vocab_)) {
            // Beats with no change continue the previous tempo/chord.
            if (!have_tempo && !in_lead_) w.slot(TokenType::Tempo) = vocab_.conti_id(TokenType::Tempo);
            if (!have_chord) w.slot(TokenType::Chord) = vocab_.conti_id(TokenType::Chord);
        } else if (have_tempo || have_chord) {
            throw codec_error("group: tempo/chord at a non-beat position", i + 1);
        }
        out_.words.push_back(w);
        return j;
    }

    std::size_t note_word(std::size_t i) {
        CompoundWord w = make_ignore_word(vocab_, vocab_.family_id(Family::Note));
        w.slot(TokenType::Pitch) = seq_.ids[i];
        if (i + 1 >= seq_.ids.size()) throw codec_error("group: note missing duration", i + 1);
        const auto dur = describe(i + 1);
        if (dur.kind != Vocabulary::Kind::Value || dur.type != TokenType::Duration)
            throw codec_error("group: note missing duration", i + 1);
        w.slot(TokenType::Duration) = seq_.ids[i + 1];
        std::size_t j = i + 2;
        if (!in_lead_) {
            if (j >= seq_.ids.size()) throw codec_error("group: note missing velocity", j);
            const auto vel = describe(j);
            if (vel.kind != Vocabulary::Kind::Value || vel.type != TokenType::Velocity)
                throw codec_error("group: note missing velocity", j);
            w.slot(TokenType::Velocity) = seq_.ids[j];
            ++j;
        }
        out_.words.push_back(w);
        return j;
    }

    std::size_t track_word(std::size_t i, int value) {
        if (seq_.task != Task::Conditional)
            throw codec_error("group: track token in an unconditional sequence", i);
        CompoundWord w = make_ignore_word(vocab_, vocab_.family_id(Family::Track));
        w.slot(TokenType::Track) = seq_.ids[i];
        out_.words.push_back(w);
        in_lead_ = (value == 0);
        return i + 1;
    }

    const TokenSeq& seq_;
    const Vocabulary& vocab_;
    CpSeq out_;
    bool in_lead_ = false;
};

// Per-word structural check shared by validate_cp and ungroup_from_cp.
// Returns an empty string when the word is well formed.
std::string word_violation(const CompoundWord& w, const Vocabulary& vocab) {
    enum class SlotKind { Ignore, Conti, Value, Foreign };
    std::array<SlotKind, kNumTokenTypes> kind{};
    for (int i = 0; i < kNumTokenTypes; ++i) {
        const auto t = static_cast<TokenType>(i);
        const TokenId id = w.slots[i];
        if (id == vocab.ignore_id(t)) {
            kind[i] = SlotKind::Ignore;
        } else if (vocab.has_conti(t) && id == vocab.conti_id(t)) {
            kind[i] = SlotKind::Conti;
        } else {
            if (id >= vocab.total_ids()) return std::string("slot ") + Vocabulary::type_name(t) + " holds an out-of-vocabulary id";
            const auto ref = vocab.describe(id);
            if (ref.kind != Vocabulary::Kind::Value || ref.type != t) kind[i] = SlotKind::Foreign;
            else kind[i] = SlotKind::Value;
        }
    }
    for (int i = 0; i < kNumTokenTypes; ++i)
        if (kind[i] == SlotKind::Foreign)
            return std::string("slot ") + Vocabulary::type_name(static_cast<TokenType>(i)) +
                   " holds a token of another type";

    auto require = [&](TokenType t, bool value_ok, bool ignore_ok, bool conti_ok) -> std::string {
        const SlotKind k = kind[static_cast<int>(t)];
        if ((k == SlotKind::Value && !value_ok) || (k == SlotKind::Ignore && !ignore_ok) ||
            (k == SlotKind::Conti && !conti_ok)) {
            const char* what = k == SlotKind::Value ? "a real token" : k == SlotKind::Ignore ? "[ignore]" : "[conti]";
            return std::string("slot ") + Vocabulary::type_name(t) + " must not hold " + what;
        }
        return {};
    };
    auto all_of = [&](std::initializer_list<std::string> checks) -> std::string {
        for (const auto& c : checks)
            if (!c.empty()) return c;
        return {};
    };

    int family_local;
    try {
        family_local = vocab.family_local(w.family);
    } catch (const vocab_error&) {
        return "family column does not hold a family token";
    }

    if (family_local == kNumFamilies)  // [BOS]
        return all_of({require(TokenType::Track, false, true, false),
                       require(TokenType::Tempo, false, true, false),
                       require(TokenType::PositionBar, false, true, false),
                       require(TokenType::Chord, false, true, false),
                       require(TokenType::Pitch, false, true, false),
                       require(TokenType::Duration, false, true, false),
                       require(TokenType::Velocity, false, true, false)});

    const auto family = static_cast<Family>(family_local);
    bool family_allowed = false;
    for (Family f : vocab.allowed_families()) family_allowed = family_allowed || f == family;
    if (!family_allowed)
        return std::string("family ") + Vocabulary::family_name(family) + " is not allowed for the " +
               task_name(vocab.task()) + " task";

    switch (family) {
        case Family::Eos:
            return all_of({require(TokenType::Track, false, true, false),
                           require(TokenType::Tempo, false, true, false),
                           require(TokenType::PositionBar, false, true, false),
                           require(TokenType::Chord, false, true, false),
                           require(TokenType::Pitch, false, true, false),
                           require(TokenType::Duration, false, true, false),
                           require(TokenType::Velocity, false, true, false)});
        case Family::Track:
            return all_of({require(TokenType::Track, true, false, false),
                           require(TokenType::Tempo, false, true, false),
                           require(TokenType::PositionBar, false, true, false),
                           require(TokenType::Chord, false, true, false),
                           require(TokenType::Pitch, false, true, false),
                           require(TokenType::Duration, false, true, false),
                           require(TokenType::Velocity, false, true, false)});
        case Family::Note: {
            const bool lead_note_ok = vocab.task() == Task::Conditional;
            return all_of({require(TokenType::Track, false, true, false),
                           require(TokenType::Tempo, false, true, false),
                           require(TokenType::PositionBar, false, true, false),
                           require(TokenType::Chord, false, true, false),
                           require(TokenType::Pitch, true, false, false),
                           require(TokenType::Duration, true, false, false),
                           require(TokenType::Velocity, true, lead_note_ok, false)});
        }
        case Family::Metric: {
            std::string head = all_of({require(TokenType::Track, false, true, false),
                                       require(TokenType::PositionBar, true, false, false),
                                       require(TokenType::Pitch, false, true, false),
                                       require(TokenType::Duration, false, true, false),
                                       require(TokenType::Velocity, false, true, false)});
            if (!head.empty()) return head;
            const int pos_value = vocab.describe(w.slot(TokenType::PositionBar)).value;
            if (pos_value == vocab.bar_value() || !is_beat_position(pos_value, vocab))
                return all_of({require(TokenType::Tempo, false, true, false),
                               require(TokenType::Chord, false, true, false)});
            return all_of({require(TokenType::Tempo, true, true, true),
                           require(TokenType::Chord, true, true, true)});
        }
    }
    return {};
}

}  // namespace

CpSeq group_to_cp(const TokenSeq& seq, const Vocabulary& vocab) { return Grouper(seq, vocab).run(); }

TokenSeq ungroup_from_cp(const CpSeq& cps, const Vocabulary& vocab) {
    TokenSeq seq;
    seq.task = cps.task;
    for (std::size_t t = 0; t < cps.words.size(); ++t) {
        const CompoundWord& w = cps.words[t];
        if (const std::string v = word_violation(w, vocab); !v.empty())
            throw codec_error("ungroup: " + v, t);
        const int family_local = vocab.family_local(w.family);
        if (family_local == kNumFamilies) {
            if (t != 0) throw codec_error("ungroup: [BOS] word not at the start", t);
            continue;
        }
        switch (static_cast<Family>(family_local)) {
            case Family::Eos:
                if (t + 1 != cps.words.size()) throw codec_error("ungroup: EOS word not terminal", t);
                break;
            case Family::Track: seq.ids.push_back(w.slot(TokenType::Track)); break;
            case Family::Note:
                seq.ids.push_back(w.slot(TokenType::Pitch));
                seq.ids.push_back(w.slot(TokenType::Duration));
                if (w.slot(TokenType::Velocity) != vocab.ignore_id(TokenType::Velocity))
                    seq.ids.push_back(w.slot(TokenType::Velocity));
                break;
            case Family::Metric: {
                seq.ids.push_back(w.slot(TokenType::PositionBar));
                for (TokenType t2 : {TokenType::Tempo, TokenType::Chord}) {
                    const TokenId id = w.slot(t2);
                    if (id != vocab.ignore_id(t2) && id != vocab.conti_id(t2)) seq.ids.push_back(id);
                }
                break;
            }
        }
    }
    return seq;
}

std::vector<CpViolation> validate_cp(const CpSeq& cps, const Vocabulary& vocab) {
    std::vector<CpViolation> out;
    for (std::size_t t = 0; t < cps.words.size(); ++t) {
        const CompoundWord& w = cps.words[t];
        if (const std::string v = word_violation(w, vocab); !v.empty()) {
            out.push_back({t, v});
            continue;
        }
        const int family_local = vocab.family_local(w.family);
        if (family_local == kNumFamilies) {
            if (t != 0) out.push_back({t, "[BOS] word not at the start"});
        } else if (t == 0) {
            out.push_back({t, "sequence does not start with the [BOS] word"});
        } else if (static_cast<Family>(family_local) == Family::Eos && t + 1 != cps.words.size()) {
            out.push_back({t, "EOS word not terminal"});
        }
    }
    if (cps.task == Task::Unconditional && !cps.words.empty()) {
        const CompoundWord& last = cps.words.back();
        if (last.family != vocab.family_id(Family::Eos))
            out.push_back({cps.words.size() - 1, "unconditional sequence does not end with EOS"});
    }
    return out;
}

void write_cp_record(std::ostream& out, const CpSeq& cps, const Vocabulary& vocab) {
    std::vector<TokenId> flat;
    flat.reserve(cps.words.size() * (vocab.num_slots() + 1));
    for (const CompoundWord& w : cps.words) {
        for (TokenType t : vocab.slot_types()) flat.push_back(w.slot(t));
        flat.push_back(w.family);
    }
    const auto n = static_cast<std::uint32_t>(cps.words.size());
    unsigned char head[4] = {static_cast<unsigned char>(n & 0xff),
                             static_cast<unsigned char>(n >> 8 & 0xff),
                             static_cast<unsigned char>(n >> 16 & 0xff),
                             static_cast<unsigned char>(n >> 24 & 0xff)};
    out.write(reinterpret_cast<const char*>(head), 4);
    for (TokenId id : flat) {
        unsigned char b[2] = {static_cast<unsigned char>(id & 0xff),
                              static_cast<unsigned char>(id >> 8 & 0xff)};
        out.write(reinterpret_cast<const char*>(b), 2);
    }
}

bool read_cp_record(std::istream& in, CpSeq& cps, const Vocabulary& vocab) {
    unsigned char head[4];
    if (!in.read(reinterpret_cast<char*>(head), 4)) return false;
    const std::uint32_t n = head[0] | head[1] << 8 | head[2] << 16 | static_cast<std::uint32_t>(head[3]) << 24;
    cps.task = vocab.task();
    cps.words.assign(n, make_bos_word(vocab));
    for (std::uint32_t t = 0; t < n; ++t) {
        CompoundWord w = make_ignore_word(vocab, 0);
        for (TokenType st : vocab.slot_types()) {
            unsigned char b[2];
            if (!in.read(reinterpret_cast<char*>(b), 2)) throw std::runtime_error("cp record truncated");
            w.slot(st) = static_cast<TokenId>(b[0] | b[1] << 8);
        }
        unsigned char b[2];
        if (!in.read(reinterpret_cast<char*>(b), 2)) throw std::runtime_error("cp record truncated");
        w.family = static_cast<TokenId>(b[0] | b[1] << 8);
        cps.words[t] = w;
    }
    return true;
}

SongLengths measure_lengths(const std::string& name, const TokenSeq& remi, const CpSeq& cps,
                            const Vocabulary& vocab) {
    SongLengths len;
    len.name = name;
    len.remi_content = remi.ids.size();
    std::size_t specials = 0;
    for (const CompoundWord& w : cps.words)
        if (w.family == vocab.bos_id() || w.family == vocab.family_id(Family::Eos)) specials++;
    len.cp_with_specials = cps.words.size();
    len.cp_content = cps.words.size() - specials;
    len.remi_with_specials = len.remi_content + specials;
    return len;
}

LengthStats summarize(const std::vector<std::size_t>& lengths) {
    LengthStats s;
    if (lengths.empty()) return s;
    double sum = 0.0;
    for (std::size_t v : lengths) {
        sum += static_cast<double>(v);
        s.max = std::max(s.max, v);
    }
    s.mean = sum / static_cast<double>(lengths.size());
    double sq = 0.0;
    for (std::size_t v : lengths) sq += (static_cast<double>(v) - s.mean) * (static_cast<double>(v) - s.mean);
    s.stddev = std::sqrt(sq / static_cast<double>(lengths.size()));
    return s;
}

}  // namespace cpword
