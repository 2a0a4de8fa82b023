#pragma once

#include <set>
#include <vector>

#include "cpword/analysis.hpp"
#include "cpword/rng.hpp"
#include "cpword/song.hpp"

namespace cpword::testing {

// Random valid quantized Song: events on the grid, velocities at class
// midpoints, durations on the class lattice, no duplicate (onset, pitch).
inline Song random_song(Rng& rng, int max_bars = 8, bool allow_empty = true) {
    const ValueRanges ranges;
    Song song;
    song.n_bars = static_cast<int>(rng.below(max_bars)) + 1;

    const int n_notes = allow_empty && rng.uniform() < 0.05
                            ? 0
                            : static_cast<int>(rng.below(song.n_bars * 12ULL)) + 1;
    std::set<std::pair<Onset, int>> used;
    for (int i = 0; i < n_notes; ++i) {
        Note n;
        n.onset = {static_cast<int>(rng.below(song.n_bars)), static_cast<int>(rng.below(16))};
        n.pitch = ranges.pitch_min + static_cast<int>(rng.below(86));
        if (!used.insert({n.onset, n.pitch}).second) continue;
        const int dur_class = static_cast<int>(rng.below(17)) + 1;
        n.duration = duration_decode(dur_class, ranges);
        n.velocity = velocity_decode(static_cast<int>(rng.below(24)) + 1, ranges);
        song.notes.push_back(n);
    }

    std::set<int> tempo_beats;
    const int n_tempos = static_cast<int>(rng.below(4));
    for (int i = 0; i < n_tempos; ++i) {
        const int beat = static_cast<int>(rng.below(song.n_bars * 4ULL));
        if (!tempo_beats.insert(beat).second) continue;
        song.tempos.push_back({{beat / 4, beat % 4 * 4}, static_cast<int>(rng.below(58)) + 1});
    }

    std::set<int> chord_beats;
    const int n_chords = static_cast<int>(rng.below(6));
    for (int i = 0; i < n_chords; ++i) {
        const int beat = static_cast<int>(rng.below(song.n_bars * 4ULL));
        if (!chord_beats.insert(beat).second) continue;
        ChordEvent c;
        c.onset = {beat / 4, beat % 4 * 4};
        if (rng.uniform() < 0.1) {
            c.quality = kNoChordQuality;
        } else {
            c.root = static_cast<int>(rng.below(12));
            c.quality = static_cast<int>(rng.below(kNumChordQualities));
        }
        song.chords.push_back(c);
    }

    song.sort_events();
    return song;
}

// n_bars as an ingester would derive it: one past the last event onset.
inline Song with_trimmed_bars(Song song) {
    int max_bar = -1;
    for (const Note& n : song.notes) max_bar = std::max(max_bar, n.onset.bar);
    for (const TempoEvent& t : song.tempos) max_bar = std::max(max_bar, t.onset.bar);
    for (const ChordEvent& c : song.chords) max_bar = std::max(max_bar, c.onset.bar);
    song.n_bars = max_bar + 1;
    return song;
}

// Overlapping equal-pitch notes cannot be re-paired unambiguously from MIDI
// note-on/off streams; drop them when a test needs an exact SMF round trip.
inline Song without_same_pitch_overlaps(Song song) {
    std::vector<Note> kept;
    for (const Note& n : song.notes) {
        bool clashes = false;
        for (const Note& k : kept) {
            if (k.pitch != n.pitch) continue;
            const long long k_on = static_cast<long long>(k.onset.bar) * 16 + k.onset.pos;
            const long long n_on = static_cast<long long>(n.onset.bar) * 16 + n.onset.pos;
            if (n_on < k_on + k.duration) clashes = true;
        }
        if (!clashes) kept.push_back(n);
    }
    song.notes = std::move(kept);
    return song;
}

// Four deterministic, musically plausible songs. All open on the same C
// major chord but with distinct tempo classes, so the first point where the
// songs diverge differs in exactly one compound-word slot; overfit tests
// rely on greedy decoding locking onto one song there.
inline std::vector<Song> fixture_corpus(int n_bars = 4) {
    const ValueRanges ranges;
    const int progressions[4][4] = {
        {0, 9, 5, 7},   // C  Am F  G7
        {0, 7, 0, 4},   // C  G  C  Em
        {0, 4, 5, 0},   // C  Em F  C
        {0, 2, 7, 5},   // C  Dm G7 F
    };
    const int qualities[4][4] = {
        {0, 1, 0, 8},
        {0, 0, 0, 1},
        {0, 1, 0, 0},
        {0, 1, 8, 0},
    };
    const int scales[4][8] = {
        {0, 2, 4, 5, 7, 9, 11, 12},
        {2, 4, 6, 7, 9, 11, 13, 14},
        {9, 11, 12, 14, 16, 17, 19, 21},
        {5, 7, 9, 10, 12, 14, 16, 17},
    };

    std::vector<Song> corpus;
    for (int s = 0; s < 4; ++s) {
        Song song;
        song.n_bars = n_bars;
        song.tempos.push_back({{0, 0}, 10 + 12 * s});
        for (int bar = 0; bar < n_bars; ++bar) {
            const int root = progressions[s][bar % 4];
            const int quality = qualities[s][bar % 4];
            song.chords.push_back({{bar, 0}, root, quality});
            for (int beat = 0; beat < 4; ++beat) {
                const Onset onset{bar, beat * 4};
                // melody on every beat
                Note m;
                m.pitch = 72 + scales[s][(bar * 4 + beat) % 8] % 12;
                m.onset = onset;
                m.duration = 4;
                m.velocity = velocity_decode(12 + (beat % 3), ranges);
                song.notes.push_back(m);
                // block accompaniment on beats 1 and 3
                if (beat % 2 == 0) {
                    const ChromaVector tpl = chord_template(root, quality);
                    for (int pc = 0; pc < 12; ++pc) {
                        if (tpl[pc] == 0.0) continue;
                        Note a;
                        a.pitch = 48 + pc;
                        a.onset = onset;
                        a.duration = 8;
                        a.velocity = velocity_decode(8, ranges);
                        song.notes.push_back(a);
                    }
                }
            }
        }
        song.sort_events();
        corpus.push_back(song);
    }
    return corpus;
}

}  // namespace cpword::testing
