#pragma once

#include <compare>
#include <string>
#include <vector>

#include "cpword/grid.hpp"

namespace cpword {

// (bar, position) on the sixteenth-note grid.
struct Onset {
    int bar = 0;
    int pos = 0;

    auto operator<=>(const Onset&) const = default;
};

struct Note {
    int pitch = 60;       // MIDI number, kept inside the configured range
    Onset onset;
    int duration = 1;     // 16th units, on the lattice {1..16, 32}
    int velocity = 64;    // 1..127; quantized songs hold class midpoints

    bool operator==(const Note&) const = default;
};

struct TempoEvent {
    Onset onset;          // restricted to beat positions
    int klass = 1;        // tempo class 1..58

    bool operator==(const TempoEvent&) const = default;
};

// Chord qualities, in the order used for token values and templates.
inline constexpr int kNumChordQualities = 11;
inline constexpr int kNoChordQuality = kNumChordQualities;
inline constexpr const char* kChordQualityNames[kNumChordQualities + 1] = {
    "maj", "min", "dim", "aug", "sus2", "sus4",
    "maj7", "min7", "dom7", "dim7", "hdim7", "N",
};
inline constexpr const char* kPitchClassNames[12] = {
    "C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B",
};

struct ChordEvent {
    Onset onset;          // restricted to beat positions
    int root = 0;         // 0..11 (C..B); 0 by convention for no-chord
    int quality = 0;      // 0..10, or kNoChordQuality

    bool is_no_chord() const { return quality == kNoChordQuality; }

    // Token value: root-major over the 12x11 label table, no-chord last.
    int label() const { return is_no_chord() ? 12 * kNumChordQualities : root * kNumChordQualities + quality; }

    static ChordEvent from_label(Onset onset, int label) {
        if (label == 12 * kNumChordQualities) return {onset, 0, kNoChordQuality};
        return {onset, label / kNumChordQualities, label % kNumChordQualities};
    }

    std::string name() const {
        if (is_no_chord()) return "N";
        return std::string(kPitchClassNames[root]) + ":" + kChordQualityNames[quality];
    }

    bool operator==(const ChordEvent&) const = default;
};

// A quantized symbolic performance. Invariants: events lie on the grid and
// before n_bars; notes are sorted by (bar, pos, pitch) with no duplicate
// (onset, pitch) pairs; tempo/chord onsets sit on beats.
struct Song {
    GridConfig grid;
    std::vector<Note> notes;
    std::vector<TempoEvent> tempos;
    std::vector<ChordEvent> chords;
    int n_bars = 0;

    bool operator==(const Song&) const = default;

    std::vector<std::string> invariant_violations(const ValueRanges& r = {}) const;
    void sort_events();
};

// Melody plus chord labels at beat resolution; note velocities are ignored.
struct LeadSheet {
    GridConfig grid;
    std::vector<Note> melody;
    std::vector<ChordEvent> chords;
    int n_bars = 0;

    bool operator==(const LeadSheet&) const = default;
};

inline bool on_beat(const Onset& o, const GridConfig& g) {
    return o.pos % g.positions_per_beat() == 0;
}

inline int beat_index(const Onset& o, const GridConfig& g) {
    return o.bar * g.beats_per_bar + o.pos / g.positions_per_beat();
}

}  // namespace cpword
