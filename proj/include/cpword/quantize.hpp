#pragma once

#include <cstdint>
#include <vector>

#include "cpword/song.hpp"

namespace cpword {

// Events in absolute ticks, before any snapping. parse_smf produces these;
// quantize_raw turns them into a Song.
struct RawNote {
    std::int64_t on_tick = 0;
    std::int64_t off_tick = 0;
    int pitch = 60;
    int velocity = 64;
};

struct RawTempo {
    std::int64_t tick = 0;
    double bpm = 120.0;
};

struct RawChord {
    std::int64_t tick = 0;
    int root = 0;
    int quality = 0;
};

struct RawEvents {
    std::vector<RawNote> notes;
    std::vector<RawTempo> tempos;
    std::vector<RawChord> chords;
};

// Lossy-conversion counters. Quantization never fails; it reports instead.
struct QuantizeDiagnostics {
    int pitches_transposed = 0;
    int durations_overflowed = 0;
    int zero_durations = 0;
    int velocities_clamped = 0;
    int tempos_clamped = 0;
    int duplicate_notes_dropped = 0;
    int coinciding_events_merged = 0;
};

struct QuantizeOptions {
    // Bin velocities into classes and store the class midpoint. Ingestion
    // from SMF keeps the played velocities instead.
    bool quantize_velocity = true;
};

Song quantize_raw(const RawEvents& events, const GridConfig& grid,
                  QuantizeDiagnostics* diag = nullptr, const ValueRanges& ranges = {},
                  const QuantizeOptions& opts = {});

// Inverse direction: a quantized Song back to tick events (tempo classes
// decode to bin-midpoint BPM). quantize_raw(to_raw(s)) == s for valid songs.
RawEvents to_raw(const Song& song, const ValueRanges& ranges = {});

}  // namespace cpword
