#include "cpword/quantize.hpp"

#include <algorithm>
#include <cmath>

namespace cpword {

namespace {

Onset onset_from_index(long long index, const GridConfig& g) {
    return {static_cast<int>(index / g.positions_per_bar),
            static_cast<int>(index % g.positions_per_bar)};
}

}  // namespace

Song quantize_raw(const RawEvents& events, const GridConfig& grid, QuantizeDiagnostics* diag,
                  const ValueRanges& ranges, const QuantizeOptions& opts) {
    grid.validate();
    QuantizeDiagnostics local;
    QuantizeDiagnostics& d = diag ? *diag : local;

    Song song;
    song.grid = grid;
    const long long pos_width = grid.ticks_per_position();
    const long long beat_width = grid.ticks_per_beat;
    const int ppb = grid.positions_per_beat();

    for (const RawNote& rn : events.notes) {
        Note n;
        bool transposed = false;
        n.pitch = pitch_into_range(rn.pitch, ranges, &transposed);
        if (transposed) d.pitches_transposed++;

        n.onset = onset_from_index(snap_to_index(std::max<std::int64_t>(rn.on_tick, 0), pos_width), grid);

        const std::int64_t dur_ticks = rn.off_tick - rn.on_tick;
        const long long units = snap_to_index(std::max<std::int64_t>(dur_ticks, 0), pos_width);
        if (units < 1) d.zero_durations++;
        if (units > ranges.duration_direct_max) d.durations_overflowed++;
        n.duration = duration_quantize_units(units, ranges);

        const int v = std::clamp(rn.velocity, ranges.velocity_min, ranges.velocity_max);
        if (v != rn.velocity) d.velocities_clamped++;
        n.velocity = opts.quantize_velocity ? velocity_decode(velocity_class(v, ranges), ranges) : v;
        song.notes.push_back(n);
    }

    for (const RawTempo& rt : events.tempos) {
        const long long beat = snap_to_index(std::max<std::int64_t>(rt.tick, 0), beat_width);
        TempoEvent t;
        t.onset = onset_from_index(beat * ppb, grid);
        if (rt.bpm < ranges.tempo_min_bpm || rt.bpm > ranges.tempo_max_bpm) d.tempos_clamped++;
        t.klass = tempo_class(rt.bpm, ranges);
        song.tempos.push_back(t);
    }

    for (const RawChord& rc : events.chords) {
        const long long beat = snap_to_index(std::max<std::int64_t>(rc.tick, 0), beat_width);
        ChordEvent c;
        c.onset = onset_from_index(beat * ppb, grid);
        c.root = ((rc.root % 12) + 12) % 12;
        c.quality = std::clamp(rc.quality, 0, kNoChordQuality);
        if (c.quality == kNoChordQuality) c.root = 0;
        song.chords.push_back(c);
    }

    song.sort_events();

    // Duplicate (onset, pitch) notes collapse to the first (strongest sort
    // position); coinciding tempo/chord events keep the last one seen, which
    // matches MIDI semantics where a later event at the same tick wins.
    std::vector<Note> notes;
    for (const Note& n : song.notes) {
        if (!notes.empty() && notes.back().onset == n.onset && notes.back().pitch == n.pitch) {
            d.duplicate_notes_dropped++;
            continue;
        }
        notes.push_back(n);
    }
    song.notes = std::move(notes);

    auto keep_last_per_onset = [&d](auto& vec) {
        auto out = vec;
        out.clear();
        for (const auto& e : vec) {
            if (!out.empty() && out.back().onset == e.onset) {
                out.back() = e;
                d.coinciding_events_merged++;
            } else {
                out.push_back(e);
            }
        }
        vec = std::move(out);
    };
    keep_last_per_onset(song.tempos);
    keep_last_per_onset(song.chords);

    int max_bar = -1;
    for (const Note& n : song.notes) max_bar = std::max(max_bar, n.onset.bar);
    for (const TempoEvent& t : song.tempos) max_bar = std::max(max_bar, t.onset.bar);
    for (const ChordEvent& c : song.chords) max_bar = std::max(max_bar, c.onset.bar);
    song.n_bars = max_bar + 1;
    return song;
}

RawEvents to_raw(const Song& song, const ValueRanges& ranges) {
    const GridConfig& g = song.grid;
    const long long pos_width = g.ticks_per_position();
    RawEvents raw;
    for (const Note& n : song.notes) {
        const std::int64_t on = (static_cast<std::int64_t>(n.onset.bar) * g.positions_per_bar + n.onset.pos) * pos_width;
        raw.notes.push_back({on, on + n.duration * pos_width, n.pitch, n.velocity});
    }
    for (const TempoEvent& t : song.tempos) {
        const std::int64_t tick = static_cast<std::int64_t>(beat_index(t.onset, g)) * g.ticks_per_beat;
        raw.tempos.push_back({tick, tempo_decode(t.klass, ranges)});
    }
    for (const ChordEvent& c : song.chords) {
        const std::int64_t tick = static_cast<std::int64_t>(beat_index(c.onset, g)) * g.ticks_per_beat;
        raw.chords.push_back({tick, c.root, c.quality});
    }
    return raw;
}

}  // namespace cpword
