#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cpword {

// Metrical grid: 480 ticks per beat, 4/4 bars split into 16 sixteenth-note
// positions. All song timing is expressed on this lattice.
struct GridConfig {
    int ticks_per_beat = 480;
    int positions_per_bar = 16;
    int beats_per_bar = 4;

    int positions_per_beat() const { return positions_per_bar / beats_per_bar; }
    int ticks_per_position() const { return ticks_per_beat * beats_per_bar / positions_per_bar; }

    void validate() const {
        if (ticks_per_beat <= 0) throw std::invalid_argument("grid: ticks_per_beat must be > 0");
        if (positions_per_bar <= 0 || beats_per_bar <= 0)
            throw std::invalid_argument("grid: positions/beats per bar must be > 0");
        if (positions_per_bar % beats_per_bar != 0)
            throw std::invalid_argument("grid: positions_per_bar must be divisible by beats_per_bar");
    }

    bool operator==(const GridConfig&) const = default;
};

// Value domains behind the token vocabulary. Defaults are calibrated so the
// per-type vocabulary sizes come out as track 2, tempo 58, position/bar 17,
// chord 133, pitch 86, duration 17, velocity 24.
struct ValueRanges {
    int pitch_min = 22;
    int pitch_max = 107;

    int velocity_classes = 24;
    int velocity_min = 1;
    int velocity_max = 127;

    int tempo_classes = 58;
    double tempo_min_bpm = 32.0;
    double tempo_max_bpm = 224.0;

    // Duration classes 1..16 map to that many 16th units; the final overflow
    // class decodes to two bars (32 units).
    int duration_classes = 17;
    int duration_direct_max = 16;
    int duration_overflow_units = 32;

    int chord_roots = 12;
    int chord_qualities = 11;  // plus the no-chord label

    int chord_labels() const { return chord_roots * chord_qualities + 1; }

    bool operator==(const ValueRanges&) const = default;
};

namespace detail {
inline long long ceil_div(long long a, long long b) { return (a + b - 1) / b; }
}

// Nearest-position index for a tick offset; halves round toward the later
// position. Ticks are assumed nonnegative.
inline long long snap_to_index(long long ticks, long long width) {
    return (2 * ticks + width) / (2 * width);
}

// Uniform integer binning of [lo, hi] into n classes 1..n.
inline int bin_class(int value, int lo, int hi, int n) {
    value = std::clamp(value, lo, hi);
    const long long span = static_cast<long long>(hi) - lo + 1;
    return 1 + static_cast<int>((static_cast<long long>(value - lo) * n) / span);
}

// Integer midpoint of bin c; a fixed point of bin_class.
inline int bin_midpoint(int c, int lo, int hi, int n) {
    const long long span = static_cast<long long>(hi) - lo + 1;
    const int v_lo = lo + static_cast<int>(detail::ceil_div((c - 1) * span, n));
    const int v_hi = lo + static_cast<int>(detail::ceil_div(c * span, n)) - 1;
    return (v_lo + v_hi) / 2;
}

inline int velocity_class(int velocity, const ValueRanges& r = {}) {
    return bin_class(velocity, r.velocity_min, r.velocity_max, r.velocity_classes);
}

inline int velocity_decode(int klass, const ValueRanges& r = {}) {
    return bin_midpoint(klass, r.velocity_min, r.velocity_max, r.velocity_classes);
}

inline int tempo_class(double bpm, const ValueRanges& r = {}) {
    const double span = r.tempo_max_bpm - r.tempo_min_bpm;
    const int c = 1 + static_cast<int>(std::floor((bpm - r.tempo_min_bpm) * r.tempo_classes / span));
    return std::clamp(c, 1, r.tempo_classes);
}

inline double tempo_decode(int klass, const ValueRanges& r = {}) {
    const double span = r.tempo_max_bpm - r.tempo_min_bpm;
    return r.tempo_min_bpm + (klass - 0.5) * span / r.tempo_classes;
}

inline int duration_class(long long units, const ValueRanges& r = {}) {
    if (units < 1) units = 1;
    return units <= r.duration_direct_max ? static_cast<int>(units) : r.duration_classes;
}

inline int duration_decode(int klass, const ValueRanges& r = {}) {
    return klass <= r.duration_direct_max ? klass : r.duration_overflow_units;
}

// Snap a duration in 16th units onto the representable lattice {1..16, 32}.
inline int duration_quantize_units(long long units, const ValueRanges& r = {}) {
    return duration_decode(duration_class(units, r), r);
}

// Octave-fold a pitch into [pitch_min, pitch_max]; the range spans more than
// an octave so this always terminates inside it.
inline int pitch_into_range(int pitch, const ValueRanges& r, bool* transposed = nullptr) {
    const int orig = pitch;
    while (pitch < r.pitch_min) pitch += 12;
    while (pitch > r.pitch_max) pitch -= 12;
    if (transposed) *transposed = (pitch != orig);
    return pitch;
}

}  // namespace cpword
