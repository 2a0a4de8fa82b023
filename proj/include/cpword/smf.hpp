#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "cpword/quantize.hpp"
#include "cpword/song.hpp"

namespace cpword {

struct smf_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SmfDiagnostics {
    int dangling_note_ons = 0;   // note-on without a matching note-off
    int orphan_note_offs = 0;    // note-off without a preceding note-on
    QuantizeDiagnostics quantize;
};

// Standard MIDI File (type 0 or 1) to Song. Note on/off pairs are matched by
// (channel, pitch) in FIFO order; ticks are rescaled from the file's division
// to the grid and snapped to the nearest 16th position. Set-tempo meta events
// become tempo classes; everything else is ignored. The file's beat grid is
// trusted as musically correct.
Song parse_smf(std::span<const std::uint8_t> bytes, const GridConfig& grid = {},
               SmfDiagnostics* diag = nullptr, const ValueRanges& ranges = {});

// Song to a type-0 SMF at the grid's tick resolution. Tempo classes decode to
// bin-midpoint BPM set-tempo events; chord labels are emitted as marker meta
// events (informational only, parse_smf skips them).
std::vector<std::uint8_t> write_smf(const Song& song, const ValueRanges& ranges = {});

}  // namespace cpword
