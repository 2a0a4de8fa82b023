#pragma once

#include <stdexcept>
#include <string>

#include "cpword/song.hpp"

namespace cpword {

struct json_song_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// One JSON document per song. Field order is free, unknown fields are
// rejected, and out-of-range values name the offending field path.
// parse_json_song(serialize_json_song(s)) == s for every valid Song.
std::string serialize_json_song(const Song& song);
Song parse_json_song(const std::string& text, const ValueRanges& ranges = {});

// Lead sheets reuse the schema with note velocities omitted.
std::string serialize_json_leadsheet(const LeadSheet& lead);
LeadSheet parse_json_leadsheet(const std::string& text, const ValueRanges& ranges = {});

}  // namespace cpword
