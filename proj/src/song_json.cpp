#include "cpword/song_json.hpp"

#include <json.hpp>

namespace cpword {

namespace {

using ordered_json = nlohmann::ordered_json;
using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
    throw json_song_error(path + ": " + what);
}

void check_keys(const json& obj, const std::string& path, std::initializer_list<const char*> allowed) {
    for (const auto& [key, value] : obj.items()) {
        bool known = false;
        for (const char* a : allowed) known = known || key == a;
        if (!known) fail(path + "." + key, "unknown field");
    }
}

int get_int(const json& obj, const std::string& path, const char* key) {
    auto it = obj.find(key);
    if (it == obj.end()) fail(path + "." + key, "missing field");
    if (!it->is_number_integer()) fail(path + "." + key, "expected an integer");
    return it->get<int>();
}

int get_int_in(const json& obj, const std::string& path, const char* key, int lo, int hi,
               const char* what) {
    const int v = get_int(obj, path, key);
    if (v < lo || v > hi) fail(path + "." + key, std::string(what) + " out of range");
    return v;
}

int quality_from_name(const std::string& name, const std::string& path) {
    for (int q = 0; q <= kNoChordQuality; ++q)
        if (name == kChordQualityNames[q]) return q;
    fail(path, "unknown chord quality '" + name + "'");
}

GridConfig parse_grid(const json& j, const std::string& path) {
    if (!j.is_object()) fail(path, "expected an object");
    check_keys(j, path, {"ticks_per_beat", "positions_per_bar", "beats_per_bar"});
    GridConfig g;
    g.ticks_per_beat = get_int(j, path, "ticks_per_beat");
    g.positions_per_bar = get_int(j, path, "positions_per_bar");
    g.beats_per_bar = get_int(j, path, "beats_per_bar");
    try {
        g.validate();
    } catch (const std::exception& e) {
        fail(path, e.what());
    }
    return g;
}

ordered_json grid_to_json(const GridConfig& g) {
    return {{"ticks_per_beat", g.ticks_per_beat},
            {"positions_per_bar", g.positions_per_bar},
            {"beats_per_bar", g.beats_per_bar}};
}

Onset parse_onset(const json& j, const std::string& path, const GridConfig& grid) {
    Onset o;
    o.bar = get_int_in(j, path, "bar", 0, 1 << 24, "bar");
    o.pos = get_int_in(j, path, "pos", 0, grid.positions_per_bar - 1, "position");
    return o;
}

json parse_document(const std::string& text) {
    json doc = json::parse(text, nullptr, false);
    if (doc.is_discarded()) throw json_song_error("$: not valid JSON");
    if (!doc.is_object()) throw json_song_error("$: expected a JSON object");
    return doc;
}

template <typename Body>
void parse_array(const json& doc, const char* key, Body&& body) {
    auto it = doc.find(key);
    if (it == doc.end()) fail(std::string("$.") + key, "missing field");
    if (!it->is_array()) fail(std::string("$.") + key, "expected an array");
    std::size_t i = 0;
    for (const json& item : *it) {
        const std::string path = std::string("$.") + key + "[" + std::to_string(i) + "]";
        if (!item.is_object()) fail(path, "expected an object");
        body(item, path);
        ++i;
    }
}

std::vector<TempoEvent> parse_tempos(const json& doc, const GridConfig& grid, const ValueRanges& r) {
    std::vector<TempoEvent> out;
    parse_array(doc, "tempos", [&](const json& item, const std::string& path) {
        check_keys(item, path, {"bar", "pos", "bpm_class"});
        TempoEvent t;
        t.onset = parse_onset(item, path, grid);
        t.klass = get_int_in(item, path, "bpm_class", 1, r.tempo_classes, "tempo class");
        out.push_back(t);
    });
    return out;
}

std::vector<ChordEvent> parse_chords(const json& doc, const GridConfig& grid) {
    std::vector<ChordEvent> out;
    parse_array(doc, "chords", [&](const json& item, const std::string& path) {
        check_keys(item, path, {"bar", "pos", "root", "quality"});
        ChordEvent c;
        c.onset = parse_onset(item, path, grid);
        c.root = get_int_in(item, path, "root", 0, 11, "chord root");
        auto q = item.find("quality");
        if (q == item.end()) fail(path + ".quality", "missing field");
        if (!q->is_string()) fail(path + ".quality", "expected a string");
        c.quality = quality_from_name(q->get<std::string>(), path + ".quality");
        if (c.is_no_chord()) c.root = 0;
        out.push_back(c);
    });
    return out;
}

std::vector<Note> parse_notes(const json& doc, const GridConfig& grid, const ValueRanges& r,
                              bool with_velocity) {
    std::vector<Note> out;
    parse_array(doc, "notes", [&](const json& item, const std::string& path) {
        if (with_velocity)
            check_keys(item, path, {"pitch", "bar", "pos", "dur", "vel"});
        else
            check_keys(item, path, {"pitch", "bar", "pos", "dur"});
        Note n;
        n.pitch = get_int_in(item, path, "pitch", r.pitch_min, r.pitch_max, "pitch");
        n.onset = parse_onset(item, path, grid);
        n.duration = get_int_in(item, path, "dur", 1, r.duration_overflow_units, "duration");
        n.velocity = with_velocity
                         ? get_int_in(item, path, "vel", r.velocity_min, r.velocity_max, "velocity")
                         : 64;
        out.push_back(n);
    });
    return out;
}

ordered_json note_to_json(const Note& n, bool with_velocity) {
    ordered_json j = {{"pitch", n.pitch}, {"bar", n.onset.bar}, {"pos", n.onset.pos}, {"dur", n.duration}};
    if (with_velocity) j["vel"] = n.velocity;
    return j;
}

ordered_json events_to_json(const Song& song) {
    ordered_json tempos = ordered_json::array();
    for (const TempoEvent& t : song.tempos)
        tempos.push_back({{"bar", t.onset.bar}, {"pos", t.onset.pos}, {"bpm_class", t.klass}});
    ordered_json chords = ordered_json::array();
    for (const ChordEvent& c : song.chords)
        chords.push_back({{"bar", c.onset.bar},
                          {"pos", c.onset.pos},
                          {"root", c.root},
                          {"quality", kChordQualityNames[c.quality]}});
    return {{"tempos", std::move(tempos)}, {"chords", std::move(chords)}};
}

}  // namespace

std::string serialize_json_song(const Song& song) {
    ordered_json doc;
    doc["grid"] = grid_to_json(song.grid);
    doc["n_bars"] = song.n_bars;
    ordered_json notes = ordered_json::array();
    for (const Note& n : song.notes) notes.push_back(note_to_json(n, true));
    doc["notes"] = std::move(notes);
    ordered_json events = events_to_json(song);
    doc["tempos"] = std::move(events["tempos"]);
    doc["chords"] = std::move(events["chords"]);
    return doc.dump(2) + "\n";
}

Song parse_json_song(const std::string& text, const ValueRanges& ranges) {
    const json doc = parse_document(text);
    check_keys(doc, "$", {"grid", "n_bars", "notes", "tempos", "chords"});
    auto grid_it = doc.find("grid");
    if (grid_it == doc.end()) fail("$.grid", "missing field");

    Song song;
    song.grid = parse_grid(*grid_it, "$.grid");
    song.n_bars = get_int_in(doc, "$", "n_bars", 0, 1 << 24, "n_bars");
    song.notes = parse_notes(doc, song.grid, ranges, true);
    song.tempos = parse_tempos(doc, song.grid, ranges);
    song.chords = parse_chords(doc, song.grid);

    const auto violations = song.invariant_violations(ranges);
    if (!violations.empty()) fail("$", violations.front());
    return song;
}

std::string serialize_json_leadsheet(const LeadSheet& lead) {
    Song carrier;
    carrier.grid = lead.grid;
    carrier.chords = lead.chords;
    carrier.n_bars = lead.n_bars;

    ordered_json doc;
    doc["grid"] = grid_to_json(lead.grid);
    doc["n_bars"] = lead.n_bars;
    ordered_json notes = ordered_json::array();
    for (const Note& n : lead.melody) notes.push_back(note_to_json(n, false));
    doc["notes"] = std::move(notes);
    ordered_json events = events_to_json(carrier);
    doc["tempos"] = std::move(events["tempos"]);
    doc["chords"] = std::move(events["chords"]);
    return doc.dump(2) + "\n";
}

LeadSheet parse_json_leadsheet(const std::string& text, const ValueRanges& ranges) {
    const json doc = parse_document(text);
    check_keys(doc, "$", {"grid", "n_bars", "notes", "tempos", "chords"});
    auto grid_it = doc.find("grid");
    if (grid_it == doc.end()) fail("$.grid", "missing field");

    LeadSheet lead;
    lead.grid = parse_grid(*grid_it, "$.grid");
    lead.n_bars = get_int_in(doc, "$", "n_bars", 0, 1 << 24, "n_bars");
    lead.melody = parse_notes(doc, lead.grid, ranges, false);
    lead.chords = parse_chords(doc, lead.grid);
    if (auto tempos = parse_tempos(doc, lead.grid, ranges); !tempos.empty())
        fail("$.tempos", "lead sheets carry no tempo events");

    for (std::size_t i = 0; i < lead.melody.size(); ++i) {
        const std::string path = "$.notes[" + std::to_string(i) + "]";
        if (!on_beat(lead.melody[i].onset, lead.grid)) fail(path, "melody note not on a beat");
        if (i > 0 && !(lead.melody[i - 1].onset < lead.melody[i].onset))
            fail(path, "melody notes must have strictly increasing onsets");
    }
    return lead;
}

}  // namespace cpword
