#include "cpword/smf.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <map>

namespace cpword {

namespace {

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    bool eof() const { return pos_ >= bytes_.size(); }
    std::size_t pos() const { return pos_; }

    std::uint8_t u8() {
        if (pos_ >= bytes_.size()) throw smf_error("smf: unexpected end of data");
        return bytes_[pos_++];
    }

    std::uint8_t peek() const {
        if (pos_ >= bytes_.size()) throw smf_error("smf: unexpected end of data");
        return bytes_[pos_];
    }

    std::uint16_t u16be() { return static_cast<std::uint16_t>(u8() << 8 | u8()); }

    std::uint32_t u32be() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v = v << 8 | u8();
        return v;
    }

    // Variable-length quantity: 7 bits per byte, high bit marks continuation.
    std::uint32_t vlq() {
        std::uint32_t value = 0;
        for (int i = 0; i < 4; ++i) {
            const std::uint8_t b = u8();
            value = value << 7 | (b & 0x7f);
            if (!(b & 0x80)) return value;
        }
        throw smf_error("smf: variable-length quantity longer than 4 bytes");
    }

    void skip(std::size_t n) {
        if (pos_ + n > bytes_.size()) throw smf_error("smf: unexpected end of data");
        pos_ += n;
    }

    ByteReader sub(std::size_t n) {
        if (pos_ + n > bytes_.size()) throw smf_error("smf: chunk length past end of data");
        ByteReader r(bytes_.subspan(pos_, n));
        pos_ += n;
        return r;
    }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

constexpr int data_bytes_for_status(std::uint8_t status) {
    switch (status & 0xf0) {
        case 0xc0:
        case 0xd0: return 1;
        default: return 2;
    }
}

struct PendingNote {
    std::int64_t tick;
    int velocity;
};

void parse_track(ByteReader track, std::int64_t tick_num, std::int64_t tick_den, RawEvents& out,
                 SmfDiagnostics& diag) {
    std::int64_t tick = 0;
    std::uint8_t running_status = 0;
    std::map<std::pair<int, int>, std::deque<PendingNote>> pending;

    auto rescale = [&](std::int64_t t) { return (t * tick_num + tick_den / 2) / tick_den; };

    auto close_note = [&](int channel, int pitch, std::int64_t off_tick) {
        auto it = pending.find({channel, pitch});
        if (it == pending.end() || it->second.empty()) {
            diag.orphan_note_offs++;
            return;
        }
        PendingNote on = it->second.front();
        it->second.pop_front();
        out.notes.push_back({rescale(on.tick), rescale(off_tick), pitch, on.velocity});
    };

    while (!track.eof()) {
        tick += track.vlq();
        std::uint8_t status = track.peek();
        if (status & 0x80) {
            track.u8();
            if (status < 0xf0) running_status = status;
        } else {
            if (!(running_status & 0x80)) throw smf_error("smf: data byte without running status");
            status = running_status;
        }

        if (status == 0xff) {
            const std::uint8_t type = track.u8();
            const std::uint32_t len = track.vlq();
            ByteReader data = track.sub(len);
            if (type == 0x51) {
                if (len != 3) throw smf_error("smf: malformed set-tempo event");
                const std::uint32_t us_per_beat = static_cast<std::uint32_t>(data.u8()) << 16 |
                                                  static_cast<std::uint32_t>(data.u8()) << 8 | data.u8();
                if (us_per_beat > 0)
                    out.tempos.push_back({rescale(tick), 60e6 / static_cast<double>(us_per_beat)});
            } else if (type == 0x2f) {
                break;
            }
            // other meta events ignored
        } else if (status == 0xf0 || status == 0xf7) {
            track.skip(track.vlq());
        } else {
            const int channel = status & 0x0f;
            const std::uint8_t d1 = track.u8();
            std::uint8_t d2 = 0;
            if (data_bytes_for_status(status) == 2) d2 = track.u8();

            const std::uint8_t kind = status & 0xf0;
            if (kind == 0x90 && d2 > 0) {
                pending[{channel, d1}].push_back({tick, d2});
            } else if (kind == 0x80 || (kind == 0x90 && d2 == 0)) {
                close_note(channel, d1, tick);
            }
            // other channel messages ignored
        }
    }

    // Dangling note-ons get the minimum one-unit duration.
    for (auto& [key, notes] : pending) {
        for (const PendingNote& on : notes) {
            diag.dangling_note_ons++;
            out.notes.push_back({rescale(on.tick), rescale(on.tick), key.second, on.velocity});
        }
    }
}

}  // namespace

Song parse_smf(std::span<const std::uint8_t> bytes, const GridConfig& grid, SmfDiagnostics* diag,
               const ValueRanges& ranges) {
    SmfDiagnostics local;
    SmfDiagnostics& d = diag ? *diag : local;

    ByteReader r(bytes);
    std::uint8_t magic[4];
    for (auto& m : magic) m = r.u8();
    if (std::memcmp(magic, "MThd", 4) != 0) throw smf_error("smf: missing MThd header chunk");
    const std::uint32_t header_len = r.u32be();
    if (header_len < 6) throw smf_error("smf: malformed header chunk");
    ByteReader header = r.sub(header_len);
    const std::uint16_t format = header.u16be();
    const std::uint16_t n_tracks = header.u16be();
    const std::uint16_t division = header.u16be();
    if (format == 2) throw smf_error("smf: type-2 files are not supported");
    if (format > 2) throw smf_error("smf: unknown file type");
    if (division & 0x8000) throw smf_error("smf: SMPTE time division is not supported");
    if (division == 0) throw smf_error("smf: zero ticks-per-beat division");

    RawEvents events;
    for (int i = 0; i < n_tracks && !r.eof(); ++i) {
        std::uint8_t tag[4];
        for (auto& t : tag) t = r.u8();
        const std::uint32_t len = r.u32be();
        ByteReader chunk = r.sub(len);
        if (std::memcmp(tag, "MTrk", 4) != 0) continue;  // alien chunks are skipped
        parse_track(chunk, grid.ticks_per_beat, division, events, d);
    }

    return quantize_raw(events, grid, &d.quantize, ranges, {.quantize_velocity = false});
}

namespace {

void put_u16be(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(v >> 8);
    out.push_back(v & 0xff);
}

void put_u32be(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int shift = 24; shift >= 0; shift -= 8) out.push_back((v >> shift) & 0xff);
}

void put_vlq(std::vector<std::uint8_t>& out, std::uint32_t v) {
    std::uint8_t stack[5];
    int n = 0;
    do {
        stack[n++] = v & 0x7f;
        v >>= 7;
    } while (v > 0);
    while (n > 1) out.push_back(stack[--n] | 0x80);
    out.push_back(stack[0]);
}

struct TrackEvent {
    std::int64_t tick;
    int order;  // tempo < chord marker < note-off < note-on at the same tick
    std::vector<std::uint8_t> payload;
};

}  // namespace

std::vector<std::uint8_t> write_smf(const Song& song, const ValueRanges& ranges) {
    const RawEvents raw = to_raw(song, ranges);

    std::vector<TrackEvent> evs;
    for (const RawTempo& t : raw.tempos) {
        const auto us = static_cast<std::uint32_t>(std::llround(60e6 / t.bpm));
        evs.push_back({t.tick, 0, {0xff, 0x51, 0x03, static_cast<std::uint8_t>(us >> 16 & 0xff),
                                   static_cast<std::uint8_t>(us >> 8 & 0xff),
                                   static_cast<std::uint8_t>(us & 0xff)}});
    }
    for (std::size_t i = 0; i < song.chords.size(); ++i) {
        const std::string name = song.chords[i].name();
        std::vector<std::uint8_t> payload = {0xff, 0x06};
        put_vlq(payload, static_cast<std::uint32_t>(name.size()));
        payload.insert(payload.end(), name.begin(), name.end());
        evs.push_back({raw.chords[i].tick, 1, std::move(payload)});
    }
    for (const RawNote& n : raw.notes) {
        const auto pitch = static_cast<std::uint8_t>(n.pitch);
        const auto vel = static_cast<std::uint8_t>(n.velocity);
        evs.push_back({n.on_tick, 3, {0x90, pitch, vel}});
        evs.push_back({n.off_tick, 2, {0x80, pitch, 0x40}});
    }
    std::stable_sort(evs.begin(), evs.end(), [](const TrackEvent& a, const TrackEvent& b) {
        return std::tie(a.tick, a.order) < std::tie(b.tick, b.order);
    });

    std::vector<std::uint8_t> track;
    std::int64_t last_tick = 0;
    for (const TrackEvent& e : evs) {
        put_vlq(track, static_cast<std::uint32_t>(e.tick - last_tick));
        track.insert(track.end(), e.payload.begin(), e.payload.end());
        last_tick = e.tick;
    }
    put_vlq(track, 0);
    track.insert(track.end(), {0xff, 0x2f, 0x00});

    std::vector<std::uint8_t> out;
    out.insert(out.end(), {'M', 'T', 'h', 'd'});
    put_u32be(out, 6);
    put_u16be(out, 0);  // type 0
    put_u16be(out, 1);
    put_u16be(out, static_cast<std::uint16_t>(song.grid.ticks_per_beat));
    out.insert(out.end(), {'M', 'T', 'r', 'k'});
    put_u32be(out, static_cast<std::uint32_t>(track.size()));
    out.insert(out.end(), track.begin(), track.end());
    return out;
}

}  // namespace cpword
