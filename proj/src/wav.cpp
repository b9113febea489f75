#include "mea/wav.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "mea/common.hpp"

namespace mea::wav {

namespace {

void put_u32(std::ofstream& f, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    f.write(reinterpret_cast<const char*>(b), 4);
}

void put_u16(std::ofstream& f, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    f.write(reinterpret_cast<const char*>(b), 2);
}

std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t get_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace

void write_mono16(const std::filesystem::path& path,
                  const std::vector<double>& samples, int sample_rate) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path.string());

    const std::uint32_t data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
    f.write("RIFF", 4);
    put_u32(f, 36 + data_bytes);
    f.write("WAVE", 4);
    f.write("fmt ", 4);
    put_u32(f, 16);
    put_u16(f, 1);  // PCM
    put_u16(f, 1);  // mono
    put_u32(f, static_cast<std::uint32_t>(sample_rate));
    put_u32(f, static_cast<std::uint32_t>(sample_rate * 2));
    put_u16(f, 2);
    put_u16(f, 16);
    f.write("data", 4);
    put_u32(f, data_bytes);

    for (double v : samples) {
        long q = std::lround(v * 32767.0);
        if (q > 32767) q = 32767;
        if (q < -32768) q = -32768;
        put_u16(f, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
    }
    if (!f) throw IoError("write failed: " + path.string());
}

std::vector<double> read_mono16(const std::filesystem::path& path, int* sample_rate) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for reading: " + path.string());

    unsigned char hdr[12];
    if (!f.read(reinterpret_cast<char*>(hdr), 12) || std::memcmp(hdr, "RIFF", 4) != 0 ||
        std::memcmp(hdr + 8, "WAVE", 4) != 0) {
        throw ParseError("not a RIFF/WAVE file: " + path.string());
    }

    int rate = 0;
    int channels = 0;
    int bits = 0;
    std::vector<double> samples;
    bool got_fmt = false, got_data = false;

    unsigned char chunk[8];
    while (f.read(reinterpret_cast<char*>(chunk), 8)) {
        const std::uint32_t size = get_u32(chunk + 4);
        if (std::memcmp(chunk, "fmt ", 4) == 0) {
            std::vector<unsigned char> body(size);
            if (!f.read(reinterpret_cast<char*>(body.data()), size) || size < 16) {
                throw ParseError("truncated fmt chunk: " + path.string());
            }
            if (get_u16(body.data()) != 1) throw ParseError("only PCM supported: " + path.string());
            channels = get_u16(body.data() + 2);
            rate = static_cast<int>(get_u32(body.data() + 4));
            bits = get_u16(body.data() + 14);
            got_fmt = true;
        } else if (std::memcmp(chunk, "data", 4) == 0) {
            if (!got_fmt) throw ParseError("data chunk before fmt: " + path.string());
            if (channels != 1) throw ParseError("only mono supported: " + path.string());
            if (bits != 16) throw ParseError("only 16-bit PCM supported: " + path.string());
            const std::size_t n = size / 2;
            std::vector<std::int16_t> pcm(n);
            if (!f.read(reinterpret_cast<char*>(pcm.data()), static_cast<std::streamsize>(n * 2))) {
                throw ParseError("truncated data chunk: " + path.string());
            }
            samples.resize(n);
            for (std::size_t i = 0; i < n; ++i) samples[i] = pcm[i] / 32767.0;
            got_data = true;
        } else {
            f.seekg(size, std::ios::cur);
        }
    }
    if (!got_data) throw ParseError("no data chunk: " + path.string());
    if (sample_rate) *sample_rate = rate;
    return samples;
}

}  // namespace mea::wav
