#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "skelact/common.hpp"

namespace skelact::png {

namespace detail {

inline std::uint32_t crc32(const unsigned char* data, std::size_t len,
                           std::uint32_t crc = 0xffffffffu) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t n = 0; n < 256; ++n) {
            std::uint32_t c = n;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            t[n] = c;
        }
        return t;
    }();
    for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xffu] ^ (crc >> 8);
    return crc;
}

inline std::uint32_t adler32(const unsigned char* data, std::size_t len) {
    std::uint32_t a = 1, b = 0;
    for (std::size_t i = 0; i < len; ++i) {
        a = (a + data[i]) % 65521u;
        b = (b + a) % 65521u;
    }
    return (b << 16) | a;
}

// Deflate bit stream: bits are packed LSB-first, but Huffman codes are
// written MSB-first, hence the reversed writer.
struct BitWriter {
    std::string out;
    std::uint32_t acc = 0;
    int nbits = 0;

    void put_bits(std::uint32_t value, int count) {  // LSB-first (extra bits)
        acc |= value << nbits;
        nbits += count;
        while (nbits >= 8) {
            out.push_back(static_cast<char>(acc & 0xffu));
            acc >>= 8;
            nbits -= 8;
        }
    }

    void put_code(std::uint32_t code, int count) {  // MSB-first (Huffman codes)
        std::uint32_t rev = 0;
        for (int i = 0; i < count; ++i) rev |= ((code >> i) & 1u) << (count - 1 - i);
        put_bits(rev, count);
    }

    void finish() {
        if (nbits > 0) {
            out.push_back(static_cast<char>(acc & 0xffu));
            acc = 0;
            nbits = 0;
        }
    }
};

inline void put_fixed_literal(BitWriter& bw, unsigned v) {
    if (v < 144)
        bw.put_code(0x30u + v, 8);
    else
        bw.put_code(0x190u + (v - 144), 9);
}

inline void put_fixed_lensym(BitWriter& bw, unsigned sym) {  // 256..287
    if (sym < 280)
        bw.put_code(sym - 256, 7);
    else
        bw.put_code(0xc0u + (sym - 280), 8);
}

inline void put_length(BitWriter& bw, unsigned len) {  // 3..258
    struct Entry {
        unsigned sym, base;
        int extra;
    };
    static constexpr Entry table[] = {
        {257, 3, 0},  {258, 4, 0},  {259, 5, 0},  {260, 6, 0},  {261, 7, 0},   {262, 8, 0},
        {263, 9, 0},  {264, 10, 0}, {265, 11, 1}, {266, 13, 1}, {267, 15, 1},  {268, 17, 1},
        {269, 19, 2}, {270, 23, 2}, {271, 27, 2}, {272, 31, 2}, {273, 35, 3},  {274, 43, 3},
        {275, 51, 3}, {276, 59, 3}, {277, 67, 4}, {278, 83, 4}, {279, 99, 4},  {280, 115, 4},
        {281, 131, 5}, {282, 163, 5}, {283, 195, 5}, {284, 227, 5}, {285, 258, 0},
    };
    for (std::size_t i = sizeof(table) / sizeof(table[0]); i-- > 0;) {
        if (len >= table[i].base) {
            put_fixed_lensym(bw, table[i].sym);
            if (table[i].extra > 0) bw.put_bits(len - table[i].base, table[i].extra);
            return;
        }
    }
}

inline void put_distance(BitWriter& bw, unsigned dist) {  // only 1 and 3 are emitted
    unsigned code = (dist == 1) ? 0u : 2u;
    bw.put_code(code, 5);
}

// One fixed-Huffman block. Matches are tried only at distances 1 and 3 (byte
// runs and repeated RGB pixels), which is what these rasters contain.
inline std::string deflate_fixed(const unsigned char* data, std::size_t len) {
    BitWriter bw;
    bw.put_bits(1, 1);  // BFINAL
    bw.put_bits(1, 2);  // BTYPE = fixed Huffman
    std::size_t i = 0;
    auto run_at = [&](std::size_t pos, std::size_t dist) -> std::size_t {
        if (pos < dist) return 0;
        std::size_t n = 0;
        while (pos + n < len && n < 258 && data[pos + n] == data[pos + n - dist]) ++n;
        return n;
    };
    while (i < len) {
        std::size_t r1 = run_at(i, 1);
        std::size_t r3 = run_at(i, 3);
        std::size_t best = std::max(r1, r3);
        if (best >= 3) {
            unsigned dist = (r1 >= r3) ? 1u : 3u;
            put_length(bw, static_cast<unsigned>(best));
            put_distance(bw, dist);
            i += best;
        } else {
            put_fixed_literal(bw, data[i]);
            ++i;
        }
    }
    put_fixed_lensym(bw, 256);  // end of block
    bw.finish();
    return bw.out;
}

inline void append_u32_be(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>((v >> 24) & 0xffu));
    out.push_back(static_cast<char>((v >> 16) & 0xffu));
    out.push_back(static_cast<char>((v >> 8) & 0xffu));
    out.push_back(static_cast<char>(v & 0xffu));
}

inline void append_chunk(std::string& out, const char type[4], const std::string& payload) {
    append_u32_be(out, static_cast<std::uint32_t>(payload.size()));
    std::string body(type, 4);
    body += payload;
    out += body;
    std::uint32_t crc = crc32(reinterpret_cast<const unsigned char*>(body.data()), body.size());
    append_u32_be(out, crc ^ 0xffffffffu);
}

}  // namespace detail

// 8-bit RGB PNG bytes for a row-major pixel buffer. The encoder is fully
// self-contained, so identical pixels give identical files on any platform.
inline std::string encode_rgb8(const std::vector<std::uint8_t>& pixels, int width, int height) {
    if (width <= 0 || height <= 0 ||
        pixels.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3)
        throw ShapeError("png: pixel buffer does not match width*height*3");

    std::string out("\x89PNG\r\n\x1a\n", 8);

    std::string ihdr;
    detail::append_u32_be(ihdr, static_cast<std::uint32_t>(width));
    detail::append_u32_be(ihdr, static_cast<std::uint32_t>(height));
    ihdr.push_back(8);   // bit depth
    ihdr.push_back(2);   // color type: truecolor
    ihdr.push_back(0);   // compression
    ihdr.push_back(0);   // filter
    ihdr.push_back(0);   // interlace
    detail::append_chunk(out, "IHDR", ihdr);

    // Filter byte 0 before each scanline.
    std::vector<unsigned char> raw;
    raw.reserve(static_cast<std::size_t>(height) * (static_cast<std::size_t>(width) * 3 + 1));
    for (int y = 0; y < height; ++y) {
        raw.push_back(0);
        const std::uint8_t* row = pixels.data() + static_cast<std::size_t>(y) * width * 3;
        raw.insert(raw.end(), row, row + static_cast<std::size_t>(width) * 3);
    }

    std::string idat;
    idat.push_back('\x78');
    idat.push_back('\x01');
    idat += detail::deflate_fixed(raw.data(), raw.size());
    detail::append_u32_be(idat, detail::adler32(raw.data(), raw.size()));
    detail::append_chunk(out, "IDAT", idat);

    detail::append_chunk(out, "IEND", "");
    return out;
}

}  // namespace skelact::png
