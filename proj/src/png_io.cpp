#include "dipformer/png_io.hpp"

#include <zlib.h>

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>

#include "dipformer/errors.hpp"

namespace dip {

namespace {

const uint8_t kSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};

void put_u32be(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

uint32_t get_u32be(const uint8_t* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | p[3];
}

void append_chunk(std::vector<uint8_t>& out, const char type[4],
                  const std::vector<uint8_t>& data) {
    put_u32be(out, static_cast<uint32_t>(data.size()));
    size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    uLong crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
    put_u32be(out, static_cast<uint32_t>(crc));
}

void write_file_atomic(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw ConfigError("cannot open for writing: " + tmp);
        f.write(reinterpret_cast<const char*>(bytes.data()),
                static_cast<std::streamsize>(bytes.size()));
        if (!f) throw ConfigError("short write: " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw ConfigError("cannot rename into place: " + path);
}

void write_png(const std::string& path, int width, int height, int bit_depth,
               int channels, const uint8_t* raw) {
    if (width <= 0 || height <= 0)
        throw ConfigError("png write: bad dimensions " + std::to_string(width) + "x" +
                          std::to_string(height));
    size_t rowbytes = static_cast<size_t>(width) * channels * (bit_depth / 8);
    std::vector<uint8_t> filtered;
    filtered.reserve(static_cast<size_t>(height) * (rowbytes + 1));
    for (int y = 0; y < height; ++y) {
        filtered.push_back(0);  // filter: none
        filtered.insert(filtered.end(), raw + y * rowbytes, raw + (y + 1) * rowbytes);
    }
    uLongf bound = compressBound(static_cast<uLong>(filtered.size()));
    std::vector<uint8_t> compressed(bound);
    if (compress2(compressed.data(), &bound, filtered.data(),
                  static_cast<uLong>(filtered.size()), 6) != Z_OK)
        throw InternalError("png write: deflate failed");
    compressed.resize(bound);

    std::vector<uint8_t> out(kSignature, kSignature + 8);
    std::vector<uint8_t> ihdr;
    put_u32be(ihdr, static_cast<uint32_t>(width));
    put_u32be(ihdr, static_cast<uint32_t>(height));
    ihdr.push_back(static_cast<uint8_t>(bit_depth));
    ihdr.push_back(channels == 3 ? 2 : 0);  // color type
    ihdr.push_back(0);                      // compression
    ihdr.push_back(0);                      // filter method
    ihdr.push_back(0);                      // no interlace
    append_chunk(out, "IHDR", ihdr);
    append_chunk(out, "IDAT", compressed);
    append_chunk(out, "IEND", {});
    write_file_atomic(path, out);
}

int paeth(int a, int b, int c) {
    int p = a + b - c;
    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace

PngImage read_png(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kSignature, 8) != 0)
        throw ConfigError("not a png: " + path);

    PngImage img;
    std::vector<uint8_t> idat;
    bool saw_ihdr = false, saw_iend = false;
    size_t pos = 8;
    while (pos + 12 <= bytes.size() && !saw_iend) {
        uint32_t len = get_u32be(bytes.data() + pos);
        if (pos + 12 + len > bytes.size()) throw ConfigError("truncated chunk: " + path);
        const uint8_t* type = bytes.data() + pos + 4;
        const uint8_t* data = bytes.data() + pos + 8;
        uLong crc = crc32(0L, type, 4 + len);
        if (static_cast<uint32_t>(crc) != get_u32be(data + len))
            throw ConfigError("chunk crc mismatch: " + path);
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw ConfigError("bad IHDR: " + path);
            img.width = static_cast<int>(get_u32be(data));
            img.height = static_cast<int>(get_u32be(data + 4));
            img.bit_depth = data[8];
            int color_type = data[9];
            if (data[12] != 0) throw ConfigError("interlaced png unsupported: " + path);
            if (data[10] != 0 || data[11] != 0)
                throw ConfigError("bad compression/filter method: " + path);
            if (color_type == 0) img.channels = 1;
            else if (color_type == 2) img.channels = 3;
            else throw ConfigError("unsupported color type " + std::to_string(color_type) +
                                   ": " + path);
            if (img.bit_depth != 8 && img.bit_depth != 16)
                throw ConfigError("unsupported bit depth " + std::to_string(img.bit_depth) +
                                  ": " + path);
            if (img.bit_depth == 16 && img.channels != 1)
                throw ConfigError("16-bit png must be grayscale: " + path);
            if (img.width <= 0 || img.height <= 0)
                throw ConfigError("bad png dimensions: " + path);
            saw_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            saw_iend = true;
        }
        // ancillary chunks are skipped
        pos += 12 + len;
    }
    if (!saw_ihdr || !saw_iend || idat.empty())
        throw ConfigError("incomplete png: " + path);

    int bypp = img.channels * (img.bit_depth / 8);  // bytes per pixel
    size_t rowbytes = static_cast<size_t>(img.width) * bypp;
    size_t expect = static_cast<size_t>(img.height) * (rowbytes + 1);
    std::vector<uint8_t> raw(expect);
    uLongf dest_len = static_cast<uLongf>(expect);
    int rc = uncompress(raw.data(), &dest_len, idat.data(), static_cast<uLong>(idat.size()));
    if (rc != Z_OK || dest_len != expect)
        throw ConfigError("png inflate failed: " + path);

    // de-filter in place into a contiguous sample buffer
    std::vector<uint8_t> samples(static_cast<size_t>(img.height) * rowbytes);
    for (int y = 0; y < img.height; ++y) {
        uint8_t filter = raw[static_cast<size_t>(y) * (rowbytes + 1)];
        const uint8_t* src = raw.data() + static_cast<size_t>(y) * (rowbytes + 1) + 1;
        uint8_t* dst = samples.data() + static_cast<size_t>(y) * rowbytes;
        const uint8_t* above = y ? dst - rowbytes : nullptr;
        for (size_t x = 0; x < rowbytes; ++x) {
            int a = x >= static_cast<size_t>(bypp) ? dst[x - bypp] : 0;
            int b = above ? above[x] : 0;
            int c = (above && x >= static_cast<size_t>(bypp)) ? above[x - bypp] : 0;
            int v = src[x];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += paeth(a, b, c); break;
                default:
                    throw ConfigError("unknown scanline filter " + std::to_string(filter) +
                                      ": " + path);
            }
            dst[x] = static_cast<uint8_t>(v);
        }
    }

    size_t n = static_cast<size_t>(img.width) * img.height * img.channels;
    if (img.bit_depth == 8) {
        img.data8 = std::move(samples);
    } else {
        img.data16.resize(n);
        for (size_t i = 0; i < n; ++i)
            img.data16[i] = static_cast<uint16_t>((samples[2 * i] << 8) | samples[2 * i + 1]);
    }
    return img;
}

void write_png_gray8(const std::string& path, int width, int height,
                     const std::vector<uint8_t>& pixels) {
    if (pixels.size() != static_cast<size_t>(width) * height)
        throw ConfigError("png write: pixel count mismatch for " + path);
    write_png(path, width, height, 8, 1, pixels.data());
}

void write_png_gray16(const std::string& path, int width, int height,
                      const std::vector<uint16_t>& pixels) {
    if (pixels.size() != static_cast<size_t>(width) * height)
        throw ConfigError("png write: pixel count mismatch for " + path);
    std::vector<uint8_t> be(pixels.size() * 2);
    for (size_t i = 0; i < pixels.size(); ++i) {
        be[2 * i] = static_cast<uint8_t>(pixels[i] >> 8);
        be[2 * i + 1] = static_cast<uint8_t>(pixels[i] & 0xff);
    }
    write_png(path, width, height, 16, 1, be.data());
}

void write_png_rgb8(const std::string& path, int width, int height,
                    const std::vector<uint8_t>& pixels) {
    if (pixels.size() != static_cast<size_t>(width) * height * 3)
        throw ConfigError("png write: pixel count mismatch for " + path);
    write_png(path, width, height, 8, 3, pixels.data());
}

}  // namespace dip
