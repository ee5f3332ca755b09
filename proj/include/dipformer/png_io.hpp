#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dip {

// Decoded image. Exactly one of data8/data16 is populated, matching
// bit_depth. Samples are row-major, channel-interleaved.
struct PngImage {
    int width = 0, height = 0;
    int bit_depth = 0;  // 8 or 16
    int channels = 0;   // 1 (gray) or 3 (rgb)
    std::vector<uint8_t> data8;
    std::vector<uint16_t> data16;
};

// Reads non-interlaced 8/16-bit grayscale or 8-bit RGB PNGs, all five
// scanline filters. Anything else is rejected with ConfigError.
PngImage read_png(const std::string& path);

// Writers emit filter-0 scanlines at a fixed compression level and replace
// the target atomically (temp file + rename), so equal pixels give equal
// bytes and a crash never leaves a half-written file.
void write_png_gray8(const std::string& path, int width, int height,
                     const std::vector<uint8_t>& pixels);
void write_png_gray16(const std::string& path, int width, int height,
                      const std::vector<uint16_t>& pixels);
void write_png_rgb8(const std::string& path, int width, int height,
                    const std::vector<uint8_t>& pixels);  // RGBRGB...

}  // namespace dip
