#include "deltaworld/plot.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "deltaworld/errors.hpp"

namespace dw {

Image::Image(int width, int height, Rgb bg) : w(width), h(height), rgb(static_cast<size_t>(width) * height * 3) {
    for (int i = 0; i < width * height; ++i) {
        rgb[static_cast<size_t>(i) * 3] = bg[0];
        rgb[static_cast<size_t>(i) * 3 + 1] = bg[1];
        rgb[static_cast<size_t>(i) * 3 + 2] = bg[2];
    }
}

void Image::set(int x, int y, Rgb c) {
    if (x < 0 || y < 0 || x >= w || y >= h) return;
    size_t i = (static_cast<size_t>(y) * w + x) * 3;
    rgb[i] = c[0];
    rgb[i + 1] = c[1];
    rgb[i + 2] = c[2];
}

void Image::fill_rect(int x0, int y0, int x1, int y1, Rgb c) {
    for (int y = std::max(0, y0); y <= std::min(h - 1, y1); ++y)
        for (int x = std::max(0, x0); x <= std::min(w - 1, x1); ++x) set(x, y, c);
}

void Image::hline(int x0, int x1, int y, Rgb c) { fill_rect(x0, y, x1, y, c); }
void Image::vline(int x, int y0, int y1, Rgb c) { fill_rect(x, y0, x, y1, c); }

namespace {

// 5x7 font, one uint64 per glyph: row-major bits, MSB-first within each row
struct Glyph {
    char ch;
    uint64_t bits;
};

constexpr uint64_t rows(uint8_t a, uint8_t b, uint8_t c, uint8_t d, uint8_t e, uint8_t f, uint8_t g) {
    return (static_cast<uint64_t>(a) << 30) | (static_cast<uint64_t>(b) << 25) |
           (static_cast<uint64_t>(c) << 20) | (static_cast<uint64_t>(d) << 15) |
           (static_cast<uint64_t>(e) << 10) | (static_cast<uint64_t>(f) << 5) | g;
}

const Glyph kFont[] = {
    {'0', rows(0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E)},
    {'1', rows(0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E)},
    {'2', rows(0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F)},
    {'3', rows(0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E)},
    {'4', rows(0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02)},
    {'5', rows(0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E)},
    {'6', rows(0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E)},
    {'7', rows(0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08)},
    {'8', rows(0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E)},
    {'9', rows(0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C)},
    {'.', rows(0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C)},
    {',', rows(0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08)},
    {'-', rows(0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00)},
    {'+', rows(0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00)},
    {'=', rows(0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00)},
    {'/', rows(0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10)},
    {'%', rows(0x19, 0x19, 0x02, 0x04, 0x08, 0x13, 0x13)},
    {':', rows(0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00)},
    {'(', rows(0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02)},
    {')', rows(0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08)},
    {'_', rows(0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F)},
    {' ', 0},
    {'A', rows(0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11)},
    {'B', rows(0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E)},
    {'C', rows(0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E)},
    {'D', rows(0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C)},
    {'E', rows(0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F)},
    {'F', rows(0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10)},
    {'G', rows(0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F)},
    {'H', rows(0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11)},
    {'I', rows(0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E)},
    {'J', rows(0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C)},
    {'K', rows(0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11)},
    {'L', rows(0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F)},
    {'M', rows(0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11)},
    {'N', rows(0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11)},
    {'O', rows(0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E)},
    {'P', rows(0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10)},
    {'Q', rows(0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D)},
    {'R', rows(0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11)},
    {'S', rows(0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E)},
    {'T', rows(0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04)},
    {'U', rows(0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E)},
    {'V', rows(0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04)},
    {'W', rows(0x11, 0x11, 0x11, 0x15, 0x15, 0x1B, 0x11)},
    {'X', rows(0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11)},
    {'Y', rows(0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04)},
    {'Z', rows(0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F)},
};

uint64_t glyph_bits(char ch) {
    char up = (ch >= 'a' && ch <= 'z') ? static_cast<char>(ch - 'a' + 'A') : ch;
    for (const auto& g : kFont)
        if (g.ch == up) return g.bits;
    return rows(0x1F, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1F);  // box for unknown
}

void put_u32_be(std::string& out, uint32_t v) {
    out.push_back(static_cast<char>((v >> 24) & 0xFF));
    out.push_back(static_cast<char>((v >> 16) & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
    out.push_back(static_cast<char>(v & 0xFF));
}

void png_chunk(std::string& out, const char type[4], const std::string& payload) {
    put_u32_be(out, static_cast<uint32_t>(payload.size()));
    std::string body(type, 4);
    body += payload;
    out += body;
    uint32_t crc = static_cast<uint32_t>(
        ::crc32(0, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size())));
    put_u32_be(out, crc);
}

}  // namespace

void draw_text(Image& img, int x, int y, const std::string& text, Rgb c, int scale) {
    int cx = x;
    for (char ch : text) {
        uint64_t bits = glyph_bits(ch);
        for (int ry = 0; ry < 7; ++ry)
            for (int rx = 0; rx < 5; ++rx)
                if ((bits >> ((6 - ry) * 5 + (4 - rx))) & 1)
                    img.fill_rect(cx + rx * scale, y + ry * scale, cx + rx * scale + scale - 1,
                                  y + ry * scale + scale - 1, c);
        cx += 6 * scale;
    }
}

int text_width(const std::string& text, int scale) {
    return static_cast<int>(text.size()) * 6 * scale;
}

void write_png(const std::string& path, const Image& img,
               const std::map<std::string, std::string>& text_chunks) {
    // filter byte 0 per scanline
    std::string raw;
    raw.reserve(static_cast<size_t>(img.h) * (static_cast<size_t>(img.w) * 3 + 1));
    for (int y = 0; y < img.h; ++y) {
        raw.push_back('\0');
        raw.append(reinterpret_cast<const char*>(img.rgb.data() + static_cast<size_t>(y) * img.w * 3),
                   static_cast<size_t>(img.w) * 3);
    }
    uLongf bound = ::compressBound(static_cast<uLong>(raw.size()));
    std::string compressed(bound, '\0');
    if (::compress2(reinterpret_cast<Bytef*>(compressed.data()), &bound,
                    reinterpret_cast<const Bytef*>(raw.data()), static_cast<uLong>(raw.size()),
                    6) != Z_OK)
        throw IoError("png compression failed");
    compressed.resize(bound);

    std::string out("\x89PNG\r\n\x1a\n", 8);
    std::string ihdr;
    put_u32_be(ihdr, static_cast<uint32_t>(img.w));
    put_u32_be(ihdr, static_cast<uint32_t>(img.h));
    ihdr.push_back(8);   // bit depth
    ihdr.push_back(2);   // truecolor
    ihdr.push_back(0);   // compression
    ihdr.push_back(0);   // filter
    ihdr.push_back(0);   // interlace
    png_chunk(out, "IHDR", ihdr);
    for (const auto& [k, v] : text_chunks) {
        std::string payload = k;
        payload.push_back('\0');
        payload += v;
        png_chunk(out, "tEXt", payload);
    }
    png_chunk(out, "IDAT", compressed);
    png_chunk(out, "IEND", "");

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

namespace {

std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

Rgb viridis(double t) {
    // coarse ramp through the viridis anchors
    static const std::array<Rgb, 5> stops = {
        Rgb{68, 1, 84}, Rgb{59, 82, 139}, Rgb{33, 145, 140}, Rgb{94, 201, 98}, Rgb{253, 231, 37}};
    t = std::clamp(t, 0.0, 1.0) * (stops.size() - 1);
    int i = std::min(static_cast<int>(t), static_cast<int>(stops.size()) - 2);
    double f = t - i;
    Rgb a = stops[static_cast<size_t>(i)], b = stops[static_cast<size_t>(i) + 1];
    return Rgb{static_cast<uint8_t>(a[0] + f * (b[0] - a[0])),
               static_cast<uint8_t>(a[1] + f * (b[1] - a[1])),
               static_cast<uint8_t>(a[2] + f * (b[2] - a[2]))};
}

}  // namespace

Image render_bar_chart(const std::string& title, const std::vector<BarGroup>& groups,
                       double copy_last, double present, const std::string& ylabel) {
    const int W = 640, H = 420, left = 70, right = 20, top = 50, bottom = 70;
    Image img(W, H);
    Rgb black{0, 0, 0}, grey{200, 204, 208}, best_c{125, 170, 34}, mean_c{230, 159, 0};

    double ymax = std::max({present, copy_last, 0.01});
    for (const auto& g : groups) ymax = std::max({ymax, g.best, g.mean});
    ymax *= 1.12;

    auto ypix = [&](double v) { return H - bottom - static_cast<int>((v / ymax) * (H - top - bottom)); };

    draw_text(img, left, 14, title, black);
    draw_text(img, 8, top - 18, ylabel, black);
    img.hline(left, W - right, H - bottom, black);
    img.vline(left, top, H - bottom, black);
    for (int i = 0; i <= 5; ++i) {
        double v = ymax * i / 5.0;
        int y = ypix(v);
        img.hline(left - 3, left, y, black);
        draw_text(img, 8, y - 3, fmt2(v), black);
    }

    int plot_w = W - left - right;
    int n = static_cast<int>(groups.size());
    int group_w = plot_w / std::max(1, n);
    int bar_w = std::max(8, group_w / 4);
    for (int i = 0; i < n; ++i) {
        int cx = left + i * group_w + group_w / 2;
        const auto& g = groups[static_cast<size_t>(i)];
        img.fill_rect(cx - bar_w - 2, ypix(g.best), cx - 2, H - bottom - 1, best_c);
        img.fill_rect(cx + 2, ypix(g.mean), cx + bar_w + 2, H - bottom - 1, mean_c);
        draw_text(img, cx - text_width(g.label) / 2, H - bottom + 10, g.label, black);
        draw_text(img, cx - bar_w - 2, ypix(g.best) - 10, fmt2(g.best), black);
        draw_text(img, cx + 2, ypix(g.mean) - 10, fmt2(g.mean), black);
    }
    // reference lines
    for (int x = left; x < W - right; x += 6) img.hline(x, x + 2, ypix(copy_last), grey);
    for (int x = left; x < W - right; x += 4) img.set(x, ypix(present), black);
    draw_text(img, W - right - 120, ypix(copy_last) - 10, "COPY LAST " + fmt2(copy_last), grey);
    draw_text(img, W - right - 120, ypix(present) - 10, "PRESENT " + fmt2(present), black);
    // legend
    img.fill_rect(left + 6, 26, left + 18, 34, best_c);
    draw_text(img, left + 24, 27, "BEST", black);
    img.fill_rect(left + 80, 26, left + 92, 34, mean_c);
    draw_text(img, left + 98, 27, "MEAN", black);
    return img;
}

Image render_heatmap(const std::string& title, const std::vector<std::string>& col_labels,
                     const std::vector<std::string>& row_labels,
                     const std::vector<std::vector<double>>& values) {
    int rows_n = static_cast<int>(values.size());
    int cols_n = rows_n ? static_cast<int>(values[0].size()) : 0;
    const int cell = 64, left = 90, top = 50, bottom = 40, right = 30;
    Image img(left + cols_n * cell + right, top + rows_n * cell + bottom);
    Rgb black{0, 0, 0};

    double lo = values[0][0], hi = values[0][0];
    for (const auto& r : values)
        for (double v : r) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    if (hi <= lo) hi = lo + 1e-9;

    draw_text(img, left, 14, title, black);
    for (int r = 0; r < rows_n; ++r) {
        draw_text(img, 8, top + r * cell + cell / 2 - 3, row_labels[static_cast<size_t>(r)], black);
        for (int c = 0; c < cols_n; ++c) {
            double v = values[static_cast<size_t>(r)][static_cast<size_t>(c)];
            Rgb col = viridis((v - lo) / (hi - lo));
            img.fill_rect(left + c * cell, top + r * cell, left + (c + 1) * cell - 2,
                          top + (r + 1) * cell - 2, col);
            std::string s = fmt2(v);
            Rgb txt = ((v - lo) / (hi - lo) > 0.6) ? Rgb{0, 0, 0} : Rgb{255, 255, 255};
            draw_text(img, left + c * cell + cell / 2 - text_width(s) / 2,
                      top + r * cell + cell / 2 - 3, s, txt);
        }
    }
    for (int c = 0; c < cols_n; ++c)
        draw_text(img, left + c * cell + cell / 2 - text_width(col_labels[static_cast<size_t>(c)]) / 2,
                  top + rows_n * cell + 10, col_labels[static_cast<size_t>(c)], black);
    return img;
}

}  // namespace dw
