#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace dw {

using Rgb = std::array<uint8_t, 3>;

struct Image {
    int w = 0, h = 0;
    std::vector<uint8_t> rgb;  // w*h*3

    Image(int width, int height, Rgb bg = {255, 255, 255});
    void set(int x, int y, Rgb c);
    void fill_rect(int x0, int y0, int x1, int y1, Rgb c);
    void hline(int x0, int x1, int y, Rgb c);
    void vline(int x, int y0, int y1, Rgb c);
};

// 5x7 bitmap glyphs: digits, uppercase letters and basic punctuation;
// lowercase renders as uppercase
void draw_text(Image& img, int x, int y, const std::string& text, Rgb c, int scale = 1);
int text_width(const std::string& text, int scale = 1);

// 8-bit RGB PNG; text_chunks become tEXt entries (provenance embedding)
void write_png(const std::string& path, const Image& img,
               const std::map<std::string, std::string>& text_chunks = {});

struct BarGroup {
    std::string label;
    double best = 0;
    double mean = 0;
};

// grouped best/mean bars with copy-last and present reference lines
Image render_bar_chart(const std::string& title, const std::vector<BarGroup>& groups,
                       double copy_last, double present, const std::string& ylabel);

// row-major values with per-cell annotations
Image render_heatmap(const std::string& title, const std::vector<std::string>& col_labels,
                     const std::vector<std::string>& row_labels,
                     const std::vector<std::vector<double>>& values);

}  // namespace dw
