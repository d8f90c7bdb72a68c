#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scan/ink.hpp"

namespace scan {

// Row-major real matrix used on the data side (features, masks, images).
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}
    double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
};

// N x 8 per-point features: x, y, dx, dy, d2x, d2y, pen-down, pen-up.
using OnlineFeatureSeq = Matrix;

// H_in x W_in ink image, values in {0,1} (ink = 1).
using OfflineImage = Matrix;

struct RasterConfig {
    double unit_pixels = 16.0;  // pixels per normalized unit
    double thickness = 1.0;     // line thickness (diameter) in pixels
    int pad = 8;                // border pixels on all sides
    int max_side = 2048;
    int offline_factor = 8;     // H_in, W_in padded to multiples of this
};

// Rasterized expression plus the per-stroke pixel attribution. The rasterizer
// is the authority for which pixels a stroke owns; crossings belong to every
// stroke that drew them.
struct Rasterization {
    OfflineImage image;                    // H_in x W_in
    std::vector<std::vector<uint8_t>> stroke_pixels;  // M masks, H_in*W_in each
    int height = 0;
    int width = 0;
};

struct StrokeMaskSet {
    std::vector<std::vector<double>> online;          // M binary vectors, length N
    std::vector<Matrix> offline;                      // M binary H_in x W_in
    std::vector<std::vector<double>> pooled_online;   // M fractional, length L
    std::vector<Matrix> pooled_offline;               // M fractional H x W
};

// Oracle attention targets, one row per decode step.
struct GuiderMap {
    std::vector<std::vector<double>> gamma;  // C rows of length M
    std::vector<bool> valid;                 // false for structural / unaligned
};

// Scale all coordinates by 1/avg stroke height (strokes taller than a tenth
// of the tallest contribute to the average) and translate min corner to 0.
Expression normalize_traces(const Expression& e);

// Per-point 8-dim rows on the given (already normalized) coordinates.
// Deltas use global successor points and 0 past the end of the sequence;
// pen-up is set on the last point of each stroke.
OnlineFeatureSeq extract_online_features(const Expression& e);

Rasterization rasterize(const Expression& e, const RasterConfig& cfg);

// Online masks from stroke spans, offline masks from the rasterization,
// pooled forms via average pooling with the encoder factors N/L and H_in/H.
StrokeMaskSet build_masks(const Expression& e, const Rasterization& raster,
                          int L, int H, int W);

GuiderMap build_guider_map(const Expression& e, const Vocabulary& vocab);

// Repeats the final point so the sequence length becomes a multiple of
// `factor`; masks and features stay consistent (the copies extend the last
// stroke). Returns e unchanged when already divisible.
Expression pad_points_to_multiple(const Expression& e, int factor);

void write_pgm(const Matrix& img, const std::string& path);

// Everything the models consume for one expression.
struct FeaturizedExample {
    Expression expr;        // normalized + padded
    OnlineFeatureSeq online;
    Rasterization raster;
    StrokeMaskSet masks;
    GuiderMap guider;
    std::string id;
};

// normalize -> pad to online factor -> features -> raster -> masks -> guider.
FeaturizedExample featurize(const Expression& e, const Vocabulary& vocab,
                            const RasterConfig& cfg, int online_factor = 4);

}  // namespace scan
