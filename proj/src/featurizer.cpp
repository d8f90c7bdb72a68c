#include "scan/featurizer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace scan {

namespace {

struct BBox {
    double min_x = std::numeric_limits<double>::infinity();
    double min_y = std::numeric_limits<double>::infinity();
    double max_x = -std::numeric_limits<double>::infinity();
    double max_y = -std::numeric_limits<double>::infinity();
    void add(double x, double y) {
        min_x = std::min(min_x, x);
        min_y = std::min(min_y, y);
        max_x = std::max(max_x, x);
        max_y = std::max(max_y, y);
    }
    double height() const { return max_y - min_y; }
};

std::vector<BBox> stroke_boxes(const Expression& e) {
    std::vector<BBox> boxes(static_cast<size_t>(e.num_strokes));
    for (const auto& p : e.points)
        boxes[static_cast<size_t>(p.stroke_id)].add(p.x, p.y);
    return boxes;
}

double point_segment_dist(double px, double py, double ax, double ay, double bx,
                          double by) {
    double vx = bx - ax, vy = by - ay;
    double len2 = vx * vx + vy * vy;
    double t = 0.0;
    if (len2 > 0.0) t = std::clamp(((px - ax) * vx + (py - ay) * vy) / len2, 0.0, 1.0);
    double cx = ax + t * vx, cy = ay + t * vy;
    return std::hypot(px - cx, py - cy);
}

}  // namespace

Expression normalize_traces(const Expression& e) {
    if (e.num_strokes < 1) throw DataError("cannot normalize: no strokes");
    auto boxes = stroke_boxes(e);
    double h_max = 0.0;
    for (const auto& b : boxes) h_max = std::max(h_max, b.height());
    double scale = 1.0;
    if (h_max > 0.0) {
        double sum = 0.0;
        int n = 0;
        for (const auto& b : boxes) {
            if (b.height() > h_max / 10.0) {
                sum += b.height();
                ++n;
            }
        }
        scale = n > 0 ? 1.0 / (sum / n) : 1.0;
    }
    Expression out = e;
    double min_x = std::numeric_limits<double>::infinity();
    double min_y = std::numeric_limits<double>::infinity();
    for (auto& p : out.points) {
        p.x *= scale;
        p.y *= scale;
        min_x = std::min(min_x, p.x);
        min_y = std::min(min_y, p.y);
    }
    for (auto& p : out.points) {
        p.x -= min_x;
        p.y -= min_y;
    }
    return out;
}

OnlineFeatureSeq extract_online_features(const Expression& e) {
    int n = e.num_points();
    if (n < 1) throw DataError("cannot featurize: no points");
    OnlineFeatureSeq f(n, 8);
    for (int i = 0; i < n; ++i) {
        const auto& p = e.points[static_cast<size_t>(i)];
        f.at(i, 0) = p.x;
        f.at(i, 1) = p.y;
        if (i + 1 < n) {
            f.at(i, 2) = e.points[static_cast<size_t>(i) + 1].x - p.x;
            f.at(i, 3) = e.points[static_cast<size_t>(i) + 1].y - p.y;
        }
        if (i + 2 < n) {
            f.at(i, 4) = e.points[static_cast<size_t>(i) + 2].x - p.x;
            f.at(i, 5) = e.points[static_cast<size_t>(i) + 2].y - p.y;
        }
        bool stroke_end =
            (i + 1 == n) || (e.points[static_cast<size_t>(i) + 1].stroke_id != p.stroke_id);
        f.at(i, 6) = stroke_end ? 0.0 : 1.0;
        f.at(i, 7) = stroke_end ? 1.0 : 0.0;
    }
    return f;
}

Rasterization rasterize(const Expression& e, const RasterConfig& cfg) {
    double max_x = 0.0, max_y = 0.0;
    for (const auto& p : e.points) {
        max_x = std::max(max_x, p.x);
        max_y = std::max(max_y, p.y);
    }
    int w = 2 * cfg.pad + static_cast<int>(std::floor(max_x * cfg.unit_pixels)) + 1;
    int h = 2 * cfg.pad + static_cast<int>(std::floor(max_y * cfg.unit_pixels)) + 1;
    int f = cfg.offline_factor;
    w = (w + f - 1) / f * f;
    h = (h + f - 1) / f * f;
    if (w > cfg.max_side || h > cfg.max_side)
        throw DataError("rasterized image exceeds max_side: " + std::to_string(w) +
                        "x" + std::to_string(h));

    Rasterization r;
    r.height = h;
    r.width = w;
    r.image = Matrix(h, w);
    r.stroke_pixels.assign(static_cast<size_t>(e.num_strokes),
                           std::vector<uint8_t>(static_cast<size_t>(h) * w, 0));

    double radius = cfg.thickness / 2.0;
    auto draw_segment = [&](int stroke, double ax, double ay, double bx, double by) {
        int x0 = std::max(0, static_cast<int>(std::floor(std::min(ax, bx) - radius)) - 1);
        int x1 = std::min(w - 1, static_cast<int>(std::ceil(std::max(ax, bx) + radius)) + 1);
        int y0 = std::max(0, static_cast<int>(std::floor(std::min(ay, by) - radius)) - 1);
        int y1 = std::min(h - 1, static_cast<int>(std::ceil(std::max(ay, by) + radius)) + 1);
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x)
                if (point_segment_dist(x, y, ax, ay, bx, by) <= radius) {
                    r.image.at(y, x) = 1.0;
                    r.stroke_pixels[static_cast<size_t>(stroke)]
                                   [static_cast<size_t>(y) * w + x] = 1;
                }
    };

    auto to_px = [&](const TracePoint& p, double& x, double& y) {
        x = cfg.pad + p.x * cfg.unit_pixels;
        y = cfg.pad + p.y * cfg.unit_pixels;
    };
    for (int i = 0; i < e.num_points(); ++i) {
        const auto& p = e.points[static_cast<size_t>(i)];
        double ax, ay;
        to_px(p, ax, ay);
        bool joins_next = i + 1 < e.num_points() &&
                          e.points[static_cast<size_t>(i) + 1].stroke_id == p.stroke_id;
        if (joins_next) {
            double bx, by;
            to_px(e.points[static_cast<size_t>(i) + 1], bx, by);
            draw_segment(p.stroke_id, ax, ay, bx, by);
        } else {
            draw_segment(p.stroke_id, ax, ay, ax, ay);
        }
    }
    return r;
}

namespace {

// Average-pool a length-N vector by an integer factor.
std::vector<double> pool_vector(const std::vector<double>& v, int factor) {
    int L = static_cast<int>(v.size()) / factor;
    std::vector<double> out(static_cast<size_t>(L), 0.0);
    for (int i = 0; i < L; ++i) {
        double s = 0.0;
        for (int k = 0; k < factor; ++k) s += v[static_cast<size_t>(i) * factor + k];
        out[static_cast<size_t>(i)] = s / factor;
    }
    return out;
}

Matrix pool_matrix(const Matrix& m, int factor) {
    Matrix out(m.rows / factor, m.cols / factor);
    for (int r = 0; r < out.rows; ++r)
        for (int c = 0; c < out.cols; ++c) {
            double s = 0.0;
            for (int dr = 0; dr < factor; ++dr)
                for (int dc = 0; dc < factor; ++dc)
                    s += m.at(r * factor + dr, c * factor + dc);
            out.at(r, c) = s / (factor * factor);
        }
    return out;
}

double norm1(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += std::abs(x);
    return s;
}

}  // namespace

StrokeMaskSet build_masks(const Expression& e, const Rasterization& raster, int L,
                          int H, int W) {
    int N = e.num_points();
    int M = e.num_strokes;
    if (L <= 0 || N % L != 0)
        throw DataError("point count " + std::to_string(N) +
                        " not divisible into pooled length " + std::to_string(L));
    if (H <= 0 || W <= 0 || raster.height % H != 0 || raster.width % W != 0 ||
        raster.height / H != raster.width / W)
        throw DataError("image size not divisible into pooled grid");
    int on_factor = N / L;
    int off_factor = raster.height / H;

    StrokeMaskSet out;
    out.online.assign(static_cast<size_t>(M), std::vector<double>(static_cast<size_t>(N), 0.0));
    for (int i = 0; i < N; ++i)
        out.online[static_cast<size_t>(e.points[static_cast<size_t>(i)].stroke_id)]
                  [static_cast<size_t>(i)] = 1.0;

    out.offline.reserve(static_cast<size_t>(M));
    for (int j = 0; j < M; ++j) {
        Matrix m(raster.height, raster.width);
        const auto& px = raster.stroke_pixels[static_cast<size_t>(j)];
        for (size_t i = 0; i < px.size(); ++i) m.data[i] = px[i];
        out.offline.push_back(std::move(m));
    }

    for (int j = 0; j < M; ++j) {
        auto pooled = pool_vector(out.online[static_cast<size_t>(j)], on_factor);
        if (norm1(pooled) == 0.0) {
            // snap rule: give the largest-overlap window full weight
            int best = 0;
            double best_overlap = -1.0;
            for (int i = 0; i < L; ++i) {
                double overlap = 0.0;
                for (int k = 0; k < on_factor; ++k)
                    overlap += out.online[static_cast<size_t>(j)]
                                         [static_cast<size_t>(i) * on_factor + k];
                if (overlap > best_overlap) {
                    best_overlap = overlap;
                    best = i;
                }
            }
            pooled[static_cast<size_t>(best)] = 1.0;
        }
        out.pooled_online.push_back(std::move(pooled));
    }

    for (int j = 0; j < M; ++j) {
        Matrix pooled = pool_matrix(out.offline[static_cast<size_t>(j)], off_factor);
        if (norm1(pooled.data) == 0.0) {
            int best = 0;
            double best_overlap = -1.0;
            for (int r = 0; r < H; ++r)
                for (int c = 0; c < W; ++c) {
                    double overlap = 0.0;
                    for (int dr = 0; dr < off_factor; ++dr)
                        for (int dc = 0; dc < off_factor; ++dc)
                            overlap += out.offline[static_cast<size_t>(j)].at(
                                r * off_factor + dr, c * off_factor + dc);
                    if (overlap > best_overlap) {
                        best_overlap = overlap;
                        best = r * W + c;
                    }
                }
            pooled.data[static_cast<size_t>(best)] = 1.0;
        }
        out.pooled_offline.push_back(std::move(pooled));
    }
    return out;
}

GuiderMap build_guider_map(const Expression& e, const Vocabulary& vocab) {
    GuiderMap g;
    int C = static_cast<int>(e.tokens.size());
    int M = e.num_strokes;
    g.gamma.assign(static_cast<size_t>(C), std::vector<double>(static_cast<size_t>(M), 0.0));
    g.valid.assign(static_cast<size_t>(C), false);
    for (int t = 0; t < C; ++t) {
        if (vocab.is_structural(e.tokens[static_cast<size_t>(t)])) continue;
        auto it = e.alignment.find(t);
        if (it == e.alignment.end() || it->second.empty()) continue;
        for (int s : it->second) {
            if (s < 0 || s >= M)
                throw DataError("guider alignment references stroke out of range");
            g.gamma[static_cast<size_t>(t)][static_cast<size_t>(s)] =
                1.0 / static_cast<double>(it->second.size());
        }
        g.valid[static_cast<size_t>(t)] = true;
    }
    return g;
}

Expression pad_points_to_multiple(const Expression& e, int factor) {
    int n = e.num_points();
    int rem = n % factor;
    if (rem == 0) return e;
    Expression out = e;
    TracePoint last = e.points.back();
    for (int i = 0; i < factor - rem; ++i) out.points.push_back(last);
    return out;
}

void write_pgm(const Matrix& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write PGM: " + path);
    out << "P5\n" << img.cols << " " << img.rows << "\n255\n";
    for (double v : img.data) {
        unsigned char byte =
            static_cast<unsigned char>(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
        out.write(reinterpret_cast<const char*>(&byte), 1);
    }
}

FeaturizedExample featurize(const Expression& e, const Vocabulary& vocab,
                            const RasterConfig& cfg, int online_factor) {
    FeaturizedExample fx;
    Expression norm = normalize_traces(e);
    fx.expr = pad_points_to_multiple(norm, online_factor);
    fx.online = extract_online_features(fx.expr);
    fx.raster = rasterize(fx.expr, cfg);
    fx.masks = build_masks(fx.expr, fx.raster, fx.expr.num_points() / online_factor,
                           fx.raster.height / cfg.offline_factor,
                           fx.raster.width / cfg.offline_factor);
    fx.guider = build_guider_map(fx.expr, vocab);
    return fx;
}

}  // namespace scan
