#pragma once

#include <optional>
#include <vector>

#include "scan/featurizer.hpp"
#include "scan/netblocks.hpp"
#include "scan/presets.hpp"

namespace scan {

template <typename Real>
Tensor<Real> matrix_to_tensor(const Matrix& m) {
    Tensor<Real> t({m.rows, m.cols});
    for (size_t i = 0; i < m.data.size(); ++i)
        t.data[i] = static_cast<Real>(m.data[i]);
    return t;
}

// CNN over the point axis (features enter as 8 channels x N), then a stack of
// bidirectional GRUs; output is one D-dim row per pooled point position.
template <typename Real>
class OnlineEncoder {
  public:
    static OnlineEncoder create(ParamStore<Real>& ps, const ModelPreset& cfg,
                                bool project_to_d, std::mt19937& rng) {
        OnlineEncoder e;
        e.cfg_ = cfg;
        e.stem_ = Conv1dLayer<Real>::create(ps, "online_enc.stem", 8, cfg.online_stem,
                                            3, rng);
        int c = cfg.online_stem;
        for (int b = 1; b <= cfg.online_num_blocks; ++b) {
            DenseBlockCfg bc;
            bc.num_layers = cfg.online_block_layers;
            bc.growth = cfg.online_growth;
            bc.kernel = 3;
            e.blocks_.push_back(DenseBlock1d<Real>::create(
                ps, "online_enc.block" + std::to_string(b), c, bc, rng));
            c = e.blocks_.back().out_channels();
            bool pool = std::find(cfg.online_pool_after.begin(),
                                  cfg.online_pool_after.end(),
                                  b) != cfg.online_pool_after.end();
            e.transitions_.push_back(Transition1d<Real>::create(
                ps, "online_enc.trans" + std::to_string(b), c, cfg.online_theta, pool,
                rng));
            c = e.transitions_.back().out_channels;
        }
        for (int l = 0; l < cfg.gru_layers; ++l) {
            int in = l == 0 ? c : 2 * cfg.gru_hidden;
            e.grus_.push_back(BiGru<Real>::create(
                ps, "online_enc.gru" + std::to_string(l), in, cfg.gru_hidden, rng));
        }
        e.out_dim_ = 2 * cfg.gru_hidden;
        if (project_to_d) {
            e.proj_ = Linear<Real>::create(ps, "online_enc.proj", e.out_dim_,
                                           cfg.feature_dim, rng);
            e.out_dim_ = cfg.feature_dim;
        }
        return e;
    }

    // feats is N x 8 with N divisible by the pooling factor; output [L x D]
    Var<Real> encode(Tape<Real>& t, const OnlineFeatureSeq& feats) const {
        if (feats.rows % cfg_.online_factor() != 0)
            throw ShapeError("online point count " + std::to_string(feats.rows) +
                             " not divisible by " + std::to_string(cfg_.online_factor()));
        Tensor<Real> x({8, feats.rows});
        for (int i = 0; i < feats.rows; ++i)
            for (int c = 0; c < 8; ++c)
                x.data[static_cast<size_t>(c) * feats.rows + i] =
                    static_cast<Real>(feats.at(i, c));
        Var<Real> h = t.relu(stem_.apply(t, t.constant(std::move(x))));
        for (size_t b = 0; b < blocks_.size(); ++b) {
            h = blocks_[b].apply(t, h);
            h = transitions_[b].apply(t, h);
        }
        h = t.transpose(h);  // [L x C]
        for (const auto& g : grus_) h = g.apply(t, h);
        if (proj_) h = proj_->rows(t, h);
        return h;
    }

    int out_dim() const { return out_dim_; }
    int factor() const { return cfg_.online_factor(); }

  private:
    ModelPreset cfg_;
    Conv1dLayer<Real> stem_;
    std::vector<DenseBlock1d<Real>> blocks_;
    std::vector<Transition1d<Real>> transitions_;
    std::vector<BiGru<Real>> grus_;
    std::optional<Linear<Real>> proj_;
    int out_dim_ = 0;
};

// Deep 2-D DenseNet over the rasterized image; output is one D-dim row per
// downsampled grid cell, flattened row-major.
template <typename Real>
class OfflineEncoder {
  public:
    static OfflineEncoder create(ParamStore<Real>& ps, const ModelPreset& cfg,
                                 std::mt19937& rng) {
        OfflineEncoder e;
        e.cfg_ = cfg;
        e.stem_ = Conv2dLayer<Real>::create(ps, "offline_enc.stem", 1,
                                            cfg.offline_stem, 3, rng);
        int c = cfg.offline_stem;
        for (int b = 1; b <= cfg.offline_num_blocks; ++b) {
            DenseBlockCfg bc;
            bc.num_layers = cfg.offline_block_layers;
            bc.growth = cfg.offline_growth;
            bc.kernel = 3;
            bc.bottleneck = cfg.offline_bottleneck;
            bc.bottleneck_width = cfg.offline_bottleneck_width;
            e.blocks_.push_back(DenseBlock2d<Real>::create(
                ps, "offline_enc.block" + std::to_string(b), c, bc, rng));
            c = e.blocks_.back().out_channels();
            if (b < cfg.offline_num_blocks) {
                e.transitions_.push_back(Transition2d<Real>::create(
                    ps, "offline_enc.trans" + std::to_string(b), c, cfg.offline_theta,
                    true, rng));
                c = e.transitions_.back().out_channels;
            }
        }
        e.proj_ = Linear<Real>::create(ps, "offline_enc.proj", c, cfg.feature_dim, rng);
        e.out_dim_ = cfg.feature_dim;
        return e;
    }

    // img is H_in x W_in; output [(H*W) x D] with H = H_in/factor etc.
    Var<Real> encode(Tape<Real>& t, const OfflineImage& img, int& out_h,
                     int& out_w) const {
        int f = cfg_.offline_factor();
        if (img.rows % f != 0 || img.cols % f != 0)
            throw ShapeError("image " + std::to_string(img.rows) + "x" +
                             std::to_string(img.cols) + " not divisible by factor " +
                             std::to_string(f));
        Tensor<Real> x({1, img.rows, img.cols});
        for (size_t i = 0; i < img.data.size(); ++i)
            x.data[i] = static_cast<Real>(img.data[i]);
        Var<Real> h = t.relu(stem_.apply(t, t.constant(std::move(x))));
        if (cfg_.offline_stem_pool) h = t.avgpool2d2(h);
        for (size_t b = 0; b < blocks_.size(); ++b) {
            h = blocks_[b].apply(t, h);
            if (b < transitions_.size()) h = transitions_[b].apply(t, h);
        }
        const auto& shape = h.value().shape;
        int c = shape[0];
        out_h = shape[1];
        out_w = shape[2];
        h = t.transpose(t.reshape(h, {c, out_h * out_w}));  // [(H*W) x C]
        return proj_.rows(t, h);
    }

    int out_dim() const { return out_dim_; }
    int factor() const { return cfg_.offline_factor(); }

  private:
    ModelPreset cfg_;
    Conv2dLayer<Real> stem_;
    std::vector<DenseBlock2d<Real>> blocks_;
    std::vector<Transition2d<Real>> transitions_;
    Linear<Real> proj_;
    int out_dim_ = 0;
};

// Normalized pooled masks as an M x T weight matrix (rows sum to 1).
template <typename Real>
Tensor<Real> mask_weight_matrix(const std::vector<std::vector<double>>& pooled) {
    if (pooled.empty()) throw ShapeError("pool_strokes: no masks");
    int m = static_cast<int>(pooled.size());
    int t = static_cast<int>(pooled[0].size());
    Tensor<Real> w({m, t});
    for (int j = 0; j < m; ++j) {
        double norm = 0.0;
        for (double v : pooled[static_cast<size_t>(j)]) norm += std::abs(v);
        if (norm == 0.0)
            throw NumericError("pool_strokes: zero-norm mask for stroke " +
                               std::to_string(j));
        for (int i = 0; i < t; ++i)
            w.at(j, i) = static_cast<Real>(pooled[static_cast<size_t>(j)]
                                                 [static_cast<size_t>(i)] / norm);
    }
    return w;
}

template <typename Real>
Tensor<Real> mask_weight_matrix_grid(const std::vector<Matrix>& pooled) {
    std::vector<std::vector<double>> flat;
    flat.reserve(pooled.size());
    for (const auto& m : pooled) flat.push_back(m.data);  // row-major, W fastest
    return mask_weight_matrix<Real>(flat);
}

// s_j = (pmask_j / ||pmask_j||_1) . features  -> [M x D]
template <typename Real>
Var<Real> pool_strokes(Tape<Real>& t, Var<Real> features, const Tensor<Real>& weights) {
    if (weights.dim(1) != features.value().dim(0))
        throw ShapeError("pool_strokes: mask length " + std::to_string(weights.dim(1)) +
                         " vs feature rows " +
                         std::to_string(features.value().dim(0)));
    return t.matmul(t.constant(weights), features);
}

// Multi-modal stroke features: row j = [s_on_j ; s_off_j]  -> [M x 2D]
template <typename Real>
Var<Real> fuse_encoder(Tape<Real>& t, Var<Real> s_on, Var<Real> s_off) {
    if (s_on.value().dim(0) != s_off.value().dim(0))
        throw DataError("encoder fusion: stroke count mismatch " +
                        std::to_string(s_on.value().dim(0)) + " vs " +
                        std::to_string(s_off.value().dim(0)));
    return t.concat_cols(s_on, s_off);
}

}  // namespace scan
