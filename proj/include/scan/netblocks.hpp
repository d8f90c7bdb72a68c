#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "scan/tape.hpp"

namespace scan {

template <typename Real>
Tensor<Real> glorot_uniform(std::vector<int> shape, int fan_in, int fan_out,
                            std::mt19937& rng) {
    Real bound = static_cast<Real>(std::sqrt(6.0 / (fan_in + fan_out)));
    return Tensor<Real>::uniform(std::move(shape), -bound, bound, rng);
}

// y = x W^T + b
template <typename Real>
struct Linear {
    Param<Real>* w = nullptr;  // [out x in]
    Param<Real>* b = nullptr;  // [out]

    static Linear create(ParamStore<Real>& ps, const std::string& name, int in,
                         int out, std::mt19937& rng) {
        Linear l;
        l.w = &ps.create(name + ".w", glorot_uniform<Real>({out, in}, in, out, rng));
        l.b = &ps.create(name + ".b", Tensor<Real>({out}));
        return l;
    }

    Var<Real> vec(Tape<Real>& t, Var<Real> x) const {
        return t.add(t.matvec(t.leaf(*w), x), t.leaf(*b));
    }

    // X [T x in] -> [T x out]
    Var<Real> rows(Tape<Real>& t, Var<Real> x) const {
        return t.add_rowvec(t.matmul(x, t.transpose(t.leaf(*w))), t.leaf(*b));
    }
};

template <typename Real>
struct GruCell {
    Param<Real>* wz = nullptr;
    Param<Real>* uz = nullptr;
    Param<Real>* bz = nullptr;
    Param<Real>* wr = nullptr;
    Param<Real>* ur = nullptr;
    Param<Real>* br = nullptr;
    Param<Real>* wc = nullptr;
    Param<Real>* uc = nullptr;
    Param<Real>* bc = nullptr;
    int hidden = 0;

    static GruCell create(ParamStore<Real>& ps, const std::string& name, int input,
                          int hidden, std::mt19937& rng) {
        GruCell c;
        c.hidden = hidden;
        auto mk = [&](const char* gate, Param<Real>*& w, Param<Real>*& u,
                      Param<Real>*& b) {
            w = &ps.create(name + "." + gate + ".w",
                           glorot_uniform<Real>({hidden, input}, input, hidden, rng));
            u = &ps.create(name + "." + gate + ".u",
                           glorot_uniform<Real>({hidden, hidden}, hidden, hidden, rng));
            b = &ps.create(name + "." + gate + ".b", Tensor<Real>({hidden}));
        };
        mk("update", c.wz, c.uz, c.bz);
        mk("reset", c.wr, c.ur, c.br);
        mk("cand", c.wc, c.uc, c.bc);
        return c;
    }

    Var<Real> zero_state(Tape<Real>& t) const {
        return t.constant(Tensor<Real>({hidden}));
    }

    // h_t = (1-z) * h_prev + z * tanh(Wc x + Uc (r*h_prev) + bc)
    Var<Real> step(Tape<Real>& t, Var<Real> x, Var<Real> h_prev) const {
        Var<Real> z = t.sigmoid(t.add(t.add(t.matvec(t.leaf(*wz), x),
                                            t.matvec(t.leaf(*uz), h_prev)),
                                      t.leaf(*bz)));
        Var<Real> r = t.sigmoid(t.add(t.add(t.matvec(t.leaf(*wr), x),
                                            t.matvec(t.leaf(*ur), h_prev)),
                                      t.leaf(*br)));
        Var<Real> cand = t.tanh(t.add(t.add(t.matvec(t.leaf(*wc), x),
                                            t.matvec(t.leaf(*uc), t.mul(r, h_prev))),
                                      t.leaf(*bc)));
        Var<Real> keep = t.mul(t.affine(z, Real(-1), Real(1)), h_prev);
        return t.add(keep, t.mul(z, cand));
    }
};

// Two GruCells over the sequence, forward and reversed; per-step outputs are
// concatenated, so the output width is 2*hidden.
template <typename Real>
struct BiGru {
    GruCell<Real> fwd;
    GruCell<Real> bwd;

    static BiGru create(ParamStore<Real>& ps, const std::string& name, int input,
                        int hidden, std::mt19937& rng) {
        BiGru b;
        b.fwd = GruCell<Real>::create(ps, name + ".fwd", input, hidden, rng);
        b.bwd = GruCell<Real>::create(ps, name + ".bwd", input, hidden, rng);
        return b;
    }

    // X [T x in] -> [T x 2*hidden]
    Var<Real> apply(Tape<Real>& t, Var<Real> x) const {
        int T = x.value().dim(0);
        std::vector<Var<Real>> rows(static_cast<size_t>(T));
        for (int i = 0; i < T; ++i)
            rows[static_cast<size_t>(i)] =
                t.reshape(t.slice0(x, i, 1), {x.value().dim(1)});
        std::vector<Var<Real>> f(static_cast<size_t>(T)), b(static_cast<size_t>(T));
        Var<Real> h = fwd.zero_state(t);
        for (int i = 0; i < T; ++i) {
            h = fwd.step(t, rows[static_cast<size_t>(i)], h);
            f[static_cast<size_t>(i)] = h;
        }
        h = bwd.zero_state(t);
        for (int i = T - 1; i >= 0; --i) {
            h = bwd.step(t, rows[static_cast<size_t>(i)], h);
            b[static_cast<size_t>(i)] = h;
        }
        std::vector<Var<Real>> out(static_cast<size_t>(T));
        for (int i = 0; i < T; ++i) {
            Var<Real> fr = t.reshape(f[static_cast<size_t>(i)], {1, fwd.hidden});
            Var<Real> br = t.reshape(b[static_cast<size_t>(i)], {1, bwd.hidden});
            out[static_cast<size_t>(i)] = t.concat_cols(fr, br);
        }
        return t.concat0(out);
    }
};

template <typename Real>
struct Conv1dLayer {
    Param<Real>* w = nullptr;  // [Cout x Cin x k]
    Param<Real>* b = nullptr;

    static Conv1dLayer create(ParamStore<Real>& ps, const std::string& name, int cin,
                              int cout, int k, std::mt19937& rng) {
        Conv1dLayer l;
        l.w = &ps.create(name + ".w",
                         glorot_uniform<Real>({cout, cin, k}, cin * k, cout * k, rng));
        l.b = &ps.create(name + ".b", Tensor<Real>({cout}));
        return l;
    }

    Var<Real> apply(Tape<Real>& t, Var<Real> x) const {
        return t.conv1d(x, t.leaf(*w), t.leaf(*b));
    }
};

template <typename Real>
struct Conv2dLayer {
    Param<Real>* w = nullptr;  // [Cout x Cin x k x k]
    Param<Real>* b = nullptr;

    static Conv2dLayer create(ParamStore<Real>& ps, const std::string& name, int cin,
                              int cout, int k, std::mt19937& rng) {
        Conv2dLayer l;
        l.w = &ps.create(name + ".w", glorot_uniform<Real>({cout, cin, k, k},
                                                           cin * k * k, cout * k * k, rng));
        l.b = &ps.create(name + ".b", Tensor<Real>({cout}));
        return l;
    }

    Var<Real> apply(Tape<Real>& t, Var<Real> x) const {
        return t.conv2d(x, t.leaf(*w), t.leaf(*b));
    }
};

struct DenseBlockCfg {
    int num_layers = 3;
    int growth = 24;
    int kernel = 3;          // 1x3 for sequences, 3x3 for grids
    bool bottleneck = false;
    int bottleneck_width = 96;
};

// Densely connected layers: layer i sees the concatenation of the block input
// and all previous layer outputs; output adds num_layers*growth channels.
template <typename Real, typename ConvLayer>
struct DenseBlock {
    DenseBlockCfg cfg;
    std::vector<ConvLayer> bottlenecks;
    std::vector<ConvLayer> convs;
    int in_channels = 0;

    static DenseBlock create(ParamStore<Real>& ps, const std::string& name,
                             int in_channels, const DenseBlockCfg& cfg,
                             std::mt19937& rng) {
        DenseBlock b;
        b.cfg = cfg;
        b.in_channels = in_channels;
        int c = in_channels;
        for (int i = 0; i < cfg.num_layers; ++i) {
            std::string layer = name + ".layer" + std::to_string(i);
            int conv_in = c;
            if (cfg.bottleneck) {
                b.bottlenecks.push_back(ConvLayer::create(
                    ps, layer + ".bottleneck", c, cfg.bottleneck_width, 1, rng));
                conv_in = cfg.bottleneck_width;
            }
            b.convs.push_back(
                ConvLayer::create(ps, layer + ".conv", conv_in, cfg.growth, cfg.kernel, rng));
            c += cfg.growth;
        }
        return b;
    }

    int out_channels() const { return in_channels + cfg.num_layers * cfg.growth; }

    Var<Real> apply(Tape<Real>& t, Var<Real> x) const {
        std::vector<Var<Real>> feats{x};
        for (size_t i = 0; i < convs.size(); ++i) {
            Var<Real> cat = feats.size() == 1 ? feats[0] : t.concat0(feats);
            Var<Real> h = cat;
            if (cfg.bottleneck) h = t.relu(bottlenecks[i].apply(t, h));
            feats.push_back(t.relu(convs[i].apply(t, h)));
        }
        return t.concat0(feats);
    }
};

template <typename Real>
using DenseBlock1d = DenseBlock<Real, Conv1dLayer<Real>>;
template <typename Real>
using DenseBlock2d = DenseBlock<Real, Conv2dLayer<Real>>;

// 1x1 convolution to floor(theta * channels), then optional 2x average pooling.
template <typename Real>
struct Transition1d {
    Conv1dLayer<Real> conv;
    bool pool = false;
    int out_channels = 0;

    static Transition1d create(ParamStore<Real>& ps, const std::string& name,
                               int in_channels, double theta, bool pool,
                               std::mt19937& rng) {
        Transition1d tr;
        tr.out_channels = static_cast<int>(in_channels * theta);
        tr.conv = Conv1dLayer<Real>::create(ps, name + ".conv", in_channels,
                                            tr.out_channels, 1, rng);
        tr.pool = pool;
        return tr;
    }

    Var<Real> apply(Tape<Real>& t, Var<Real> x) const {
        Var<Real> y = t.relu(conv.apply(t, x));
        return pool ? t.avgpool1d2(y) : y;
    }
};

template <typename Real>
struct Transition2d {
    Conv2dLayer<Real> conv;
    bool pool = true;
    int out_channels = 0;

    static Transition2d create(ParamStore<Real>& ps, const std::string& name,
                               int in_channels, double theta, bool pool,
                               std::mt19937& rng) {
        Transition2d tr;
        tr.out_channels = static_cast<int>(in_channels * theta);
        tr.conv = Conv2dLayer<Real>::create(ps, name + ".conv", in_channels,
                                            tr.out_channels, 1, rng);
        tr.pool = pool;
        return tr;
    }

    Var<Real> apply(Tape<Real>& t, Var<Real> x) const {
        Var<Real> y = t.relu(conv.apply(t, x));
        return pool ? t.avgpool2d2(y) : y;
    }
};

}  // namespace scan
