#pragma once

#include <optional>
#include <string>

#include "scan/decoder.hpp"
#include "scan/encoders.hpp"
#include "scan/featurizer.hpp"

namespace scan {

// A complete recognizer for one mode: the encoders the mode needs plus the
// decoder, with all parameters in one store.
template <typename Real>
class Model {
  public:
    static Model build(const ModelPreset& preset, Mode mode, int vocab_size,
                       int sos, int eos, uint64_t seed) {
        Model m;
        m.preset_ = preset;
        m.mode_ = mode;
        m.sos_ = sos;
        m.eos_ = eos;
        std::mt19937 rng(static_cast<uint32_t>(seed));
        bool project = mode == Mode::MMEncoder || mode == Mode::MMDecoder;
        if (mode_uses_online(mode))
            m.online_.emplace(
                OnlineEncoder<Real>::create(m.store_, preset, project, rng));
        if (mode_uses_offline(mode))
            m.offline_.emplace(OfflineEncoder<Real>::create(m.store_, preset, rng));
        int d_primary = 0;
        switch (mode) {
            case Mode::SingleOn:
            case Mode::PointBaseline: d_primary = m.online_->out_dim(); break;
            case Mode::SingleOff:
            case Mode::PixelBaseline: d_primary = m.offline_->out_dim(); break;
            case Mode::MMEncoder:
                d_primary = m.online_->out_dim() + m.offline_->out_dim();
                break;
            case Mode::MMDecoder: d_primary = preset.feature_dim; break;
        }
        m.decoder_ = Decoder<Real>::create(m.store_, preset, mode, vocab_size,
                                           d_primary, rng);
        return m;
    }

    // Runs the mode's encoders over a featurized example.
    typename Decoder<Real>::Features encode(Tape<Real>& t,
                                            const FeaturizedExample& fx) const {
        typename Decoder<Real>::Features f;
        Var<Real> s_on, s_off;
        int grid_h = 0, grid_w = 0;
        if (online_) {
            Var<Real> points = online_->encode(t, fx.online);
            if (mode_ == Mode::PointBaseline) {
                f.s = points;
                return f;
            }
            s_on = pool_strokes(t, points,
                                mask_weight_matrix<Real>(fx.masks.pooled_online));
        }
        if (offline_) {
            Var<Real> pixels = offline_->encode(t, fx.raster.image, grid_h, grid_w);
            if (mode_ == Mode::PixelBaseline) {
                f.s = pixels;
                f.grid_h = grid_h;
                f.grid_w = grid_w;
                return f;
            }
            s_off = pool_strokes(t, pixels,
                                 mask_weight_matrix_grid<Real>(fx.masks.pooled_offline));
        }
        switch (mode_) {
            case Mode::SingleOn: f.s = s_on; break;
            case Mode::SingleOff: f.s = s_off; break;
            case Mode::MMEncoder: f.s = fuse_encoder(t, s_on, s_off); break;
            case Mode::MMDecoder:
                if (s_on.value().dim(0) != s_off.value().dim(0))
                    throw DataError("decoder fusion: stroke count mismatch");
                f.s = s_on;
                f.s_off = s_off;
                break;
            default: break;
        }
        return f;
    }

    struct Objective {
        Var<Real> loss;     // CE + lambda * sum G_t
        double total = 0.0;
        double ce = 0.0;
        double guider = 0.0;  // sum over valid steps (reported even when lambda=0)
        int steps = 0;
        int correct = 0;    // teacher-forced argmax hits
    };

    // Teacher-forced objective over tokens plus the eos step.
    Objective objective(Tape<Real>& t, const FeaturizedExample& fx,
                        double lambda) const {
        auto feats = encode(t, fx);
        auto state = decoder_->initial_state(t, feats);
        int C = static_cast<int>(fx.expr.tokens.size());

        Objective obj;
        Var<Real> ce = t.scalar(Real(0));
        Var<Real> guide = t.scalar(Real(0));
        bool any_guide = false;
        for (int i = 0; i <= C; ++i) {
            int y_prev = i == 0 ? sos_ : fx.expr.tokens[static_cast<size_t>(i) - 1];
            int target = i < C ? fx.expr.tokens[static_cast<size_t>(i)] : eos_;
            auto out = decoder_->step(t, y_prev, state, feats);
            ce = t.add(ce, t.affine(t.log(t.pick(out.probs, target)), Real(-1), Real(0)));
            const auto& p = out.probs.value();
            int argmax = 0;
            for (int k = 1; k < p.dim(0); ++k)
                if (p[k] > p[argmax]) argmax = k;
            if (argmax == target) obj.correct++;
            obj.steps++;
            if (i < C && i < static_cast<int>(fx.guider.valid.size()) &&
                fx.guider.valid[static_cast<size_t>(i)]) {
                guide = t.add(guide,
                              decoder_->guider_term(t, out, fx.guider.gamma[static_cast<size_t>(i)]));
                any_guide = true;
            }
            state = out.state;
        }
        obj.ce = static_cast<double>(ce.value()[0]);
        obj.guider = any_guide ? static_cast<double>(guide.value()[0]) : 0.0;
        obj.loss = lambda > 0.0 && any_guide
                       ? t.add(ce, t.affine(guide, static_cast<Real>(lambda), Real(0)))
                       : ce;
        obj.total = static_cast<double>(obj.loss.value()[0]);
        return obj;
    }

    const ModelPreset& preset() const { return preset_; }
    Mode mode() const { return mode_; }
    int sos() const { return sos_; }
    int eos() const { return eos_; }
    ParamStore<Real>& store() { return store_; }
    const ParamStore<Real>& store() const { return store_; }
    const Decoder<Real>& decoder() const { return *decoder_; }
    const OnlineEncoder<Real>* online_encoder() const {
        return online_ ? &*online_ : nullptr;
    }

  private:
    ModelPreset preset_;
    Mode mode_ = Mode::SingleOn;
    int sos_ = 0;
    int eos_ = 0;
    ParamStore<Real> store_;
    std::optional<OnlineEncoder<Real>> online_;
    std::optional<OfflineEncoder<Real>> offline_;
    std::optional<Decoder<Real>> decoder_;
};

}  // namespace scan
