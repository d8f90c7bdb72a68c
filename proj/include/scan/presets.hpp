#pragma once

#include <string>
#include <vector>

#include "scan/errors.hpp"

namespace scan {

enum class Mode {
    SingleOn,       // online stroke-level features
    SingleOff,      // offline stroke-level features
    MMDecoder,      // decoder fusion with re-attention
    MMEncoder,      // encoder fusion over concatenated stroke features
    PointBaseline,  // attention over raw point features (pooling bypassed)
    PixelBaseline,  // attention over raw pixel features (pooling bypassed)
};

Mode mode_from_string(const std::string& s);
std::string mode_to_string(Mode m);
bool mode_uses_online(Mode m);
bool mode_uses_offline(Mode m);
bool mode_uses_stroke_features(Mode m);

// Network dimensions. "paper" carries the published constants; "toy" is the
// desk-scale configuration used by tests and the overfit runs.
struct ModelPreset {
    std::string name = "toy";

    // online encoder (CNN along the point axis, then BiGRU)
    int online_growth = 8;
    int online_stem = 16;
    int online_block_layers = 1;
    int online_num_blocks = 5;
    std::vector<int> online_pool_after = {3, 5};  // 1-based block indices
    double online_theta = 1.0;
    int gru_hidden = 32;
    int gru_layers = 2;

    // offline encoder (2-D DenseNet)
    int offline_growth = 8;
    int offline_stem = 16;
    bool offline_stem_pool = true;
    int offline_block_layers = 2;
    int offline_num_blocks = 3;
    double offline_theta = 0.5;
    bool offline_bottleneck = true;
    int offline_bottleneck_width = 32;

    int feature_dim = 64;  // D, the common stroke-feature width

    // decoder
    int embed_dim = 64;        // m (must be even for maxout)
    int decoder_hidden = 64;   // n
    int attention_dim = 64;    // n'
    int coverage_channels = 8; // q
    int coverage_kernel_seq = 7;
    int coverage_kernel_grid = 11;

    int online_factor() const {
        int f = 1;
        for (size_t i = 0; i < online_pool_after.size(); ++i) f *= 2;
        return f;
    }
    int offline_factor() const {
        int f = offline_stem_pool ? 2 : 1;
        for (int i = 1; i < offline_num_blocks; ++i) f *= 2;  // transition pools
        return f;
    }
};

ModelPreset preset_by_name(const std::string& name);

}  // namespace scan
