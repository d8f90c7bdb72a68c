#include "scan/presets.hpp"

namespace scan {

Mode mode_from_string(const std::string& s) {
    if (s == "single-on") return Mode::SingleOn;
    if (s == "single-off") return Mode::SingleOff;
    if (s == "mm-d") return Mode::MMDecoder;
    if (s == "mm-e") return Mode::MMEncoder;
    if (s == "point") return Mode::PointBaseline;
    if (s == "pixel") return Mode::PixelBaseline;
    throw DataError("unknown mode: " + s +
                    " (expected single-on|single-off|mm-d|mm-e|point|pixel)");
}

std::string mode_to_string(Mode m) {
    switch (m) {
        case Mode::SingleOn: return "single-on";
        case Mode::SingleOff: return "single-off";
        case Mode::MMDecoder: return "mm-d";
        case Mode::MMEncoder: return "mm-e";
        case Mode::PointBaseline: return "point";
        case Mode::PixelBaseline: return "pixel";
    }
    throw DataError("bad mode value");
}

bool mode_uses_online(Mode m) {
    return m == Mode::SingleOn || m == Mode::MMDecoder || m == Mode::MMEncoder ||
           m == Mode::PointBaseline;
}

bool mode_uses_offline(Mode m) {
    return m == Mode::SingleOff || m == Mode::MMDecoder || m == Mode::MMEncoder ||
           m == Mode::PixelBaseline;
}

bool mode_uses_stroke_features(Mode m) {
    return m != Mode::PointBaseline && m != Mode::PixelBaseline;
}

namespace {

ModelPreset paper_preset() {
    ModelPreset p;
    p.name = "paper";
    p.online_growth = 24;
    p.online_stem = 48;
    p.online_block_layers = 3;
    p.online_num_blocks = 5;
    p.online_pool_after = {3, 5};
    p.online_theta = 1.0;
    p.gru_hidden = 250;
    p.gru_layers = 2;
    p.offline_growth = 24;
    p.offline_stem = 48;
    p.offline_stem_pool = true;
    p.offline_block_layers = 16;  // bottleneck layers; 32 convolutions per block
    p.offline_num_blocks = 3;
    p.offline_theta = 0.5;
    p.offline_bottleneck = true;
    p.offline_bottleneck_width = 96;
    p.feature_dim = 500;
    p.embed_dim = 256;
    p.decoder_hidden = 256;
    p.attention_dim = 500;
    p.coverage_channels = 64;
    p.coverage_kernel_seq = 7;
    p.coverage_kernel_grid = 11;
    return p;
}

}  // namespace

ModelPreset preset_by_name(const std::string& name) {
    if (name == "toy") return ModelPreset{};
    if (name == "paper" || name == "paper-online" || name == "paper-offline") {
        ModelPreset p = paper_preset();
        p.name = name;
        return p;
    }
    if (name == "micro") {
        // smallest shapes that still exercise every code path; used by the
        // finite-difference suites
        ModelPreset p;
        p.name = "micro";
        p.online_growth = 2;
        p.online_stem = 3;
        p.online_block_layers = 1;
        p.online_num_blocks = 5;
        p.gru_hidden = 3;
        p.offline_growth = 2;
        p.offline_stem = 3;
        p.offline_block_layers = 1;
        p.offline_bottleneck_width = 4;
        p.feature_dim = 6;
        p.embed_dim = 6;
        p.decoder_hidden = 5;
        p.attention_dim = 7;
        p.coverage_channels = 3;
        return p;
    }
    throw DataError("unknown preset: " + name +
                    " (expected toy|micro|paper|paper-online|paper-offline)");
}

}  // namespace scan
