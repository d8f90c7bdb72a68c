#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scan/tape.hpp"

namespace scan {

// Checkpoint archive: magic "SCANCKPT1", then per tensor
//   u32 name length, name bytes, u32 rank, u32 extents..., f32 data
// all little-endian. Round trips are bit-exact.
struct NamedTensor {
    std::string name;
    Tensor<float> tensor;
};

void write_checkpoint_raw(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_checkpoint_raw(const std::string& path);

template <typename Real>
void save_checkpoint(const std::string& path, const ParamStore<Real>& store) {
    std::vector<NamedTensor> out;
    out.reserve(store.size());
    for (size_t i = 0; i < store.size(); ++i) {
        const Param<Real>& p = store.at(i);
        out.push_back({p.name, p.value.template cast<float>()});
    }
    write_checkpoint_raw(path, out);
}

// Every record must match an existing parameter by name and shape; every
// parameter must be covered.
template <typename Real>
void load_checkpoint(const std::string& path, ParamStore<Real>& store) {
    auto records = read_checkpoint_raw(path);
    size_t loaded = 0;
    for (auto& r : records) {
        if (!store.contains(r.name))
            throw DataError("checkpoint tensor has no matching parameter: " + r.name);
        Param<Real>& p = store.get(r.name);
        if (p.value.shape != r.tensor.shape)
            throw DataError("checkpoint shape mismatch for " + r.name + ": " +
                            shape_str(r.tensor.shape) + " vs " + shape_str(p.value.shape));
        p.value = r.tensor.template cast<Real>();
        ++loaded;
    }
    if (loaded != store.size())
        throw DataError("checkpoint covers " + std::to_string(loaded) + " of " +
                        std::to_string(store.size()) + " parameters");
}

}  // namespace scan
