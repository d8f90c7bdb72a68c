#include "scan/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace scan {

namespace {

constexpr char kMagic[] = "SCANCKPT1";
constexpr size_t kMagicLen = 9;

void put_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw DataError("checkpoint truncated");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

float get_f32(std::istream& in) {
    uint32_t bits = get_u32(in);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace

void write_checkpoint_raw(const std::string& path,
                          const std::vector<NamedTensor>& tensors) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out.write(kMagic, kMagicLen);
    for (const auto& nt : tensors) {
        put_u32(out, static_cast<uint32_t>(nt.name.size()));
        out.write(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
        put_u32(out, static_cast<uint32_t>(nt.tensor.rank()));
        for (int d : nt.tensor.shape) put_u32(out, static_cast<uint32_t>(d));
        for (float v : nt.tensor.data) put_f32(out, v);
    }
    if (!out) throw DataError("write failed: " + path);
}

std::vector<NamedTensor> read_checkpoint_raw(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    char magic[kMagicLen];
    in.read(magic, kMagicLen);
    if (!in || std::memcmp(magic, kMagic, kMagicLen) != 0)
        throw DataError("not a checkpoint archive (bad magic): " + path);
    std::vector<NamedTensor> out;
    while (in.peek() != EOF) {
        uint32_t name_len = get_u32(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (!in) throw DataError("checkpoint truncated in name");
        uint32_t rank = get_u32(in);
        std::vector<int> shape(rank);
        for (auto& d : shape) d = static_cast<int>(get_u32(in));
        Tensor<float> t(shape);
        for (auto& v : t.data) v = get_f32(in);
        out.push_back({std::move(name), std::move(t)});
    }
    return out;
}

}  // namespace scan
