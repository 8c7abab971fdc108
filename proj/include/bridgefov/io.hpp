#pragma once

// File formats.
//
// Arrays (images, sinograms, masks):
//   "BFOV1 <dtype> <rows> <cols> <spacing_mm>\n" then rows*cols little-endian
//   values, row-major. dtype is f32 (IEEE-754 binary32) or u8.
//
// Checkpoints:
//   "BFCK" | u32 version | arch descriptor | i32 steps | i32 objective |
//   u64 iteration | u64 n | n x f32 | u64 FNV-1a of all preceding bytes.
// Optimizer state uses the same framing with magic "BFOP" and payload
//   i64 adam step | n x f32 m | n x f32 v | u64 n_ema | n_ema x f32 ema.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "bridgefov/denoiser.hpp"
#include "bridgefov/image.hpp"
#include "bridgefov/projector.hpp"
#include "bridgefov/train.hpp"

namespace bridgefov::io {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

/// Little-endian byte sink with a running FNV-1a hash.
class Writer {
public:
    template <class T>
    void put(T value) {
        static_assert(std::is_trivially_copyable_v<T>);
        unsigned char raw[sizeof(T)];
        std::memcpy(raw, &value, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
        bytes(raw, sizeof(T));
    }
    void bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) hash_ = (hash_ ^ p[i]) * 0x100000001B3ull;
        buffer_.append(reinterpret_cast<const char*>(p), n);
    }
    void seal() {
        const std::uint64_t h = hash_;
        put(h);
    }
    [[nodiscard]] const std::string& data() const { return buffer_; }

private:
    std::string buffer_;
    std::uint64_t hash_ = 0xCBF29CE484222325ull;
};

class Reader {
public:
    Reader(std::string data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}

    template <class T>
    T get() {
        unsigned char raw[sizeof(T)];
        bytes(raw, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
        T value;
        std::memcpy(&value, raw, sizeof(T));
        return value;
    }
    void bytes(void* out, std::size_t n) {
        if (pos_ + n > data_.size()) throw IoError(path_ + ": truncated file");
        std::memcpy(out, data_.data() + pos_, n);
        for (std::size_t i = 0; i < n; ++i) hash_ = (hash_ ^ static_cast<unsigned char>(data_[pos_ + i])) * 0x100000001B3ull;
        pos_ += n;
    }
    void verify_seal() {
        const std::uint64_t expected = hash_;
        const auto stored = get<std::uint64_t>();
        if (stored != expected) throw IoError(path_ + ": checksum mismatch");
        if (pos_ != data_.size()) throw IoError(path_ + ": trailing bytes after checksum");
    }

private:
    std::string data_;
    std::string path_;
    std::size_t pos_ = 0;
    std::uint64_t hash_ = 0xCBF29CE484222325ull;
};

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path.string() + ": cannot open for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& data) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(path.string() + ": cannot open for writing");
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw IoError(path.string() + ": write failed");
}

inline std::string format_spacing(double spacing) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", spacing);
    return buf;
}

struct ArrayHeader {
    std::string dtype;
    int rows = 0, cols = 0;
    double spacing = 0.0;
};

inline std::string encode_array_f32(int rows, int cols, double spacing, const std::vector<double>& values) {
    Writer w;
    const std::string header = "BFOV1 f32 " + std::to_string(rows) + " " + std::to_string(cols) + " " + format_spacing(spacing) + "\n";
    w.bytes(header.data(), header.size());
    for (double v : values) w.put(static_cast<float>(v));
    return w.data();
}

inline std::string encode_array_u8(int rows, int cols, double spacing, const std::vector<unsigned char>& values) {
    const std::string header = "BFOV1 u8 " + std::to_string(rows) + " " + std::to_string(cols) + " " + format_spacing(spacing) + "\n";
    return header + std::string(values.begin(), values.end());
}

/// Parses the header line; returns the payload offset.
inline std::size_t parse_header(const std::string& data, const std::string& path, ArrayHeader& h) {
    const auto nl = data.find('\n');
    if (nl == std::string::npos || nl > 256) throw IoError(path + ": missing BFOV1 header");
    std::istringstream line(data.substr(0, nl));
    std::string magic;
    if (!(line >> magic >> h.dtype >> h.rows >> h.cols >> h.spacing) || magic != "BFOV1")
        throw IoError(path + ": malformed BFOV1 header");
    if (h.rows <= 0 || h.cols <= 0) throw IoError(path + ": non-positive array shape");
    const std::size_t elem = h.dtype == "f32" ? 4 : h.dtype == "u8" ? 1 : 0;
    if (elem == 0) throw IoError(path + ": unknown dtype " + h.dtype);
    if (data.size() - nl - 1 != elem * h.rows * h.cols) throw IoError(path + ": payload size does not match header");
    return nl + 1;
}

inline std::vector<double> decode_f32(const std::string& data, std::size_t offset, std::size_t n) {
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        unsigned char raw[4];
        std::memcpy(raw, data.data() + offset + 4 * i, 4);
        if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + 4);
        float f;
        std::memcpy(&f, raw, 4);
        out[i] = f;
    }
    return out;
}

inline void save_image(const std::filesystem::path& path, const Image& img) {
    write_file(path, encode_array_f32(img.height(), img.width(), img.spacing(), img.values));
}

inline Image load_image(const std::filesystem::path& path) {
    const std::string data = read_file(path);
    ArrayHeader h;
    const auto off = parse_header(data, path.string(), h);
    if (h.dtype != "f32") throw IoError(path.string() + ": image must be f32");
    if (!(h.spacing > 0.0)) throw IoError(path.string() + ": image spacing must be positive");
    Image img(h.cols, h.rows, h.spacing);
    img.values = decode_f32(data, off, img.size());
    return img;
}

/// Sinogram values plus a sibling "<stem>_mask" u8 array of the channel mask.
inline void save_sinogram(const std::filesystem::path& path, const std::filesystem::path& mask_path, const Sinogram& s) {
    write_file(path, encode_array_f32(s.n_angles(), s.n_channels(), s.geometry.channel_spacing, s.values));
    write_file(mask_path, encode_array_u8(1, s.n_channels(), s.geometry.channel_spacing, s.measured));
}

inline Sinogram load_sinogram(const std::filesystem::path& path, const std::filesystem::path& mask_path,
                              const ScanGeometry& geom) {
    const std::string data = read_file(path);
    ArrayHeader h;
    const auto off = parse_header(data, path.string(), h);
    if (h.dtype != "f32" || h.rows != geom.n_angles || h.cols != geom.n_channels)
        throw IoError(path.string() + ": sinogram shape does not match geometry");
    Sinogram s(geom);
    s.values = decode_f32(data, off, s.values.size());
    const std::string mdata = read_file(mask_path);
    ArrayHeader mh;
    const auto moff = parse_header(mdata, mask_path.string(), mh);
    if (mh.dtype != "u8" || mh.rows != 1 || mh.cols != geom.n_channels)
        throw IoError(mask_path.string() + ": mask shape does not match geometry");
    for (int j = 0; j < geom.n_channels; ++j) s.measured[j] = static_cast<unsigned char>(mdata[moff + j]) ? 1 : 0;
    return s;
}

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
    int steps = 0;  // K for the bridge, T for the baseline
    Objective objective = Objective::bridge;
    std::int64_t iteration = 0;
};

inline void put_arch(Writer& w, const ArchDescriptor& a) {
    for (int v : {a.levels, a.base_channels, a.kernel, a.in_channels, a.out_channels, a.time_dim, a.groups,
                  a.blocks_per_level, a.group_norm ? 1 : 0})
        w.put(static_cast<std::int32_t>(v));
    w.put(a.time_base);
}

inline ArchDescriptor get_arch(Reader& r) {
    ArchDescriptor a;
    a.levels = r.get<std::int32_t>();
    a.base_channels = r.get<std::int32_t>();
    a.kernel = r.get<std::int32_t>();
    a.in_channels = r.get<std::int32_t>();
    a.out_channels = r.get<std::int32_t>();
    a.time_dim = r.get<std::int32_t>();
    a.groups = r.get<std::int32_t>();
    a.blocks_per_level = r.get<std::int32_t>();
    a.group_norm = r.get<std::int32_t>() != 0;
    a.time_base = r.get<double>();
    return a;
}

inline std::string encode_checkpoint(const DenoiserParams<float>& p, const CheckpointMeta& meta) {
    Writer w;
    w.bytes("BFCK", 4);
    w.put(kCheckpointVersion);
    put_arch(w, p.arch);
    w.put(static_cast<std::int32_t>(meta.steps));
    w.put(static_cast<std::int32_t>(meta.objective == Objective::bridge ? 0 : 1));
    w.put(static_cast<std::uint64_t>(meta.iteration));
    w.put(static_cast<std::uint64_t>(p.size()));
    for (float v : p.values) w.put(v);
    w.seal();
    return w.data();
}

inline DenoiserParams<float> decode_checkpoint(std::string data, const std::string& path, CheckpointMeta* meta = nullptr) {
    Reader r(std::move(data), path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, "BFCK", 4) != 0) throw IoError(path + ": not a checkpoint");
    if (r.get<std::uint32_t>() != kCheckpointVersion) throw IoError(path + ": unsupported checkpoint version");
    DenoiserParams<float> p;
    p.arch = get_arch(r);
    CheckpointMeta m;
    m.steps = r.get<std::int32_t>();
    m.objective = r.get<std::int32_t>() == 0 ? Objective::bridge : Objective::cddpm;
    m.iteration = static_cast<std::int64_t>(r.get<std::uint64_t>());
    const auto n = r.get<std::uint64_t>();
    try {
        if (NetworkLayout(p.arch).total != n) throw IoError(path + ": parameter count does not match architecture");
    } catch (const std::invalid_argument& e) {
        throw IoError(path + ": invalid architecture (" + e.what() + ")");
    }
    p.values.resize(n);
    for (auto& v : p.values) v = r.get<float>();
    r.verify_seal();
    if (meta) *meta = m;
    return p;
}

inline void save_checkpoint(const std::filesystem::path& path, const DenoiserParams<float>& p, const CheckpointMeta& meta) {
    write_file(path, encode_checkpoint(p, meta));
}

inline DenoiserParams<float> load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta = nullptr) {
    return decode_checkpoint(read_file(path), path.string(), meta);
}

inline void save_optimizer(const std::filesystem::path& path, const AdamState<float>& s, const std::vector<float>& ema) {
    Writer w;
    w.bytes("BFOP", 4);
    w.put(kCheckpointVersion);
    w.put(static_cast<std::uint64_t>(s.m.size()));
    w.put(static_cast<std::int64_t>(s.step));
    for (float v : s.m) w.put(v);
    for (float v : s.v) w.put(v);
    w.put(static_cast<std::uint64_t>(ema.size()));
    for (float v : ema) w.put(v);
    w.seal();
    write_file(path, w.data());
}

inline void load_optimizer(const std::filesystem::path& path, AdamState<float>& s, std::vector<float>& ema) {
    Reader r(read_file(path), path.string());
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, "BFOP", 4) != 0) throw IoError(path.string() + ": not an optimizer state");
    if (r.get<std::uint32_t>() != kCheckpointVersion) throw IoError(path.string() + ": unsupported version");
    const auto n = r.get<std::uint64_t>();
    s.step = r.get<std::int64_t>();
    s.m.resize(n);
    s.v.resize(n);
    for (auto& v : s.m) v = r.get<float>();
    for (auto& v : s.v) v = r.get<float>();
    ema.resize(r.get<std::uint64_t>());
    for (auto& v : ema) v = r.get<float>();
    r.verify_seal();
}

}  // namespace bridgefov::io
