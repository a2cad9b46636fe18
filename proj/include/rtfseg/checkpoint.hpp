#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "rtfseg/data.hpp"
#include "rtfseg/params.hpp"

namespace rtfseg {

// ---------------------------------------------------------------------------
// format
// ---------------------------------------------------------------------------
// Self-describing binary, everything little-endian regardless of host:
//   magic "RTFSEGCK" | u32 version | i64 epoch | u32 len + config text |
//   u32 count | count x { u32 len + name | 4 x i32 shape | u64 n | n x f32 }
// Weights are stored as 32-bit floats, the production scalar, so a
// save/load round trip reproduces forward passes bit-exactly.

struct TensorRecord {
    std::string name;
    std::array<int, 4> shape{0, 0, 0, 0};
    std::vector<float> data;
};

struct Checkpoint {
    std::uint32_t version = 1;
    long long epoch = 0;
    std::string config_text;
    std::vector<TensorRecord> tensors;

    const TensorRecord* find(const std::string& name) const {
        for (const auto& t : tensors)
            if (t.name == name) return &t;
        return nullptr;
    }

    bool has_section(const std::string& prefix) const {
        for (const auto& t : tensors)
            if (t.name.rfind(prefix, 0) == 0) return true;
        return false;
    }
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float f) {
    std::uint32_t v;
    static_assert(sizeof(v) == sizeof(f));
    std::memcpy(&v, &f, sizeof(v));
    put_u32(out, v);
}

// Bounds-checked little-endian reader.
struct CkptReader {
    const std::string& buf;
    size_t pos = 0;

    explicit CkptReader(const std::string& b) : buf(b) {}

    void need(size_t n, const char* what) {
        if (buf.size() - pos < n)
            throw CheckpointError(std::string("truncated file while reading ") + what);
    }

    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
        return v;
    }

    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
        return v;
    }

    float f32(const char* what) {
        std::uint32_t v = u32(what);
        float f;
        std::memcpy(&f, &v, sizeof(f));
        return f;
    }

    std::string str(const char* what) {
        std::uint32_t len = u32(what);
        need(len, what);
        std::string s = buf.substr(pos, len);
        pos += len;
        return s;
    }
};

}  // namespace detail

inline constexpr char kCheckpointMagic[9] = "RTFSEGCK";
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::string out(kCheckpointMagic, 8);
    detail::put_u32(out, ck.version);
    detail::put_u64(out, static_cast<std::uint64_t>(ck.epoch));
    detail::put_u32(out, static_cast<std::uint32_t>(ck.config_text.size()));
    out += ck.config_text;
    detail::put_u32(out, static_cast<std::uint32_t>(ck.tensors.size()));
    for (const auto& t : ck.tensors) {
        detail::put_u32(out, static_cast<std::uint32_t>(t.name.size()));
        out += t.name;
        std::uint64_t count = 1;
        for (int d : t.shape) {
            detail::put_u32(out, static_cast<std::uint32_t>(d));
            count *= static_cast<std::uint64_t>(d);
        }
        if (count != t.data.size())
            throw CheckpointError("tensor '" + t.name + "' shape does not match its data");
        detail::put_u64(out, count);
        for (float f : t.data) detail::put_f32(out, f);
    }
    detail::write_file(path, out);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::string buf;
    try {
        buf = detail::read_file(path);
    } catch (const DataError& e) {
        throw CheckpointError(e.what());
    }
    detail::CkptReader rd(buf);
    rd.need(8, "magic");
    if (buf.compare(0, 8, kCheckpointMagic, 8) != 0)
        throw CheckpointError(path + " is not a checkpoint (bad magic)");
    rd.pos = 8;

    Checkpoint ck;
    ck.version = rd.u32("version");
    if (ck.version != kCheckpointVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(ck.version));
    ck.epoch = static_cast<long long>(rd.u64("epoch"));
    ck.config_text = rd.str("config");
    std::uint32_t count = rd.u32("tensor count");
    ck.tensors.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        TensorRecord t;
        t.name = rd.str("tensor name");
        std::uint64_t expect = 1;
        for (int d = 0; d < 4; ++d) {
            t.shape[d] = static_cast<int>(rd.u32("shape"));
            expect *= static_cast<std::uint64_t>(t.shape[d]);
        }
        std::uint64_t n = rd.u64("element count");
        if (n != expect)
            throw CheckpointError("tensor '" + t.name + "' count disagrees with its shape");
        t.data.resize(n);
        for (std::uint64_t j = 0; j < n; ++j) t.data[j] = rd.f32("tensor data");
        ck.tensors.push_back(std::move(t));
    }
    return ck;
}

// ---------------------------------------------------------------------------
// registry <-> record conversion
// ---------------------------------------------------------------------------

template <typename S>
TensorRecord record_from(const std::string& name, const Tensor4<S>& t) {
    TensorRecord r;
    r.name = name;
    r.shape = {t.n, t.c, t.h, t.w};
    r.data.resize(static_cast<size_t>(t.size()));
    for (Eigen::Index i = 0; i < t.size(); ++i) r.data[i] = static_cast<float>(t.data[i]);
    return r;
}

// Every trainable tensor plus every running-stats buffer, prefixed (e.g.
// "model." for raw weights, "ema." for the shadow copy).
template <typename S>
void append_registry(std::vector<TensorRecord>& out, const ParamRegistry<S>& reg,
                     const std::string& prefix) {
    for (const auto& e : reg.entries) out.push_back(record_from(prefix + e.name, e.var->value));
    for (const auto& b : reg.buffers) out.push_back(record_from(prefix + b.first, *b.second));
}

// Writes checkpoint values back into live tensors. All problems are collected
// first so the error names every offending tensor instead of just the first.
template <typename S>
void load_into_registry(ParamRegistry<S>& reg, const Checkpoint& ck, const std::string& prefix) {
    std::string missing, mismatched;
    auto fill = [&](const std::string& name, Tensor4<S>& t) {
        const TensorRecord* r = ck.find(prefix + name);
        if (!r) {
            missing += (missing.empty() ? "" : ", ") + prefix + name;
            return;
        }
        if (r->shape != std::array<int, 4>{t.n, t.c, t.h, t.w}) {
            mismatched += (mismatched.empty() ? "" : ", ") + prefix + name;
            return;
        }
        for (Eigen::Index i = 0; i < t.size(); ++i)
            t.data[i] = static_cast<S>(r->data[static_cast<size_t>(i)]);
    };
    for (auto& e : reg.entries) fill(e.name, e.var->value);
    for (auto& b : reg.buffers) fill(b.first, *b.second);
    if (!missing.empty() || !mismatched.empty()) {
        std::string msg = "checkpoint does not fit this model:";
        if (!missing.empty()) msg += " missing tensors [" + missing + "]";
        if (!mismatched.empty()) msg += " shape mismatches [" + mismatched + "]";
        throw CheckpointError(msg);
    }
}

}  // namespace rtfseg
