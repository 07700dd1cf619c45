#pragma once

#include "aglsc/error.hpp"
#include "aglsc/param_store.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

namespace aglsc {

// Binary checkpoint, all integers and reals little-endian:
//
//   "AGLSCKPT"             8 bytes magic
//   u32 version            currently 1
//   u64 config_hash
//   u64 seed
//   u64 step               optimizer step counter
//   u32 len, bytes         config text (flat key = value lines)
//   u32 param_count
//   per parameter:
//     u32 len, bytes       name
//     u64 rows, u64 cols
//     f64[rows*cols]       value, row-major
//     f64[rows*cols]       Adam first moment
//     f64[rows*cols]       Adam second moment
//
// See docs/checkpoint_format.md.
struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;
    static constexpr std::array<char, 8> kMagic{'A', 'G', 'L', 'S', 'C', 'K', 'P', 'T'};

    std::uint64_t config_hash = 0;
    std::uint64_t seed = 0;
    std::string config_text;
    ParamStore params;
};

namespace detail {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
T to_le(T v) {
    if constexpr (std::endian::native == std::endian::big) {
        auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
        std::reverse(bytes.begin(), bytes.end());
        return std::bit_cast<T>(bytes);
    }
    return v;
}

class BinWriter {
public:
    explicit BinWriter(std::ostream& os) : os_(os) {}
    template <typename T>
    void put(T v) {
        v = to_le(v);
        os_.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
    void put_string(const std::string& s) {
        put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
        os_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    void put_reals(const DenseMatrix& m) {
        for (Index i = 0; i < m.size(); ++i) put<double>(m.data()[i]);
    }

private:
    std::ostream& os_;
};

class BinReader {
public:
    BinReader(std::istream& is, std::string path) : is_(is), path_(std::move(path)) {}
    template <typename T>
    T get() {
        T v;
        is_.read(reinterpret_cast<char*>(&v), sizeof v);
        if (!is_) throw IoError("checkpoint '" + path_ + "' is truncated");
        return to_le(v);
    }
    std::string get_string() {
        const auto n = get<std::uint32_t>();
        std::string s(n, '\0');
        is_.read(s.data(), n);
        if (!is_) throw IoError("checkpoint '" + path_ + "' is truncated");
        return s;
    }
    void get_reals(DenseMatrix& m) {
        for (Index i = 0; i < m.size(); ++i) m.data()[i] = get<double>();
    }

private:
    std::istream& is_;
    std::string path_;
};

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write checkpoint '" + path + "'");
    detail::BinWriter w(os);
    os.write(Checkpoint::kMagic.data(), Checkpoint::kMagic.size());
    w.put<std::uint32_t>(Checkpoint::kVersion);
    w.put<std::uint64_t>(ck.config_hash);
    w.put<std::uint64_t>(ck.seed);
    w.put<std::uint64_t>(ck.params.step());
    w.put_string(ck.config_text);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(ck.params.size()));
    for (const auto& p : ck.params.params()) {
        w.put_string(p.name);
        w.put<std::uint64_t>(static_cast<std::uint64_t>(p.value.rows()));
        w.put<std::uint64_t>(static_cast<std::uint64_t>(p.value.cols()));
        w.put_reals(p.value);
        w.put_reals(p.m);
        w.put_reals(p.v);
    }
    if (!os) throw IoError("failed writing checkpoint '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint '" + path + "'");
    std::array<char, 8> magic{};
    is.read(magic.data(), magic.size());
    if (!is || magic != Checkpoint::kMagic) throw IoError("'" + path + "' is not a checkpoint file");
    detail::BinReader r(is, path);
    const auto version = r.get<std::uint32_t>();
    if (version != Checkpoint::kVersion)
        throw IoError("checkpoint '" + path + "' has unsupported version " + std::to_string(version));
    Checkpoint ck;
    ck.config_hash = r.get<std::uint64_t>();
    ck.seed = r.get<std::uint64_t>();
    const auto step = r.get<std::uint64_t>();
    ck.config_text = r.get_string();
    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        auto name = r.get_string();
        const auto rows = static_cast<Index>(r.get<std::uint64_t>());
        const auto cols = static_cast<Index>(r.get<std::uint64_t>());
        DenseMatrix value(rows, cols);
        r.get_reals(value);
        auto& p = ck.params.add(std::move(name), std::move(value));
        r.get_reals(p.m);
        r.get_reals(p.v);
    }
    ck.params.set_step(step);
    return ck;
}

}  // namespace aglsc
