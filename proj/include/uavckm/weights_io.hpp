#pragma once

// Versioned binary tensor container shared by channel-map models and policy checkpoints.
//
// Layout (little-endian host order):
//   magic "UCKW" | u32 version | str kind | str meta_json | u32 tensor_count
//   per tensor: str name | u32 rows | u32 cols | rows*cols f64 (column-major)
//   u64 FNV-1a checksum of every preceding byte
// where str = u32 length followed by raw bytes.

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "uavckm/errors.hpp"
#include "uavckm/nn.hpp"

namespace uavckm {

inline constexpr std::uint32_t kWeightsFormatVersion = 1;

struct TensorArchive {
    std::string kind;
    nlohmann::json meta = nlohmann::json::object();
    std::vector<std::pair<std::string, nn::Matrix>> tensors;

    void add(const std::string& prefix, const std::vector<nn::StateRef>& state) {
        for (const auto& s : state) tensors.emplace_back(prefix + s.name, *s.value);
    }

    /// Copies tensors named `prefix + s.name` into `state`, checking shapes.
    void restore(const std::string& prefix, const std::vector<nn::StateRef>& state) const {
        for (const auto& s : state) {
            const nn::Matrix& src = find(prefix + s.name);
            if (src.rows() != s.value->rows() || src.cols() != s.value->cols())
                throw Error(ErrorCategory::Format, "shape mismatch for tensor " + prefix + s.name);
            *s.value = src;
        }
    }

    const nn::Matrix& find(const std::string& name) const {
        for (const auto& [n, m] : tensors) {
            if (n == name) return m;
        }
        throw Error(ErrorCategory::Format, "missing tensor " + name);
    }
};

namespace detail {

inline std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

template <class T>
void put(std::string& buf, T v) {
    char raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    buf.append(raw, sizeof(T));
}

inline void put_str(std::string& buf, const std::string& s) {
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(s.size()));
    buf.append(s);
}

class Reader {
public:
    explicit Reader(const std::string& buf) : buf_(buf) {}

    template <class T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, buf_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string get_str() {
        const auto n = get<std::uint32_t>();
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t pos() const { return pos_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > buf_.size()) throw Error(ErrorCategory::Format, "weights file is truncated");
    }
    const std::string& buf_;
    std::size_t pos_ = 0;
};

} // namespace detail

inline void save_archive(const TensorArchive& a, const std::string& path) {
    std::string buf = "UCKW";
    detail::put<std::uint32_t>(buf, kWeightsFormatVersion);
    detail::put_str(buf, a.kind);
    detail::put_str(buf, a.meta.dump());
    detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(a.tensors.size()));
    for (const auto& [name, m] : a.tensors) {
        detail::put_str(buf, name);
        detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(m.rows()));
        detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(m.cols()));
        buf.append(reinterpret_cast<const char*>(m.data()), sizeof(double) * static_cast<std::size_t>(m.size()));
    }
    detail::put<std::uint64_t>(buf, detail::fnv1a(buf));

    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCategory::Io, "cannot write " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw Error(ErrorCategory::Io, "write failed for " + path);
}

inline TensorArchive load_archive(const std::string& path, const std::string& expected_kind) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCategory::Io, "cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string buf = ss.str();

    if (buf.size() < 4 + sizeof(std::uint64_t) || buf.compare(0, 4, "UCKW") != 0)
        throw Error(ErrorCategory::Format, path + " is not a weights file");
    const std::string body = buf.substr(0, buf.size() - sizeof(std::uint64_t));
    std::uint64_t stored = 0;
    std::memcpy(&stored, buf.data() + body.size(), sizeof(stored));

    detail::Reader r(body);
    r.get<std::uint32_t>(); // magic
    const auto version = r.get<std::uint32_t>();
    if (version != kWeightsFormatVersion)
        throw Error(ErrorCategory::Format, path + ": unsupported weights version " + std::to_string(version));
    if (stored != detail::fnv1a(body)) throw Error(ErrorCategory::Format, path + ": checksum mismatch");

    TensorArchive a;
    a.kind = r.get_str();
    if (a.kind != expected_kind)
        throw Error(ErrorCategory::Format, path + ": expected a '" + expected_kind + "' file, found '" + a.kind + "'");
    a.meta = nlohmann::json::parse(r.get_str());
    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.get_str();
        const auto rows = r.get<std::uint32_t>();
        const auto cols = r.get<std::uint32_t>();
        nn::Matrix m(rows, cols);
        for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = r.get<double>();
        a.tensors.emplace_back(std::move(name), std::move(m));
    }
    if (r.pos() != body.size()) throw Error(ErrorCategory::Format, path + ": trailing bytes");
    return a;
}

} // namespace uavckm
