#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "gft/tensor.hpp"

namespace gft {

namespace detail {

inline void write_u32_le(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline bool read_u32_le(std::istream& is, std::uint32_t& v) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
    v = std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
        (std::uint32_t(b[3]) << 24);
    return true;
}

inline void write_f32_le(std::ostream& os, float f) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    write_u32_le(os, u);
}

inline bool read_f32_le(std::istream& is, float& f) {
    std::uint32_t u;
    if (!read_u32_le(is, u)) return false;
    std::memcpy(&f, &u, 4);
    return true;
}

}  // namespace detail

// Named map of trainable tensors. std::map keys give the deterministic
// iteration order that the optimizer and checkpoint writer rely on.
template <typename Real>
class ParamSet {
public:
    Tensor<Real>& add(const std::string& path, Tensor<Real> t) {
        if (params_.count(path)) throw ContractError("duplicate parameter path: " + path);
        t.set_requires_grad(true);
        auto [it, ok] = params_.emplace(path, std::move(t));
        (void)ok;
        return it->second;
    }

    bool contains(const std::string& path) const { return params_.count(path) != 0; }

    Tensor<Real>& get(const std::string& path) {
        auto it = params_.find(path);
        if (it == params_.end()) throw ContractError("unknown parameter path: " + path);
        return it->second;
    }

    const Tensor<Real>& get(const std::string& path) const {
        auto it = params_.find(path);
        if (it == params_.end()) throw ContractError("unknown parameter path: " + path);
        return it->second;
    }

    std::size_t count() const { return params_.size(); }

    std::size_t total_values() const {
        std::size_t n = 0;
        for (const auto& [k, t] : params_) n += t.size();
        return n;
    }

    void zero_grads() {
        for (auto& [k, t] : params_) t.zero_grad();
    }

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    // Binary checkpoint: magic "GFT1", then per parameter: u32 path length,
    // UTF-8 path, u32 rank, u32 extents, raw little-endian f32 values.
    void save(const std::string& path) const {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw ParseError("cannot open checkpoint for writing: " + path);
        os.write("GFT1", 4);
        for (const auto& [name, t] : params_) {
            detail::write_u32_le(os, static_cast<std::uint32_t>(name.size()));
            os.write(name.data(), static_cast<std::streamsize>(name.size()));
            detail::write_u32_le(os, static_cast<std::uint32_t>(t.rank()));
            for (std::size_t d : t.shape()) detail::write_u32_le(os, static_cast<std::uint32_t>(d));
            for (std::size_t i = 0; i < t.size(); ++i)
                detail::write_f32_le(os, static_cast<float>(t.data()[i]));
        }
        if (!os) throw ParseError("checkpoint write failed: " + path);
    }

    // Loads values into existing parameters; every stored path must exist and
    // match shapes. Extra live parameters are an error (vocabulary mismatch).
    void load(const std::string& path) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw ParseError("cannot open checkpoint: " + path);
        char magic[4];
        if (!is.read(magic, 4) || std::string(magic, 4) != "GFT1")
            throw ParseError("bad checkpoint magic in " + path);
        std::size_t seen = 0;
        while (true) {
            std::uint32_t plen;
            if (!detail::read_u32_le(is, plen)) break;  // clean EOF
            std::string name(plen, '\0');
            if (!is.read(name.data(), plen)) throw ParseError("truncated checkpoint path in " + path);
            std::uint32_t rank;
            if (!detail::read_u32_le(is, rank)) throw ParseError("truncated checkpoint rank in " + path);
            Shape shape(rank);
            std::size_t n = 1;
            for (std::uint32_t d = 0; d < rank; ++d) {
                std::uint32_t e;
                if (!detail::read_u32_le(is, e)) throw ParseError("truncated checkpoint extents in " + path);
                shape[d] = e;
                n *= e;
            }
            auto it = params_.find(name);
            if (it == params_.end()) throw ParseError("checkpoint parameter not in model: " + name);
            if (it->second.shape() != shape)
                throw ParseError("checkpoint shape mismatch for " + name + ": file " + shape_str(shape) +
                                 ", model " + shape_str(it->second.shape()));
            for (std::size_t i = 0; i < n; ++i) {
                float f;
                if (!detail::read_f32_le(is, f)) throw ParseError("truncated checkpoint values in " + path);
                it->second.data()[i] = static_cast<Real>(f);
            }
            ++seen;
        }
        if (seen != params_.size())
            throw ParseError("checkpoint has " + std::to_string(seen) + " parameters, model has " +
                             std::to_string(params_.size()));
    }

private:
    std::map<std::string, Tensor<Real>> params_;
};

using ParamSetF = ParamSet<float>;
using ParamSetD = ParamSet<double>;

}  // namespace gft
