#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

namespace palavra {

// FNV-1a 64-bit; used for parameter digests, seed-matched subset derivation
// and config fingerprints in reports.
class Fnv64 {
public:
    void update(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h_ ^= p[i];
            h_ *= 0x100000001b3ULL;
        }
    }

    void update(const std::string& s) { update(s.data(), s.size()); }

    void update_f32(float x) { update(&x, sizeof(x)); }

    void update_f32(const std::vector<double>& v) {
        for (double d : v) update_f32(static_cast<float>(d));
    }

    void update_u64(std::uint64_t x) {
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(x >> (8 * i));
        update(b, 8);
    }

    std::uint64_t value() const { return h_; }

    std::string hex() const {
        static const char* digits = "0123456789abcdef";
        std::string out(16, '0');
        std::uint64_t x = h_;
        for (int i = 15; i >= 0; --i) {
            out[static_cast<std::size_t>(i)] = digits[x & 0xf];
            x >>= 4;
        }
        return out;
    }

private:
    std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t fnv64(const std::string& s) {
    Fnv64 f;
    f.update(s);
    return f.value();
}

}  // namespace palavra
