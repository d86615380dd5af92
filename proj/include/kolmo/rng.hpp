#pragma once

#include <cmath>
#include <cstdint>

namespace kolmo {

// Philox4x32-10 counter-based generator. Streams are addressed by
// (seed, stream), so batches of simulation work can draw independent,
// reproducible randomness regardless of scheduling.
class CounterRng {
  public:
    CounterRng(std::uint64_t seed, std::uint64_t stream)
        : key0_(static_cast<std::uint32_t>(seed)),
          key1_(static_cast<std::uint32_t>(seed >> 32)),
          ctr2_(static_cast<std::uint32_t>(stream)),
          ctr3_(static_cast<std::uint32_t>(stream >> 32)) {}

    double uniform() {
        // (0, 1) exclusive on both ends; safe under log().
        return (next_u32() + 0.5) * (1.0 / 4294967296.0);
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    std::uint32_t next_u32() {
        if (avail_ == 0) {
            fill_block();
            avail_ = 4;
        }
        return out_[4 - avail_--];
    }

  private:
    static void round_once(std::uint32_t c[4], std::uint32_t k0, std::uint32_t k1) {
        const std::uint64_t p0 = 0xD2511F53ull * c[0];
        const std::uint64_t p1 = 0xCD9E8D57ull * c[2];
        const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
        const std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
        const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
        const std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
        const std::uint32_t t0 = hi1 ^ c[1] ^ k0;
        const std::uint32_t t2 = hi0 ^ c[3] ^ k1;
        c[0] = t0;
        c[1] = lo1;
        c[2] = t2;
        c[3] = lo0;
    }

    void fill_block() {
        std::uint32_t c[4] = {static_cast<std::uint32_t>(blk_),
                              static_cast<std::uint32_t>(blk_ >> 32), ctr2_, ctr3_};
        std::uint32_t k0 = key0_, k1 = key1_;
        for (int r = 0; r < 10; ++r) {
            round_once(c, k0, k1);
            k0 += 0x9E3779B9u;
            k1 += 0xBB67AE85u;
        }
        out_[0] = c[0];
        out_[1] = c[1];
        out_[2] = c[2];
        out_[3] = c[3];
        ++blk_;
    }

    std::uint32_t key0_, key1_;
    std::uint32_t ctr2_, ctr3_;
    std::uint64_t blk_ = 0;
    std::uint32_t out_[4] = {0, 0, 0, 0};
    int avail_ = 0;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

} // namespace kolmo
