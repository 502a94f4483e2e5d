#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace btdvar {

/**
 * Seedable random stream used by every sampler and generator.
 *
 * Distribution objects are constructed per draw so the engine state is the
 * complete stream state; `state()` / `restore()` therefore resume a stream
 * bit-exactly.
 */
class Rng {
public:
    explicit Rng(std::uint64_t seed = 1) : engine_(seed) {}

    double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
    double normal(double mean, double sd) { return mean + sd * normal(); }
    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

    /// Gamma with shape and rate (mean shape / rate).
    double gamma(double shape, double rate) {
        return std::gamma_distribution<double>(shape, 1.0)(engine_) / rate;
    }

    /// Inverse gamma with shape and scale: 1 / Ga(shape, rate = scale).
    double inv_gamma(double shape, double scale) {
        return scale / std::gamma_distribution<double>(shape, 1.0)(engine_);
    }

    std::uint64_t next_u64() { return engine_(); }

    [[nodiscard]] std::string state() const;
    void restore(const std::string& state);

    friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_; }

private:
    std::mt19937_64 engine_;
};

}  // namespace btdvar
