#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace ttsflow {

/// Named substreams hanging off a top-level seed. Varying one leaves the others untouched.
enum class Substream : std::uint64_t {
    suite = 0x5371,
    init = 0x1a17,
    perturb = 0x9e27,
    sde = 0x5de0,
    degrade = 0xde64,
    study = 0x57d1,
    weights = 0x3e16,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Hierarchical key identifying one RNG stream, e.g. {seed, perturb, round, child}.
class SeedKey {
public:
    SeedKey() = default;
    SeedKey(std::initializer_list<std::uint64_t> words) : words_(words) {}
    SeedKey(std::uint64_t seed, Substream stream) : words_{seed, static_cast<std::uint64_t>(stream)} {}

    [[nodiscard]] SeedKey child(std::uint64_t word) const {
        SeedKey next = *this;
        next.words_.push_back(word);
        return next;
    }

    [[nodiscard]] SeedKey extend(std::span<const std::uint64_t> path) const {
        SeedKey next = *this;
        next.words_.insert(next.words_.end(), path.begin(), path.end());
        return next;
    }

    [[nodiscard]] std::uint64_t digest() const {
        std::uint64_t h = splitmix64(words_.size());
        for (std::uint64_t w : words_) h = splitmix64(h ^ splitmix64(w));
        return h;
    }

    [[nodiscard]] const std::vector<std::uint64_t>& words() const { return words_; }

private:
    std::vector<std::uint64_t> words_;
};

/// A private random stream. Two streams built from equal keys produce identical draws.
class RngStream {
public:
    explicit RngStream(const SeedKey& key) : engine_(key.digest()) {}
    explicit RngStream(std::uint64_t seed) : engine_(splitmix64(seed)) {}

    double normal() { return normal_(engine_); }

    Eigen::VectorXd normal_vector(Eigen::Index dim) {
        Eigen::VectorXd out(dim);
        for (Eigen::Index i = 0; i < dim; ++i) out[i] = normal();
        return out;
    }

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

    std::uint64_t binomial(std::uint64_t trials, double p) {
        return std::binomial_distribution<std::uint64_t>(trials, p)(engine_);
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

} // namespace ttsflow
