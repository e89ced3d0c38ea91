#include "lra/numerics.hpp"

#include <cmath>

namespace lra {
namespace {

constexpr std::uint64_t kGoldenGamma = 0x9e3779b97f4a7c15ULL;

std::uint64_t splitmix64(std::uint64_t& x) {
    x += kGoldenGamma;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}

}  // namespace

Rng::Rng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& s : state_) s = splitmix64(sm);
}

std::uint64_t Rng::next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
}

double Rng::next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::next_normal() {
    const double u1 = next_double();
    const double u2 = next_double();
    // 1 - u1 is in (0, 1], so the log is finite.
    const double r = std::sqrt(-2.0 * std::log1p(-u1));
    return r * std::cos(2.0 * M_PI * u2);
}

std::uint64_t Rng::next_below(std::uint64_t bound) {
    if (bound == 0) throw std::invalid_argument("Rng::next_below: bound must be > 0");
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
        const std::uint64_t r = next_u64();
        if (r >= threshold) return r % bound;
    }
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t tag) {
    std::uint64_t x = master + tag * kGoldenGamma;
    return splitmix64(x);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw std::invalid_argument(
            "matmul: inner dimensions differ, lhs is " + std::to_string(a.rows()) +
            "x" + std::to_string(a.cols()) + ", rhs is " + std::to_string(b.rows()) +
            "x" + std::to_string(b.cols()));
    }
    return a * b;
}

Matrix orthogonal_init(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    if (rows <= 0 || cols <= 0) {
        throw std::invalid_argument("orthogonal_init: dimensions must be positive");
    }
    // Sample row by row so the draw order is part of the contract.
    Matrix g(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) g(i, j) = rng.next_normal();

    const bool wide = rows < cols;
    Matrix a = wide ? g.transpose() : std::move(g);

    Eigen::HouseholderQR<Matrix> qr(a);
    Matrix q = qr.householderQ() * Matrix::Identity(a.rows(), a.cols());
    for (Eigen::Index j = 0; j < q.cols(); ++j) {
        if (qr.matrixQR()(j, j) < 0.0) q.col(j) = -q.col(j);
    }
    return wide ? q.transpose() : q;
}

double norm_clip_scale(double norm, double c, bool forced) {
    if (c <= 0.0 || norm == 0.0) return 1.0;
    if (forced || norm >= c) return c / norm;
    return 1.0;
}

}  // namespace lra
