#pragma once

// Dense types, seeded randomness, and the small numeric kernels shared by
// every other module. Eigen is the only math dependency.

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace lra {

using Matrix = Eigen::MatrixXd;
using RowVec = Eigen::RowVectorXd;

/// Deterministic, portable random stream: xoshiro256++ over a splitmix64-seeded
/// state. The u64 stream is identical on every platform; derived doubles use
/// only IEEE-754 arithmetic on that stream (normal deviates additionally go
/// through libm log/sqrt/cos, which is correctly rounded on the platforms we
/// target). Single-owner: never share one instance across threads.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();

    /// Uniform in [0, 1), 53-bit resolution.
    double next_double();

    /// Standard normal via Box-Muller (no cached second deviate).
    double next_normal();

    /// Uniform in [0, bound), unbiased via rejection. bound must be > 0.
    std::uint64_t next_below(std::uint64_t bound);

private:
    std::uint64_t state_[4];
};

/// Stable sub-stream derivation: mixes a master seed with a purpose tag so
/// that e.g. weight init, training batches and validation data never share a
/// stream. splitmix64 finalizer on (master + tag * golden-gamma).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t tag);

// Purpose tags used by the harness; fixed so runs reproduce bit-for-bit.
inline constexpr std::uint64_t kStreamInit = 0x01;
inline constexpr std::uint64_t kStreamTrain = 0x02;
inline constexpr std::uint64_t kStreamVal = 0x03;

/// Checked dense product. Throws std::invalid_argument naming both shapes on a
/// dimension mismatch.
Matrix matmul(const Matrix& a, const Matrix& b);

/// Q factor of the QR decomposition of a rows x cols standard-normal sample,
/// sign-corrected so diag(R) >= 0 (makes the factorization, and therefore the
/// result for a given seed, unique). For rows < cols the decomposition is
/// applied to the transpose and transposed back, so the rows are orthonormal.
Matrix orthogonal_init(Eigen::Index rows, Eigen::Index cols, Rng& rng);

inline Matrix tanh_act(const Matrix& v) { return v.array().tanh().matrix(); }
inline RowVec tanh_act(const RowVec& v) { return v.array().tanh().matrix(); }

/// sigma'(h) = 1 - tanh(h)^2, from pre-activations.
inline Matrix tanh_deriv(const Matrix& h) {
    return (1.0 - h.array().tanh().square()).matrix();
}
inline RowVec tanh_deriv(const RowVec& h) {
    return (1.0 - h.array().tanh().square()).matrix();
}

// Same derivatives written in terms of z = tanh(h); the trainers keep z
// around and never pay a second tanh.
template <typename Derived>
auto tanh_deriv_from_act(const Eigen::ArrayBase<Derived>& z) {
    return 1.0 - z.square();
}
template <typename Derived>
auto tanh_second_deriv_from_act(const Eigen::ArrayBase<Derived>& z) {
    return -2.0 * z * (1.0 - z.square());
}

/// Multiplier applied by Normalize to a block of norm `norm` under constant c.
/// Plain mode caps the norm at c; forced mode rescales any nonzero block to
/// norm c. c == 0 disables either way.
double norm_clip_scale(double norm, double c, bool forced);

/// Normalize a gradient block (Frobenius norm for matrices, Euclidean for
/// vectors).
template <typename Derived>
typename Derived::PlainObject normalize(const Eigen::MatrixBase<Derived>& delta,
                                        double c, bool forced = false) {
    return delta * norm_clip_scale(delta.norm(), c, forced);
}

}  // namespace lra
