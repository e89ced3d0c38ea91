#pragma once

// The simple recurrent network: forward pass, output map, losses, accuracy.
// States are row vectors multiplied on the left of the weight matrices, so a
// batch stacks samples as rows and every step is a single mat-mat product.

#include "lra/numerics.hpp"
#include "lra/tasks.hpp"

#include <span>
#include <vector>

namespace lra {

struct RnnParams {
    Matrix w_xh;  // n x m
    Matrix w_hh;  // m x m
    Matrix w_hy;  // m x k
    RowVec b_h;   // m
    RowVec b_y;   // k

    Eigen::Index input_dim() const { return w_xh.rows(); }
    Eigen::Index hidden_dim() const { return w_hh.rows(); }
    Eigen::Index output_dim() const { return w_hy.cols(); }

    /// Shape consistency across the five arrays; all entries finite.
    void validate() const;
    bool all_finite() const;

    /// Orthogonal weights (draw order W_xh, W_hh, W_hy), zero biases.
    static RnnParams init(Eigen::Index n, Eigen::Index m, Eigen::Index k, Rng& rng);
};

/// Activations of one forward pass. A sequence of T symbols drives t_max =
/// T - 1 recurrence steps: the first symbol is absorbed into z_0, and the
/// recurrence consumes x_1..x_{t_max}. h[t] is the pre-activation behind
/// z[t] for every t, including h[0] = x_0 W_xh + b_h.
struct ForwardTrace {
    std::vector<RowVec> h;  // h[0..t_max]
    std::vector<RowVec> z;  // z[0..t_max], z[t] = tanh(h[t])
    RowVec y_hat;           // softmax probabilities, dim k
    int t_max() const { return static_cast<int>(z.size()) - 1; }
};

/// Batch-major variant: row i of every array belongs to sample i.
struct BatchTrace {
    std::vector<Matrix> h;       // each B x m
    std::vector<Matrix> z;       // each B x m
    std::vector<Matrix> xw_pre;  // x_t W_xh + b_h per step, each B x m
    Matrix y_hat;                // B x k softmax rows
    int t_max() const { return static_cast<int>(z.size()) - 1; }
};

/// One recurrence step given z_{t-1} and the precomputed input projection
/// x_t W_xh + b_h. Forward and the trainers' target re-propagation both go
/// through this, so identical inputs give bitwise-identical pre-activations.
inline Matrix step_preact(const Matrix& z_prev, const Matrix& w_hh, const Matrix& xw_pre) {
    return z_prev * w_hh + xw_pre;
}

RowVec softmax(const RowVec& logits);
Matrix softmax_rows(const Matrix& logits);

ForwardTrace forward(const RnnParams& params, const SequenceSample& sample);
BatchTrace forward_batch(const RnnParams& params, std::span<const SequenceSample> batch);

/// Cross-entropy -log(y_hat[label]) with a 1e-12 floor inside the log, so the
/// 1e-4 convergence criterion stays numerically meaningful.
double global_loss(const RowVec& y_hat, int label);

enum class LocalLossKind { Mse, LogPenalty };

const char* local_loss_name(LocalLossKind kind);
LocalLossKind local_loss_from_name(const std::string& name);

/// MSE: (1/|z|) sum (z_i - zhat_i)^2. LogPenalty: (1/|z|) sum log(1 + (z_i - zhat_i)^2).
double local_loss(const RowVec& z, const RowVec& z_hat, LocalLossKind kind);

/// Analytic gradient of local_loss w.r.t. z.
RowVec local_loss_grad(const RowVec& z, const RowVec& z_hat, LocalLossKind kind);

/// Batched variants over row-stacked samples; the single-vector forms above
/// delegate here, so there is exactly one formula per loss kind.
Eigen::VectorXd local_loss_rows(const Matrix& z, const Matrix& z_hat, LocalLossKind kind);
Matrix local_loss_grad_rows(const Matrix& z, const Matrix& z_hat, LocalLossKind kind);

/// Argmax with ties broken toward the lowest class index.
int predict(const RowVec& y_hat);

struct EvalResult {
    double mean_loss;     // mean global cross-entropy
    double accuracy_pct;  // percentage in [0, 100]
};

EvalResult evaluate(const RnnParams& params, std::span<const SequenceSample> dataset);

/// Fraction of samples with argmax(y_hat) == label, as a percentage.
double accuracy(const RnnParams& params, std::span<const SequenceSample> dataset);

}  // namespace lra
