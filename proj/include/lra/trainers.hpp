#pragma once

// The three training algorithms: BPTT, target-alignment (LraDiff), and its
// gradient-direction-regularized variant (LraDiffReg). Gradients are batch
// means of per-sample quantities; normalization constants apply per sample,
// lifting the single-sample algorithm to batches without changing it.

#include "lra/model.hpp"

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lra {

enum class TrainerKind { Bptt, LraDiff, LraDiffReg };

const char* trainer_name(TrainerKind kind);
TrainerKind trainer_from_name(const std::string& name);

struct TrainConfig {
    TrainerKind trainer = TrainerKind::LraDiff;
    double alpha = 0.01;   // SGD learning rate
    double gamma = 0.01;   // target adjustment step
    int k_steps = 10;      // inner-loop iterations K
    double c0 = 1.0;       // weight-gradient norm constant
    double c1 = 1.0;       // target-step norm constant
    double lambda = 0.1;   // regularization coefficient, LraDiffReg only
    LocalLossKind local_loss = LocalLossKind::Mse;
    bool forced_norm = false;  // rescale unconditionally, dropping the >= c check
    int batch_size = 20;
    long max_iters = 100000;
    std::uint64_t seed = 1;

    /// Constraints a training run requires (alpha > 0, K >= 1, gamma > 0 for
    /// the LRA trainers, ...). The gradient operations themselves stay
    /// callable with degenerate values like gamma = 0.
    void validate_for_training() const;
};

struct Grads {
    Matrix dw_xh, dw_hh, dw_hy;
    RowVec db_h, db_y;

    static Grads zero(const RnnParams& params);
    bool all_finite() const;
};

/// Per-time-step signals for the gradient-flow diagnostics. Norms are batch
/// means of per-sample Euclidean/Frobenius norms, taken after normalization,
/// so they are directly comparable to c0/c1.
struct LayerStat {
    int t = 0;
    double local_loss = 0.0;
    double delta_h_norm = 0.0;
    double grad_whh_norm = 0.0;
    double grad_wxh_norm = 0.0;
};

struct TrainStats {
    std::vector<LayerStat> layers;  // ascending t = 1..t_max
    double global_loss = 0.0;       // batch-mean cross-entropy at the forward pass
};

/// Thrown when a trainer meets a non-finite intermediate; names the time step.
class TrainerError : public std::runtime_error {
public:
    TrainerError(const std::string& what, int time_step)
        : std::runtime_error(what), time_step_(time_step) {}
    int time_step() const { return time_step_; }

private:
    int time_step_;
};

/// Output-layer gradients of the batch-mean cross-entropy: dw_hy and db_y are
/// batch means; dlogits keeps the unscaled per-sample rows y_hat - onehot(y).
/// Every trainer goes through this one function, so two trainers handed the
/// same forward trace produce bitwise-identical output-layer gradients.
struct OutputGrads {
    Matrix dw_hy;
    RowVec db_y;
    Matrix dlogits;
};
OutputGrads output_layer_grads(const BatchTrace& trace, std::span<const SequenceSample> batch);

/// Exact reverse-mode gradient of the batch-mean cross-entropy over the
/// unrolled recurrence. clip_c > 0 clips the total gradient norm (all five
/// blocks concatenated) through the same normalize rule.
Grads bptt_gradients(const RnnParams& params, std::span<const SequenceSample> batch,
                     TrainStats* stats = nullptr, double clip_c = 0.0);

/// The target-alignment gradient computation, in five phases per batch:
/// forward pass; output-layer gradients; K-step refinement of the final
/// target; backward sweep with per-step frozen-target weight gradients
/// (normalized by c0) and K-step inner refinement of the upstream target
/// (steps normalized by c1); per-step gradients summed over t. The inner loop
/// does gradient descent on the step's local loss as a function of the
/// upstream pre-activation, against the target handed down from downstream,
/// re-propagating through the transition each iteration. LraDiffReg swaps
/// every normalize for regularize.
Grads lra_diff_gradients(const RnnParams& params, std::span<const SequenceSample> batch,
                         const TrainConfig& cfg, TrainStats* stats = nullptr);

/// K-step descent of the global loss w.r.t. the final pre-activation, from
/// h_tmax: each iteration recomputes y_hat from the current target iterate
/// and steps by gamma. Normalization applies only under forced_norm (the
/// plain algorithm leaves this delta unnormalized). Returns the refined
/// pre-activation target; last_delta_norms receives the final iteration's
/// per-sample step norms (after normalization when forced).
Matrix refine_output_target(const Matrix& h_tmax, const Matrix& w_hy, const RowVec& b_y,
                            const std::vector<int>& labels, const TrainConfig& cfg,
                            Eigen::ArrayXd* last_delta_norms = nullptr);

/// K-step descent of L(tanh(step(tanh(h_bar))), z_obj) w.r.t. h_bar, starting
/// from the forward pre-activation of the upstream step; steps are normalized
/// by c1 (regularize under LraDiffReg, which adds the lambda * dOmega/dh_prev
/// boost before normalizing). Returns the refined upstream pre-activation.
Matrix refine_step_target(const Matrix& h_prev_start, const Matrix& xw_pre_t,
                          const Matrix& w_hh, const Matrix& z_obj, const TrainConfig& cfg,
                          Eigen::ArrayXd* last_delta_norms = nullptr);

/// Gradients of L(tanh(z_prev W_hh + x W_xh + b_h), z_hat) w.r.t. the three
/// upstream parameter blocks, with z_prev and the target z_hat held fixed —
/// the frozen-target per-step gradients of the backward sweep, before
/// normalization. x is the one-hot input with the given symbol index.
struct StepLocalGrads {
    Matrix dw_hh;
    Matrix dw_xh;
    RowVec db_h;
    double loss = 0.0;
};
StepLocalGrads local_step_grads(const RnnParams& params, const RowVec& z_prev, int symbol,
                                const RowVec& z_hat, LocalLossKind kind);

/// r = ||u W_hh diag(sigma'(h_prev))|| / ||u|| for the transported error
/// signal u; the regularizer value is (r - 1)^2. A vanished error signal
/// (||u|| < 1e-300) returns the neutral r = 1: it carries no direction to
/// regularize.
double omega_ratio(const RowVec& grad_l_hnext, const Matrix& w_hh, const RowVec& h_prev);

/// (r - 1)^2 differentiated w.r.t. W_hh and, through sigma', w.r.t. h_prev.
/// The h_prev gradient is what boosts the target steps; chained through the
/// input map it also yields the W_xh and b_h regularization terms.
struct OmegaGrads {
    double r = 1.0;
    Matrix d_whh;
    RowVec d_hprev;
};
OmegaGrads omega_grads(const RowVec& grad_l_hnext, const Matrix& w_hh, const RowVec& h_prev);

/// grad_a + lambda * omega_grad_a, then normalize — normalization is
/// mandatory here because the addition can push the norm past 1. lambda = 0
/// reduces to plain normalize.
Matrix regularize(const Matrix& grad_a, const Matrix& omega_grad_a, double lambda,
                  double c, bool forced = false);
RowVec regularize(const RowVec& grad_a, const RowVec& omega_grad_a, double lambda,
                  double c, bool forced = false);

/// theta <- theta - alpha * grad for all five arrays; pure.
RnnParams sgd_step(const RnnParams& params, const Grads& grads, double alpha);

}  // namespace lra
