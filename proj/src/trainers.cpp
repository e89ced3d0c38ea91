#include "lra/trainers.hpp"

#include <cmath>

namespace lra {
namespace {

constexpr double kTinyNorm = 1e-300;

Eigen::ArrayXd row_norms(const Matrix& m) { return m.rowwise().norm().array(); }

Matrix scale_rows(const Matrix& m, const Eigen::ArrayXd& s) {
    return (m.array().colwise() * s).matrix();
}

Eigen::ArrayXd clip_scales(const Eigen::ArrayXd& norms, double c, bool forced) {
    Eigen::ArrayXd s(norms.size());
    for (Eigen::Index i = 0; i < norms.size(); ++i) {
        s(i) = norm_clip_scale(norms(i), c, forced);
    }
    return s;
}

Matrix normalize_rows(const Matrix& delta, double c, bool forced) {
    return scale_rows(delta, clip_scales(row_norms(delta), c, forced));
}

double batch_mean_loss(const BatchTrace& trace, std::span<const SequenceSample> batch) {
    double sum = 0.0;
    for (Eigen::Index i = 0; i < trace.y_hat.rows(); ++i) {
        sum += global_loss(trace.y_hat.row(i), batch[static_cast<std::size_t>(i)].label);
    }
    return sum / static_cast<double>(trace.y_hat.rows());
}

// Per-sample pieces of Omega = (r - 1)^2 for an error signal u arriving at
// the later step of a transition whose earlier activation is z_prev:
// v = (u W_hh) simga'(h_prev) elementwise, r = |v|/|u|. The W_hh derivative of
// one sample is coef * outer(u, v sigma'(h_prev)); the h_prev derivative runs
// through sigma'' since sigma'(h_prev) = 1 - z_prev^2.
struct OmegaBatch {
    Eigen::ArrayXd r;
    Eigen::ArrayXd coef;  // 2 (r - 1) / (|u| |v|), zero where degenerate
    Matrix vd;            // rows v * sigma'(h_prev)
    Matrix d_hprev;       // rows dOmega/dh_prev
};

OmegaBatch omega_batch(const Matrix& u, const Matrix& w_hh, const Matrix& z_prev) {
    const Matrix uw = u * w_hh;
    const Eigen::ArrayXXd d = tanh_deriv_from_act(z_prev.array());
    const Matrix v = (uw.array() * d).matrix();
    const Eigen::ArrayXd nu = row_norms(u);
    const Eigen::ArrayXd nv = row_norms(v);

    OmegaBatch ob;
    ob.r = Eigen::ArrayXd::Ones(u.rows());
    ob.coef = Eigen::ArrayXd::Zero(u.rows());
    for (Eigen::Index i = 0; i < u.rows(); ++i) {
        if (nu(i) < kTinyNorm) continue;  // vanished signal: neutral r = 1
        ob.r(i) = nv(i) / nu(i);
        if (nv(i) < kTinyNorm) continue;
        ob.coef(i) = 2.0 * (ob.r(i) - 1.0) / (nu(i) * nv(i));
    }
    ob.vd = (v.array() * d).matrix();
    ob.d_hprev = scale_rows(
        (v.array() * uw.array() * tanh_second_deriv_from_act(z_prev.array())).matrix(),
        ob.coef);
    return ob;
}

}  // namespace

const char* trainer_name(TrainerKind kind) {
    switch (kind) {
        case TrainerKind::Bptt: return "bptt";
        case TrainerKind::LraDiff: return "lra";
        case TrainerKind::LraDiffReg: return "lra-reg";
    }
    throw std::logic_error("trainer_name: bad kind");
}

TrainerKind trainer_from_name(const std::string& name) {
    if (name == "bptt") return TrainerKind::Bptt;
    if (name == "lra") return TrainerKind::LraDiff;
    if (name == "lra-reg") return TrainerKind::LraDiffReg;
    throw std::invalid_argument("unknown trainer: " + name);
}

void TrainConfig::validate_for_training() const {
    if (alpha <= 0.0) throw std::invalid_argument("alpha must be > 0");
    if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
    if (max_iters < 0) throw std::invalid_argument("max iterations must be >= 0");
    if (c0 < 0.0 || c1 < 0.0) throw std::invalid_argument("c0 and c1 must be >= 0");
    if (trainer != TrainerKind::Bptt) {
        if (gamma <= 0.0) throw std::invalid_argument("gamma must be > 0 for the LRA trainers");
        if (k_steps < 1) throw std::invalid_argument("K must be >= 1");
        if (lambda < 0.0) throw std::invalid_argument("lambda must be >= 0");
    }
}

Grads Grads::zero(const RnnParams& params) {
    Grads g;
    g.dw_xh = Matrix::Zero(params.w_xh.rows(), params.w_xh.cols());
    g.dw_hh = Matrix::Zero(params.w_hh.rows(), params.w_hh.cols());
    g.dw_hy = Matrix::Zero(params.w_hy.rows(), params.w_hy.cols());
    g.db_h = RowVec::Zero(params.b_h.size());
    g.db_y = RowVec::Zero(params.b_y.size());
    return g;
}

bool Grads::all_finite() const {
    return dw_xh.allFinite() && dw_hh.allFinite() && dw_hy.allFinite() &&
           db_h.allFinite() && db_y.allFinite();
}

OutputGrads output_layer_grads(const BatchTrace& trace, std::span<const SequenceSample> batch) {
    const Eigen::Index b = trace.y_hat.rows();
    if (static_cast<std::size_t>(b) != batch.size()) {
        throw std::invalid_argument("output_layer_grads: trace/batch size mismatch");
    }
    OutputGrads og;
    og.dlogits = trace.y_hat;
    for (Eigen::Index i = 0; i < b; ++i) {
        const int label = batch[static_cast<std::size_t>(i)].label;
        if (label < 0 || label >= og.dlogits.cols()) {
            throw std::invalid_argument("output_layer_grads: label out of range");
        }
        og.dlogits(i, label) -= 1.0;
    }
    const double inv_b = 1.0 / static_cast<double>(b);
    og.dw_hy = trace.z.back().transpose() * og.dlogits * inv_b;
    og.db_y = og.dlogits.colwise().sum() * inv_b;
    return og;
}

Grads bptt_gradients(const RnnParams& params, std::span<const SequenceSample> batch,
                     TrainStats* stats, double clip_c) {
    const BatchTrace trace = forward_batch(params, batch);
    const int t_max = trace.t_max();
    const Eigen::Index b = trace.y_hat.rows();
    const double inv_b = 1.0 / static_cast<double>(b);

    Grads g = Grads::zero(params);
    const OutputGrads og = output_layer_grads(trace, batch);
    g.dw_hy = og.dw_hy;
    g.db_y = og.db_y;

    if (stats) {
        stats->layers.assign(static_cast<std::size_t>(t_max), LayerStat{});
        stats->global_loss = batch_mean_loss(trace, batch);
    }

    // Per-sample error signals stay unscaled until the final 1/B so the
    // traced norms are batch means of per-sample quantities.
    Matrix dz = og.dlogits * params.w_hy.transpose();
    for (int t = t_max; t >= 0; --t) {
        const Matrix& zt = trace.z[static_cast<std::size_t>(t)];
        const Matrix dh = (dz.array() * tanh_deriv_from_act(zt.array())).matrix();
        if (t >= 1) {
            const Matrix& zprev = trace.z[static_cast<std::size_t>(t - 1)];
            g.dw_hh.noalias() += zprev.transpose() * dh;
            if (stats) {
                const Eigen::ArrayXd dn = row_norms(dh);
                LayerStat& st = stats->layers[static_cast<std::size_t>(t - 1)];
                st.t = t;
                st.delta_h_norm = dn.mean();
                st.grad_wxh_norm = dn.mean();  // one-hot input rows
                st.grad_whh_norm = (row_norms(zprev) * dn).mean();
            }
        }
        g.db_h += dh.colwise().sum();
        for (Eigen::Index i = 0; i < b; ++i) {
            const int sym = batch[static_cast<std::size_t>(i)].symbols[static_cast<std::size_t>(t)];
            g.dw_xh.row(sym) += dh.row(i);
        }
        if (t >= 1) dz = dh * params.w_hh.transpose();
    }
    g.dw_hh *= inv_b;
    g.dw_xh *= inv_b;
    g.db_h *= inv_b;
    if (!g.all_finite()) throw TrainerError("bptt_gradients: non-finite gradient", 0);

    if (clip_c > 0.0) {
        const double total =
            std::sqrt(g.dw_xh.squaredNorm() + g.dw_hh.squaredNorm() + g.dw_hy.squaredNorm() +
                      g.db_h.squaredNorm() + g.db_y.squaredNorm());
        const double s = norm_clip_scale(total, clip_c, false);
        g.dw_xh *= s;
        g.dw_hh *= s;
        g.dw_hy *= s;
        g.db_h *= s;
        g.db_y *= s;
    }
    return g;
}

Matrix refine_output_target(const Matrix& h_tmax, const Matrix& w_hy, const RowVec& b_y,
                            const std::vector<int>& labels, const TrainConfig& cfg,
                            Eigen::ArrayXd* last_delta_norms) {
    if (cfg.k_steps < 1) throw std::invalid_argument("refine_output_target: K must be >= 1");
    if (static_cast<Eigen::Index>(labels.size()) != h_tmax.rows()) {
        throw std::invalid_argument("refine_output_target: label count mismatch");
    }
    Matrix h_bar = h_tmax;
    for (int k = 0; k < cfg.k_steps; ++k) {
        const Matrix z_bar = tanh_act(h_bar);
        Matrix logits = z_bar * w_hy;
        logits.rowwise() += b_y;
        Matrix dlog = softmax_rows(logits);
        for (Eigen::Index i = 0; i < dlog.rows(); ++i) {
            const int label = labels[static_cast<std::size_t>(i)];
            if (label < 0 || label >= dlog.cols()) {
                throw std::invalid_argument("refine_output_target: label out of range");
            }
            dlog(i, label) -= 1.0;
        }
        Matrix delta =
            ((dlog * w_hy.transpose()).array() * tanh_deriv_from_act(z_bar.array())).matrix();
        if (cfg.forced_norm) delta = normalize_rows(delta, cfg.c1, true);
        if (last_delta_norms && k == cfg.k_steps - 1) *last_delta_norms = row_norms(delta);
        h_bar -= cfg.gamma * delta;
    }
    return h_bar;
}

Matrix refine_step_target(const Matrix& h_prev_start, const Matrix& xw_pre_t,
                          const Matrix& w_hh, const Matrix& z_obj, const TrainConfig& cfg,
                          Eigen::ArrayXd* last_delta_norms) {
    if (cfg.k_steps < 1) throw std::invalid_argument("refine_step_target: K must be >= 1");
    const bool reg = cfg.trainer == TrainerKind::LraDiffReg && cfg.lambda != 0.0;
    Matrix h_bar = h_prev_start;
    for (int k = 0; k < cfg.k_steps; ++k) {
        const Matrix z_bar = tanh_act(h_bar);
        const Matrix h_t = step_preact(z_bar, w_hh, xw_pre_t);
        const Matrix z_t = tanh_act(h_t);
        const Matrix dldz = local_loss_grad_rows(z_t, z_obj, cfg.local_loss);
        const Matrix u = (dldz.array() * tanh_deriv_from_act(z_t.array())).matrix();
        Matrix delta =
            ((u * w_hh.transpose()).array() * tanh_deriv_from_act(z_bar.array())).matrix();
        if (reg) delta += cfg.lambda * omega_batch(u, w_hh, z_bar).d_hprev;
        delta = normalize_rows(delta, cfg.c1, cfg.forced_norm);
        if (last_delta_norms && k == cfg.k_steps - 1) *last_delta_norms = row_norms(delta);
        h_bar -= cfg.gamma * delta;
    }
    return h_bar;
}

Grads lra_diff_gradients(const RnnParams& params, std::span<const SequenceSample> batch,
                         const TrainConfig& cfg, TrainStats* stats) {
    if (cfg.trainer == TrainerKind::Bptt) {
        throw std::invalid_argument("lra_diff_gradients: config selects BPTT");
    }
    if (cfg.k_steps < 1) throw std::invalid_argument("lra_diff_gradients: K must be >= 1");

    const BatchTrace trace = forward_batch(params, batch);
    const int t_max = trace.t_max();
    const Eigen::Index b = trace.y_hat.rows();
    const double inv_b = 1.0 / static_cast<double>(b);
    const bool reg = cfg.trainer == TrainerKind::LraDiffReg && cfg.lambda != 0.0;

    Grads g = Grads::zero(params);
    const OutputGrads og = output_layer_grads(trace, batch);
    g.dw_hy = og.dw_hy;
    g.db_y = og.db_y;

    std::vector<int> labels(static_cast<std::size_t>(b));
    for (Eigen::Index i = 0; i < b; ++i) labels[static_cast<std::size_t>(i)] = batch[static_cast<std::size_t>(i)].label;

    if (stats) {
        stats->layers.assign(static_cast<std::size_t>(t_max), LayerStat{});
        for (int t = 1; t <= t_max; ++t) stats->layers[static_cast<std::size_t>(t - 1)].t = t;
        stats->global_loss = batch_mean_loss(trace, batch);
    }

    Eigen::ArrayXd delta_norms;
    Matrix h_ref = refine_output_target(trace.h.back(), params.w_hy, params.b_y, labels, cfg,
                                        stats ? &delta_norms : nullptr);
    if (!h_ref.allFinite()) {
        throw TrainerError("lra_diff_gradients: non-finite target at time step " +
                               std::to_string(t_max), t_max);
    }
    if (stats) stats->layers[static_cast<std::size_t>(t_max - 1)].delta_h_norm = delta_norms.mean();
    Matrix z_hat = tanh_act(h_ref);  // target for the step about to be processed

    for (int t = t_max; t >= 1; --t) {
        const Matrix& zt = trace.z[static_cast<std::size_t>(t)];
        const Matrix& zprev = trace.z[static_cast<std::size_t>(t - 1)];

        // Frozen-target gradients of L(z_t, zhat_t) for W_hh, b_h, W_xh.
        const Matrix dldz = local_loss_grad_rows(zt, z_hat, cfg.local_loss);
        const Matrix u = (dldz.array() * tanh_deriv_from_act(zt.array())).matrix();
        const Eigen::ArrayXd nu = row_norms(u);
        const Eigen::ArrayXd nzprev = row_norms(zprev);

        LayerStat* st = stats ? &stats->layers[static_cast<std::size_t>(t - 1)] : nullptr;
        if (st) st->local_loss = local_loss_rows(zt, z_hat, cfg.local_loss).mean();

        if (!reg) {
            // Per-sample gradient norms without materializing the outer
            // products: |outer(a, b)|_F = |a| |b|.
            const Eigen::ArrayXd whh_norms = nzprev * nu;
            const Eigen::ArrayXd s_whh = clip_scales(whh_norms, cfg.c0, cfg.forced_norm);
            g.dw_hh.noalias() += scale_rows(zprev, s_whh).transpose() * u;

            const Eigen::ArrayXd s_vec = clip_scales(nu, cfg.c0, cfg.forced_norm);
            g.db_h += scale_rows(u, s_vec).colwise().sum();
            for (Eigen::Index i = 0; i < b; ++i) {
                const int sym = batch[static_cast<std::size_t>(i)].symbols[static_cast<std::size_t>(t)];
                g.dw_xh.row(sym) += s_vec(i) * u.row(i);
            }
            if (st) {
                st->grad_whh_norm = (whh_norms * s_whh).mean();
                st->grad_wxh_norm = (nu * s_vec).mean();
            }
        } else {
            const OmegaBatch ob = omega_batch(u, params.w_hh, zprev);
            const Eigen::ArrayXd a2 = cfg.lambda * ob.coef;  // scale of outer(u, vd)
            const Eigen::ArrayXd nvd = row_norms(ob.vd);
            const Eigen::ArrayXd dot_zu = (zprev.array() * u.array()).rowwise().sum();
            const Eigen::ArrayXd dot_uvd = (u.array() * ob.vd.array()).rowwise().sum();
            // |outer(zprev, u) + a2 outer(u, vd)|_F^2 expanded analytically.
            const Eigen::ArrayXd whh_norms =
                ((nzprev * nu).square() + (a2 * nu * nvd).square() +
                 2.0 * a2 * dot_zu * dot_uvd)
                    .max(0.0)
                    .sqrt();
            const Eigen::ArrayXd s_whh = clip_scales(whh_norms, cfg.c0, cfg.forced_norm);
            g.dw_hh.noalias() += scale_rows(zprev, s_whh).transpose() * u;
            g.dw_hh.noalias() += scale_rows(u, s_whh * a2).transpose() * ob.vd;

            const Matrix bh_rows = u + cfg.lambda * ob.d_hprev;
            g.db_h += scale_rows(bh_rows, clip_scales(row_norms(bh_rows), cfg.c0, cfg.forced_norm))
                          .colwise()
                          .sum();

            // The W_xh gradient scatters u at this step's symbol; its Omega
            // term chains through h_prev and scatters at the previous symbol.
            const Eigen::ArrayXd nw = row_norms(ob.d_hprev);
            const Eigen::ArrayXd dot_uw = (u.array() * ob.d_hprev.array()).rowwise().sum();
            double wxh_norm_sum = 0.0;
            for (Eigen::Index i = 0; i < b; ++i) {
                const auto& symbols = batch[static_cast<std::size_t>(i)].symbols;
                const int sym_t = symbols[static_cast<std::size_t>(t)];
                const int sym_p = symbols[static_cast<std::size_t>(t - 1)];
                double sq = nu(i) * nu(i) + cfg.lambda * cfg.lambda * nw(i) * nw(i);
                if (sym_t == sym_p) sq += 2.0 * cfg.lambda * dot_uw(i);
                const double norm = std::sqrt(std::max(sq, 0.0));
                const double s = norm_clip_scale(norm, cfg.c0, cfg.forced_norm);
                g.dw_xh.row(sym_t) += s * u.row(i);
                g.dw_xh.row(sym_p) += (s * cfg.lambda) * ob.d_hprev.row(i);
                wxh_norm_sum += s * norm;
            }
            if (st) {
                st->grad_whh_norm = (whh_norms * s_whh).mean();
                st->grad_wxh_norm = wxh_norm_sum * inv_b;
            }
        }

        // Refine the upstream target against this step's target.
        const Matrix h_prev_ref =
            refine_step_target(trace.h[static_cast<std::size_t>(t - 1)],
                               trace.xw_pre[static_cast<std::size_t>(t)], params.w_hh, z_hat,
                               cfg, (st && t >= 2) ? &delta_norms : nullptr);
        if (!h_prev_ref.allFinite()) {
            throw TrainerError("lra_diff_gradients: non-finite target at time step " +
                                   std::to_string(t - 1), t - 1);
        }
        if (st && t >= 2) {
            stats->layers[static_cast<std::size_t>(t - 2)].delta_h_norm = delta_norms.mean();
        }
        z_hat = tanh_act(h_prev_ref);
    }

    g.dw_hh *= inv_b;
    g.dw_xh *= inv_b;
    g.db_h *= inv_b;
    if (!g.all_finite()) throw TrainerError("lra_diff_gradients: non-finite gradient", 0);
    return g;
}

StepLocalGrads local_step_grads(const RnnParams& params, const RowVec& z_prev, int symbol,
                                const RowVec& z_hat, LocalLossKind kind) {
    if (symbol < 0 || symbol >= params.w_xh.rows()) {
        throw std::invalid_argument("local_step_grads: symbol out of range");
    }
    RowVec h = z_prev * params.w_hh + params.w_xh.row(symbol) + params.b_h;
    const RowVec z = tanh_act(h);
    const RowVec dldz = local_loss_grad(z, z_hat, kind);
    const RowVec u = (dldz.array() * tanh_deriv_from_act(z.array())).matrix();
    StepLocalGrads out;
    out.dw_hh = z_prev.transpose() * u;
    out.dw_xh = Matrix::Zero(params.w_xh.rows(), params.w_xh.cols());
    out.dw_xh.row(symbol) = u;
    out.db_h = u;
    out.loss = local_loss(z, z_hat, kind);
    return out;
}

double omega_ratio(const RowVec& grad_l_hnext, const Matrix& w_hh, const RowVec& h_prev) {
    return omega_batch(Matrix(grad_l_hnext), w_hh, Matrix(tanh_act(h_prev))).r(0);
}

OmegaGrads omega_grads(const RowVec& grad_l_hnext, const Matrix& w_hh, const RowVec& h_prev) {
    const OmegaBatch ob = omega_batch(Matrix(grad_l_hnext), w_hh, Matrix(tanh_act(h_prev)));
    OmegaGrads out;
    out.r = ob.r(0);
    out.d_whh = ob.coef(0) * (grad_l_hnext.transpose() * ob.vd.row(0));
    out.d_hprev = ob.d_hprev.row(0);
    return out;
}

Matrix regularize(const Matrix& grad_a, const Matrix& omega_grad_a, double lambda,
                  double c, bool forced) {
    if (lambda == 0.0) return normalize(grad_a, c, forced);
    return normalize((grad_a + lambda * omega_grad_a).eval(), c, forced);
}

RowVec regularize(const RowVec& grad_a, const RowVec& omega_grad_a, double lambda,
                  double c, bool forced) {
    if (lambda == 0.0) return normalize(grad_a, c, forced);
    return normalize((grad_a + lambda * omega_grad_a).eval(), c, forced);
}

RnnParams sgd_step(const RnnParams& params, const Grads& grads, double alpha) {
    if (alpha <= 0.0) throw std::invalid_argument("sgd_step: alpha must be > 0");
    RnnParams out;
    out.w_xh = params.w_xh - alpha * grads.dw_xh;
    out.w_hh = params.w_hh - alpha * grads.dw_hh;
    out.w_hy = params.w_hy - alpha * grads.dw_hy;
    out.b_h = params.b_h - alpha * grads.db_h;
    out.b_y = params.b_y - alpha * grads.db_y;
    if (!out.all_finite()) throw std::runtime_error("sgd_step: non-finite update");
    return out;
}

}  // namespace lra
