#include "doctest.h"

#include "lra/tasks.hpp"
#include "lra/trainers.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

using namespace lra;

namespace {

double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-4});
}

RnnParams random_params(int n, int m, int k, Rng& rng) {
    RnnParams p = RnnParams::init(n, m, k, rng);
    for (int i = 0; i < m; ++i) p.b_h(i) = 0.2 * rng.next_normal();
    for (int i = 0; i < k; ++i) p.b_y(i) = 0.2 * rng.next_normal();
    return p;
}

std::vector<SequenceSample> random_batch(int n, int k, int seq_len, int count, Rng& rng) {
    std::vector<SequenceSample> batch;
    for (int i = 0; i < count; ++i) {
        SequenceSample s;
        for (int t = 0; t < seq_len; ++t) {
            s.symbols.push_back(static_cast<int>(rng.next_below(static_cast<std::uint64_t>(n))));
        }
        s.label = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(k)));
        batch.push_back(s);
    }
    return batch;
}

double batch_global_loss(const RnnParams& p, const std::vector<SequenceSample>& batch) {
    const BatchTrace trace = forward_batch(p, batch);
    double sum = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        sum += global_loss(trace.y_hat.row(i), batch[i].label);
    }
    return sum / static_cast<double>(batch.size());
}

// Central finite differences of `f` w.r.t. every entry of the matrix the
// accessor points at inside a copy of `p`.
Matrix fd_matrix(const RnnParams& p, const std::vector<SequenceSample>& batch,
                 const std::function<Matrix&(RnnParams&)>& member, double eps = 1e-5) {
    RnnParams work = p;
    Matrix& target = member(work);
    Matrix out(target.rows(), target.cols());
    for (int i = 0; i < target.rows(); ++i) {
        for (int j = 0; j < target.cols(); ++j) {
            const double save = target(i, j);
            target(i, j) = save + eps;
            const double up = batch_global_loss(work, batch);
            target(i, j) = save - eps;
            const double dn = batch_global_loss(work, batch);
            target(i, j) = save;
            out(i, j) = (up - dn) / (2 * eps);
        }
    }
    return out;
}

RowVec fd_rowvec(const RnnParams& p, const std::vector<SequenceSample>& batch,
                 const std::function<RowVec&(RnnParams&)>& member, double eps = 1e-5) {
    RnnParams work = p;
    RowVec& target = member(work);
    RowVec out(target.size());
    for (int j = 0; j < target.size(); ++j) {
        const double save = target(j);
        target(j) = save + eps;
        const double up = batch_global_loss(work, batch);
        target(j) = save - eps;
        const double dn = batch_global_loss(work, batch);
        target(j) = save;
        out(j) = (up - dn) / (2 * eps);
    }
    return out;
}

void check_close(const Matrix& analytic, const Matrix& numeric, double tol = 1e-5) {
    REQUIRE(analytic.rows() == numeric.rows());
    REQUIRE(analytic.cols() == numeric.cols());
    double worst = 0.0;
    for (int i = 0; i < analytic.rows(); ++i) {
        for (int j = 0; j < analytic.cols(); ++j) {
            worst = std::max(worst, rel_err(analytic(i, j), numeric(i, j)));
        }
    }
    CHECK(worst < tol);
}

void check_close(const RowVec& analytic, const RowVec& numeric, double tol = 1e-5) {
    REQUIRE(analytic.size() == numeric.size());
    double worst = 0.0;
    for (int j = 0; j < analytic.size(); ++j) {
        worst = std::max(worst, rel_err(analytic(j), numeric(j)));
    }
    CHECK(worst < tol);
}

bool bitwise_equal(const Matrix& a, const Matrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
}

}  // namespace

TEST_CASE("bptt gradients match central finite differences") {
    Rng rng(101);
    for (int instance = 0; instance < 20; ++instance) {
        const int n = 2 + static_cast<int>(rng.next_below(3));
        const int m = 2 + static_cast<int>(rng.next_below(4));
        const int k = 2 + static_cast<int>(rng.next_below(2));
        const int seq_len = 2 + static_cast<int>(rng.next_below(3));
        const RnnParams p = random_params(n, m, k, rng);
        const auto batch = random_batch(n, k, seq_len, 3, rng);
        const Grads g = bptt_gradients(p, batch);
        check_close(g.dw_hh, fd_matrix(p, batch, [](RnnParams& q) -> Matrix& { return q.w_hh; }));
        check_close(g.dw_xh, fd_matrix(p, batch, [](RnnParams& q) -> Matrix& { return q.w_xh; }));
        check_close(g.dw_hy, fd_matrix(p, batch, [](RnnParams& q) -> Matrix& { return q.w_hy; }));
        check_close(g.db_h, fd_rowvec(p, batch, [](RnnParams& q) -> RowVec& { return q.b_h; }));
        check_close(g.db_y, fd_rowvec(p, batch, [](RnnParams& q) -> RowVec& { return q.b_y; }));
    }
}

TEST_CASE("output layer gradients match finite differences and p minus onehot") {
    Rng rng(103);
    const RnnParams p = random_params(3, 4, 3, rng);
    const auto batch = random_batch(3, 3, 3, 4, rng);
    const BatchTrace trace = forward_batch(p, batch);
    const OutputGrads og = output_layer_grads(trace, batch);
    check_close(og.dw_hy, fd_matrix(p, batch, [](RnnParams& q) -> Matrix& { return q.w_hy; }));
    check_close(og.db_y, fd_rowvec(p, batch, [](RnnParams& q) -> RowVec& { return q.b_y; }));
    for (std::size_t i = 0; i < batch.size(); ++i) {
        RowVec want = trace.y_hat.row(i);
        want(batch[i].label) -= 1.0;
        CHECK((RowVec(og.dlogits.row(i)) - want).cwiseAbs().maxCoeff() < 1e-14);
    }
}

TEST_CASE("frozen-target local gradients match finite differences") {
    Rng rng(107);
    for (LocalLossKind kind : {LocalLossKind::Mse, LocalLossKind::LogPenalty}) {
        for (int instance = 0; instance < 10; ++instance) {
            const int n = 3, m = 4;
            RnnParams p = random_params(n, m, 2, rng);
            RowVec z_prev(m), z_hat(m);
            for (int j = 0; j < m; ++j) {
                z_prev(j) = std::tanh(rng.next_normal());
                z_hat(j) = std::tanh(rng.next_normal());
            }
            const int symbol = static_cast<int>(rng.next_below(n));
            const StepLocalGrads g = local_step_grads(p, z_prev, symbol, z_hat, kind);

            const auto loss_at = [&](const RnnParams& q) {
                const RowVec x = RowVec::Unit(n, symbol);
                const RowVec h = z_prev * q.w_hh + x * q.w_xh + q.b_h;
                return local_loss(tanh_act(h), z_hat, kind);
            };
            const double eps = 1e-6;
            RnnParams work = p;
            Matrix fd_whh(m, m);
            for (int i = 0; i < m; ++i) {
                for (int j = 0; j < m; ++j) {
                    const double save = work.w_hh(i, j);
                    work.w_hh(i, j) = save + eps;
                    const double up = loss_at(work);
                    work.w_hh(i, j) = save - eps;
                    const double dn = loss_at(work);
                    work.w_hh(i, j) = save;
                    fd_whh(i, j) = (up - dn) / (2 * eps);
                }
            }
            check_close(g.dw_hh, fd_whh);

            Matrix fd_wxh(n, m);
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < m; ++j) {
                    const double save = work.w_xh(i, j);
                    work.w_xh(i, j) = save + eps;
                    const double up = loss_at(work);
                    work.w_xh(i, j) = save - eps;
                    const double dn = loss_at(work);
                    work.w_xh(i, j) = save;
                    fd_wxh(i, j) = (up - dn) / (2 * eps);
                }
            }
            check_close(g.dw_xh, fd_wxh);
            // Rows of symbols that never appear carry exactly zero.
            for (int i = 0; i < n; ++i) {
                if (i != symbol) CHECK(g.dw_xh.row(i).cwiseAbs().maxCoeff() == 0.0);
            }

            RowVec fd_bh(m);
            for (int j = 0; j < m; ++j) {
                const double save = work.b_h(j);
                work.b_h(j) = save + eps;
                const double up = loss_at(work);
                work.b_h(j) = save - eps;
                const double dn = loss_at(work);
                work.b_h(j) = save;
                fd_bh(j) = (up - dn) / (2 * eps);
            }
            check_close(g.db_h, fd_bh);
            CHECK(g.loss == doctest::Approx(loss_at(p)).epsilon(1e-12));
        }
    }
}

TEST_CASE("omega ratio and gradients match finite differences") {
    Rng rng(109);
    const int m = 5;
    for (int instance = 0; instance < 10; ++instance) {
        Matrix w_hh(m, m);
        RowVec h_prev(m), u(m);
        for (int i = 0; i < m; ++i) {
            h_prev(i) = rng.next_normal();
            u(i) = rng.next_normal();
            for (int j = 0; j < m; ++j) w_hh(i, j) = rng.next_normal() / std::sqrt(m);
        }
        const OmegaGrads og = omega_grads(u, w_hh, h_prev);
        CHECK(og.r == doctest::Approx(omega_ratio(u, w_hh, h_prev)).epsilon(1e-14));

        const auto omega_at = [&](const Matrix& w, const RowVec& h) {
            const double r = omega_ratio(u, w, h);
            return (r - 1.0) * (r - 1.0);
        };
        const double eps = 1e-6;
        Matrix fd_w(m, m);
        Matrix w = w_hh;
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < m; ++j) {
                const double save = w(i, j);
                w(i, j) = save + eps;
                const double up = omega_at(w, h_prev);
                w(i, j) = save - eps;
                const double dn = omega_at(w, h_prev);
                w(i, j) = save;
                fd_w(i, j) = (up - dn) / (2 * eps);
            }
        }
        check_close(og.d_whh, fd_w);

        RowVec fd_h(m);
        RowVec h = h_prev;
        for (int j = 0; j < m; ++j) {
            const double save = h(j);
            h(j) = save + eps;
            const double up = omega_at(w_hh, h);
            h(j) = save - eps;
            const double dn = omega_at(w_hh, h);
            h(j) = save;
            fd_h(j) = (up - dn) / (2 * eps);
        }
        check_close(og.d_hprev, fd_h);
    }
}

TEST_CASE("omega with a vanished error signal is neutral") {
    Rng rng(113);
    const int m = 4;
    Matrix w_hh = Matrix::Identity(m, m);
    RowVec h_prev = RowVec::Zero(m);
    const RowVec u = RowVec::Zero(m);
    CHECK(omega_ratio(u, w_hh, h_prev) == 1.0);
    const OmegaGrads og = omega_grads(u, w_hh, h_prev);
    CHECK(og.d_whh.cwiseAbs().maxCoeff() == 0.0);
    CHECK(og.d_hprev.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("identity transition with zero preactivation has ratio one") {
    // sigma'(0) = 1 and an orthogonal transition preserve the norm exactly.
    const int m = 3;
    RowVec u(m);
    u << 0.3, -0.7, 0.2;
    CHECK(omega_ratio(u, Matrix::Identity(m, m), RowVec::Zero(m)) ==
          doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("gamma zero freezes every hidden gradient and keeps the output layer") {
    Rng rng(127);
    const RnnParams p = random_params(4, 5, 3, rng);
    const auto batch = random_batch(4, 3, 4, 3, rng);

    for (TrainerKind trainer : {TrainerKind::LraDiff, TrainerKind::LraDiffReg}) {
        TrainConfig cfg;
        cfg.trainer = trainer;
        cfg.gamma = 0.0;
        cfg.k_steps = 7;
        cfg.lambda = trainer == TrainerKind::LraDiffReg ? 0.3 : 0.0;
        const Grads lg = lra_diff_gradients(p, batch, cfg);
        const Grads bg = bptt_gradients(p, batch);
        CHECK(lg.dw_hh.cwiseAbs().maxCoeff() == 0.0);
        CHECK(lg.dw_xh.cwiseAbs().maxCoeff() == 0.0);
        CHECK(lg.db_h.cwiseAbs().maxCoeff() == 0.0);
        CHECK(bitwise_equal(lg.dw_hy, bg.dw_hy));
        CHECK((lg.db_y.array() == bg.db_y.array()).all());
    }
}

TEST_CASE("lambda zero makes regularize coincide with normalize") {
    Rng rng(131);
    Matrix g(3, 3), w(3, 3);
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            g(i, j) = rng.next_normal();
            w(i, j) = rng.next_normal();
        }
    }
    const Matrix a = regularize(g, w, 0.0, 0.5);
    const Matrix b = normalize(g, 0.5);
    CHECK(bitwise_equal(a, b));

    RowVec gv(3), wv(3);
    gv << 2.0, -1.0, 0.5;
    wv << 1.0, 1.0, 1.0;
    CHECK((regularize(gv, wv, 0.0, 1.0).array() == normalize(gv, 1.0).array()).all());
}

TEST_CASE("regularize adds the scaled omega gradient before normalizing") {
    Matrix g = Matrix::Zero(2, 2);
    g(0, 0) = 0.3;
    Matrix og = Matrix::Zero(2, 2);
    og(1, 1) = 1.0;
    const Matrix out = regularize(g, og, 0.5, 10.0);
    CHECK(out(0, 0) == doctest::Approx(0.3));
    CHECK(out(1, 1) == doctest::Approx(0.5));
    // Norm above c gets clipped after the addition.
    const Matrix clipped = regularize(g, og, 0.5, 0.1);
    CHECK(std::abs(clipped.norm() - 0.1) < 1e-12);
}

TEST_CASE("hidden gradients scale linearly as gamma tends to zero") {
    Rng rng(137);
    const RnnParams p = random_params(4, 5, 3, rng);
    const auto batch = random_batch(4, 3, 4, 3, rng);
    TrainConfig cfg;
    cfg.trainer = TrainerKind::LraDiff;
    cfg.k_steps = 5;
    std::vector<double> norms;
    for (double gamma : {1e-3, 1e-4, 1e-5}) {
        cfg.gamma = gamma;
        const Grads g = lra_diff_gradients(p, batch, cfg);
        norms.push_back(std::sqrt(g.dw_hh.squaredNorm() + g.dw_xh.squaredNorm() +
                                  g.db_h.squaredNorm()));
    }
    CHECK(norms[0] > 0.0);
    // Each 10x reduction in gamma shrinks the hidden gradients by roughly 10x.
    CHECK(norms[1] / norms[0] == doctest::Approx(0.1).epsilon(0.2));
    CHECK(norms[2] / norms[1] == doctest::Approx(0.1).epsilon(0.2));
}

TEST_CASE("output target refinement descends the global loss") {
    Rng rng(139);
    const int m = 6, k = 4, batch_size = 5;
    Matrix h(batch_size, m), w_hy(m, k);
    RowVec b_y = RowVec::Zero(k);
    std::vector<int> labels;
    for (int i = 0; i < batch_size; ++i) {
        labels.push_back(static_cast<int>(rng.next_below(k)));
        for (int j = 0; j < m; ++j) h(i, j) = rng.next_normal();
    }
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < k; ++j) w_hy(i, j) = rng.next_normal();
    }
    const auto mean_loss = [&](const Matrix& hh) {
        const Matrix logits = (tanh_act(hh) * w_hy).rowwise() + b_y;
        const Matrix probs = softmax_rows(logits);
        double sum = 0.0;
        for (int i = 0; i < batch_size; ++i) sum += global_loss(probs.row(i), labels[i]);
        return sum / batch_size;
    };

    TrainConfig cfg;
    cfg.gamma = 0.05;
    cfg.k_steps = 10;
    const Matrix refined = refine_output_target(h, w_hy, b_y, labels, cfg);
    CHECK(mean_loss(refined) < mean_loss(h));

    SUBCASE("K steps equal K chained single steps") {
        TrainConfig one = cfg;
        one.k_steps = 1;
        Matrix chained = h;
        for (int i = 0; i < cfg.k_steps; ++i) {
            chained = refine_output_target(chained, w_hy, b_y, labels, one);
        }
        CHECK(bitwise_equal(refined, chained));
    }
    SUBCASE("gamma zero returns the input bitwise") {
        TrainConfig frozen = cfg;
        frozen.gamma = 0.0;
        CHECK(bitwise_equal(refine_output_target(h, w_hy, b_y, labels, frozen), h));
    }
    SUBCASE("forced normalization pins the final step norms") {
        TrainConfig forced = cfg;
        forced.forced_norm = true;
        forced.c1 = 1.0;
        Eigen::ArrayXd norms;
        refine_output_target(h, w_hy, b_y, labels, forced, &norms);
        REQUIRE(norms.size() == batch_size);
        for (int i = 0; i < batch_size; ++i) CHECK(std::abs(norms(i) - 1.0) < 1e-9);
    }
}

TEST_CASE("step target refinement descends the frozen local loss") {
    Rng rng(149);
    const int m = 5, batch_size = 4;
    Matrix h_prev(batch_size, m), xw(batch_size, m), z_obj(batch_size, m), w_hh(m, m);
    for (int i = 0; i < batch_size; ++i) {
        for (int j = 0; j < m; ++j) {
            h_prev(i, j) = rng.next_normal();
            xw(i, j) = 0.5 * rng.next_normal();
            z_obj(i, j) = std::tanh(rng.next_normal());
        }
    }
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) w_hh(i, j) = rng.next_normal() / std::sqrt(m);
    }
    TrainConfig cfg;
    cfg.gamma = 0.05;
    cfg.k_steps = 8;
    cfg.c1 = 1.0;
    const auto objective = [&](const Matrix& hb) {
        const Matrix z_t = tanh_act(step_preact(tanh_act(hb), w_hh, xw));
        return local_loss_rows(z_t, z_obj, cfg.local_loss).mean();
    };
    const Matrix refined = refine_step_target(h_prev, xw, w_hh, z_obj, cfg);
    CHECK(objective(refined) < objective(h_prev));

    SUBCASE("K steps equal K chained single steps") {
        TrainConfig one = cfg;
        one.k_steps = 1;
        Matrix chained = h_prev;
        for (int i = 0; i < cfg.k_steps; ++i) {
            chained = refine_step_target(chained, xw, w_hh, z_obj, one);
        }
        CHECK(bitwise_equal(refined, chained));
    }
    SUBCASE("forced normalization pins the final step norms") {
        TrainConfig forced = cfg;
        forced.forced_norm = true;
        Eigen::ArrayXd norms;
        refine_step_target(h_prev, xw, w_hh, z_obj, forced, &norms);
        REQUIRE(norms.size() == batch_size);
        for (int i = 0; i < batch_size; ++i) CHECK(std::abs(norms(i) - 1.0) < 1e-9);
    }
}

TEST_CASE("batch gradients are the mean of single-sample gradients") {
    Rng rng(151);
    const RnnParams p = random_params(5, 4, 3, rng);
    const auto batch = random_batch(5, 3, 4, 3, rng);
    for (TrainerKind trainer : {TrainerKind::LraDiff, TrainerKind::LraDiffReg}) {
        TrainConfig cfg;
        cfg.trainer = trainer;
        cfg.gamma = 0.1;
        cfg.k_steps = 4;
        cfg.lambda = 0.2;
        const Grads whole = lra_diff_gradients(p, batch, cfg);
        Grads acc = Grads::zero(p);
        for (const auto& sample : batch) {
            const Grads gi = lra_diff_gradients(p, std::span(&sample, 1), cfg);
            acc.dw_xh += gi.dw_xh;
            acc.dw_hh += gi.dw_hh;
            acc.dw_hy += gi.dw_hy;
            acc.db_h += gi.db_h;
            acc.db_y += gi.db_y;
        }
        const double inv = 1.0 / static_cast<double>(batch.size());
        CHECK((whole.dw_hh - inv * acc.dw_hh).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((whole.dw_xh - inv * acc.dw_xh).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((whole.dw_hy - inv * acc.dw_hy).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((whole.db_h - inv * acc.db_h).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((whole.db_y - inv * acc.db_y).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("input rows receive gradients only where their symbols appear") {
    Rng rng(157);
    const int n = 6, m = 5, k = 2;
    const RnnParams p = random_params(n, m, k, rng);
    // Symbol 0 appears only at position 0; symbols 2..3 fill the rest.
    std::vector<SequenceSample> batch;
    for (int i = 0; i < 3; ++i) {
        SequenceSample s;
        s.symbols = {0, 2, 3, 2};
        s.label = i % 2;
        batch.push_back(s);
    }
    TrainConfig cfg;
    cfg.trainer = TrainerKind::LraDiff;
    cfg.gamma = 0.1;
    cfg.k_steps = 3;
    const Grads lg = lra_diff_gradients(p, batch, cfg);
    // The local sweep stops before the step that consumed position 0, so its
    // symbol row stays untouched; the recurrence-driven rows are live.
    CHECK(lg.dw_xh.row(0).cwiseAbs().maxCoeff() == 0.0);
    CHECK(lg.dw_xh.row(1).cwiseAbs().maxCoeff() == 0.0);
    CHECK(lg.dw_xh.row(2).cwiseAbs().maxCoeff() > 0.0);
    // BPTT reaches position 0 through the initial state.
    const Grads bg = bptt_gradients(p, batch);
    CHECK(bg.dw_xh.row(0).cwiseAbs().maxCoeff() > 0.0);
    // The regularized variant back-chains one extra position through the
    // transport term, reviving the first row as well.
    TrainConfig reg = cfg;
    reg.trainer = TrainerKind::LraDiffReg;
    reg.lambda = 0.5;
    const Grads rg = lra_diff_gradients(p, batch, reg);
    CHECK(rg.dw_xh.row(0).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("trainer stats describe every time step") {
    Rng rng(163);
    const RnnParams p = random_params(4, 5, 3, rng);
    const auto batch = random_batch(4, 3, 5, 3, rng);
    TrainConfig cfg;
    cfg.trainer = TrainerKind::LraDiff;
    cfg.gamma = 0.1;
    cfg.k_steps = 4;

    TrainStats stats;
    lra_diff_gradients(p, batch, cfg, &stats);
    REQUIRE(static_cast<int>(stats.layers.size()) == 4);  // t_max = seq_len - 1
    for (std::size_t i = 0; i < stats.layers.size(); ++i) {
        CHECK(stats.layers[i].t == static_cast<int>(i) + 1);
        CHECK(stats.layers[i].local_loss >= 0.0);
        CHECK(stats.layers[i].delta_h_norm >= 0.0);
    }
    CHECK(stats.global_loss == doctest::Approx(batch_global_loss(p, batch)).epsilon(1e-12));

    TrainStats bstats;
    bptt_gradients(p, batch, &bstats);
    REQUIRE(bstats.layers.size() == stats.layers.size());
    for (const auto& layer : bstats.layers) {
        CHECK(layer.local_loss == 0.0);
        CHECK(layer.delta_h_norm > 0.0);
    }
}

TEST_CASE("forced normalization pins the traced delta norms") {
    Rng rng(167);
    const RnnParams p = random_params(4, 5, 2, rng);
    const auto batch = random_batch(4, 2, 5, 3, rng);
    TrainConfig cfg;
    cfg.trainer = TrainerKind::LraDiff;
    cfg.gamma = 0.01;
    cfg.k_steps = 5;
    cfg.c1 = 1.0;
    cfg.forced_norm = true;
    TrainStats stats;
    lra_diff_gradients(p, batch, cfg, &stats);
    for (const auto& layer : stats.layers) {
        CHECK(std::abs(layer.delta_h_norm - 1.0) < 1e-9);
    }
}

TEST_CASE("bptt clip rescales the joint gradient norm") {
    Rng rng(173);
    const RnnParams p = random_params(4, 5, 3, rng);
    const auto batch = random_batch(4, 3, 4, 3, rng);
    const Grads raw = bptt_gradients(p, batch);
    const double raw_norm =
        std::sqrt(raw.dw_xh.squaredNorm() + raw.dw_hh.squaredNorm() + raw.dw_hy.squaredNorm() +
                  raw.db_h.squaredNorm() + raw.db_y.squaredNorm());
    REQUIRE(raw_norm > 0.01);
    const double c = raw_norm / 2.0;
    const Grads clipped = bptt_gradients(p, batch, nullptr, c);
    const double clipped_norm = std::sqrt(
        clipped.dw_xh.squaredNorm() + clipped.dw_hh.squaredNorm() +
        clipped.dw_hy.squaredNorm() + clipped.db_h.squaredNorm() + clipped.db_y.squaredNorm());
    CHECK(clipped_norm == doctest::Approx(c).epsilon(1e-12));
    // Direction preserved.
    CHECK((clipped.dw_hh * 2.0 - raw.dw_hh).cwiseAbs().maxCoeff() < 1e-12);
    // Clip above the raw norm is a no-op.
    const Grads loose = bptt_gradients(p, batch, nullptr, raw_norm * 10);
    CHECK(bitwise_equal(loose.dw_hh, raw.dw_hh));
}

TEST_CASE("trainers are deterministic") {
    Rng rng(179);
    const RnnParams p = random_params(4, 5, 3, rng);
    const auto batch = random_batch(4, 3, 4, 3, rng);
    TrainConfig cfg;
    cfg.trainer = TrainerKind::LraDiffReg;
    cfg.gamma = 0.1;
    cfg.k_steps = 4;
    cfg.lambda = 0.3;
    const Grads a = lra_diff_gradients(p, batch, cfg);
    const Grads b = lra_diff_gradients(p, batch, cfg);
    CHECK(bitwise_equal(a.dw_hh, b.dw_hh));
    CHECK(bitwise_equal(a.dw_xh, b.dw_xh));
    CHECK(bitwise_equal(a.dw_hy, b.dw_hy));
}

TEST_CASE("non-finite parameters raise a trainer error") {
    Rng rng(181);
    RnnParams p = random_params(4, 5, 3, rng);
    const auto batch = random_batch(4, 3, 4, 2, rng);
    p.w_hh(0, 0) = std::numeric_limits<double>::quiet_NaN();
    TrainConfig cfg;
    cfg.trainer = TrainerKind::LraDiff;
    CHECK_THROWS_AS(lra_diff_gradients(p, batch, cfg), TrainerError);
}

TEST_CASE("sgd_step applies the update and stays pure") {
    RnnParams p;
    p.w_xh = Matrix::Ones(2, 2);
    p.w_hh = Matrix::Ones(2, 2);
    p.w_hy = Matrix::Ones(2, 2);
    p.b_h = RowVec::Ones(2);
    p.b_y = RowVec::Ones(2);
    Grads g = Grads::zero(p);
    g.dw_hh = Matrix::Constant(2, 2, 2.0);
    g.db_y = RowVec::Constant(2, 4.0);

    const RnnParams next = sgd_step(p, g, 0.5);
    CHECK(next.w_hh(0, 0) == doctest::Approx(0.0));
    CHECK(next.b_y(0) == doctest::Approx(-1.0));
    CHECK(next.w_xh(0, 0) == doctest::Approx(1.0));
    CHECK(p.w_hh(0, 0) == 1.0);  // input untouched

    SUBCASE("two half steps approximate one full step") {
        const RnnParams full = sgd_step(p, g, 0.5);
        const RnnParams half = sgd_step(sgd_step(p, g, 0.25), g, 0.25);
        CHECK((full.w_hh - half.w_hh).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((full.b_y - half.b_y).cwiseAbs().maxCoeff() < 1e-12);
    }
    SUBCASE("alpha must be positive") {
        CHECK_THROWS_AS(sgd_step(p, g, 0.0), std::invalid_argument);
        CHECK_THROWS_AS(sgd_step(p, g, -1.0), std::invalid_argument);
    }
    SUBCASE("non-finite updates are rejected") {
        g.dw_hh(0, 0) = std::numeric_limits<double>::infinity();
        CHECK_THROWS_AS(sgd_step(p, g, 0.5), std::runtime_error);
    }
}

TEST_CASE("train config validation") {
    TrainConfig cfg;
    cfg.trainer = TrainerKind::LraDiff;
    CHECK_NOTHROW(cfg.validate_for_training());
    SUBCASE("alpha") {
        cfg.alpha = 0.0;
        CHECK_THROWS_AS(cfg.validate_for_training(), std::invalid_argument);
    }
    SUBCASE("gamma required for the target trainers") {
        cfg.gamma = 0.0;
        CHECK_THROWS_AS(cfg.validate_for_training(), std::invalid_argument);
        cfg.trainer = TrainerKind::Bptt;
        CHECK_NOTHROW(cfg.validate_for_training());
    }
    SUBCASE("k steps") {
        cfg.k_steps = 0;
        CHECK_THROWS_AS(cfg.validate_for_training(), std::invalid_argument);
    }
    SUBCASE("norm constants nonnegative") {
        cfg.c0 = -0.1;
        CHECK_THROWS_AS(cfg.validate_for_training(), std::invalid_argument);
    }
    SUBCASE("batch size") {
        cfg.batch_size = 0;
        CHECK_THROWS_AS(cfg.validate_for_training(), std::invalid_argument);
    }
}

TEST_CASE("trainer names round-trip") {
    for (TrainerKind kind : {TrainerKind::Bptt, TrainerKind::LraDiff, TrainerKind::LraDiffReg}) {
        CHECK(trainer_from_name(trainer_name(kind)) == kind);
    }
    CHECK(trainer_from_name("lra" ) == TrainerKind::LraDiff);
    CHECK_THROWS_AS(trainer_from_name("adam"), std::invalid_argument);
}
