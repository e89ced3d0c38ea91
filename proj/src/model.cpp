#include "lra/model.hpp"

#include <cmath>
#include <stdexcept>

namespace lra {
namespace {

constexpr double kLogEps = 1e-12;

Matrix gather_input_rows(const RnnParams& params,
                         std::span<const SequenceSample> batch, int t) {
    const Eigen::Index b = static_cast<Eigen::Index>(batch.size());
    Matrix out(b, params.w_xh.cols());
    for (Eigen::Index i = 0; i < b; ++i) {
        const int sym = batch[static_cast<std::size_t>(i)].symbols.at(static_cast<std::size_t>(t));
        if (sym < 0 || sym >= params.w_xh.rows()) {
            throw std::invalid_argument("forward: symbol " + std::to_string(sym) +
                                        " outside input dimension " +
                                        std::to_string(params.w_xh.rows()));
        }
        out.row(i) = params.w_xh.row(sym);
    }
    out.rowwise() += params.b_h;
    return out;
}

}  // namespace

void RnnParams::validate() const {
    const Eigen::Index n = w_xh.rows(), m = w_xh.cols(), k = w_hy.cols();
    if (n < 1 || m < 1 || k < 1 || w_hh.rows() != m || w_hh.cols() != m ||
        w_hy.rows() != m || b_h.size() != m || b_y.size() != k) {
        throw std::invalid_argument("RnnParams: inconsistent shapes");
    }
    if (!all_finite()) throw std::invalid_argument("RnnParams: non-finite entries");
}

bool RnnParams::all_finite() const {
    return w_xh.allFinite() && w_hh.allFinite() && w_hy.allFinite() &&
           b_h.allFinite() && b_y.allFinite();
}

RnnParams RnnParams::init(Eigen::Index n, Eigen::Index m, Eigen::Index k, Rng& rng) {
    RnnParams p;
    p.w_xh = orthogonal_init(n, m, rng);
    p.w_hh = orthogonal_init(m, m, rng);
    p.w_hy = orthogonal_init(m, k, rng);
    p.b_h = RowVec::Zero(m);
    p.b_y = RowVec::Zero(k);
    return p;
}

RowVec softmax(const RowVec& logits) {
    const double shift = logits.maxCoeff();
    RowVec e = (logits.array() - shift).exp().matrix();
    return e / e.sum();
}

Matrix softmax_rows(const Matrix& logits) {
    Eigen::ArrayXXd a = logits.array();
    a.colwise() -= logits.rowwise().maxCoeff().array();
    a = a.exp();
    a.colwise() /= a.rowwise().sum();
    return a.matrix();
}

BatchTrace forward_batch(const RnnParams& params, std::span<const SequenceSample> batch) {
    if (batch.empty()) throw std::invalid_argument("forward_batch: empty batch");
    const int seq_len = static_cast<int>(batch.front().symbols.size());
    if (seq_len < 2) throw std::invalid_argument("forward_batch: need at least 2 symbols");
    for (const auto& s : batch) {
        if (static_cast<int>(s.symbols.size()) != seq_len) {
            throw std::invalid_argument("forward_batch: ragged batch");
        }
    }
    const int t_max = seq_len - 1;
    BatchTrace trace;
    trace.xw_pre.reserve(static_cast<std::size_t>(seq_len));
    trace.h.reserve(static_cast<std::size_t>(seq_len));
    trace.z.reserve(static_cast<std::size_t>(seq_len));
    for (int t = 0; t <= t_max; ++t) {
        trace.xw_pre.push_back(gather_input_rows(params, batch, t));
    }
    trace.h.push_back(trace.xw_pre[0]);
    trace.z.push_back(tanh_act(trace.h[0]));
    for (int t = 1; t <= t_max; ++t) {
        trace.h.push_back(step_preact(trace.z.back(), params.w_hh,
                                      trace.xw_pre[static_cast<std::size_t>(t)]));
        trace.z.push_back(tanh_act(trace.h.back()));
    }
    Matrix logits = trace.z.back() * params.w_hy;
    logits.rowwise() += params.b_y;
    trace.y_hat = softmax_rows(logits);
    return trace;
}

ForwardTrace forward(const RnnParams& params, const SequenceSample& sample) {
    const BatchTrace bt = forward_batch(params, std::span<const SequenceSample>(&sample, 1));
    ForwardTrace out;
    out.h.reserve(bt.h.size());
    out.z.reserve(bt.z.size());
    for (const auto& h : bt.h) out.h.push_back(h.row(0));
    for (const auto& z : bt.z) out.z.push_back(z.row(0));
    out.y_hat = bt.y_hat.row(0);
    return out;
}

double global_loss(const RowVec& y_hat, int label) {
    if (label < 0 || label >= y_hat.size()) {
        throw std::invalid_argument("global_loss: label " + std::to_string(label) +
                                    " out of range for " + std::to_string(y_hat.size()) +
                                    " classes");
    }
    return -std::log(std::max(y_hat(label), kLogEps));
}

const char* local_loss_name(LocalLossKind kind) {
    return kind == LocalLossKind::Mse ? "mse" : "log-penalty";
}

LocalLossKind local_loss_from_name(const std::string& name) {
    if (name == "mse") return LocalLossKind::Mse;
    if (name == "log-penalty") return LocalLossKind::LogPenalty;
    throw std::invalid_argument("unknown local loss: " + name);
}

Eigen::VectorXd local_loss_rows(const Matrix& z, const Matrix& z_hat, LocalLossKind kind) {
    if (z.rows() != z_hat.rows() || z.cols() != z_hat.cols()) {
        throw std::invalid_argument("local_loss_rows: shape mismatch");
    }
    const Eigen::ArrayXXd d = (z - z_hat).array();
    if (kind == LocalLossKind::Mse) return d.square().rowwise().mean().matrix();
    return d.square().log1p().rowwise().mean().matrix();
}

Matrix local_loss_grad_rows(const Matrix& z, const Matrix& z_hat, LocalLossKind kind) {
    if (z.rows() != z_hat.rows() || z.cols() != z_hat.cols()) {
        throw std::invalid_argument("local_loss_grad_rows: shape mismatch");
    }
    const Eigen::ArrayXXd d = (z - z_hat).array();
    const double scale = 2.0 / static_cast<double>(z.cols());
    if (kind == LocalLossKind::Mse) return (scale * d).matrix();
    return (scale * d / (1.0 + d.square())).matrix();
}

double local_loss(const RowVec& z, const RowVec& z_hat, LocalLossKind kind) {
    return local_loss_rows(Matrix(z), Matrix(z_hat), kind)(0);
}

RowVec local_loss_grad(const RowVec& z, const RowVec& z_hat, LocalLossKind kind) {
    return local_loss_grad_rows(Matrix(z), Matrix(z_hat), kind).row(0);
}

int predict(const RowVec& y_hat) {
    int best = 0;
    for (Eigen::Index j = 1; j < y_hat.size(); ++j) {
        if (y_hat(j) > y_hat(best)) best = static_cast<int>(j);
    }
    return best;
}

EvalResult evaluate(const RnnParams& params, std::span<const SequenceSample> dataset) {
    if (dataset.empty()) throw std::invalid_argument("evaluate: empty dataset");
    constexpr std::size_t kChunk = 256;
    double loss_sum = 0.0;
    long correct = 0;
    for (std::size_t off = 0; off < dataset.size(); off += kChunk) {
        const std::size_t count = std::min(kChunk, dataset.size() - off);
        const BatchTrace trace = forward_batch(params, dataset.subspan(off, count));
        for (std::size_t i = 0; i < count; ++i) {
            const RowVec row = trace.y_hat.row(static_cast<Eigen::Index>(i));
            const int label = dataset[off + i].label;
            loss_sum += global_loss(row, label);
            if (predict(row) == label) ++correct;
        }
    }
    const double n = static_cast<double>(dataset.size());
    return EvalResult{loss_sum / n, 100.0 * static_cast<double>(correct) / n};
}

double accuracy(const RnnParams& params, std::span<const SequenceSample> dataset) {
    return evaluate(params, dataset).accuracy_pct;
}

}  // namespace lra
