#include "lra/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>

namespace lra {
namespace {

constexpr char kHeader[] = "iteration,t,local_loss,delta_h_norm,grad_whh_norm,grad_wxh_norm,global_loss";
constexpr double kVanishRatio = 1e6;

std::string format_row(const LayerTrace& r) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%ld,%d,%.17g,%.17g,%.17g,%.17g,%.17g", r.iteration, r.t,
                  r.local_loss, r.delta_h_norm, r.grad_whh_norm, r.grad_wxh_norm,
                  r.global_loss);
    return buf;
}

// Geometric mean; any nonpositive value short-circuits to 0 (the traced
// quantities are nonnegative, and one exact zero means the signal died).
double gmean(const std::vector<double>& xs) {
    if (xs.empty()) return 0.0;
    double log_sum = 0.0;
    for (double x : xs) {
        if (x <= 0.0) return 0.0;
        log_sum += std::log(x);
    }
    return std::exp(log_sum / static_cast<double>(xs.size()));
}

}  // namespace

TraceSink::TraceSink(const std::filesystem::path& path, long stride, long flush_interval)
    : path_(path), stride_(stride), flush_interval_(flush_interval) {
    if (stride_ < 1) throw std::invalid_argument("TraceSink: stride must be >= 1");
    if (flush_interval_ < 1) throw std::invalid_argument("TraceSink: flush interval must be >= 1");
    out_.open(path_, std::ios::out | std::ios::trunc | std::ios::binary);
    if (!out_) throw std::runtime_error("TraceSink: cannot open " + path_.string());
    out_ << kHeader << '\n';
    if (!out_) throw std::runtime_error("TraceSink: write to " + path_.string() + " failed");
}

TraceSink::~TraceSink() {
    if (out_.is_open()) out_.flush();
}

void TraceSink::record(long iteration, const std::vector<LayerTrace>& rows) {
    if (!wants(iteration)) return;
    if (rows.empty()) return;
    for (const auto& r : rows) {
        if (r.iteration != iteration) {
            throw std::invalid_argument("TraceSink: rows span multiple iterations");
        }
    }
    std::vector<LayerTrace> ordered = rows;
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const LayerTrace& a, const LayerTrace& b) { return a.t < b.t; });
    for (const auto& r : ordered) out_ << format_row(r) << '\n';
    if (!out_) {
        out_.clear();
        out_ << "#partial\n";
        out_.flush();
        throw std::runtime_error("TraceSink: write to " + path_.string() +
                                 " failed, file marked partial");
    }
    if (++recorded_ % flush_interval_ == 0) flush();
}

void TraceSink::flush() {
    out_.flush();
    if (!out_) throw std::runtime_error("TraceSink: flush of " + path_.string() + " failed");
}

std::vector<LayerTrace> rows_from_stats(long iteration, const TrainStats& stats) {
    std::vector<LayerTrace> rows;
    rows.reserve(stats.layers.size());
    for (const auto& layer : stats.layers) {
        LayerTrace r;
        r.iteration = iteration;
        r.t = layer.t;
        r.local_loss = layer.local_loss;
        r.delta_h_norm = layer.delta_h_norm;
        r.grad_whh_norm = layer.grad_whh_norm;
        r.grad_wxh_norm = layer.grad_wxh_norm;
        r.global_loss = stats.global_loss;
        rows.push_back(r);
    }
    return rows;
}

std::vector<LayerTrace> read_trace(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::in | std::ios::binary);
    if (!in) throw std::runtime_error("read_trace: cannot open " + path.string());
    std::string line;
    long line_no = 0;
    if (!std::getline(in, line)) throw std::runtime_error("read_trace: " + path.string() + " is empty");
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kHeader) {
        throw std::runtime_error("read_trace: " + path.string() + ":1: unexpected header");
    }
    std::vector<LayerTrace> rows;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        LayerTrace r;
        int consumed = 0;
        const int got = std::sscanf(line.c_str(), "%ld,%d,%lf,%lf,%lf,%lf,%lf%n", &r.iteration,
                                    &r.t, &r.local_loss, &r.delta_h_norm, &r.grad_whh_norm,
                                    &r.grad_wxh_norm, &r.global_loss, &consumed);
        if (got != 7 || consumed != static_cast<int>(line.size())) {
            throw std::runtime_error("read_trace: " + path.string() + ":" +
                                     std::to_string(line_no) + ": malformed row");
        }
        rows.push_back(r);
    }
    return rows;
}

DecayReport summarize(const std::vector<LayerTrace>& rows) {
    if (rows.empty()) throw std::runtime_error("summarize: trace has no data rows");

    std::set<long> iter_set;
    int t_max = 0;
    for (const auto& r : rows) {
        iter_set.insert(r.iteration);
        t_max = std::max(t_max, r.t);
        if (r.t < 1) throw std::runtime_error("summarize: layer index below 1");
    }
    const std::vector<long> iters(iter_set.begin(), iter_set.end());
    const std::size_t window = std::max<std::size_t>(1, (iters.size() + 9) / 10);
    const long window_start = iters[iters.size() - window];

    std::map<int, std::vector<double>> loss_by_t, delta_by_t, whh_by_t, wxh_by_t;
    for (const auto& r : rows) {
        if (r.iteration < window_start) continue;
        loss_by_t[r.t].push_back(r.local_loss);
        delta_by_t[r.t].push_back(r.delta_h_norm);
        whh_by_t[r.t].push_back(r.grad_whh_norm);
        wxh_by_t[r.t].push_back(r.grad_wxh_norm);
    }

    DecayReport report;
    report.t_max = t_max;
    report.ref_t = t_max > 1 ? t_max - 1 : t_max;
    report.window_iters = static_cast<long>(window);

    std::map<int, double> loss_gmean;
    for (const auto& [t, xs] : loss_by_t) loss_gmean[t] = gmean(xs);
    const double ref_loss = loss_gmean.at(report.ref_t);

    for (const auto& [t, xs] : loss_by_t) {
        LayerSummary s;
        s.t = t;
        s.gmean_local_loss = loss_gmean[t];
        s.gmean_delta_h = gmean(delta_by_t[t]);
        s.gmean_grad_whh = gmean(whh_by_t[t]);
        s.gmean_grad_wxh = gmean(wxh_by_t[t]);
        if (s.gmean_local_loss > 0.0) {
            s.loss_ratio_vs_ref = ref_loss / s.gmean_local_loss;
        } else {
            s.loss_ratio_vs_ref = ref_loss > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
        }
        s.vanished = s.loss_ratio_vs_ref >= kVanishRatio;
        report.layers.push_back(s);
    }
    return report;
}

DecayReport summarize(const std::filesystem::path& trace_path) {
    return summarize(read_trace(trace_path));
}

}  // namespace lra
