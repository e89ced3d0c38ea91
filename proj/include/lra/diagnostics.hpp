#pragma once

// Per-layer, per-iteration gradient-flow traces and their decay summary.
// File format is a bit-exact contract: UTF-8 CSV, LF endings, header
// iteration,t,local_loss,delta_h_norm,grad_whh_norm,grad_wxh_norm,global_loss
// and floats printed with 17 significant digits so values round-trip exactly.

#include "lra/trainers.hpp"

#include <filesystem>
#include <fstream>
#include <vector>

namespace lra {

struct LayerTrace {
    long iteration = 0;
    int t = 0;
    double local_loss = 0.0;
    double delta_h_norm = 0.0;
    double grad_whh_norm = 0.0;
    double grad_wxh_norm = 0.0;
    double global_loss = 0.0;  // repeated per row for self-containment
};

/// Appends trace rows to a CSV file. One sink per run, single writer.
class TraceSink {
public:
    explicit TraceSink(const std::filesystem::path& path, long stride = 1,
                       long flush_interval = 100);
    ~TraceSink();
    TraceSink(const TraceSink&) = delete;
    TraceSink& operator=(const TraceSink&) = delete;

    /// True when the stride admits this iteration; callers can skip building
    /// rows for the others.
    bool wants(long iteration) const { return iteration % stride_ == 0; }

    /// Appends rows (which must share one iteration index) in (iteration, t)
    /// order. Iterations rejected by the stride are dropped. On I/O failure a
    /// partial-file marker line is attempted and the run aborts.
    void record(long iteration, const std::vector<LayerTrace>& rows);

    void flush();
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    std::ofstream out_;
    long stride_;
    long flush_interval_;
    long recorded_ = 0;
};

/// Expands one training step's stats into trace rows, ascending t.
std::vector<LayerTrace> rows_from_stats(long iteration, const TrainStats& stats);

/// Reads a trace file back; errors name the offending line number.
std::vector<LayerTrace> read_trace(const std::filesystem::path& path);

struct LayerSummary {
    int t = 0;
    double gmean_local_loss = 0.0;
    double gmean_delta_h = 0.0;
    double gmean_grad_whh = 0.0;
    double gmean_grad_wxh = 0.0;
    /// Geometric-mean local loss at the reference layer t_max - 1 divided by
    /// this layer's; +inf when this layer's is zero and the reference's is
    /// not, 1 when both are zero.
    double loss_ratio_vs_ref = 1.0;
    bool vanished = false;  // loss_ratio_vs_ref >= 1e6
};

struct DecayReport {
    int t_max = 0;
    int ref_t = 0;            // t_max - 1 (t_max itself when t_max == 1)
    long window_iters = 0;    // trailing iterations the means cover
    std::vector<LayerSummary> layers;  // ascending t
};

/// Geometric means over the trailing 10% of recorded iterations (at least
/// one), per layer, with vanishing flagged by the local-loss decay ratio.
DecayReport summarize(const std::vector<LayerTrace>& rows);
DecayReport summarize(const std::filesystem::path& trace_path);

}  // namespace lra
