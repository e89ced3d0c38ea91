#include "lra/harness.hpp"

#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <thread>
#include <tuple>

namespace lra {
namespace {

// Values-only cell fingerprint: a cell keeps its seed no matter how the grid
// lists are ordered, which is what makes grid results permutation-invariant.
std::uint64_t fnv1a_mix(std::uint64_t h, std::uint64_t x) {
    for (int i = 0; i < 8; ++i) {
        h ^= (x >> (8 * i)) & 0xffULL;
        h *= 1099511628211ULL;
    }
    return h;
}

std::uint64_t cell_tag(const TrainConfig& cell) {
    const auto bits = [](double v) { return std::bit_cast<std::uint64_t>(v == 0.0 ? 0.0 : v); };
    std::uint64_t h = 14695981039346656037ULL;
    h = fnv1a_mix(h, bits(cell.alpha));
    h = fnv1a_mix(h, bits(cell.gamma));
    h = fnv1a_mix(h, static_cast<std::uint64_t>(cell.k_steps));
    h = fnv1a_mix(h, bits(cell.c0));
    h = fnv1a_mix(h, bits(cell.c1));
    h = fnv1a_mix(h, bits(cell.lambda));
    return h;
}

std::size_t pick_best(const std::vector<RunResult>& cells) {
    const auto key = [](const RunResult& r) {
        double loss = r.final_val_loss;
        if (!std::isfinite(loss)) loss = std::numeric_limits<double>::infinity();
        return std::tuple<int, double, double, long>(r.diverged ? 1 : 0, loss,
                                                     -r.final_val_accuracy, r.iterations);
    };
    std::size_t best = 0;
    for (std::size_t i = 1; i < cells.size(); ++i) {
        if (key(cells[i]) < key(cells[best])) best = i;
    }
    return best;
}

}  // namespace

void apply_desk_scale(RunOptions& opts, TrainConfig& cfg) {
    opts.hidden = 50;
    opts.val_size = 2000;
    opts.scale = true;
    cfg.max_iters = std::min(cfg.max_iters, 20000L);
}

void apply_desk_scale(RunOptions& opts, GridSpec& grid) {
    opts.hidden = 50;
    opts.val_size = 2000;
    opts.scale = true;
    grid.budget = std::min(grid.budget, 20000L);
}

RunResult run_training_with_evaluator(const TaskSpec& task, const TrainConfig& cfg,
                                      const RunOptions& opts, const Evaluator& evaluate_fn) {
    cfg.validate_for_training();
    if (opts.hidden < 1) throw std::invalid_argument("run_training: hidden size must be >= 1");
    if (opts.eval_interval < 1) {
        throw std::invalid_argument("run_training: eval_interval must be >= 1");
    }
    if (!evaluate_fn) throw std::invalid_argument("run_training: evaluator is empty");

    RunResult result;
    result.task = task;
    result.config = cfg;

    const auto clock_start = std::chrono::steady_clock::now();

    Rng init_rng(derive_seed(cfg.seed, kStreamInit));
    RnnParams params = RnnParams::init(task.input_dim(), opts.hidden, task.num_classes(),
                                       init_rng);
    Rng data_rng(derive_seed(cfg.seed, kStreamTrain));

    bool evaluated = false;
    bool nonfinite_eval = false;
    const auto run_eval = [&](const RnnParams& p, long iteration) {
        const EvalResult ev = evaluate_fn(p, iteration);
        result.final_val_loss = ev.mean_loss;
        result.final_val_accuracy = ev.accuracy_pct;
        evaluated = true;
        return ev;
    };

    long done = 0;
    while (done < cfg.max_iters) {
        const long iteration = done + 1;
        const auto batch = generate(task, cfg.batch_size, data_rng);
        const bool tracing = opts.sink != nullptr && opts.sink->wants(iteration);
        TrainStats stats;
        Grads grads;
        try {
            if (cfg.trainer == TrainerKind::Bptt) {
                grads = bptt_gradients(params, batch, tracing ? &stats : nullptr);
            } else {
                grads = lra_diff_gradients(params, batch, cfg, tracing ? &stats : nullptr);
            }
        } catch (const TrainerError&) {
            result.diverged = true;
            break;
        }
        if (tracing) opts.sink->record(iteration, rows_from_stats(iteration, stats));
        try {
            params = sgd_step(params, grads, cfg.alpha);
        } catch (const std::runtime_error&) {
            result.diverged = true;
            break;
        }
        done = iteration;
        if (iteration % opts.eval_interval == 0 || iteration == cfg.max_iters) {
            const EvalResult ev = run_eval(params, iteration);
            if (!std::isfinite(ev.mean_loss)) {
                result.diverged = true;
                nonfinite_eval = true;
                break;
            }
            if (meets_convergence(ev.mean_loss)) {
                result.converged = true;
                break;
            }
        }
    }
    result.iterations = done;
    // On a thrown divergence `params` still holds the last finite parameters
    // (the failing update was never assigned); report their evaluation. A
    // non-finite measured loss is reported as-is.
    if ((result.diverged && !nonfinite_eval) || !evaluated) run_eval(params, done);

    result.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - clock_start).count();
    return result;
}

RunResult run_training(const TaskSpec& task, const TrainConfig& cfg, const RunOptions& opts) {
    if (opts.val_size < 1) throw std::invalid_argument("run_training: val_size must be >= 1");
    Rng val_rng(derive_seed(cfg.seed, kStreamVal));
    const auto val = generate(task, opts.val_size, val_rng);
    const Evaluator ev = [&val](const RnnParams& p, long) { return evaluate(p, val); };
    return run_training_with_evaluator(task, cfg, opts, ev);
}

void GridSpec::validate() const {
    const auto need = [](bool ok, const char* what) {
        if (!ok) throw std::invalid_argument(std::string("GridSpec: ") + what);
    };
    need(!alpha.empty(), "alpha list is empty");
    need(!gamma.empty(), "gamma list is empty");
    need(!k.empty(), "k list is empty");
    need(!c0.empty(), "c0 list is empty");
    need(!c1.empty(), "c1 list is empty");
    need(!lambda.empty(), "lambda list is empty");
    need(budget >= 0, "budget must be >= 0");
    for (int kk : k) need(kk >= 1, "k values must be >= 1");
}

GridSpec GridSpec::from_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("grid file: cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("grid file " + path.string() + ": " + e.what());
    }
    if (!j.is_object()) {
        throw std::runtime_error("grid file " + path.string() + ": top level must be an object");
    }
    const auto as_doubles = [&](const nlohmann::json& v, const std::string& key) {
        std::vector<double> xs;
        const auto take = [&](const nlohmann::json& e) {
            if (!e.is_number()) {
                throw std::runtime_error("grid file " + path.string() + ": key '" + key +
                                         "' must hold numbers");
            }
            xs.push_back(e.get<double>());
        };
        if (v.is_array()) {
            for (const auto& e : v) take(e);
        } else {
            take(v);
        }
        return xs;
    };
    const auto as_ints = [&](const nlohmann::json& v, const std::string& key) {
        std::vector<int> xs;
        const auto take = [&](const nlohmann::json& e) {
            if (!e.is_number_integer()) {
                throw std::runtime_error("grid file " + path.string() + ": key '" + key +
                                         "' must hold integers");
            }
            xs.push_back(e.get<int>());
        };
        if (v.is_array()) {
            for (const auto& e : v) take(e);
        } else {
            take(v);
        }
        return xs;
    };
    GridSpec g;
    for (const auto& [key, value] : j.items()) {
        if (key == "alpha") {
            g.alpha = as_doubles(value, key);
        } else if (key == "gamma") {
            g.gamma = as_doubles(value, key);
        } else if (key == "k") {
            g.k = as_ints(value, key);
        } else if (key == "c0") {
            g.c0 = as_doubles(value, key);
        } else if (key == "c1") {
            g.c1 = as_doubles(value, key);
        } else if (key == "lambda") {
            g.lambda = as_doubles(value, key);
        } else if (key == "budget") {
            if (!value.is_number_integer()) {
                throw std::runtime_error("grid file " + path.string() +
                                         ": key 'budget' must be an integer");
            }
            g.budget = value.get<long>();
        } else {
            throw std::runtime_error("grid file " + path.string() + ": unknown key '" + key +
                                     "'");
        }
    }
    g.validate();
    return g;
}

std::vector<TrainConfig> expand_grid(const GridSpec& grid, const TrainConfig& base) {
    grid.validate();
    const bool bptt = base.trainer == TrainerKind::Bptt;
    const bool reg = base.trainer == TrainerKind::LraDiffReg;
    const std::vector<double> gammas = bptt ? std::vector<double>{base.gamma} : grid.gamma;
    const std::vector<int> ks = bptt ? std::vector<int>{base.k_steps} : grid.k;
    const std::vector<double> c0s = bptt ? std::vector<double>{base.c0} : grid.c0;
    const std::vector<double> c1s = bptt ? std::vector<double>{base.c1} : grid.c1;
    const std::vector<double> lambdas = reg ? grid.lambda : std::vector<double>{base.lambda};

    std::vector<TrainConfig> cells;
    for (double a : grid.alpha) {
        for (double g : gammas) {
            for (int kk : ks) {
                for (double v0 : c0s) {
                    for (double v1 : c1s) {
                        for (double lm : lambdas) {
                            TrainConfig cell = base;
                            cell.alpha = a;
                            cell.gamma = g;
                            cell.k_steps = kk;
                            cell.c0 = v0;
                            cell.c1 = v1;
                            cell.lambda = lm;
                            cell.max_iters = grid.budget;
                            cell.seed = derive_seed(base.seed, cell_tag(cell));
                            cells.push_back(cell);
                        }
                    }
                }
            }
        }
    }
    return cells;
}

GridResult grid_search(const TaskSpec& task, const TrainConfig& base, const GridSpec& grid,
                       const RunOptions& opts, int workers) {
    if (workers < 1) throw std::invalid_argument("grid_search: workers must be >= 1");
    const auto cells = expand_grid(grid, base);

    // Traces are per-run files; a shared sink across cells would interleave.
    RunOptions cell_opts = opts;
    cell_opts.sink = nullptr;

    GridResult out;
    out.cells.resize(cells.size());
    std::vector<std::exception_ptr> errors(cells.size());
    std::atomic<std::size_t> next{0};
    const auto work = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cells.size()) return;
            try {
                out.cells[i] = run_training(task, cells[i], cell_opts);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t n_workers =
        std::min(static_cast<std::size_t>(workers), cells.size());
    if (n_workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(n_workers);
        for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(work);
        for (auto& th : pool) th.join();
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    out.best_index = pick_best(out.cells);
    return out;
}

CurriculumResult curriculum(TaskKind kind, const TrainConfig& base, const GridSpec& grid,
                            const RunOptions& opts, int max_t_cap, int workers) {
    if (max_t_cap < 10) throw std::invalid_argument("curriculum: max_t_cap must be >= 10");
    CurriculumResult out;
    for (int t = 10; t <= max_t_cap; t += 10) {
        const TaskSpec task = TaskSpec::make(kind, t);
        TrainConfig stage_base = base;
        stage_base.seed = derive_seed(base.seed, 1000 + static_cast<std::uint64_t>(t));

        CurriculumStage stage;
        stage.seq_len = t;
        stage.grid = grid_search(task, stage_base, grid, opts, workers);
        const RunResult& best = stage.grid.cells[stage.grid.best_index];
        stage.solved = best.converged ||
                       (opts.scale && !best.diverged && best.final_val_accuracy >= 99.0);
        const bool solved = stage.solved;
        out.stages.push_back(std::move(stage));
        if (!solved) break;
        out.max_t = t;
    }
    return out;
}

std::string result_csv_header() {
    return "task,T,trainer,alpha,gamma,k,c0,c1,lambda,local_loss,converged,iterations,"
           "val_loss,val_accuracy,wall_time_s";
}

std::string result_csv_row(const RunResult& r) {
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "%s,%d,%s,%.17g,%.17g,%d,%.17g,%.17g,%.17g,%s,%d,%ld,%.17g,%.17g,%.17g",
                  task_name(r.task.kind), r.task.seq_len, trainer_name(r.config.trainer),
                  r.config.alpha, r.config.gamma, r.config.k_steps, r.config.c0, r.config.c1,
                  r.config.lambda, local_loss_name(r.config.local_loss), r.converged ? 1 : 0,
                  r.iterations, r.final_val_loss, r.final_val_accuracy, r.wall_time_s);
    return buf;
}

void write_results_csv(const std::filesystem::path& path, std::span<const RunResult> rows) {
    std::ofstream out(path, std::ios::out | std::ios::trunc | std::ios::binary);
    if (!out) throw std::runtime_error("write_results_csv: cannot open " + path.string());
    out << result_csv_header() << '\n';
    for (const auto& r : rows) out << result_csv_row(r) << '\n';
    out.flush();
    if (!out) throw std::runtime_error("write_results_csv: write to " + path.string() + " failed");
}

}  // namespace lra
