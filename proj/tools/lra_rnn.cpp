// Command-line front end: dataset generation, single training runs with
// optional gradient-flow tracing, grid search, the curriculum protocol, and
// trace summarization. Exit codes: 0 success, 1 usage error, 2 runtime
// failure.

#include "CLI11.hpp"

#include "lra/harness.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

using namespace lra;

struct CommonTrainArgs {
    std::string task;
    int seq_len = 10;
    std::string trainer = "lra";
    double alpha = 0.01;
    double gamma = 0.01;
    int k = 10;
    double c0 = 1.0;
    double c1 = 1.0;
    double lambda = 0.1;
    std::string local_loss = "mse";
    bool forced_norm = false;
    int batch_size = 20;
    long max_iters = 100000;
    int val_size = 10000;
    std::uint64_t seed = 1;
    int hidden = 100;
    long eval_interval = 100;
    bool scale = false;
};

void add_task_options(CLI::App* cmd, CommonTrainArgs& a, bool with_seq_len) {
    cmd->add_option("--task", a.task, "task name")
        ->required()
        ->check(CLI::IsMember({"temporal-order", "temporal-order-3bit", "random-permutation"}));
    if (with_seq_len) {
        cmd->add_option("--seq-len", a.seq_len, "sequence length T")->required();
    }
}

void add_trainer_options(CLI::App* cmd, CommonTrainArgs& a) {
    cmd->add_option("--trainer", a.trainer, "training algorithm")
        ->check(CLI::IsMember({"bptt", "lra", "lra-reg"}));
    cmd->add_option("--local-loss", a.local_loss, "local loss kind")
        ->check(CLI::IsMember({"mse", "log-penalty"}));
    cmd->add_flag("--forced-norm", a.forced_norm,
                  "rescale every delta to the norm constant unconditionally");
    cmd->add_option("--batch-size", a.batch_size, "minibatch size");
    cmd->add_option("--seed", a.seed, "master seed");
    cmd->add_flag("--scale", a.scale,
                  "desk preset: hidden 50, validation 2K, iteration caps at 20K");
    cmd->add_option("--hidden", a.hidden, "hidden state size");
}

TrainConfig config_from_args(const CommonTrainArgs& a) {
    TrainConfig cfg;
    cfg.trainer = trainer_from_name(a.trainer);
    cfg.alpha = a.alpha;
    cfg.gamma = a.gamma;
    cfg.k_steps = a.k;
    cfg.c0 = a.c0;
    cfg.c1 = a.c1;
    cfg.lambda = a.lambda;
    cfg.local_loss = local_loss_from_name(a.local_loss);
    cfg.forced_norm = a.forced_norm;
    cfg.batch_size = a.batch_size;
    cfg.max_iters = a.max_iters;
    cfg.seed = a.seed;
    return cfg;
}

// The desk preset only fills in sizes the user did not set explicitly (a
// subcommand without the flag takes the preset value unconditionally).
void apply_scale_flags(const CLI::App* cmd, CommonTrainArgs& a, TrainConfig& cfg,
                       RunOptions& opts) {
    opts.hidden = a.hidden;
    opts.val_size = a.val_size;
    opts.eval_interval = a.eval_interval;
    if (!a.scale) return;
    opts.scale = true;
    const auto unset = [&](const char* name) {
        const CLI::Option* o = cmd->get_option_no_throw(name);
        return o == nullptr || o->count() == 0;
    };
    if (unset("--hidden")) opts.hidden = 50;
    if (unset("--val-size")) opts.val_size = 2000;
    if (unset("--max-iters")) cfg.max_iters = std::min(cfg.max_iters, 20000L);
}

void print_result(const RunResult& r) {
    std::cout << result_csv_header() << '\n' << result_csv_row(r) << '\n';
}

int run_gen(const CommonTrainArgs& a, int count, const std::string& out) {
    const TaskSpec spec = TaskSpec::make(task_from_name(a.task), a.seq_len);
    Rng rng(a.seed);
    const auto samples = generate(spec, count, rng);
    dump_dataset(out, spec, samples);
    std::cout << "wrote " << samples.size() << " samples to " << out << '\n';
    return 0;
}

int run_train(const CLI::App* cmd, CommonTrainArgs& a, const std::string& trace,
              long trace_stride, long flush_interval, const std::string& out) {
    const TaskSpec spec = TaskSpec::make(task_from_name(a.task), a.seq_len);
    TrainConfig cfg = config_from_args(a);
    RunOptions opts;
    apply_scale_flags(cmd, a, cfg, opts);

    std::optional<TraceSink> sink;
    if (!trace.empty()) {
        sink.emplace(trace, trace_stride, flush_interval);
        opts.sink = &*sink;
    }
    const RunResult r = run_training(spec, cfg, opts);
    if (sink) sink->flush();

    if (out.empty()) {
        print_result(r);
    } else {
        write_results_csv(out, std::span<const RunResult>(&r, 1));
        std::cout << "converged=" << (r.converged ? 1 : 0) << " diverged="
                  << (r.diverged ? 1 : 0) << " iterations=" << r.iterations
                  << " val_loss=" << r.final_val_loss << " val_accuracy="
                  << r.final_val_accuracy << '\n';
        std::cout << "wrote " << out << '\n';
    }
    return 0;
}

GridSpec load_grid(const std::string& grid_path, bool scale) {
    GridSpec grid;
    if (!grid_path.empty()) grid = GridSpec::from_json_file(grid_path);
    if (scale) grid.budget = std::min(grid.budget, 20000L);
    return grid;
}

int run_grid(const CLI::App* cmd, CommonTrainArgs& a, const std::string& grid_path,
             int workers, const std::string& out_dir) {
    const TaskSpec spec = TaskSpec::make(task_from_name(a.task), a.seq_len);
    TrainConfig base = config_from_args(a);
    RunOptions opts;
    apply_scale_flags(cmd, a, base, opts);
    const GridSpec grid = load_grid(grid_path, a.scale);

    const GridResult res = grid_search(spec, base, grid, opts, workers);
    const RunResult& best = res.cells[res.best_index];
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        const auto dir = std::filesystem::path(out_dir);
        write_results_csv(dir / "cells.csv", res.cells);
        write_results_csv(dir / "best.csv", std::span<const RunResult>(&best, 1));
        std::cout << "wrote " << (dir / "cells.csv").string() << " ("
                  << res.cells.size() << " cells)\n";
    }
    std::cout << "best cell:\n";
    print_result(best);
    return 0;
}

int run_curriculum(const CLI::App* cmd, CommonTrainArgs& a, const std::string& grid_path,
                   int workers, int max_t, const std::string& out_dir) {
    TrainConfig base = config_from_args(a);
    RunOptions opts;
    apply_scale_flags(cmd, a, base, opts);
    const GridSpec grid = load_grid(grid_path, a.scale);

    const CurriculumResult res =
        curriculum(task_from_name(a.task), base, grid, opts, max_t, workers);

    std::vector<RunResult> stage_best;
    for (const auto& stage : res.stages) {
        stage_best.push_back(stage.grid.cells[stage.grid.best_index]);
    }
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        const auto dir = std::filesystem::path(out_dir);
        for (const auto& stage : res.stages) {
            write_results_csv(dir / ("cells_T" + std::to_string(stage.seq_len) + ".csv"),
                              stage.grid.cells);
        }
        write_results_csv(dir / "stages.csv", stage_best);
        std::cout << "wrote " << (dir / "stages.csv").string() << " ("
                  << res.stages.size() << " stages)\n";
    }
    std::cout << result_csv_header() << '\n';
    for (const auto& r : stage_best) std::cout << result_csv_row(r) << '\n';
    if (res.max_t.has_value()) {
        std::cout << "max_t: " << *res.max_t << '\n';
    } else {
        std::cout << "max_t: none\n";
    }
    return 0;
}

int run_summarize(const std::string& trace) {
    const DecayReport rep = summarize(std::filesystem::path(trace));
    std::printf("t_max=%d ref_t=%d window_iters=%ld\n", rep.t_max, rep.ref_t,
                rep.window_iters);
    std::printf(
        "t,gmean_local_loss,gmean_delta_h,gmean_grad_whh,gmean_grad_wxh,"
        "loss_ratio_vs_ref,vanished\n");
    for (const auto& s : rep.layers) {
        std::printf("%d,%.6g,%.6g,%.6g,%.6g,%.6g,%d\n", s.t, s.gmean_local_loss,
                    s.gmean_delta_h, s.gmean_grad_whh, s.gmean_grad_wxh, s.loss_ratio_vs_ref,
                    s.vanished ? 1 : 0);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "Recurrent network training by local target alignment, with a BPTT "
        "baseline, synthetic long-horizon tasks, per-layer gradient-flow "
        "traces, grid search and a sequence-length curriculum."};
    app.require_subcommand(1);

    CommonTrainArgs gen_args, train_args, grid_args, cur_args;
    int gen_count = 1000;
    std::string gen_out;
    std::string train_trace, train_out;
    long trace_stride = 1, flush_interval = 100;
    std::string grid_path, grid_out, cur_grid_path, cur_out, summarize_trace;
    int grid_workers = 1, cur_workers = 1, cur_max_t = 300;

    CLI::App* gen = app.add_subcommand("gen", "generate a dataset file");
    add_task_options(gen, gen_args, true);
    gen->add_option("--count", gen_count, "number of samples");
    gen->add_option("--seed", gen_args.seed, "dataset seed");
    gen->add_option("--out", gen_out, "output path")->required();
    gen->callback([&] { run_gen(gen_args, gen_count, gen_out); });

    CLI::App* train = app.add_subcommand("train", "run one training configuration");
    add_task_options(train, train_args, true);
    add_trainer_options(train, train_args);
    train->add_option("--alpha", train_args.alpha, "learning rate");
    train->add_option("--gamma", train_args.gamma, "target adjustment step");
    train->add_option("--k", train_args.k, "inner-loop iterations");
    train->add_option("--c0", train_args.c0, "weight-gradient norm constant");
    train->add_option("--c1", train_args.c1, "target-step norm constant");
    train->add_option("--lambda", train_args.lambda, "regularization coefficient");
    train->add_option("--max-iters", train_args.max_iters, "iteration cap");
    train->add_option("--val-size", train_args.val_size, "validation set size");
    train->add_option("--eval-interval", train_args.eval_interval,
                      "iterations between validation passes");
    train->add_option("--trace", train_trace, "write per-layer trace CSV here");
    train->add_option("--trace-stride", trace_stride, "record every Nth iteration");
    train->add_option("--flush-interval", flush_interval,
                      "flush the trace every N recorded iterations");
    train->add_option("--out", train_out, "write the result CSV here");
    train->callback([&] {
        run_train(train, train_args, train_trace, trace_stride, flush_interval, train_out);
    });

    CLI::App* grid = app.add_subcommand("grid", "grid search over hyperparameters");
    add_task_options(grid, grid_args, true);
    add_trainer_options(grid, grid_args);
    grid->add_option("--grid", grid_path, "grid JSON file (defaults when omitted)");
    grid->add_option("--workers", grid_workers, "concurrent cells");
    grid->add_option("--out", grid_out, "directory for cells.csv and best.csv");
    grid->callback([&] { run_grid(grid, grid_args, grid_path, grid_workers, grid_out); });

    CLI::App* cur = app.add_subcommand(
        "curriculum", "raise T by 10 as long as the grid-best run solves the task");
    add_task_options(cur, cur_args, false);
    add_trainer_options(cur, cur_args);
    cur->add_option("--grid", cur_grid_path, "grid JSON file (defaults when omitted)");
    cur->add_option("--workers", cur_workers, "concurrent cells");
    cur->add_option("--max-t", cur_max_t, "stop raising T past this");
    cur->add_option("--out", cur_out, "directory for per-stage CSVs");
    cur->callback([&] {
        run_curriculum(cur, cur_args, cur_grid_path, cur_workers, cur_max_t, cur_out);
    });

    CLI::App* summ = app.add_subcommand("summarize", "per-layer decay report from a trace");
    summ->add_option("--trace", summarize_trace, "trace CSV path")->required();
    summ->callback([&] { run_summarize(summarize_trace); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
