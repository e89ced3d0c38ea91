#include "lra/tasks.hpp"

#include <fstream>
#include <sstream>

namespace lra {
namespace {

// Marker alphabet for the order tasks: distractors 0..3, markers X = 4, Y = 5.
constexpr int kMarkerBase = 4;

int marker_draw(Rng& rng) { return kMarkerBase + static_cast<int>(rng.next_below(2)); }

int window_pos(int seq_len, int lo_tenths, Rng& rng) {
    const int lo = seq_len * lo_tenths / 10;
    const int hi = seq_len * (lo_tenths + 1) / 10;
    return lo + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(hi - lo)));
}

void check_windows(int seq_len, std::initializer_list<int> lo_tenths) {
    for (int lo : lo_tenths) {
        if (seq_len * (lo + 1) / 10 <= seq_len * lo / 10) {
            throw std::invalid_argument("sequence length " + std::to_string(seq_len) +
                                        " leaves an empty marker window");
        }
    }
}

}  // namespace

const char* task_name(TaskKind kind) {
    switch (kind) {
        case TaskKind::TemporalOrder: return "temporal-order";
        case TaskKind::TemporalOrder3Bit: return "temporal-order-3bit";
        case TaskKind::RandomPermutation: return "random-permutation";
    }
    throw std::logic_error("task_name: bad kind");
}

TaskKind task_from_name(const std::string& name) {
    if (name == "temporal-order") return TaskKind::TemporalOrder;
    if (name == "temporal-order-3bit") return TaskKind::TemporalOrder3Bit;
    if (name == "random-permutation") return TaskKind::RandomPermutation;
    throw std::invalid_argument("unknown task: " + name);
}

int TaskSpec::input_dim() const {
    switch (kind) {
        case TaskKind::TemporalOrder:
        case TaskKind::TemporalOrder3Bit: return 6;
        case TaskKind::RandomPermutation: return 100;
    }
    throw std::logic_error("TaskSpec: bad kind");
}

int TaskSpec::num_classes() const {
    switch (kind) {
        case TaskKind::TemporalOrder: return 4;
        case TaskKind::TemporalOrder3Bit: return 8;
        case TaskKind::RandomPermutation: return 2;
    }
    throw std::logic_error("TaskSpec: bad kind");
}

TaskSpec TaskSpec::make(TaskKind kind, int seq_len) {
    switch (kind) {
        case TaskKind::TemporalOrder: check_windows(seq_len, {1, 5}); break;
        case TaskKind::TemporalOrder3Bit: check_windows(seq_len, {1, 3, 6}); break;
        case TaskKind::RandomPermutation:
            if (seq_len < 2) {
                throw std::invalid_argument("random_permutation needs T >= 2");
            }
            break;
    }
    return TaskSpec{kind, seq_len};
}

RowVec one_hot_input(const SequenceSample& sample, int t, int n) {
    RowVec x = RowVec::Zero(n);
    x(sample.symbols.at(static_cast<std::size_t>(t))) = 1.0;
    return x;
}

std::vector<SequenceSample> gen_temporal_order(int seq_len, int count, Rng& rng) {
    check_windows(seq_len, {1, 5});
    std::vector<SequenceSample> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const int p1 = window_pos(seq_len, 1, rng);
        const int p2 = window_pos(seq_len, 5, rng);
        const int s1 = marker_draw(rng);
        const int s2 = marker_draw(rng);
        SequenceSample s;
        s.symbols.resize(static_cast<std::size_t>(seq_len));
        for (int t = 0; t < seq_len; ++t) {
            if (t == p1) s.symbols[static_cast<std::size_t>(t)] = s1;
            else if (t == p2) s.symbols[static_cast<std::size_t>(t)] = s2;
            else s.symbols[static_cast<std::size_t>(t)] = static_cast<int>(rng.next_below(4));
        }
        s.label = 2 * (s1 - kMarkerBase) + (s2 - kMarkerBase);
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<SequenceSample> gen_temporal_order_3bit(int seq_len, int count, Rng& rng) {
    check_windows(seq_len, {1, 3, 6});
    std::vector<SequenceSample> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const int p1 = window_pos(seq_len, 1, rng);
        const int p2 = window_pos(seq_len, 3, rng);
        const int p3 = window_pos(seq_len, 6, rng);
        const int s1 = marker_draw(rng);
        const int s2 = marker_draw(rng);
        const int s3 = marker_draw(rng);
        SequenceSample s;
        s.symbols.resize(static_cast<std::size_t>(seq_len));
        for (int t = 0; t < seq_len; ++t) {
            if (t == p1) s.symbols[static_cast<std::size_t>(t)] = s1;
            else if (t == p2) s.symbols[static_cast<std::size_t>(t)] = s2;
            else if (t == p3) s.symbols[static_cast<std::size_t>(t)] = s3;
            else s.symbols[static_cast<std::size_t>(t)] = static_cast<int>(rng.next_below(4));
        }
        s.label = 4 * (s1 - kMarkerBase) + 2 * (s2 - kMarkerBase) + (s3 - kMarkerBase);
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<SequenceSample> gen_random_permutation(int seq_len, int count, Rng& rng) {
    if (seq_len < 2) throw std::invalid_argument("random_permutation needs T >= 2");
    std::vector<SequenceSample> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        SequenceSample s;
        s.symbols.resize(static_cast<std::size_t>(seq_len));
        s.symbols[0] = static_cast<int>(rng.next_below(2));
        for (int t = 1; t < seq_len; ++t) {
            s.symbols[static_cast<std::size_t>(t)] = 2 + static_cast<int>(rng.next_below(98));
        }
        s.label = s.symbols[0];
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<SequenceSample> generate(const TaskSpec& spec, int count, Rng& rng) {
    switch (spec.kind) {
        case TaskKind::TemporalOrder: return gen_temporal_order(spec.seq_len, count, rng);
        case TaskKind::TemporalOrder3Bit: return gen_temporal_order_3bit(spec.seq_len, count, rng);
        case TaskKind::RandomPermutation: return gen_random_permutation(spec.seq_len, count, rng);
    }
    throw std::logic_error("generate: bad kind");
}

void dump_dataset(const std::filesystem::path& path,
                  const TaskSpec& spec,
                  const std::vector<SequenceSample>& samples) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    for (const auto& s : samples) {
        if (static_cast<int>(s.symbols.size()) != spec.seq_len) {
            throw std::invalid_argument("dump_dataset: sample length does not match spec");
        }
        out << s.label;
        for (int sym : s.symbols) out << ' ' << sym;
        out << '\n';
    }
    if (!out) throw std::runtime_error("write to " + path.string() + " failed");
}

std::vector<SequenceSample> load_dataset(const std::filesystem::path& path,
                                         const TaskSpec& spec) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<SequenceSample> out;
    std::string line;
    long line_no = 0;
    const int n = spec.input_dim();
    const int k = spec.num_classes();
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        SequenceSample s;
        if (!(ls >> s.label) || s.label < 0 || s.label >= k) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                     ": bad label");
        }
        int sym;
        while (ls >> sym) {
            if (sym < 0 || sym >= n) {
                throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                         ": symbol out of range");
            }
            s.symbols.push_back(sym);
        }
        if (!ls.eof()) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                     ": malformed symbol");
        }
        if (static_cast<int>(s.symbols.size()) != spec.seq_len) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                     ": expected " + std::to_string(spec.seq_len) +
                                     " symbols, got " + std::to_string(s.symbols.size()));
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace lra
