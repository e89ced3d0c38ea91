#pragma once

// Synthetic long-horizon sequence tasks. Samples carry symbol indices; the
// model consumes them as one-hot rows of the input embedding.

#include "lra/numerics.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace lra {

enum class TaskKind { TemporalOrder, TemporalOrder3Bit, RandomPermutation };

const char* task_name(TaskKind kind);
TaskKind task_from_name(const std::string& name);

struct TaskSpec {
    TaskKind kind;
    int seq_len;  // number of input symbols T

    int input_dim() const;    // one-hot alphabet size n
    int num_classes() const;  // label count k

    /// Validates that T supports the task's marker windows (TemporalOrder
    /// needs T >= 10, the 3-bit variant likewise; RandomPermutation T >= 2).
    static TaskSpec make(TaskKind kind, int seq_len);
};

struct SequenceSample {
    std::vector<int> symbols;  // length T, each in [0, n)
    int label;                 // in [0, k)
};

/// One-hot encoding of sample.symbols[t] in dimension n.
RowVec one_hot_input(const SequenceSample& sample, int t, int n);

/// Temporal order: distractors from {a,b,c,d} = 0..3, two markers from
/// {X,Y} = {4,5} at positions drawn from [T/10, 2T/10) and [5T/10, 6T/10);
/// the label is which of the four ordered marker pairs occurred.
std::vector<SequenceSample> gen_temporal_order(int seq_len, int count, Rng& rng);

/// 3-bit variant: marker windows [T/10, 2T/10), [3T/10, 4T/10), [6T/10, 7T/10),
/// eight ordered-triple classes.
std::vector<SequenceSample> gen_temporal_order_3bit(int seq_len, int count, Rng& rng);

/// Random permutation: alphabet of 100 symbols, first symbol is 0 or 1 and is
/// the label, positions 2..T are uniform draws from {2..99}.
std::vector<SequenceSample> gen_random_permutation(int seq_len, int count, Rng& rng);

std::vector<SequenceSample> generate(const TaskSpec& spec, int count, Rng& rng);

/// Text dump, one sample per line: label followed by the T symbol indices.
void dump_dataset(const std::filesystem::path& path,
                  const TaskSpec& spec,
                  const std::vector<SequenceSample>& samples);

/// Inverse of dump_dataset; validates every index against the spec and names
/// the offending line on failure.
std::vector<SequenceSample> load_dataset(const std::filesystem::path& path,
                                         const TaskSpec& spec);

}  // namespace lra
