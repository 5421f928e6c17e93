#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hylo/encoder.hpp"
#include "hylo/tensor.hpp"

namespace hylo {

struct StreamConfig {
    int num_tasks = 5;
    int num_groups = 5;
    int prototypes_per_group = 3;
    int num_classes = 4;
    int train_per_task = 200;
    int test_per_task = 100;
    double noise_std = 0.1;
    double drift_std = 0.05;
    int d = 32;
    int d_roi = 48;
    int num_regions = 12;
    int question_tokens = 8;
    double label_smoothing = 0.0;   // 0 = one-hot targets; s > 0 leaves 1-s on the true class
    uint64_t seed = 1;

    void validate() const;
};

// One synthetic instance: a bag of noisy region views of an object whose
// per-task attribute values sit in disjoint roi blocks, plus question tokens
// carrying the task prototype. The label is the attribute of the sample's
// task, so a correct reader must condition on the task.
struct StreamSample {
    std::vector<RegionFeature> regions;
    Tensor question;   // M x d
    int task_id = 0;
    int group_id = 0;
    int64_t instance_id = 0;
    Tensor target;     // C x 1, nonnegative, sums to 1
};

struct TaskStream {
    StreamConfig cfg;
    std::vector<std::vector<StreamSample>> train;   // [task][sample]
    std::vector<std::vector<StreamSample>> test;
    std::vector<std::pair<int, int>> held_out;      // (task_id, group_id) pairs absent from train
};

TaskStream generate_stream(const StreamConfig& cfg);

struct NovelSplit {
    TaskStream train_stream;                        // train filtered, held_out populated
    std::vector<std::vector<StreamSample>> novel_test;   // held-out group only
    std::vector<std::vector<StreamSample>> seen_test;    // remaining test pool
    bool degenerate = false;                        // true when the filtered train set is empty
};

NovelSplit split_novel_composition(const TaskStream& stream, int heldout_group);

// Byte-exact stream file: text header (config echo, per-task counts,
// held-out table) followed by little-endian 64-bit reals. Per sample the
// payload order is task_id, group_id, instance_id, target[C], then per
// region roi[d_roi] and bbox[4] (region_index is the region's position),
// then the question matrix row-major.
void save_stream(const TaskStream& stream, const std::string& path);
TaskStream load_stream(const std::string& path);

}  // namespace hylo
