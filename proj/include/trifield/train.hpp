#pragma once

#include <string>
#include <utility>
#include <vector>

#include "trifield/headfield.hpp"
#include "trifield/scene.hpp"
#include "trifield/torso.hpp"

namespace trifield::train {

/// Knobs for the two-stage head optimization and the separate torso pass.
/// Desk-scale defaults keep a full run in minutes; profile "paper" restores
/// the full iteration counts.
struct TrainConfig {
    int coarse_iters = 2000;
    int fine_iters = 500;
    int torso_iters = 1000;
    int rays_per_batch = 1024;
    double lr_grid = 0.01;
    double lr_mlp = 0.001;
    double lambda = 0.01;  // fine-stage perceptual weight (not stated upstream)
    int patch_size = 32;
    std::uint64_t seed = 0;
    int n_samples = 16;
    int val_every = 250;
    int occupancy_every = 16;
    double occupancy_threshold = 0.01;
    int occupancy_res = 32;
    double alpha_l1 = 1e-4;  // torso coverage sparsity weight
    int workers = 1;
    /// Forces single-worker execution and zeroes wall_ms in the metrics log
    /// so reruns are byte-identical.
    bool deterministic = false;

    nets::HeadFieldConfig model;
    nets::TorsoFieldConfig torso;

    void validate() const;
    /// "desk" (the defaults) or "paper" (100000/25000/100000 iterations).
    void apply_profile(const std::string& name);
};

/// Minimal TOML subset: [train] / [model] / [torso] sections, `key = value`
/// lines, # comments. Keys before any section header belong to [train].
/// Every key is optional; unknown keys or sections fail with a line number.
TrainConfig parse_train_config_text(const std::string& text);
TrainConfig parse_train_config(const std::string& path);

struct TrainStats {
    std::vector<double> loss;                        // one entry per iteration
    std::vector<std::pair<int, double>> val_psnr;    // (iteration, mean PSNR)
    double median_first = 0.0;                       // median of first 10% of losses
    double median_last = 0.0;                        // median of last 10% of losses
    double final_val_psnr = 0.0;
};

/// Coarse ray-batch stage then fine patch stage over the head-only images.
/// Writes out_dir/head.tfck and out_dir/metrics.jsonl (JSON lines with iter,
/// stage, loss, psnr_val, wall_ms). Throws on non-finite loss with the stage
/// and iteration in the message.
TrainStats train_head(const scene::Dataset& ds, const TrainConfig& cfg,
                      const std::string& out_dir);

/// Optimizes the 2D torso field (key points and gamma included) over the
/// composite frames with the head model frozen as background. Writes
/// out_dir/torso.tfck and out_dir/metrics_torso.jsonl. Frames whose pose
/// degenerates the key projection are skipped for that iteration.
TrainStats train_torso(const scene::Dataset& ds, const std::string& head_ckpt,
                       const TrainConfig& cfg, const std::string& out_dir);

}  // namespace trifield::train
