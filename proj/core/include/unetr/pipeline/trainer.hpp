#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <vector>

#include "unetr/model/unetr.hpp"
#include "unetr/pipeline/adamw.hpp"
#include "unetr/pipeline/augment.hpp"
#include "unetr/volume.hpp"

namespace unetr {

struct TrainConfig {
    AdamWConfig optimizer;
    std::size_t batch = 2;
    std::size_t iterations = 2000;
    double fg_ratio = 0.5;
    AugmentConfig augment;
    std::uint64_t seed = 0;
    /// Held-out Dice every `val_interval` iterations; 0 evaluates only after the last one.
    std::size_t val_interval = 0;
    double overlap = 0.5;
    double smooth = 1e-5;

    void validate() const;
};

struct LossRecord {
    std::size_t iteration = 0;
    double loss = 0.0;
    double dice_term = 0.0;
    double cross_entropy = 0.0;
    double val_dice = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
    std::vector<LossRecord> curve;
    double final_val_dice = std::numeric_limits<double>::quiet_NaN();
};

/// Thrown when the loss turns non-finite. Parameters still hold the last
/// successful update.
class DivergenceError : public NumericError {
public:
    DivergenceError(std::size_t iteration, const std::string& what)
        : NumericError(what), iteration_(iteration)
    {
    }
    std::size_t iteration() const noexcept { return iteration_; }

private:
    std::size_t iteration_;
};

/// Mean foreground Dice (classes 1..J-1, then over volumes) of sliding-window
/// predictions.
double validation_dice(const UnetrModel<float>& model, const std::vector<VolumeSample>& volumes,
                       double overlap);

/// Non-overlapping block means of the loss from `start` on, `window` iterations each.
std::vector<double> block_means(const std::vector<LossRecord>& curve, std::size_t start, std::size_t window);

void write_loss_curve(std::ostream& out, const std::vector<LossRecord>& curve);

class Trainer {
public:
    Trainer(UnetrModel<float>& model, TrainConfig cfg);

    /// sample -> augment -> forward -> loss -> backward per batch element
    /// (loss scaled by 1/batch), then one AdamW step per iteration.
    TrainResult run(const std::vector<VolumeSample>& train, const std::vector<VolumeSample>& val,
                    const std::function<void(const LossRecord&)>& on_iteration = {});

    OptimizerState<float>& optimizer_state() noexcept { return state_; }

private:
    UnetrModel<float>& model_;
    TrainConfig cfg_;
    OptimizerState<float> state_;
};

} // namespace unetr
