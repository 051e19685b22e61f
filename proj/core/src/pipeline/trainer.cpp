#include "unetr/pipeline/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <random>

#include "unetr/autodiff/ops.hpp"
#include "unetr/error.hpp"
#include "unetr/objective/loss.hpp"
#include "unetr/objective/metrics.hpp"
#include "unetr/pipeline/inference.hpp"
#include "unetr/pipeline/preprocess.hpp"

namespace unetr {

void TrainConfig::validate() const
{
    if (batch == 0 || iterations == 0)
        throw ConfigError("train: batch and iterations must be positive");
    if (!(optimizer.lr >= 0.0) || !(optimizer.eps > 0.0) || !(optimizer.weight_decay >= 0.0))
        throw ConfigError("train: lr and weight_decay must be >= 0, eps > 0");
    if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0) || !(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0))
        throw ConfigError("train: betas must be in [0, 1)");
    if (!(fg_ratio >= 0.0 && fg_ratio <= 1.0))
        throw ConfigError("train: fg_ratio must be in [0, 1]");
    if (!(overlap >= 0.0 && overlap < 1.0))
        throw ConfigError("train: overlap must be in [0, 1)");
    if (!(smooth >= 0.0))
        throw ConfigError("train: smooth must be >= 0");
}

double validation_dice(const UnetrModel<float>& model, const std::vector<VolumeSample>& volumes, double overlap)
{
    if (volumes.empty())
        return std::numeric_limits<double>::quiet_NaN();
    double total = 0.0;
    for (const auto& v : volumes) {
        const LabelMap pred = argmax_labels(sliding_window_infer(model, v.image, overlap));
        double per_volume = 0.0;
        for (std::size_t c = 1; c < model.config().classes; ++c)
            per_volume += dice_score(class_mask(v.label.data, static_cast<std::uint8_t>(c)),
                                     class_mask(pred.data, static_cast<std::uint8_t>(c)));
        total += per_volume / static_cast<double>(model.config().classes - 1);
    }
    return total / static_cast<double>(volumes.size());
}

std::vector<double> block_means(const std::vector<LossRecord>& curve, std::size_t start, std::size_t window)
{
    std::vector<double> means;
    if (window == 0)
        return means;
    for (std::size_t b = start; b + window <= curve.size(); b += window) {
        double acc = 0.0;
        for (std::size_t i = b; i < b + window; ++i)
            acc += curve[i].loss;
        means.push_back(acc / static_cast<double>(window));
    }
    return means;
}

void write_loss_curve(std::ostream& out, const std::vector<LossRecord>& curve)
{
    out << "iteration loss val_dice\n";
    char line[96];
    for (const auto& r : curve) {
        if (std::isnan(r.val_dice))
            std::snprintf(line, sizeof line, "%zu %.9g nan\n", r.iteration, r.loss);
        else
            std::snprintf(line, sizeof line, "%zu %.9g %.6f\n", r.iteration, r.loss, r.val_dice);
        out << line;
    }
}

Trainer::Trainer(UnetrModel<float>& model, TrainConfig cfg) : model_(model), cfg_(std::move(cfg))
{
    cfg_.validate();
}

TrainResult Trainer::run(const std::vector<VolumeSample>& train, const std::vector<VolumeSample>& val,
                         const std::function<void(const LossRecord&)>& on_iteration)
{
    if (train.empty())
        throw ConfigError("train: empty training set");
    const Dims3 patch = model_.config().input_dims;
    std::vector<PatchSampler> samplers;
    samplers.reserve(train.size());
    for (const auto& s : train)
        samplers.emplace_back(s, patch, cfg_.fg_ratio);

    std::mt19937_64 rng(cfg_.seed);
    std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
    const auto params = model_.parameters();
    const auto inv_batch = static_cast<float>(1.0 / static_cast<double>(cfg_.batch));
    const std::size_t start = state_.step;

    TrainResult result;
    for (std::size_t it = 0; it < cfg_.iterations; ++it) {
        model_.zero_grad();
        LossRecord rec;
        rec.iteration = start + it;
        for (std::size_t b = 0; b < cfg_.batch; ++b) {
            auto sample = samplers[pick(rng)].draw(rng);
            augment(sample.image, sample.label, cfg_.augment, rng);
            ad::ComputationTape<float> tape;
            ad::TapeScope<float> scope(tape);
            ad::Tensor<float> x({sample.image.channels, patch[0], patch[1], patch[2]}, std::move(sample.image.data));
            LossParts parts;
            const auto loss = dice_ce_loss_logits(model_.forward(x), std::span<const std::uint8_t>(sample.label.data),
                                                  static_cast<float>(cfg_.smooth), &parts);
            if (!std::isfinite(parts.total()))
                throw DivergenceError(rec.iteration, "train: loss became non-finite at iteration " +
                                                         std::to_string(rec.iteration));
            ad::backward(tape, ad::scale(loss, inv_batch));
            rec.loss += parts.total() / static_cast<double>(cfg_.batch);
            rec.dice_term += parts.dice / static_cast<double>(cfg_.batch);
            rec.cross_entropy += parts.cross_entropy / static_cast<double>(cfg_.batch);
        }
        try {
            adamw_step<float>(params, state_, cfg_.optimizer);
        } catch (const NumericError& e) {
            throw DivergenceError(rec.iteration, e.what());
        }
        const bool last = it + 1 == cfg_.iterations;
        if (!val.empty() && (last || (cfg_.val_interval > 0 && (it + 1) % cfg_.val_interval == 0)))
            rec.val_dice = validation_dice(model_, val, cfg_.overlap);
        if (last)
            result.final_val_dice = rec.val_dice;
        result.curve.push_back(rec);
        if (on_iteration)
            on_iteration(rec);
    }
    return result;
}

} // namespace unetr
