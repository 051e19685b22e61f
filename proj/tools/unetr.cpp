// unetr: phantom generation, training, inference, evaluation and model summary.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "unetr/autodiff/kernels.hpp"
#include "unetr/error.hpp"
#include "unetr/io/checkpoint.hpp"
#include "unetr/io/complexity.hpp"
#include "unetr/io/config.hpp"
#include "unetr/io/phantom.hpp"
#include "unetr/io/volume_io.hpp"
#include "unetr/objective/report.hpp"
#include "unetr/pipeline/inference.hpp"
#include "unetr/pipeline/preprocess.hpp"
#include "unetr/pipeline/trainer.hpp"

namespace fs = std::filesystem;
using namespace unetr;

namespace {

struct Common {
    std::optional<std::uint64_t> seed;
    int threads = 0;
};

void apply_threads(const Common& c)
{
    if (c.threads > 0)
        kernels::set_num_threads(c.threads);
}

KeyValueConfig load_or_empty(const std::string& path)
{
    return path.empty() ? KeyValueConfig::parse("", "<defaults>") : KeyValueConfig::load(path);
}

int run_gen(const std::string& config_path, const std::string& out_dir, const Common& common)
{
    auto kv = load_or_empty(config_path);
    kv.require_known(phantom_keys());
    if (common.seed)
        kv.set("seed", std::to_string(*common.seed));
    const PhantomSpec spec = phantom_spec_from(kv);
    const auto samples = generate_phantoms(spec);
    write_dataset(out_dir, samples);
    std::cout << "wrote " << samples.size() << " cases of " << to_string(spec.dims) << " to " << out_dir << "\n";
    return 0;
}

int run_train(const std::string& config_path, const std::string& data_dir, const std::string& out_path,
              std::string curve_path, const std::string& resume, const Common& common)
{
    apply_threads(common);
    auto kv = load_or_empty(config_path);
    std::set<std::string> known = model_keys();
    known.insert(train_keys().begin(), train_keys().end());
    known.insert({"train_ratio", "val_ratio", "test_ratio"});
    kv.require_known(known);
    if (common.seed)
        kv.set("seed", std::to_string(*common.seed));
    const TrainConfig tcfg = train_config_from(kv);

    const auto dataset = read_dataset(data_dir);
    const auto split = split_dataset(dataset.size(), kv.get_double("train_ratio", 0.8),
                                     kv.get_double("val_ratio", 0.2), kv.get_double("test_ratio", 0.0), tcfg.seed);
    std::vector<VolumeSample> train, val;
    for (const auto i : split.train)
        train.push_back(dataset[i]);
    for (const auto i : split.val)
        val.push_back(dataset[i]);

    std::unique_ptr<UnetrModel<float>> model;
    std::optional<OptimizerState<float>> restored;
    if (!resume.empty()) {
        auto loaded = load_checkpoint(resume);
        model = std::move(loaded.model);
        restored = std::move(loaded.optimizer);
    } else {
        model = std::make_unique<UnetrModel<float>>(model_config_from(kv), tcfg.seed);
    }
    Trainer trainer(*model, tcfg);
    if (restored)
        trainer.optimizer_state() = *restored;

    if (curve_path.empty())
        curve_path = out_path + ".loss.txt";
    std::cout << "training on " << train.size() << " cases, validating on " << val.size() << ", "
              << model->parameter_count() << " parameters\n";
    std::vector<LossRecord> curve;
    auto log = [&](const LossRecord& r) {
        curve.push_back(r);
        if ((r.iteration + 1) % 50 == 0 || !std::isnan(r.val_dice)) {
            std::printf("iter %6zu  loss %.5f  dice %.5f  ce %.5f", r.iteration + 1, r.loss, r.dice_term,
                        r.cross_entropy);
            if (!std::isnan(r.val_dice))
                std::printf("  val_dice %.4f", r.val_dice);
            std::printf("\n");
            std::fflush(stdout);
        }
    };
    auto save = [&] {
        save_checkpoint(out_path, *model, &trainer.optimizer_state());
        std::ostringstream text;
        write_loss_curve(text, curve);
        write_file_atomic(curve_path, text.str());
    };
    try {
        trainer.run(train, val, log);
    } catch (const DivergenceError& e) {
        save();
        std::cerr << "error: " << e.what() << "; last good parameters saved to " << out_path << "\n";
        return 3;
    }
    save();
    std::cout << "checkpoint " << out_path << " (fnv1a " << std::hex << fnv1a64(read_file(out_path)) << std::dec
              << "), loss curve " << curve_path << "\n";
    return 0;
}

int run_infer(const std::string& checkpoint, const std::string& input, const std::string& out_labels,
              const std::string& out_probs, double overlap, const Common& common)
{
    apply_threads(common);
    const auto loaded = load_checkpoint(checkpoint);
    Spacing spacing{};
    const Image image = read_image(input, &spacing);
    std::size_t windows = 0;
    const Image probs = sliding_window_infer(*loaded.model, image, overlap, &windows);
    write_volume(out_labels, argmax_labels(probs), spacing);
    if (!out_probs.empty())
        write_volume(out_probs, probs, spacing);
    std::cout << "inferred " << to_string(image.dims) << " with " << windows << " windows -> " << out_labels << "\n";
    return 0;
}

int run_eval(const std::string& truth_path, const std::string& pred_path, std::size_t classes,
             const std::string& json_path, const std::string& text_path)
{
    Spacing spacing{};
    const LabelMap truth = read_labels(truth_path, &spacing);
    const LabelMap pred = read_labels(pred_path);
    if (classes == 0) {
        std::uint8_t top = 1;
        for (const auto v : truth.data)
            top = std::max(top, v);
        for (const auto v : pred.data)
            top = std::max(top, v);
        classes = static_cast<std::size_t>(top) + 1;
    }
    const MetricReport report = evaluate_segmentation(truth, pred, spacing, classes);
    std::cout << report.to_text();
    if (!json_path.empty())
        write_file_atomic(json_path, report.to_json());
    if (!text_path.empty())
        write_file_atomic(text_path, report.to_text());
    return 0;
}

int run_summary(const std::string& config_path, const std::vector<std::size_t>& volume, double overlap)
{
    auto kv = load_or_empty(config_path);
    kv.require_known(model_keys());
    const ModelConfig cfg = model_config_from(kv);
    const ComplexityReport report = count_params_flops(cfg);
    std::cout << report.to_text() << "\ndecoder channel table\n"
              << format_decoder_table(report.decoder_table) << "\n"
              << reference_comparison(report);
    if (!volume.empty()) {
        const Dims3 dims = volume.size() == 1 ? Dims3{volume[0], volume[0], volume[0]}
                                              : Dims3{volume.at(0), volume.at(1), volume.at(2)};
        Dims3 padded = dims;
        for (std::size_t a = 0; a < 3; ++a)
            padded[a] = std::max(padded[a], cfg.input_dims[a]);
        const auto grid = window_grid(padded, cfg.input_dims, overlap);
        const std::set<Dims3> distinct(grid.begin(), grid.end());
        std::printf("\nsliding-window pass over %s: %zu windows (%zu distinct), %.3fG FLOPs\n",
                    to_string(dims).c_str(), grid.size(), distinct.size(),
                    static_cast<double>(sliding_window_flops(report, dims, overlap)) / 1e9);
    }
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"UNETR volumetric segmentation"};
    app.require_subcommand(1);
    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--seed", common.seed, "RNG seed (overrides the config file)");
        sub->add_option("--threads", common.threads, "worker threads; 1 gives fully serial execution")
            ->check(CLI::NonNegativeNumber);
    };

    std::string config, out, data, curve, resume, checkpoint, input, out_probs, truth, pred, json, text;
    double overlap = 0.5;
    std::size_t classes = 0;
    std::vector<std::size_t> volume;

    auto* gen = app.add_subcommand("gen", "generate a synthetic phantom dataset");
    gen->add_option("--config", config, "phantom key=value file")->check(CLI::ExistingFile);
    gen->add_option("--out", out, "output directory")->required();
    add_common(gen);

    auto* train = app.add_subcommand("train", "train a model on a phantom dataset");
    train->add_option("--config", config, "model and training key=value file")->check(CLI::ExistingFile);
    train->add_option("--data", data, "dataset directory (with dataset.txt)")->required();
    train->add_option("--out", out, "checkpoint path")->required();
    train->add_option("--loss-curve", curve, "loss curve path (default <out>.loss.txt)");
    train->add_option("--resume", resume, "continue from a checkpoint")->check(CLI::ExistingFile);
    add_common(train);

    auto* infer = app.add_subcommand("infer", "sliding-window inference on one volume");
    infer->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
    infer->add_option("--input", input, "image volume")->required()->check(CLI::ExistingFile);
    infer->add_option("--out", out, "label volume to write")->required();
    infer->add_option("--probs", out_probs, "probability volume to write");
    infer->add_option("--overlap", overlap, "window overlap in [0, 1)");
    add_common(infer);

    auto* eval = app.add_subcommand("eval", "Dice and HD95 of a prediction against ground truth");
    eval->add_option("--truth", truth)->required()->check(CLI::ExistingFile);
    eval->add_option("--pred", pred)->required()->check(CLI::ExistingFile);
    eval->add_option("--classes", classes, "class count J (default: largest label + 1)");
    eval->add_option("--json", json, "write the report as JSON");
    eval->add_option("--text", text, "write the report as a text table");

    auto* summary = app.add_subcommand("summary", "parameter/FLOP report and decoder table");
    summary->add_option("--config", config, "model key=value file")->check(CLI::ExistingFile);
    summary->add_option("--volume", volume, "volume extent for a full sliding-window pass (n or h w d)")
        ->expected(1, 3);
    summary->add_option("--overlap", overlap, "window overlap in [0, 1)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << app.help();
        return app.exit(e);
    }

    try {
        if (*gen)
            return run_gen(config, out, common);
        if (*train)
            return run_train(config, data, out, curve, resume, common);
        if (*infer)
            return run_infer(checkpoint, input, out, out_probs, overlap, common);
        if (*eval)
            return run_eval(truth, pred, classes, json, text);
        if (*summary)
            return run_summary(config, volume, overlap);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
