// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include "oracles.hpp"
#include "unetr/autodiff/grad_check.hpp"
#include "unetr/autodiff/kernels.hpp"
#include "unetr/autodiff/ops.hpp"
#include "unetr/io/checkpoint.hpp"
#include "unetr/io/complexity.hpp"
#include "unetr/io/config.hpp"
#include "unetr/io/phantom.hpp"
#include "unetr/io/volume_io.hpp"
#include "unetr/model/embedding.hpp"
#include "unetr/model/encoder.hpp"
#include "unetr/model/unetr.hpp"
#include "unetr/objective/loss.hpp"
#include "unetr/objective/metrics.hpp"
#include "unetr/pipeline/adamw.hpp"
#include "unetr/pipeline/inference.hpp"
#include "unetr/pipeline/preprocess.hpp"
#include "unetr/pipeline/trainer.hpp"

namespace ad = unetr::ad;
namespace fs = std::filesystem;
using ad::Tensor;
using unetr::Dims3;

namespace {

// Pinned thresholds.
constexpr double kParamsTol = 0.05;
constexpr double kFlopsTol = 0.15;
constexpr double kSimplexTol = 1e-5;
constexpr double kGradTol = 1e-6;
constexpr double kMetricTol = 1e-9;
constexpr double kLossExampleTol = 1e-6;
constexpr double kLossExampleRounding = 5e-5;
constexpr double kToyDice = 0.90;
constexpr std::size_t kToyBlock = 100;
constexpr std::size_t kToyBurnIn = 200;
constexpr double kEquivarianceTol = 1e-5;
constexpr double kBreakTol = 1e-2;

constexpr double kParamsSeconds = 1.0;
constexpr double kFlopsSeconds = 1.0;
constexpr double kShapeSeconds = 120.0;
constexpr double kGradSeconds = 300.0;
constexpr double kMetricSeconds = 60.0;
constexpr double kToySeconds = 1800.0;

int failures = 0;

void report(bool pass, const std::string& name, const std::string& detail)
{
    std::printf("%s  %-28s %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
    std::fflush(stdout);
    failures += pass ? 0 : 1;
}

class Stopwatch {
public:
    double seconds() const
    {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* format, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, format, args...);
    return buf;
}

template <typename T>
Tensor<T> random_volume(std::size_t channels, Dims3 d, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    return oracle::random_tensor<T>({channels, d[0], d[1], d[2]}, rng, false);
}

double max_simplex_error(const Tensor<float>& probs)
{
    const std::size_t classes = probs.shape()[0];
    const std::size_t voxels = probs.numel() / classes;
    const auto p = probs.data();
    double worst = 0.0;
    for (std::size_t v = 0; v < voxels; ++v) {
        double s = 0.0;
        for (std::size_t c = 0; c < classes; ++c) {
            if (p[c * voxels + v] < 0.0f)
                return 1.0;
            s += p[c * voxels + v];
        }
        worst = std::max(worst, std::abs(s - 1.0));
    }
    return worst;
}

double max_simplex_error(const unetr::Image& probs)
{
    return max_simplex_error(Tensor<float>({probs.channels, probs.dims[0], probs.dims[1], probs.dims[2]}, probs.data));
}

// ---- complexity -------------------------------------------------------------

void check_params_and_flops()
{
    Stopwatch watch;
    const auto report_ = unetr::count_params_flops(unetr::ModelConfig{});
    const double seconds = watch.seconds();
    const double params = static_cast<double>(report_.total_params);
    const double flops = static_cast<double>(report_.total_flops);
    const double dp = params / 92.58e6 - 1.0;
    const double df = flops / 41.19e9 - 1.0;
    report(std::abs(dp) <= kParamsTol && seconds < kParamsSeconds, "parameter count",
           fmt("%.2fM vs 92.58M (%+.1f%%, tol %.0f%%), %.3f s", params / 1e6, 100 * dp, 100 * kParamsTol, seconds));
    report(std::abs(df) <= kFlopsTol && seconds < kFlopsSeconds, "FLOP count",
           fmt("%.2fG vs 41.19G (%+.1f%%, tol %.0f%%, 2*MAC), %.3f s", flops / 1e9, 100 * df, 100 * kFlopsTol,
               seconds));
}

// ---- shape pipeline ---------------------------------------------------------

void check_shape_pipeline()
{
    const unetr::ModelConfig cfg;
    const unetr::UnetrModel<float> model(cfg, 1);
    const auto x = random_volume<float>(1, {96, 96, 96}, 2);
    Stopwatch watch;
    ad::NoGradScope<float> no_grad;
    const auto out = model.forward_with_states(x);
    const auto probs = ad::softmax(out.logits, 0);
    const double seconds = watch.seconds();
    bool ok = out.states.size() == 4;
    for (const std::size_t layer : {3u, 6u, 9u, 12u}) {
        const auto it = out.states.find(layer);
        ok = ok && it != out.states.end() && it->second.shape() == ad::Shape{216, 768};
    }
    ok = ok && probs.shape() == ad::Shape{14, 96, 96, 96};
    const double simplex = max_simplex_error(probs);
    report(ok && simplex < kSimplexTol && seconds < kShapeSeconds, "shape pipeline",
           fmt("states z3,z6,z9,z12 216x768: %s, output 14x96^3, simplex err %.1e, %.1f s", ok ? "yes" : "no",
               simplex, seconds));
}

// ---- gradient suite ---------------------------------------------------------

struct GradTally {
    double worst = 0.0;
    std::string worst_name;
    std::size_t checks = 0;

    void add(const std::string& name, const ad::GradCheckResult& r)
    {
        ++checks;
        if (r.max_relative_error > worst) {
            worst = r.max_relative_error;
            worst_name = name;
        }
    }
};

/// Checks sum(w * op(inputs)) with signed random weights.
void check_op(GradTally& tally, const std::string& name,
              const std::function<Tensor<double>(std::vector<Tensor<double>>&)>& op, std::vector<Tensor<double>> inputs,
              std::mt19937_64& rng, double eps)
{
    Tensor<double> probe;
    {
        ad::NoGradScope<double> no_grad;
        probe = op(inputs);
    }
    auto weights = oracle::random_tensor<double>(probe.shape(), rng, false, 0.5, 1.5);
    std::bernoulli_distribution flip(0.5);
    for (auto& v : weights.mutable_data())
        if (flip(rng))
            v = -v;
    ad::GradCheckOptions options;
    options.eps = eps;
    tally.add(name, ad::grad_check<double>([&] { return ad::sum(ad::mul(op(inputs), weights)); }, inputs, options));
}

/// Signs of every leaky_relu input recorded while evaluating `f`.
std::vector<bool> kink_signs(const std::function<Tensor<double>()>& f, double& value)
{
    ad::ComputationTape<double> tape;
    ad::TapeScope<double> scope(tape);
    value = f().item();
    std::vector<bool> signs;
    for (const auto& entry : tape.entries())
        if (entry.op.find("leaky_relu") != std::string::npos)
            for (const double v : entry.inputs.front()->data)
                signs.push_back(v > 0.0);
    return signs;
}

/// Central differences on `per_input` random entries of each input. Each entry
/// uses the largest step in {1e-3, 1e-4, 1e-5, 1e-6} at which no leaky_relu
/// input changes sign.
ad::GradCheckResult kink_free_check(const std::function<Tensor<double>()>& f, std::vector<Tensor<double>>& inputs,
                                    std::size_t per_input, std::uint64_t seed)
{
    for (auto& t : inputs) {
        t.mutable_grad();
        t.zero_grad();
    }
    {
        ad::ComputationTape<double> tape;
        ad::TapeScope<double> scope(tape);
        const auto loss = f();
        ad::backward(tape, loss);
    }
    double unused = 0.0;
    const auto base = kink_signs(f, unused);
    ad::GradCheckResult result;
    std::mt19937_64 rng(seed);
    for (std::size_t which = 0; which < inputs.size(); ++which) {
        const std::vector<double> analytic(inputs[which].grad().begin(), inputs[which].grad().end());
        auto values = inputs[which].mutable_data();
        std::vector<std::size_t> positions(values.size());
        std::iota(positions.begin(), positions.end(), std::size_t{0});
        std::shuffle(positions.begin(), positions.end(), rng);
        positions.resize(std::min(per_input, positions.size()));
        for (const std::size_t i : positions) {
            const double saved = values[i];
            double numeric = 0.0;
            for (const double eps : {1e-3, 1e-4, 1e-5, 1e-6}) {
                double plus = 0.0, minus = 0.0;
                values[i] = saved + eps;
                const bool same_plus = kink_signs(f, plus) == base;
                values[i] = saved - eps;
                const bool same_minus = kink_signs(f, minus) == base;
                values[i] = saved;
                numeric = (plus - minus) / ((saved + eps) - (saved - eps));
                if (same_plus && same_minus)
                    break;
            }
            const double exact = analytic[i];
            const double rel = std::abs(exact - numeric) / std::max({std::abs(exact), std::abs(numeric), 1e-8});
            ++result.entries_checked;
            if (result.entries_checked == 1 || rel > result.max_relative_error) {
                result.max_relative_error = rel;
                result.worst_input = which;
                result.worst_index = i;
                result.worst_analytic = exact;
                result.worst_numeric = numeric;
            }
        }
    }
    return result;
}

unetr::ModelConfig gradient_config()
{
    unetr::ModelConfig cfg;
    cfg.classes = 3;
    cfg.patch = 4;
    cfg.embed_dim = 16;
    cfg.layers = 4;
    cfg.heads = 2;
    cfg.mlp_hidden = 64;
    cfg.extract_layers = {1, 2, 3, 4};
    cfg.input_dims = {16, 16, 16};
    return cfg;
}

void check_gradients()
{
    Stopwatch watch;
    GradTally tally;
    using In = std::vector<Tensor<double>>;
    // Exact for polynomials of degree <= 2 in any single entry.
    constexpr double quadratic = 2.0;
    constexpr double smooth = 1e-5;
    for (int seed = 0; seed < 5; ++seed) {
        std::mt19937_64 rng(1000 + seed);
        auto rt = [&](ad::Shape s, double lo = -1.0, double hi = 1.0) {
            return oracle::random_tensor<double>(std::move(s), rng, true, lo, hi);
        };
        auto a = rt({3, 4}), b = rt({3, 4}), c = rt({4, 2}), bias = rt({4});
        check_op(tally, "add", [](In& in) { return ad::add(in[0], in[1]); }, {a, b}, rng, quadratic);
        check_op(tally, "sub", [](In& in) { return ad::sub(in[0], in[1]); }, {a, b}, rng, quadratic);
        check_op(tally, "mul", [](In& in) { return ad::mul(in[0], in[1]); }, {a, b}, rng, quadratic);
        check_op(tally, "scale", [](In& in) { return ad::scale(in[0], -1.75); }, {a}, rng, quadratic);
        check_op(tally, "sum", [](In& in) { return ad::sum(in[0]); }, {a}, rng, quadratic);
        check_op(tally, "mean", [](In& in) { return ad::mean(in[0]); }, {a}, rng, quadratic);
        check_op(tally, "add_bias", [](In& in) { return ad::add_bias(in[0], in[1]); }, {a, bias}, rng, quadratic);
        check_op(tally, "matmul", [](In& in) { return ad::matmul(in[0], in[1]); }, {a, c}, rng, quadratic);
        check_op(tally, "matmul batched", [](In& in) { return ad::matmul(in[0], in[1]); }, {rt({2, 3, 4}), rt({2, 4, 2})},
                 rng, quadratic);
        check_op(tally, "transpose", [](In& in) { return ad::transpose(in[0]); }, {a}, rng, quadratic);
        check_op(tally, "reshape", [](In& in) { return ad::reshape(in[0], {4, 3}); }, {a}, rng, quadratic);
        check_op(tally, "slice_columns", [](In& in) { return ad::slice_columns(in[0], 1, 2); }, {a}, rng, quadratic);
        check_op(
            tally, "concat_columns",
            [](In& in) {
                const std::vector<Tensor<double>> parts{in[0], in[1]};
                return ad::concat_columns<double>(parts);
            },
            {a, b}, rng, quadratic);
        check_op(tally, "concat_channels", [](In& in) { return ad::concat_channels(in[0], in[1]); },
                 {rt({1, 2, 2, 3}), rt({2, 2, 2, 3})}, rng, quadratic);
        check_op(tally, "gather", [](In& in) { return ad::gather(in[0], {0, 5, 5, 11, 2}, {5}); }, {a}, rng,
                 quadratic);
        check_op(tally, "conv3d",
                 [](In& in) { return ad::conv3d(in[0], in[1], in[2], {1, 1}); },
                 {rt({2, 4, 4, 4}), rt({2, 2, 3, 3, 3}), rt({2})}, rng, quadratic);
        check_op(tally, "conv3d strided",
                 [](In& in) { return ad::conv3d(in[0], in[1], in[2], {2, 0}); },
                 {rt({1, 5, 5, 5}), rt({2, 1, 1, 1, 1}), rt({2})}, rng, quadratic);
        check_op(tally, "conv_transpose3d",
                 [](In& in) { return ad::conv_transpose3d(in[0], in[1], in[2], 2); },
                 {rt({2, 2, 2, 2}), rt({2, 2, 2, 2, 2}), rt({2})}, rng, quadratic);
        check_op(tally, "layer_norm", [](In& in) { return ad::layer_norm(in[0], in[1], in[2]); },
                 {rt({3, 6}, -2, 2), rt({6}, 0.5, 1.5), rt({6})}, rng, smooth);
        check_op(tally, "instance_norm", [](In& in) { return ad::instance_norm(in[0], in[1], in[2]); },
                 {rt({2, 2, 3, 3}, -2, 2), rt({2}, 0.5, 1.5), rt({2})}, rng, smooth);
        check_op(tally, "gelu", [](In& in) { return ad::gelu(in[0]); }, {rt({3, 5}, -3, 3)}, rng, smooth);
        auto y = rt({3, 5}, 0.1, 3.0);
        for (std::size_t i = 0; i < y.numel(); i += 2)
            y.mutable_data()[i] = -y.data()[i];
        check_op(tally, "leaky_relu", [](In& in) { return ad::leaky_relu(in[0], 0.01); }, {y}, rng, 0.05);
        check_op(tally, "softmax rows", [](In& in) { return ad::softmax(in[0], 1); }, {rt({3, 5}, -3, 3)}, rng,
                 smooth);
        check_op(tally, "softmax columns", [](In& in) { return ad::softmax(in[0], 0); }, {rt({3, 5}, -3, 3)}, rng,
                 smooth);

        // Loss on probabilities and on logits.
        std::vector<std::uint8_t> labels(12);
        for (auto& l : labels)
            l = static_cast<std::uint8_t>(std::uniform_int_distribution<int>(0, 2)(rng));
        const auto g = unetr::one_hot<double>(labels, 3);
        check_op(
            tally, "dice_ce_loss", [&](In& in) { return unetr::dice_ce_loss(ad::softmax(in[0], 1), g); },
            {rt({12, 3}, -2, 2)}, rng, smooth);
        check_op(
            tally, "dice_ce_loss_logits", [&](In& in) { return unetr::dice_ce_loss_logits(in[0], labels); },
            {rt({3, 2, 2, 3}, -2, 2)}, rng, smooth);
    }

    // Composed loss through the tiny model, every parameter tensor and the input.
    unetr::UnetrModel<double> model(gradient_config(), 5);
    auto x = random_volume<double>(1, {16, 16, 16}, 6);
    x.set_requires_grad(true);
    std::vector<std::uint8_t> labels(16 * 16 * 16);
    std::mt19937_64 rng(7);
    for (auto& l : labels)
        l = static_cast<std::uint8_t>(std::uniform_int_distribution<int>(0, 2)(rng));
    std::vector<Tensor<double>> inputs{x};
    for (auto& p : model.parameters())
        inputs.push_back(p.tensor);
    const auto r = kink_free_check(
        [&] { return unetr::dice_ce_loss_logits(model.forward(x), labels); }, inputs, 3, 8);
    const double op_worst = tally.worst;
    const std::string op_worst_name = tally.worst_name;
    tally.add("unetr loss", r);
    const auto params = model.parameters();
    const std::string tensor = r.worst_input == 0 ? "input" : params[r.worst_input - 1].name;
    const double seconds = watch.seconds();
    report(tally.worst < kGradTol && seconds < kGradSeconds, "gradient suite",
           fmt("%zu checks; ops worst rel err %.2e (%s); unetr loss over %zu tensors (%zu entries) worst rel err "
               "%.2e at %s (analytic %.3e, numeric %.3e); %.1f s",
               tally.checks, op_worst, op_worst_name.c_str(), inputs.size(), r.entries_checked,
               r.max_relative_error, tensor.c_str(), r.worst_analytic, r.worst_numeric, seconds));
}

// ---- metric oracles ---------------------------------------------------------

void check_metrics()
{
    Stopwatch watch;
    const Dims3 d{8, 8, 8};
    const unetr::Spacing spacing{1.0, 1.0, 1.0};
    double worst_dice = 0.0, worst_hd = 0.0;
    std::size_t pairs = 0;
    for (int seed = 0; seed < 120; ++seed) {
        std::mt19937_64 rng(seed);
        const double density = std::uniform_real_distribution<double>(0.05, 0.6)(rng);
        std::bernoulli_distribution on(density);
        std::vector<std::uint8_t> g(512), p(512);
        for (auto& v : g)
            v = on(rng);
        for (auto& v : p)
            v = on(rng);
        worst_dice = std::max(worst_dice, std::abs(unetr::dice_score(g, p) - oracle::dice(g, p)));
        const auto sg = unetr::extract_surface(g, d, spacing);
        const auto sp = unetr::extract_surface(p, d, spacing);
        if (sg.empty() || sp.empty())
            continue;
        const auto h = unetr::hd95(sg, sp);
        const double expect = oracle::hd95(oracle::surface(g, d, spacing), oracle::surface(p, d, spacing));
        worst_hd = std::max(worst_hd, h ? std::abs(*h - expect) : 1.0);
        ++pairs;
    }
    // I=1, J=2, Y=(0.5, 0.5), G=(1, 0), smooth 0.
    const Tensor<double> y({1, 2}, std::vector<double>{0.5, 0.5});
    const std::vector<std::uint8_t> label{0};
    const double loss = unetr::dice_ce_loss(y, unetr::one_hot<double>(label, 2), 0.0).item();
    const double exact = 0.6 + std::log(2.0);
    const double seconds = watch.seconds();
    const bool ok = pairs >= 100 && worst_dice < kMetricTol && worst_hd < kMetricTol &&
                    std::abs(loss - exact) < kLossExampleTol && std::abs(loss - 1.2931) < kLossExampleRounding &&
                    seconds < kMetricSeconds;
    report(ok, "metric oracles",
           fmt("%zu 8^3 pairs, dice err %.1e, hd95 err %.1e; loss example %.6f (1.2931), %.2f s", pairs, worst_dice,
               worst_hd, loss, seconds));
}

// ---- toy training -----------------------------------------------------------

struct ToyRun {
    std::unique_ptr<unetr::UnetrModel<float>> model;
    std::vector<unetr::VolumeSample> val;
};

ToyRun check_toy_training()
{
    const fs::path configs = UNETR_CONFIG_DIR;
    const auto phantom_kv = unetr::KeyValueConfig::load(configs / "toy_phantoms.cfg");
    const auto train_kv = unetr::KeyValueConfig::load(configs / "toy_train.cfg");
    const auto dataset = unetr::generate_phantoms(unetr::phantom_spec_from(phantom_kv));
    const auto tcfg = unetr::train_config_from(train_kv);
    const auto split = unetr::split_dataset(dataset.size(), train_kv.get_double("train_ratio", 0.8),
                                            train_kv.get_double("val_ratio", 0.2),
                                            train_kv.get_double("test_ratio", 0.0), tcfg.seed);
    ToyRun run;
    std::vector<unetr::VolumeSample> train;
    for (const auto i : split.train)
        train.push_back(dataset[i]);
    for (const auto i : split.val)
        run.val.push_back(dataset[i]);
    const auto mcfg = unetr::model_config_from(train_kv);
    run.model = std::make_unique<unetr::UnetrModel<float>>(mcfg, tcfg.seed);

    Stopwatch watch;
    unetr::Trainer trainer(*run.model, tcfg);
    const auto result = trainer.run(train, run.val);
    const double seconds = watch.seconds();

    const auto means = unetr::block_means(result.curve, kToyBurnIn, kToyBlock);
    std::size_t rises = 0;
    double worst_rise = 0.0;
    for (std::size_t i = 1; i < means.size(); ++i)
        if (means[i] > means[i - 1]) {
            ++rises;
            worst_rise = std::max(worst_rise, means[i] - means[i - 1]);
        }
    const bool model_ok = mcfg.patch == 8 && mcfg.embed_dim == 64 && mcfg.layers == 4 &&
                          mcfg.input_dims == Dims3{32, 32, 32} && dataset.size() == 40 && tcfg.batch == 2 &&
                          tcfg.iterations <= 2000 && tcfg.optimizer.lr == 1e-4;
    const bool ok = model_ok && result.final_val_dice >= kToyDice && rises == 0 && !means.empty() &&
                    seconds <= kToySeconds;
    report(ok, "toy training",
           fmt("val dice %.4f (>= %.2f) on %zu held-out, %zu block means after %zu: %zu rises (max %.2e), %zu "
               "iterations on %d thread(s), %.0f s",
               result.final_val_dice, kToyDice, run.val.size(), means.size(), kToyBurnIn, rises, worst_rise,
               result.curve.size(), unetr::kernels::num_threads(), seconds));
    return run;
}

// ---- sliding window ---------------------------------------------------------

void check_sliding_window()
{
    unetr::ModelConfig cfg;
    cfg.classes = 3;
    cfg.embed_dim = 32;
    cfg.layers = 4;
    cfg.heads = 2;
    cfg.mlp_hidden = 64;
    cfg.extract_layers = {1, 2, 3, 4};
    const unetr::UnetrModel<float> model(cfg, 11);

    Stopwatch watch;
    const auto window = random_volume<float>(1, {96, 96, 96}, 12);
    const unetr::Image single(1, {96, 96, 96});
    unetr::Image vol = single;
    vol.data.assign(window.data().begin(), window.data().end());
    std::size_t used_single = 0;
    const auto blended = unetr::sliding_window_infer(model, vol, 0.5, &used_single);
    const auto direct = unetr::predict_window(model, vol);
    const bool bitwise = blended.data == direct.data;

    const auto grid = unetr::window_grid({144, 144, 144}, {96, 96, 96}, 0.5);
    const auto coverage = unetr::coverage_map({144, 144, 144}, {96, 96, 96}, 0.5);
    const auto min_cover = *std::min_element(coverage.data.begin(), coverage.data.end());

    unetr::Image big(1, {144, 144, 144});
    std::mt19937_64 rng(13);
    std::normal_distribution<float> n;
    for (auto& v : big.data)
        v = n(rng);
    std::size_t used = 0;
    const auto out = unetr::sliding_window_infer(model, big, 0.5, &used);
    const std::set<Dims3> distinct(grid.begin(), grid.end());
    const double simplex = max_simplex_error(out);
    const bool ok = bitwise && grid.size() == 27 && used == 27 && min_cover >= 1 && simplex < kSimplexTol &&
                    out.dims == Dims3{144, 144, 144};
    report(ok, "sliding window",
           fmt("96^3 == window bitwise: %s; 144^3: %zu windows (%zu distinct), min coverage %u, simplex err %.1e, "
               "%.1f s",
               bitwise ? "yes" : "no", used, distinct.size(), min_cover, simplex, watch.seconds()));
}

// ---- determinism through the command line -----------------------------------

int run_cli(const std::string& args, const fs::path& log)
{
    const std::string cmd = std::string("\"") + UNETR_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void check_determinism()
{
    Stopwatch watch;
    const fs::path dir = fs::temp_directory_path() / ("unetr_accept_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    const fs::path configs = UNETR_CONFIG_DIR;
    // Toy configuration, shortened.
    const auto base = unetr::KeyValueConfig::load(configs / "toy_train.cfg");
    std::ostringstream cfg;
    for (const auto& [k, v] : base.entries())
        if (k != "iterations" && k != "val_interval")
            cfg << k << " = " << v << "\n";
    cfg << "iterations = 20\nval_interval = 10\n";
    std::ofstream(dir / "train.cfg") << cfg.str();
    const std::string d = dir.string();
    const auto log = dir / "log.txt";

    bool ok = run_cli("gen --config " + (configs / "toy_phantoms.cfg").string() + " --out " + d + "/data", log) == 0;
    for (const char* name : {"a", "b"})
        ok = ok && run_cli("train --config " + d + "/train.cfg --data " + d + "/data --out " + d + "/" + name +
                               ".ckpt --seed 3 --threads 1",
                           log) == 0;
    std::uint64_t ha = 0, hb = 0;
    if (ok) {
        ha = unetr::fnv1a64(slurp(dir / "a.ckpt"));
        hb = unetr::fnv1a64(slurp(dir / "b.ckpt"));
        ok = ha == hb && slurp(dir / "a.ckpt.loss.txt") == slurp(dir / "b.ckpt.loss.txt");
    } else {
        std::fprintf(stderr, "%s\n", slurp(log).c_str());
    }
    fs::remove_all(dir);
    report(ok, "determinism",
           fmt("two CLI train runs (seed 3, --threads 1): fnv1a %016llx / %016llx, %.1f s",
               static_cast<unsigned long long>(ha), static_cast<unsigned long long>(hb), watch.seconds()));
}

// ---- permutation equivariance -----------------------------------------------

double max_permuted_diff(unetr::UnetrModel<float>& model, const Tensor<float>& positions)
{
    const auto& cfg = model.config();
    const auto& emb = model.embedding();
    const auto& blocks = model.blocks();
    ad::NoGradScope<float> no_grad;
    const auto x = random_volume<float>(cfg.in_channels, cfg.input_dims, 21);
    const auto tokens = ad::matmul(unetr::partition(x, cfg.patch), emb.projection);
    const std::size_t n = tokens.shape()[0], k = tokens.shape()[1];
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(22);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::size_t> rows;
    for (const auto r : perm)
        for (std::size_t j = 0; j < k; ++j)
            rows.push_back(r * k + j);
    const auto a = unetr::encode(ad::add(tokens, positions), cfg.encoder(), blocks);
    const auto b = unetr::encode(ad::add(ad::gather(tokens, rows, {n, k}), positions), cfg.encoder(), blocks);
    double worst = 0.0;
    for (const auto& [layer, za] : a) {
        const auto pa = ad::gather(za, rows, {n, k});
        const auto zb = b.at(layer);
        for (std::size_t i = 0; i < pa.numel(); ++i)
            worst = std::max(worst, static_cast<double>(std::abs(pa.data()[i] - zb.data()[i])));
    }
    return worst;
}

void check_equivariance(ToyRun& run)
{
    Stopwatch watch;
    auto& model = *run.model;
    const auto& pos = model.embedding().positions;
    const Tensor<float> zero(pos.shape());
    const double without = max_permuted_diff(model, zero);
    const double with = max_permuted_diff(model, pos.detach());
    report(without < kEquivarianceTol && with > kBreakTol, "permutation equivariance",
           fmt("trained toy encoder: E_pos = 0 diff %.1e (< %.0e), learned E_pos diff %.2e (> %.0e), %.1f s", without,
               kEquivarianceTol, with, kBreakTol, watch.seconds()));
}

// ---- patch-resolution sweep -------------------------------------------------

void check_patch_sweep()
{
    Stopwatch watch;
    std::string detail;
    bool ok = true;
    for (const auto& [patch, expect_n] : {std::pair<std::size_t, std::size_t>{16, 216}, {32, 27}}) {
        unetr::ModelConfig cfg;
        cfg.patch = patch;
        unetr::UnetrModel<float> model(cfg, patch);
        const auto x = random_volume<float>(1, {96, 96, 96}, patch);
        std::vector<std::uint8_t> labels(96 * 96 * 96);
        std::mt19937_64 rng(patch);
        for (auto& l : labels)
            l = static_cast<std::uint8_t>(std::uniform_int_distribution<int>(0, 13)(rng));
        model.zero_grad();
        double loss = 0.0;
        bool shapes = true;
        {
            ad::ComputationTape<float> tape;
            ad::TapeScope<float> scope(tape);
            const auto out = model.forward_with_states(x);
            for (const auto& [layer, z] : out.states)
                shapes = shapes && z.shape() == ad::Shape{expect_n, 768};
            shapes = shapes && out.logits.shape() == ad::Shape{14, 96, 96, 96};
            const auto l = unetr::dice_ce_loss_logits(out.logits, labels);
            loss = l.item();
            ad::backward(tape, l);
        }
        auto params = model.parameters();
        bool grads = true;
        for (const auto& p : params)
            grads = grads && p.tensor.has_grad();
        unetr::OptimizerState<float> state;
        unetr::adamw_step<float>(params, state, unetr::AdamWConfig{});
        unetr::Image vol(1, {96, 96, 96});
        vol.data.assign(x.data().begin(), x.data().end());
        const auto probs = unetr::sliding_window_infer(model, vol, 0.5);
        const double simplex = max_simplex_error(probs);
        const bool pass = shapes && grads && std::isfinite(loss) && simplex < kSimplexTol;
        ok = ok && pass;
        detail += fmt("P=%zu N=%zu %s (loss %.3f), ", patch, expect_n, pass ? "ok" : "bad", loss);
    }
    report(ok, "patch-resolution sweep", detail + fmt("%.1f s", watch.seconds()));
}

} // namespace

int main()
{
    std::setvbuf(stdout, nullptr, _IOLBF, 0);
    check_params_and_flops();
    check_shape_pipeline();
    check_gradients();
    check_metrics();
    auto toy = check_toy_training();
    check_sliding_window();
    check_determinism();
    check_equivariance(toy);
    check_patch_sweep();
    std::printf("%d of 10 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
