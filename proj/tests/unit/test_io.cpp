#include <gtest/gtest.h>

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include "json.hpp"

#include "oracles.hpp"
#include "unetr/error.hpp"
#include "unetr/io/checkpoint.hpp"
#include "unetr/io/complexity.hpp"
#include "unetr/io/config.hpp"
#include "unetr/io/phantom.hpp"
#include "unetr/io/volume_io.hpp"
#include "unetr/model/unetr.hpp"

namespace ad = unetr::ad;
namespace fs = std::filesystem;
using unetr::Dims3;

namespace {

class TempDir {
public:
    explicit TempDir(const std::string& tag)
        : path_(fs::temp_directory_path() / ("unetr_test_" + tag + "_" + std::to_string(::getpid())))
    {
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

unetr::ModelConfig tiny_model(std::size_t embed_dim = 16)
{
    unetr::ModelConfig cfg;
    cfg.classes = 2;
    cfg.patch = 4;
    cfg.embed_dim = embed_dim;
    cfg.layers = 4;
    cfg.heads = 2;
    cfg.mlp_hidden = 32;
    cfg.extract_layers = {1, 2, 3, 4};
    cfg.input_dims = {16, 16, 16};
    return cfg;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void spit(const fs::path& p, const std::string& text)
{
    std::ofstream out(p, std::ios::binary);
    out << text;
}

std::vector<float> probe_forward(const unetr::UnetrModel<float>& model)
{
    std::mt19937_64 rng(99);
    const auto d = model.config().input_dims;
    const auto x = oracle::random_tensor<float>({model.config().in_channels, d[0], d[1], d[2]}, rng, false);
    const auto y = model.forward(x);
    return {y.data().begin(), y.data().end()};
}

} // namespace

// ---- volume files -----------------------------------------------------------

TEST(VolumeIo, ImageRoundtripIsBitExact)
{
    TempDir dir("vol");
    std::mt19937_64 rng(1);
    std::normal_distribution<float> n(0.0f, 100.0f);
    unetr::Image img(2, {16, 16, 16});
    for (auto& v : img.data)
        v = n(rng);
    img.data[3] = -0.0f;
    unetr::write_volume(dir / "a.vol", img, {1.0, 1.0, 1.0});
    unetr::Spacing sp{};
    const auto back = unetr::read_image(dir / "a.vol", &sp);
    EXPECT_EQ(back.dims, img.dims);
    EXPECT_EQ(back.channels, 2u);
    ASSERT_EQ(back.data.size(), img.data.size());
    EXPECT_EQ(std::memcmp(back.data.data(), img.data.data(), img.data.size() * sizeof(float)), 0);
    EXPECT_EQ(sp, (unetr::Spacing{1.0, 1.0, 1.0}));
}

TEST(VolumeIo, LabelRoundtripAndSpacing)
{
    TempDir dir("lab");
    unetr::LabelMap lab(1, {3, 4, 5});
    for (std::size_t i = 0; i < lab.data.size(); ++i)
        lab.data[i] = static_cast<std::uint8_t>(i % 7);
    unetr::write_volume(dir / "l.vol", lab, {0.8, 0.8, 2.5});
    unetr::Spacing sp{};
    EXPECT_EQ(unetr::read_labels(dir / "l.vol", &sp).data, lab.data);
    EXPECT_EQ(sp, (unetr::Spacing{0.8, 0.8, 2.5}));
    const auto h = unetr::read_volume_header(dir / "l.vol");
    EXPECT_EQ(h.dtype, "u8");
    EXPECT_EQ(h.dims, (Dims3{3, 4, 5}));
}

TEST(VolumeIo, LittleEndianPayload)
{
    unetr::Image img(1, {1, 1, 1});
    img.data[0] = 1.0f;
    const std::string bytes = unetr::encode_volume(img, {1.0, 1.0, 1.0});
    ASSERT_GE(bytes.size(), 4u);
    EXPECT_EQ(bytes.substr(bytes.size() - 4), std::string("\x00\x00\x80\x3f", 4));
}

TEST(VolumeIo, TruncatedPayloadIsRejected)
{
    TempDir dir("trunc");
    unetr::Image img(1, {4, 4, 4}, 1.0f);
    const std::string bytes = unetr::encode_volume(img, {1.0, 1.0, 1.0});
    spit(dir / "t.vol", bytes.substr(0, bytes.size() - 1));
    try {
        unetr::read_image(dir / "t.vol");
        FAIL() << "expected FormatError";
    } catch (const unetr::FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("payload"), std::string::npos) << e.what();
    }
    spit(dir / "long.vol", bytes + "x");
    EXPECT_THROW(unetr::read_image(dir / "long.vol"), unetr::FormatError);
}

TEST(VolumeIo, HeaderErrors)
{
    TempDir dir("hdr");
    unetr::Image img(1, {2, 2, 2});
    std::string bytes = unetr::encode_volume(img, {1.0, 1.0, 1.0});
    spit(dir / "magic.vol", "XNETRVOL" + bytes.substr(8));
    EXPECT_THROW(unetr::read_image(dir / "magic.vol"), unetr::FormatError);

    std::string f64 = bytes;
    f64.replace(f64.find("dtype f32"), 9, "dtype f64");
    spit(dir / "dtype.vol", f64);
    EXPECT_THROW(unetr::read_image(dir / "dtype.vol"), unetr::FormatError);

    spit(dir / "img.vol", bytes);
    EXPECT_THROW(unetr::read_labels(dir / "img.vol"), unetr::FormatError);
    EXPECT_ANY_THROW(unetr::read_image(dir / "missing.vol"));
}

TEST(VolumeIo, DatasetRoundtrip)
{
    TempDir dir("ds");
    unetr::PhantomSpec spec;
    spec.dims = {12, 12, 12};
    spec.count = 3;
    const auto samples = unetr::generate_phantoms(spec);
    unetr::write_dataset(dir.path(), samples);
    const auto back = unetr::read_dataset(dir.path());
    ASSERT_EQ(back.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(back[i].image.data, samples[i].image.data);
        EXPECT_EQ(back[i].label.data, samples[i].label.data);
        EXPECT_EQ(back[i].spacing, samples[i].spacing);
    }
}

// ---- checkpoints ------------------------------------------------------------

TEST(Checkpoint, Fnv1aReferenceValues)
{
    EXPECT_EQ(unetr::fnv1a64(""), 0xcbf29ce484222325ull);
    EXPECT_EQ(unetr::fnv1a64("a"), 0xaf63dc4c8601ec8cull);
    EXPECT_EQ(unetr::fnv1a64("foobar"), 0x85944171f73967e8ull);
}

TEST(Checkpoint, SaveLoadForwardIsBitwise)
{
    TempDir dir("ckpt");
    unetr::UnetrModel<float> model(tiny_model(), 5);
    const auto before = probe_forward(model);
    unetr::save_checkpoint(dir / "m.ckpt", model);
    const auto loaded = unetr::load_checkpoint(dir / "m.ckpt");
    EXPECT_EQ(loaded.config.embed_dim, 16u);
    EXPECT_EQ(loaded.config.extract_layers, (std::vector<std::size_t>{1, 2, 3, 4}));
    EXPECT_FALSE(loaded.optimizer.has_value());
    EXPECT_EQ(probe_forward(*loaded.model), before);
}

TEST(Checkpoint, ResaveIsByteIdenticalWithOptimizer)
{
    TempDir dir("resave");
    unetr::UnetrModel<float> model(tiny_model(), 6);
    unetr::OptimizerState<float> state;
    state.step = 17;
    std::mt19937_64 rng(6);
    std::normal_distribution<float> n;
    for (const auto& p : model.parameters()) {
        state.m.emplace_back(p.tensor.numel());
        state.v.emplace_back(p.tensor.numel());
        for (auto& v : state.m.back())
            v = n(rng);
        for (auto& v : state.v.back())
            v = std::abs(n(rng));
    }
    const std::string bytes = unetr::encode_checkpoint(model, &state);
    auto loaded = unetr::decode_checkpoint(bytes);
    ASSERT_TRUE(loaded.optimizer.has_value());
    EXPECT_EQ(*loaded.optimizer, state);
    EXPECT_EQ(unetr::encode_checkpoint(*loaded.model, &*loaded.optimizer), bytes);
}

TEST(Checkpoint, CorruptedByteFailsChecksum)
{
    unetr::UnetrModel<float> model(tiny_model(), 7);
    const std::string bytes = unetr::encode_checkpoint(model);
    for (const std::size_t at : {std::size_t{12}, bytes.size() / 2, bytes.size() - 9}) {
        std::string bad = bytes;
        bad[at] = static_cast<char>(bad[at] ^ 0x01);
        try {
            unetr::decode_checkpoint(bad);
            FAIL() << "corruption at " << at << " not detected";
        } catch (const unetr::FormatError& e) {
            EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos) << e.what();
        }
    }
    EXPECT_THROW(unetr::decode_checkpoint(bytes.substr(0, bytes.size() - 3)), unetr::FormatError);
    EXPECT_THROW(unetr::decode_checkpoint("NOTACKPT"), unetr::FormatError);
}

TEST(Checkpoint, WrongEmbeddingWidthNamesTensor)
{
    unetr::UnetrModel<float> small(tiny_model(16), 8);
    unetr::UnetrModel<float> wide(tiny_model(32), 8);
    const std::string bytes = unetr::encode_checkpoint(small);
    try {
        unetr::load_parameters(bytes, wide);
        FAIL() << "expected ShapeError";
    } catch (const unetr::ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("embed.projection"), std::string::npos) << msg;
        EXPECT_NE(msg.find("shape"), std::string::npos) << msg;
    }
}

TEST(Checkpoint, LoadParametersIntoMatchingModel)
{
    unetr::UnetrModel<float> a(tiny_model(), 1);
    unetr::UnetrModel<float> b(tiny_model(), 2);
    EXPECT_NE(probe_forward(a), probe_forward(b));
    unetr::load_parameters(unetr::encode_checkpoint(a), b);
    EXPECT_EQ(probe_forward(a), probe_forward(b));
}

// ---- phantoms ---------------------------------------------------------------

TEST(Phantom, DeterministicForSeed)
{
    unetr::PhantomSpec spec;
    spec.dims = {16, 16, 16};
    spec.count = 4;
    spec.seed = 3;
    const auto a = unetr::generate_phantoms(spec);
    const auto b = unetr::generate_phantoms(spec);
    ASSERT_EQ(a.size(), 4u);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].image.data, b[i].image.data);
        EXPECT_EQ(a[i].label.data, b[i].label.data);
    }
    spec.seed = 4;
    EXPECT_NE(unetr::generate_phantoms(spec)[0].label.data, a[0].label.data);
}

TEST(Phantom, ForegroundFractionWithinBounds)
{
    unetr::PhantomSpec spec;
    spec.dims = {48, 48, 48};
    spec.count = 40;
    spec.seed = 7;
    const auto [lo, hi] = unetr::foreground_fraction_bounds(spec);
    EXPECT_LT(lo, hi);
    for (const auto& s : unetr::generate_phantoms(spec)) {
        std::size_t fg = 0;
        for (const auto v : s.label.data)
            fg += v != 0;
        const double frac = static_cast<double>(fg) / s.label.data.size();
        EXPECT_GE(frac, lo);
        EXPECT_LE(frac, hi);
    }
}

TEST(Phantom, LabelsAndIntensities)
{
    unetr::PhantomSpec spec;
    spec.dims = {24, 24, 24};
    spec.classes = 4;
    spec.count = 20;
    spec.max_objects = 2;
    spec.intensity_means = {0.0, 1.0, 2.0, 3.0};
    spec.noise_std = 0.1;
    spec.shape = unetr::ShapeFamily::box;
    const auto samples = unetr::generate_phantoms(spec);
    std::vector<std::size_t> present(4, 0);
    for (const auto& s : samples) {
        std::set<std::uint8_t> seen(s.label.data.begin(), s.label.data.end());
        for (const auto c : seen) {
            ASSERT_LT(c, 4);
            ++present[c];
        }
        std::vector<double> sum(4, 0.0), n(4, 0.0);
        for (std::size_t i = 0; i < s.label.data.size(); ++i) {
            ASSERT_TRUE(std::isfinite(s.image.data[i]));
            sum[s.label.data[i]] += s.image.data[i];
            n[s.label.data[i]] += 1;
        }
        for (std::size_t c = 0; c < 4; ++c)
            if (n[c] > 50)
                EXPECT_NEAR(sum[c] / n[c], spec.intensity_means[c], 0.05);
    }
    for (std::size_t c = 0; c < 4; ++c)
        EXPECT_GE(present[c], 18u) << "class " << c;
}

TEST(Phantom, InvalidSpecsRejected)
{
    unetr::PhantomSpec spec;
    spec.max_radius = 0.5;
    EXPECT_THROW(unetr::generate_phantoms(spec), unetr::ConfigError);
    spec = {};
    spec.intensity_means = {0.0};
    EXPECT_THROW(unetr::generate_phantoms(spec), unetr::ConfigError);
    spec = {};
    spec.min_objects = 3;
    spec.max_objects = 2;
    EXPECT_THROW(unetr::generate_phantoms(spec), unetr::ConfigError);
}

// ---- configs ----------------------------------------------------------------

TEST(Config, ParseAndTypedAccess)
{
    const auto kv = unetr::KeyValueConfig::parse("# comment\n\n lr = 3e-4 \nextract_layers=1,2,3\ndims = 8\n"
                                                 "input_dims=32,16,8\nflag = true\n");
    EXPECT_DOUBLE_EQ(kv.get_double("lr", 0.0), 3e-4);
    EXPECT_EQ(kv.get_list("extract_layers", {}), (std::vector<std::size_t>{1, 2, 3}));
    EXPECT_EQ(kv.get_dims("dims", {}), (Dims3{8, 8, 8}));
    EXPECT_EQ(kv.get_dims("input_dims", {}), (Dims3{32, 16, 8}));
    EXPECT_TRUE(kv.get_bool("flag", false));
    EXPECT_EQ(kv.get_size("missing", 5), 5u);
}

TEST(Config, Errors)
{
    EXPECT_THROW(unetr::KeyValueConfig::parse("a = 1\na = 2\n"), unetr::ConfigError);
    EXPECT_THROW(unetr::KeyValueConfig::parse("no equals sign\n"), unetr::ConfigError);
    const auto kv = unetr::KeyValueConfig::parse("lr = fast\nbatch = -3\nlearning_rate = 1\n");
    EXPECT_THROW(kv.get_double("lr", 0.0), unetr::ConfigError);
    EXPECT_THROW(kv.get_size("batch", 0), unetr::ConfigError);
    try {
        kv.require_known(unetr::train_keys());
        FAIL() << "expected ConfigError";
    } catch (const unetr::ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("learning_rate"), std::string::npos) << e.what();
    }
}

TEST(Config, ModelRoundtripThroughKeyValues)
{
    auto cfg = tiny_model();
    cfg.base_width = 8;
    const auto back = unetr::model_config_from(unetr::KeyValueConfig::parse(unetr::to_key_values(cfg).dump()));
    EXPECT_EQ(back.embed_dim, cfg.embed_dim);
    EXPECT_EQ(back.extract_layers, cfg.extract_layers);
    EXPECT_EQ(back.input_dims, cfg.input_dims);
    EXPECT_EQ(back.base_width, 8u);
}

TEST(Config, ShippedFilesParse)
{
    const fs::path dir = UNETR_CONFIG_DIR;
    const auto phantoms = unetr::KeyValueConfig::load(dir / "toy_phantoms.cfg");
    phantoms.require_known(unetr::phantom_keys());
    const auto spec = unetr::phantom_spec_from(phantoms);
    EXPECT_EQ(spec.count, 40u);
    EXPECT_EQ(spec.classes, 2u);
    const auto train = unetr::KeyValueConfig::load(dir / "toy_train.cfg");
    const auto m = unetr::model_config_from(train);
    EXPECT_EQ(m.patch, 8u);
    EXPECT_EQ(m.embed_dim, 64u);
    EXPECT_EQ(m.layers, 4u);
    EXPECT_EQ(m.input_dims, (Dims3{32, 32, 32}));
    const auto t = unetr::train_config_from(train);
    EXPECT_EQ(t.iterations, 2000u);
    EXPECT_EQ(t.batch, 2u);
    EXPECT_DOUBLE_EQ(t.optimizer.lr, 1e-4);
}

// ---- complexity -------------------------------------------------------------

TEST(Complexity, ModuleSumsAndLinearLayers)
{
    const auto report = unetr::count_params_flops(unetr::ModelConfig{});
    std::uint64_t params = 0, flops = 0, macs = 0;
    for (const auto& m : report.modules) {
        params += m.params;
        flops += m.flops;
        macs += m.macs;
    }
    EXPECT_EQ(params, report.total_params);
    EXPECT_EQ(flops, report.total_flops);
    EXPECT_EQ(macs, report.total_macs);

    // Four K x K maps with bias, two layer norms, and the K -> M -> K MLP.
    const std::uint64_t k = 768, m = 3072;
    const std::uint64_t linear = k * k + k;
    for (const auto& mod : report.modules)
        if (mod.name.rfind("encoder.layer", 0) == 0)
            EXPECT_EQ(mod.params, 4 * linear + 4 * k + (k * m + m) + (m * k + k)) << mod.name;
}

TEST(Complexity, SlidingWindowScalesByWindowCount)
{
    const auto report = unetr::count_params_flops(unetr::ModelConfig{});
    EXPECT_EQ(unetr::sliding_window_flops(report, {96, 96, 96}, 0.5), report.total_flops);
    EXPECT_EQ(unetr::sliding_window_flops(report, {144, 144, 144}, 0.5), 8 * report.total_flops);
}

// ---- command line -----------------------------------------------------------

#ifdef UNETR_CLI_PATH

namespace {

int run_cli(const std::string& args, const fs::path& log)
{
    const std::string cmd = std::string("\"") + UNETR_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

} // namespace

TEST(Cli, EndToEndOnTinyPhantoms)
{
    TempDir dir("cli");
    spit(dir / "ph.cfg", "dims = 16\ncount = 4\nseed = 2\n");
    spit(dir / "train.cfg", "patch = 8\nembed_dim = 16\nlayers = 4\nheads = 2\nmlp_hidden = 32\n"
                            "classes = 2\ninput_dims = 16\niterations = 3\nbatch = 1\n"
                            "train_ratio = 3\nval_ratio = 1\ntest_ratio = 0\n");
    const auto log = dir / "log.txt";
    const std::string d = dir.path().string();

    ASSERT_EQ(run_cli("gen --config " + d + "/ph.cfg --out " + d + "/data", log), 0) << slurp(log);
    ASSERT_TRUE(fs::exists(dir / "data/dataset.txt"));

    ASSERT_EQ(run_cli("train --config " + d + "/train.cfg --data " + d + "/data --out " + d +
                          "/a.ckpt --seed 4 --threads 1",
                      log),
              0)
        << slurp(log);
    ASSERT_EQ(run_cli("train --config " + d + "/train.cfg --data " + d + "/data --out " + d +
                          "/b.ckpt --seed 4 --threads 1",
                      log),
              0)
        << slurp(log);
    EXPECT_EQ(slurp(dir / "a.ckpt"), slurp(dir / "b.ckpt"));
    EXPECT_TRUE(fs::exists(dir / "a.ckpt.loss.txt"));
    EXPECT_EQ(slurp(dir / "a.ckpt.loss.txt"), slurp(dir / "b.ckpt.loss.txt"));

    ASSERT_EQ(run_cli("infer --checkpoint " + d + "/a.ckpt --input " + d + "/data/case_000_image.vol --out " + d +
                          "/pred.vol --probs " + d + "/probs.vol --threads 1",
                      log),
              0)
        << slurp(log);
    const auto pred = unetr::read_labels(dir / "pred.vol");
    EXPECT_EQ(pred.dims, (Dims3{16, 16, 16}));
    const auto probs = unetr::read_image(dir / "probs.vol");
    EXPECT_EQ(probs.channels, 2u);

    ASSERT_EQ(run_cli("eval --truth " + d + "/data/case_000_label.vol --pred " + d + "/pred.vol --json " + d +
                          "/report.json --text " + d + "/report.txt",
                      log),
              0)
        << slurp(log);
    const auto report = nlohmann::json::parse(slurp(dir / "report.json"));
    ASSERT_TRUE(report.contains("classes"));
    for (const auto& row : report["classes"]) {
        EXPECT_TRUE(row.contains("class"));
        EXPECT_TRUE(row.contains("dice"));
        EXPECT_TRUE(row.contains("hd95"));
        EXPECT_TRUE(row.contains("flag"));
    }

    ASSERT_EQ(run_cli("summary", log), 0) << slurp(log);
    const std::string summary = slurp(log);
    EXPECT_NE(summary.find("92.58"), std::string::npos) << summary;
    EXPECT_NE(summary.find("41.19"), std::string::npos) << summary;
}

TEST(Cli, ErrorsExitNonzero)
{
    TempDir dir("clierr");
    const auto log = dir / "log.txt";
    const std::string d = dir.path().string();
    EXPECT_NE(run_cli("", log), 0);
    EXPECT_NE(run_cli("frobnicate", log), 0);
    EXPECT_NE(run_cli("train --data " + d, log), 0);
    EXPECT_NE(run_cli("infer --checkpoint " + d + "/none.ckpt --input x --out y", log), 0);
    spit(dir / "bad.cfg", "dims = 16\ncolour = red\n");
    EXPECT_NE(run_cli("gen --config " + d + "/bad.cfg --out " + d + "/o", log), 0);
    EXPECT_NE(slurp(log).find("colour"), std::string::npos) << slurp(log);
    spit(dir / "bad_model.cfg", "patch = 5\n");
    EXPECT_NE(run_cli("summary --config " + d + "/bad_model.cfg", log), 0);
}

#endif
