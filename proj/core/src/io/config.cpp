#include "unetr/io/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "unetr/error.hpp"

namespace unetr {

namespace {

std::string_view trim(std::string_view s)
{
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos)
        return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

template <typename N>
N parse_number(const std::string& key, std::string_view text)
{
    N value{};
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc{} || ptr != end)
        throw ConfigError("config key '" + key + "': cannot parse '" + std::string(text) + "'");
    return value;
}

template <typename N>
std::vector<N> parse_list(const std::string& key, std::string_view text)
{
    std::vector<N> out;
    while (true) {
        const auto comma = text.find(',');
        out.push_back(parse_number<N>(key, trim(text.substr(0, comma))));
        if (comma == std::string_view::npos)
            break;
        text.remove_prefix(comma + 1);
    }
    return out;
}

} // namespace

KeyValueConfig KeyValueConfig::parse(std::string_view text, const std::string& source)
{
    KeyValueConfig cfg;
    cfg.source_ = source;
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        const auto line = trim(text.substr(0, nl));
        text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
        ++line_no;
        if (line.empty() || line.front() == '#')
            continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError(source + ":" + std::to_string(line_no) + ": expected key=value");
        const std::string key(trim(line.substr(0, eq)));
        if (key.empty())
            throw ConfigError(source + ":" + std::to_string(line_no) + ": empty key");
        if (cfg.has(key))
            throw ConfigError(source + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
        cfg.entries_.emplace_back(key, std::string(trim(line.substr(eq + 1))));
    }
    return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ConfigError("cannot open config file " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str(), path.string());
}

const std::string* KeyValueConfig::find(const std::string& key) const
{
    for (const auto& [k, v] : entries_)
        if (k == key)
            return &v;
    return nullptr;
}

bool KeyValueConfig::has(const std::string& key) const
{
    return find(key) != nullptr;
}

void KeyValueConfig::set(const std::string& key, const std::string& value)
{
    for (auto& [k, v] : entries_)
        if (k == key) {
            v = value;
            return;
        }
    entries_.emplace_back(key, value);
}

std::string KeyValueConfig::get_string(const std::string& key) const
{
    const auto* v = find(key);
    if (v == nullptr)
        throw ConfigError(source_ + ": missing required key '" + key + "'");
    return *v;
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const
{
    const auto* v = find(key);
    return v == nullptr ? fallback : *v;
}

std::size_t KeyValueConfig::get_size(const std::string& key, std::size_t fallback) const
{
    const auto* v = find(key);
    return v == nullptr ? fallback : parse_number<std::size_t>(key, *v);
}

std::uint64_t KeyValueConfig::get_u64(const std::string& key, std::uint64_t fallback) const
{
    const auto* v = find(key);
    return v == nullptr ? fallback : parse_number<std::uint64_t>(key, *v);
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const
{
    const auto* v = find(key);
    return v == nullptr ? fallback : parse_number<double>(key, *v);
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const
{
    const auto* v = find(key);
    if (v == nullptr)
        return fallback;
    if (*v == "true" || *v == "1" || *v == "yes")
        return true;
    if (*v == "false" || *v == "0" || *v == "no")
        return false;
    throw ConfigError("config key '" + key + "': expected a boolean, got '" + *v + "'");
}

std::vector<std::size_t> KeyValueConfig::get_list(const std::string& key,
                                                  const std::vector<std::size_t>& fallback) const
{
    const auto* v = find(key);
    return v == nullptr ? fallback : parse_list<std::size_t>(key, *v);
}

std::vector<double> KeyValueConfig::get_doubles(const std::string& key, const std::vector<double>& fallback) const
{
    const auto* v = find(key);
    return v == nullptr ? fallback : parse_list<double>(key, *v);
}

Dims3 KeyValueConfig::get_dims(const std::string& key, const Dims3& fallback) const
{
    const auto* v = find(key);
    if (v == nullptr)
        return fallback;
    const auto list = parse_list<std::size_t>(key, *v);
    if (list.size() == 1)
        return {list[0], list[0], list[0]};
    if (list.size() != 3)
        throw ConfigError("config key '" + key + "': expected 1 or 3 extents, got " + std::to_string(list.size()));
    return {list[0], list[1], list[2]};
}

void KeyValueConfig::require_known(const std::set<std::string>& known) const
{
    for (const auto& [k, v] : entries_)
        if (!known.contains(k))
            throw ConfigError(source_ + ": unknown key '" + k + "'");
}

std::string KeyValueConfig::dump() const
{
    std::string out;
    for (const auto& [k, v] : entries_)
        out += k + "=" + v + "\n";
    return out;
}

std::string join_list(const std::vector<std::size_t>& values)
{
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i)
        out += (i == 0 ? "" : ",") + std::to_string(values[i]);
    return out;
}

const std::set<std::string>& model_keys()
{
    static const std::set<std::string> keys{"preset",     "in_channels",    "classes",    "patch",
                                            "embed_dim",  "layers",         "heads",      "mlp_hidden",
                                            "extract_layers", "base_width", "input_dims"};
    return keys;
}

const std::set<std::string>& train_keys()
{
    static const std::set<std::string> keys{"lr",           "beta1",          "beta2",
                                            "eps",          "weight_decay",   "batch",
                                            "iterations",   "fg_ratio",       "augment_rotate",
                                            "augment_flip", "augment_intensity", "val_interval",
                                            "overlap",      "smooth",         "seed"};
    return keys;
}

const std::set<std::string>& phantom_keys()
{
    static const std::set<std::string> keys{"dims",       "classes",    "count",           "shape",
                                            "min_objects", "max_objects", "min_radius",    "max_radius",
                                            "intensity_means", "noise_std", "spacing",     "seed"};
    return keys;
}

PhantomSpec phantom_spec_from(const KeyValueConfig& kv)
{
    PhantomSpec spec;
    spec.dims = kv.get_dims("dims", spec.dims);
    spec.classes = kv.get_size("classes", spec.classes);
    spec.count = kv.get_size("count", spec.count);
    spec.shape = parse_shape_family(kv.get_string("shape", "ellipsoid"));
    spec.min_objects = kv.get_size("min_objects", spec.min_objects);
    spec.max_objects = kv.get_size("max_objects", std::max(spec.max_objects, spec.min_objects));
    spec.min_radius = kv.get_double("min_radius", spec.min_radius);
    spec.max_radius = kv.get_double("max_radius", spec.max_radius);
    if (kv.has("intensity_means")) {
        spec.intensity_means = kv.get_doubles("intensity_means", {});
    } else {
        spec.intensity_means.clear();
        for (std::size_t c = 0; c < spec.classes; ++c)
            spec.intensity_means.push_back(static_cast<double>(c));
    }
    spec.noise_std = kv.get_double("noise_std", spec.noise_std);
    const auto spacing = kv.get_doubles("spacing", {spec.spacing[0], spec.spacing[1], spec.spacing[2]});
    if (spacing.size() != 3)
        throw ConfigError("config key 'spacing': expected 3 values");
    spec.spacing = {spacing[0], spacing[1], spacing[2]};
    spec.seed = kv.get_u64("seed", spec.seed);
    spec.validate();
    return spec;
}

ModelConfig model_config_from(const KeyValueConfig& kv)
{
    const std::string preset = kv.get_string("preset", "vit_b16");
    ModelConfig cfg;
    if (preset == "vit_b16")
        cfg = ModelConfig::vit_b16();
    else if (preset == "toy")
        cfg = ModelConfig::toy();
    else
        throw ConfigError("unknown model preset '" + preset + "' (expected vit_b16 or toy)");
    cfg.in_channels = kv.get_size("in_channels", cfg.in_channels);
    cfg.classes = kv.get_size("classes", cfg.classes);
    cfg.patch = kv.get_size("patch", cfg.patch);
    cfg.embed_dim = kv.get_size("embed_dim", cfg.embed_dim);
    cfg.layers = kv.get_size("layers", cfg.layers);
    cfg.heads = kv.get_size("heads", cfg.heads);
    cfg.mlp_hidden = kv.get_size("mlp_hidden", kv.has("embed_dim") ? 4 * cfg.embed_dim : cfg.mlp_hidden);
    cfg.extract_layers = kv.has("extract_layers") ? kv.get_list("extract_layers", {})
                         : kv.has("layers")       ? EncoderConfig::default_extract_layers(cfg.layers)
                                                  : cfg.extract_layers;
    cfg.base_width = kv.get_size("base_width", cfg.base_width);
    cfg.input_dims = kv.get_dims("input_dims", cfg.input_dims);
    cfg.validate();
    return cfg;
}

KeyValueConfig to_key_values(const ModelConfig& cfg)
{
    KeyValueConfig kv;
    kv.set("in_channels", std::to_string(cfg.in_channels));
    kv.set("classes", std::to_string(cfg.classes));
    kv.set("patch", std::to_string(cfg.patch));
    kv.set("embed_dim", std::to_string(cfg.embed_dim));
    kv.set("layers", std::to_string(cfg.layers));
    kv.set("heads", std::to_string(cfg.heads));
    kv.set("mlp_hidden", std::to_string(cfg.mlp_hidden));
    kv.set("extract_layers", join_list(cfg.extract_layers));
    kv.set("base_width", std::to_string(cfg.base_width));
    kv.set("input_dims", join_list({cfg.input_dims[0], cfg.input_dims[1], cfg.input_dims[2]}));
    return kv;
}

TrainConfig train_config_from(const KeyValueConfig& kv)
{
    TrainConfig cfg;
    cfg.optimizer.lr = kv.get_double("lr", cfg.optimizer.lr);
    cfg.optimizer.beta1 = kv.get_double("beta1", cfg.optimizer.beta1);
    cfg.optimizer.beta2 = kv.get_double("beta2", cfg.optimizer.beta2);
    cfg.optimizer.eps = kv.get_double("eps", cfg.optimizer.eps);
    cfg.optimizer.weight_decay = kv.get_double("weight_decay", cfg.optimizer.weight_decay);
    cfg.batch = kv.get_size("batch", cfg.batch);
    cfg.iterations = kv.get_size("iterations", cfg.iterations);
    cfg.fg_ratio = kv.get_double("fg_ratio", cfg.fg_ratio);
    cfg.augment.rotate = kv.get_bool("augment_rotate", cfg.augment.rotate);
    cfg.augment.flip = kv.get_bool("augment_flip", cfg.augment.flip);
    cfg.augment.intensity = kv.get_bool("augment_intensity", cfg.augment.intensity);
    cfg.val_interval = kv.get_size("val_interval", cfg.val_interval);
    cfg.overlap = kv.get_double("overlap", cfg.overlap);
    cfg.smooth = kv.get_double("smooth", cfg.smooth);
    cfg.seed = kv.get_u64("seed", cfg.seed);
    cfg.validate();
    return cfg;
}

} // namespace unetr
