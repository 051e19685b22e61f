#pragma once

// Line-oriented key=value files. Blank lines and lines starting with '#' are
// skipped; whitespace around keys and values is trimmed; later duplicates are
// rejected.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "unetr/io/phantom.hpp"
#include "unetr/model/unetr.hpp"
#include "unetr/pipeline/trainer.hpp"
#include "unetr/volume.hpp"

namespace unetr {

class KeyValueConfig {
public:
    static KeyValueConfig parse(std::string_view text, const std::string& source = "<text>");
    static KeyValueConfig load(const std::filesystem::path& path);

    bool has(const std::string& key) const;
    void set(const std::string& key, const std::string& value);

    std::string get_string(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    std::size_t get_size(const std::string& key, std::size_t fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    /// Comma-separated unsigned integers.
    std::vector<std::size_t> get_list(const std::string& key, const std::vector<std::size_t>& fallback) const;
    /// Comma-separated reals.
    std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;
    /// "a,b,c" or a single "n" meaning n,n,n.
    Dims3 get_dims(const std::string& key, const Dims3& fallback) const;

    /// Throws ConfigError naming the first key outside `known`.
    void require_known(const std::set<std::string>& known) const;

    const std::vector<std::pair<std::string, std::string>>& entries() const noexcept { return entries_; }
    std::string dump() const;

private:
    const std::string* find(const std::string& key) const;

    std::string source_;
    std::vector<std::pair<std::string, std::string>> entries_;
};

std::string join_list(const std::vector<std::size_t>& values);

/// preset (vit_b16 | toy), in_channels, classes, patch, embed_dim, layers,
/// heads, mlp_hidden, extract_layers, base_width, input_dims
const std::set<std::string>& model_keys();
/// lr, beta1, beta2, eps, weight_decay, batch, iterations, fg_ratio,
/// augment_rotate, augment_flip, augment_intensity, val_interval, overlap,
/// smooth, seed
const std::set<std::string>& train_keys();

/// dims, classes, count, shape, min_objects, max_objects, min_radius,
/// max_radius, intensity_means, noise_std, spacing, seed
const std::set<std::string>& phantom_keys();

ModelConfig model_config_from(const KeyValueConfig& kv);
PhantomSpec phantom_spec_from(const KeyValueConfig& kv);
KeyValueConfig to_key_values(const ModelConfig& cfg);
TrainConfig train_config_from(const KeyValueConfig& kv);

} // namespace unetr
