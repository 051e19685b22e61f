#include "unetr/io/complexity.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "unetr/pipeline/inference.hpp"

namespace unetr {

namespace {

using u64 = std::uint64_t;

ModuleCost conv_unit_cost(const std::string& name, u64 in, u64 out, u64 vox)
{
    const u64 macs = out * in * 27 * vox;
    return {name, out * in * 27 + 2 * out, 2 * macs + 5 * out * vox + out * vox, macs};
}

ModuleCost deconv_cost(const std::string& name, u64 in, u64 out, u64 vox_out)
{
    const u64 macs = in * out * vox_out;
    return {name, in * out * 8 + out, 2 * macs + out * vox_out, macs};
}

std::string human(double v, const char* unit)
{
    char buf[48];
    if (v >= 1e9)
        std::snprintf(buf, sizeof buf, "%.3fG%s", v / 1e9, unit);
    else if (v >= 1e6)
        std::snprintf(buf, sizeof buf, "%.3fM%s", v / 1e6, unit);
    else if (v >= 1e3)
        std::snprintf(buf, sizeof buf, "%.3fK%s", v / 1e3, unit);
    else
        std::snprintf(buf, sizeof buf, "%.0f%s", v, unit);
    return buf;
}

bool ends_with(const std::string& s, const std::string& suffix)
{
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

} // namespace

ComplexityReport count_params_flops(const ModelConfig& config)
{
    config.validate();
    ComplexityReport r;
    r.config = config;
    const PatchConfig pc = config.patch_config();
    const u64 n = pc.sequence_length();
    const u64 k = config.embed_dim;
    const u64 pw = pc.patch_width();
    const u64 heads = config.heads;
    const u64 kh = k / heads;
    const u64 m = config.mlp_hidden;

    {
        const u64 macs = n * pw * k;
        r.modules.push_back({"embedding", pw * k + n * k, 2 * macs + n * k, macs});
    }
    for (std::size_t layer = 1; layer <= config.layers; ++layer) {
        ModuleCost c{"encoder.layer" + std::to_string(layer), 0, 0, 0};
        c.params = 2 * k + 4 * (k * k + k) + 2 * k + (k * m + m) + (m * k + k);
        const u64 proj_macs = 4 * n * k * k;
        const u64 attn_macs = 2 * heads * n * n * kh;
        const u64 mlp_macs = 2 * n * k * m;
        c.macs = proj_macs + attn_macs + mlp_macs;
        c.flops = 2 * c.macs;
        c.flops += 2 * 5 * n * k;            // two layer norms
        c.flops += 4 * n * k;                // q, k, v, output biases
        c.flops += heads * n * n * (1 + 5);  // scale and softmax
        c.flops += 2 * n * k;                // residual adds
        c.flops += n * m + n * k;            // MLP biases
        c.flops += 8 * n * m;                // GELU
        r.modules.push_back(c);
    }

    r.decoder_table = decoder_table(config.decoder(), config.input_dims);
    for (const auto& row : r.decoder_table) {
        const u64 vox = voxel_count(row.out_dims);
        if (row.name == "head") {
            const u64 macs = row.out_channels * row.in_channels * vox;
            r.modules.push_back({"decoder.head", row.out_channels * row.in_channels + row.out_channels,
                                 2 * macs + row.out_channels * vox + 5 * row.out_channels * vox, macs});
        } else if (ends_with(row.name, ".up")) {
            r.modules.push_back(deconv_cost("decoder." + row.name, row.in_channels, row.out_channels, vox));
        } else {
            r.modules.push_back(conv_unit_cost("decoder." + row.name, row.in_channels, row.out_channels, vox));
        }
    }
    for (const auto& c : r.modules) {
        r.total_params += c.params;
        r.total_flops += c.flops;
        r.total_macs += c.macs;
    }
    return r;
}

std::uint64_t sliding_window_flops(const ComplexityReport& report, const Dims3& volume, double overlap)
{
    Dims3 padded = volume;
    for (std::size_t a = 0; a < 3; ++a)
        padded[a] = std::max(padded[a], report.config.input_dims[a]);
    const auto grid = window_grid(padded, report.config.input_dims, overlap);
    const std::set<Dims3> distinct(grid.begin(), grid.end());
    return report.total_flops * distinct.size();
}

std::string ComplexityReport::to_text() const
{
    std::ostringstream out;
    char line[160];
    std::snprintf(line, sizeof line, "%-32s %14s %18s %18s\n", "module", "params", "flops", "macs");
    out << line;
    for (const auto& c : modules) {
        std::snprintf(line, sizeof line, "%-32s %14llu %18llu %18llu\n", c.name.c_str(),
                      static_cast<unsigned long long>(c.params), static_cast<unsigned long long>(c.flops),
                      static_cast<unsigned long long>(c.macs));
        out << line;
    }
    std::snprintf(line, sizeof line, "%-32s %14llu %18llu %18llu\n", "total",
                  static_cast<unsigned long long>(total_params), static_cast<unsigned long long>(total_flops),
                  static_cast<unsigned long long>(total_macs));
    out << line;
    out << "params " << human(static_cast<double>(total_params), "") << ", flops "
        << human(static_cast<double>(total_flops), "") << " (2*MAC), macs "
        << human(static_cast<double>(total_macs), "") << " per " << to_string(config.input_dims) << " window\n";
    return out.str();
}

std::string reference_comparison(const ComplexityReport& report)
{
    const double p = static_cast<double>(report.total_params);
    const double f = static_cast<double>(report.total_flops);
    const double dp = (p - kReferenceParams) / kReferenceParams;
    const double df = (f - kReferenceFlops) / kReferenceFlops;
    std::ostringstream out;
    char line[160];
    out << "reference comparison (UNETR ViT-B16, " << to_string(report.config.input_dims) << " input)\n";
    std::snprintf(line, sizeof line, "%-8s %12s %12s %10s %10s %s\n", "", "reference", "measured", "deviation",
                  "tolerance", "status");
    out << line;
    std::snprintf(line, sizeof line, "%-8s %11.2fM %11.2fM %+9.1f%% %9.0f%% %s\n", "params", kReferenceParams / 1e6,
                  p / 1e6, 100.0 * dp, 100.0 * kParamTolerance, std::abs(dp) <= kParamTolerance ? "ok" : "out");
    out << line;
    std::snprintf(line, sizeof line, "%-8s %11.2fG %11.2fG %+9.1f%% %9.0f%% %s\n", "flops", kReferenceFlops / 1e9,
                  f / 1e9, 100.0 * df, 100.0 * kFlopTolerance, std::abs(df) <= kFlopTolerance ? "ok" : "out");
    out << line;
    return out.str();
}

} // namespace unetr
