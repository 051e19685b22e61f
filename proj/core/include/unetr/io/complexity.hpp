#pragma once

// Parameter and FLOP accounting from configuration shapes alone.
//
// FLOPs = 2 * MACs for matmuls, convolutions, deconvolutions and attention
// products, plus per element: bias add 1, residual add 1, attention scale 1,
// normalisation 5, leaky ReLU 1, GELU 8, softmax 5.

#include <cstdint>
#include <string>
#include <vector>

#include "unetr/model/decoder.hpp"
#include "unetr/model/unetr.hpp"

namespace unetr {

struct ModuleCost {
    std::string name;
    std::uint64_t params = 0;
    std::uint64_t flops = 0;
    std::uint64_t macs = 0;
};

struct ComplexityReport {
    ModelConfig config;
    std::vector<ModuleCost> modules; // execution order; sums equal the totals
    std::vector<DecoderStage> decoder_table;
    std::uint64_t total_params = 0;
    std::uint64_t total_flops = 0;
    std::uint64_t total_macs = 0;

    std::string to_text() const;
};

/// Costs of one forward pass over a window of config.input_dims.
ComplexityReport count_params_flops(const ModelConfig& config);

/// FLOPs of a full sliding-window pass over `volume` (per-window cost times
/// the number of distinct window origins).
std::uint64_t sliding_window_flops(const ComplexityReport& report, const Dims3& volume, double overlap);

inline constexpr double kReferenceParams = 92.58e6;
inline constexpr double kReferenceFlops = 41.19e9;
inline constexpr double kParamTolerance = 0.05;
inline constexpr double kFlopTolerance = 0.15;

/// Measured vs reference (92.58M parameters, 41.19G FLOPs at 96^3) with
/// relative deviations and tolerances.
std::string reference_comparison(const ComplexityReport& report);

} // namespace unetr
