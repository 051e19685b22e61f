#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "unetr/volume.hpp"

namespace unetr {

struct ClassMetrics {
    std::size_t cls = 0;
    double dice = 0.0;
    std::optional<double> hd95; // millimetres; empty when either surface is empty
    /// "" | "empty_both" | "empty_truth" | "empty_pred"
    std::string flag;
};

struct MetricReport {
    std::vector<ClassMetrics> classes;
    double mean_dice = 0.0;
    /// Mean over classes with a defined hd95; empty when there are none.
    std::optional<double> mean_hd95;

    /// Whitespace-aligned table: class dice hd95 flag, then a mean row.
    std::string to_text() const;
    /// {"classes": [{"class", "dice", "hd95", "flag"}...], "mean_dice", "mean_hd95"}
    std::string to_json() const;
    static MetricReport from_json(const std::string& text);
};

/// Scores classes 1..J-1 of `pred` against `truth` (same grid). The mean Dice
/// covers every scored class, including empty-both ones (Dice 1.0).
MetricReport evaluate_segmentation(const LabelMap& truth, const LabelMap& pred, const Spacing& spacing,
                                   std::size_t classes);

} // namespace unetr
