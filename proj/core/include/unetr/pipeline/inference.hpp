#pragma once

#include <cstddef>
#include <vector>

#include "unetr/model/unetr.hpp"
#include "unetr/volume.hpp"

namespace unetr {

/// Window origins along one axis: i * stride for every i * stride < extent,
/// each clamped to extent - window, with stride = max(1, floor(window * (1 - overlap))).
/// Clamping can repeat an origin. Requires extent >= window.
std::vector<std::size_t> window_starts(std::size_t extent, std::size_t window, double overlap);

/// All window origins over a grid, x slowest.
std::vector<Dims3> window_grid(const Dims3& extent, const Dims3& window, double overlap);

/// Number of windows covering each voxel.
Volume<std::uint32_t> coverage_map(const Dims3& extent, const Dims3& window, double overlap);

/// Softmax probabilities [J, H, W, D] of a single forward pass.
Image predict_window(const UnetrModel<float>& model, const Image& window);

/// Uniform average over all placed windows, renormalised to the simplex.
/// A repeated origin is evaluated once and weighted by its multiplicity.
/// The window is the model's input extent. Volumes smaller than the window
/// on some axis are zero-padded at the high end and cropped afterwards. With
/// a single distinct origin the forward-pass probabilities are returned unchanged.
Image sliding_window_infer(const UnetrModel<float>& model, const Image& volume, double overlap = 0.5,
                           std::size_t* windows_used = nullptr);

/// Per-voxel argmax over the class axis (lowest class wins ties).
LabelMap argmax_labels(const Image& probs);

} // namespace unetr
