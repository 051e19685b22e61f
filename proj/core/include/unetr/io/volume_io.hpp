#pragma once

// Volume file: a text header followed by the raw payload.
//
//   UNETRVOL 1
//   dims H W D
//   channels C
//   spacing sx sy sz
//   dtype f32|u8
//   byte_order little
//   end
//   <C*H*W*D values, channel-first, z fastest, little-endian>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "unetr/volume.hpp"

namespace unetr {

struct VolumeHeader {
    Dims3 dims{};
    std::size_t channels = 0;
    Spacing spacing{1.0, 1.0, 1.0};
    std::string dtype; // "f32" or "u8"
};

/// Writes to `path` via a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

std::string encode_volume(const Image& image, const Spacing& spacing);
std::string encode_volume(const LabelMap& labels, const Spacing& spacing);

void write_volume(const std::filesystem::path& path, const Image& image, const Spacing& spacing);
void write_volume(const std::filesystem::path& path, const LabelMap& labels, const Spacing& spacing);

VolumeHeader read_volume_header(const std::filesystem::path& path);
/// FormatError on bad magic, unknown dtype, wrong dtype for the call or a
/// payload length that disagrees with the header.
Image read_image(const std::filesystem::path& path, Spacing* spacing = nullptr);
LabelMap read_labels(const std::filesystem::path& path, Spacing* spacing = nullptr);

void write_sample(const VolumeSample& sample, const std::filesystem::path& image_path,
                  const std::filesystem::path& label_path);
VolumeSample read_sample(const std::filesystem::path& image_path, const std::filesystem::path& label_path);

/// Directory of case files plus `dataset.txt` listing "image label" pairs
/// relative to the directory.
void write_dataset(const std::filesystem::path& dir, const std::vector<VolumeSample>& samples);
std::vector<VolumeSample> read_dataset(const std::filesystem::path& dir);

} // namespace unetr
