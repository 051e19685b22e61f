#include "unetr/io/volume_io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "unetr/error.hpp"

namespace unetr {

namespace fs = std::filesystem;

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

std::string header_text(const Dims3& dims, std::size_t channels, const Spacing& spacing, const char* dtype)
{
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "UNETRVOL 1\ndims %zu %zu %zu\nchannels %zu\nspacing %.17g %.17g %.17g\ndtype %s\n"
                  "byte_order little\nend\n",
                  dims[0], dims[1], dims[2], channels, spacing[0], spacing[1], spacing[2], dtype);
    return buf;
}

void append_f32(std::string& out, const std::vector<float>& values)
{
    const std::size_t base = out.size();
    out.resize(base + values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto bits = std::bit_cast<std::uint32_t>(values[i]);
        for (std::size_t b = 0; b < 4; ++b)
            out[base + 4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
    }
}

struct Parsed {
    VolumeHeader header;
    std::size_t payload_offset = 0;
};

Parsed parse_header(const std::string& bytes, const std::string& source)
{
    Parsed p;
    std::size_t pos = 0;
    auto next_line = [&]() -> std::string {
        const auto nl = bytes.find('\n', pos);
        if (nl == std::string::npos || nl - pos > 256)
            throw FormatError(source + ": truncated or malformed header");
        std::string line = bytes.substr(pos, nl - pos);
        pos = nl + 1;
        return line;
    };
    if (next_line() != "UNETRVOL 1")
        throw FormatError(source + ": bad magic (expected 'UNETRVOL 1')");
    bool seen_dims = false, seen_channels = false, seen_dtype = false;
    while (true) {
        const std::string line = next_line();
        if (line == "end")
            break;
        std::istringstream in(line);
        std::string key;
        in >> key;
        if (key == "dims") {
            in >> p.header.dims[0] >> p.header.dims[1] >> p.header.dims[2];
            seen_dims = true;
        } else if (key == "channels") {
            in >> p.header.channels;
            seen_channels = true;
        } else if (key == "spacing") {
            in >> p.header.spacing[0] >> p.header.spacing[1] >> p.header.spacing[2];
        } else if (key == "dtype") {
            in >> p.header.dtype;
            if (p.header.dtype != "f32" && p.header.dtype != "u8")
                throw FormatError(source + ": unknown dtype '" + p.header.dtype + "'");
            seen_dtype = true;
        } else if (key == "byte_order") {
            std::string order;
            in >> order;
            if (order != "little")
                throw FormatError(source + ": unsupported byte order '" + order + "'");
        } else {
            throw FormatError(source + ": unknown header field '" + key + "'");
        }
        if (in.fail())
            throw FormatError(source + ": malformed header line '" + line + "'");
    }
    if (!seen_dims || !seen_channels || !seen_dtype)
        throw FormatError(source + ": header lacks dims, channels or dtype");
    p.payload_offset = pos;
    const std::size_t width = p.header.dtype == "f32" ? 4 : 1;
    const std::size_t expected = voxel_count(p.header.dims) * p.header.channels * width;
    const std::size_t actual = bytes.size() - pos;
    if (actual != expected)
        throw FormatError(source + ": payload is " + std::to_string(actual) + " bytes, header implies " +
                          std::to_string(expected) + (actual < expected ? " (truncated)" : " (trailing data)"));
    return p;
}

} // namespace

void write_file_atomic(const fs::path& path, const std::string& bytes)
{
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw FormatError("cannot open " + tmp.string() + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out)
            throw FormatError("write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

std::string read_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw FormatError("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::string encode_volume(const Image& image, const Spacing& spacing)
{
    std::string out = header_text(image.dims, image.channels, spacing, "f32");
    append_f32(out, image.data);
    return out;
}

std::string encode_volume(const LabelMap& labels, const Spacing& spacing)
{
    std::string out = header_text(labels.dims, labels.channels, spacing, "u8");
    out.append(reinterpret_cast<const char*>(labels.data.data()), labels.data.size());
    return out;
}

void write_volume(const fs::path& path, const Image& image, const Spacing& spacing)
{
    write_file_atomic(path, encode_volume(image, spacing));
}

void write_volume(const fs::path& path, const LabelMap& labels, const Spacing& spacing)
{
    write_file_atomic(path, encode_volume(labels, spacing));
}

VolumeHeader read_volume_header(const fs::path& path)
{
    return parse_header(read_file(path), path.string()).header;
}

Image read_image(const fs::path& path, Spacing* spacing)
{
    const std::string bytes = read_file(path);
    const Parsed p = parse_header(bytes, path.string());
    if (p.header.dtype != "f32")
        throw FormatError(path.string() + ": expected dtype f32, found " + p.header.dtype);
    Image image(p.header.channels, p.header.dims);
    for (std::size_t i = 0; i < image.data.size(); ++i) {
        std::uint32_t bits = 0;
        for (std::size_t b = 0; b < 4; ++b)
            bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[p.payload_offset + 4 * i + b]))
                    << (8 * b);
        image.data[i] = std::bit_cast<float>(bits);
    }
    if (spacing != nullptr)
        *spacing = p.header.spacing;
    return image;
}

LabelMap read_labels(const fs::path& path, Spacing* spacing)
{
    const std::string bytes = read_file(path);
    const Parsed p = parse_header(bytes, path.string());
    if (p.header.dtype != "u8")
        throw FormatError(path.string() + ": expected dtype u8, found " + p.header.dtype);
    LabelMap labels(p.header.channels, p.header.dims);
    std::memcpy(labels.data.data(), bytes.data() + p.payload_offset, labels.data.size());
    if (spacing != nullptr)
        *spacing = p.header.spacing;
    return labels;
}

void write_sample(const VolumeSample& sample, const fs::path& image_path, const fs::path& label_path)
{
    write_volume(image_path, sample.image, sample.spacing);
    write_volume(label_path, sample.label, sample.spacing);
}

VolumeSample read_sample(const fs::path& image_path, const fs::path& label_path)
{
    VolumeSample s;
    s.image = read_image(image_path, &s.spacing);
    Spacing label_spacing{};
    s.label = read_labels(label_path, &label_spacing);
    if (s.label.dims != s.image.dims || s.label.channels != 1)
        throw FormatError(label_path.string() + ": label grid " + to_string(s.label.dims) +
                          " does not match image " + to_string(s.image.dims));
    return s;
}

void write_dataset(const fs::path& dir, const std::vector<VolumeSample>& samples)
{
    fs::create_directories(dir);
    std::string manifest;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        char stem[32];
        std::snprintf(stem, sizeof stem, "case_%03zu", i);
        const std::string image = std::string(stem) + "_image.vol";
        const std::string label = std::string(stem) + "_label.vol";
        write_sample(samples[i], dir / image, dir / label);
        manifest += image + " " + label + "\n";
    }
    write_file_atomic(dir / "dataset.txt", manifest);
}

std::vector<VolumeSample> read_dataset(const fs::path& dir)
{
    const fs::path manifest = dir / "dataset.txt";
    std::istringstream in(read_file(manifest));
    std::vector<VolumeSample> samples;
    std::string image, label;
    while (in >> image >> label)
        samples.push_back(read_sample(dir / image, dir / label));
    if (samples.empty())
        throw FormatError(manifest.string() + ": no cases listed");
    return samples;
}

} // namespace unetr
