#include "unetr/io/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <map>

#include "unetr/error.hpp"
#include "unetr/io/config.hpp"
#include "unetr/io/volume_io.hpp"

namespace unetr {

namespace {

constexpr std::string_view kMagic = "UNETRCKP";

class Writer {
public:
    void bytes(std::string_view s) { out_.append(s); }
    template <typename U>
    void integer(U v)
    {
        for (std::size_t b = 0; b < sizeof(U); ++b)
            out_.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * b)) & 0xffu));
    }
    void floats(std::span<const float> values)
    {
        for (const float f : values)
            integer(std::bit_cast<std::uint32_t>(f));
    }
    std::string& str() { return out_; }

private:
    std::string out_;
};

class Reader {
public:
    explicit Reader(std::string_view in) : in_(in) {}

    std::string_view bytes(std::size_t n)
    {
        if (in_.size() - pos_ < n)
            throw FormatError("checkpoint: truncated");
        const auto s = in_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    template <typename U>
    U integer()
    {
        const auto s = bytes(sizeof(U));
        std::uint64_t v = 0;
        for (std::size_t b = 0; b < sizeof(U); ++b)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[b])) << (8 * b);
        return static_cast<U>(v);
    }
    void floats(std::span<float> out)
    {
        for (auto& f : out)
            f = std::bit_cast<float>(integer<std::uint32_t>());
    }
    std::size_t position() const noexcept { return pos_; }

private:
    std::string_view in_;
    std::size_t pos_ = 0;
};

struct StoredTensor {
    ad::Shape shape;
    std::vector<float> values;
};

struct Decoded {
    ModelConfig config;
    std::vector<std::pair<std::string, StoredTensor>> tensors;
    std::optional<OptimizerState<float>> optimizer;
};

Decoded decode(std::string_view bytes)
{
    if (bytes.size() < kMagic.size() + 4 + 8 || bytes.substr(0, kMagic.size()) != kMagic)
        throw FormatError("checkpoint: bad magic");
    const std::string_view body = bytes.substr(0, bytes.size() - 8);
    Reader tail(bytes.substr(bytes.size() - 8));
    if (tail.integer<std::uint64_t>() != fnv1a64(body))
        throw FormatError("checkpoint: checksum mismatch (file corrupted)");

    Reader r(body);
    r.bytes(kMagic.size());
    const auto version = r.integer<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw FormatError("checkpoint: version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
    Decoded d;
    const auto config_len = r.integer<std::uint64_t>();
    d.config = model_config_from(KeyValueConfig::parse(r.bytes(config_len), "checkpoint config"));
    const auto count = r.integer<std::uint32_t>();
    for (std::uint32_t t = 0; t < count; ++t) {
        const auto name_len = r.integer<std::uint32_t>();
        std::string name(r.bytes(name_len));
        StoredTensor st;
        const auto rank = r.integer<std::uint32_t>();
        for (std::uint32_t a = 0; a < rank; ++a)
            st.shape.push_back(r.integer<std::uint64_t>());
        st.values.resize(ad::numel(st.shape));
        r.floats(st.values);
        for (const auto& [other, unused] : d.tensors)
            if (other == name)
                throw FormatError("checkpoint: duplicate tensor '" + name + "'");
        d.tensors.emplace_back(std::move(name), std::move(st));
    }
    if (r.integer<std::uint8_t>() != 0) {
        OptimizerState<float> opt;
        opt.step = r.integer<std::uint64_t>();
        for (const auto& [name, st] : d.tensors) {
            opt.m.emplace_back(st.values.size());
            r.floats(opt.m.back());
            opt.v.emplace_back(st.values.size());
            r.floats(opt.v.back());
        }
        d.optimizer = std::move(opt);
    }
    if (r.position() != body.size())
        throw FormatError("checkpoint: trailing bytes after payload");
    return d;
}

void assign(const std::vector<std::pair<std::string, StoredTensor>>& stored, UnetrModel<float>& model)
{
    auto params = model.parameters();
    if (stored.size() != params.size()) {
        for (const auto& p : params) {
            bool found = false;
            for (const auto& [name, st] : stored)
                found = found || name == p.name;
            if (!found)
                throw FormatError("checkpoint: missing tensor '" + p.name + "'");
        }
        throw FormatError("checkpoint: holds " + std::to_string(stored.size()) + " tensors, model has " +
                          std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& [name, st] = stored[i];
        auto& p = params[i];
        if (name != p.name)
            throw FormatError("checkpoint: expected tensor '" + p.name + "', found '" + name + "'");
        if (st.shape != p.tensor.shape())
            throw ShapeError("checkpoint: tensor '" + name + "' has shape " + ad::to_string(st.shape) +
                             ", model expects " + ad::to_string(p.tensor.shape()));
        std::copy(st.values.begin(), st.values.end(), p.tensor.mutable_data().begin());
    }
}

} // namespace

std::uint64_t fnv1a64(std::string_view bytes)
{
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string encode_checkpoint(UnetrModel<float>& model, const OptimizerState<float>* optimizer)
{
    const auto params = model.parameters();
    Writer w;
    w.bytes(kMagic);
    w.integer<std::uint32_t>(kCheckpointVersion);
    const std::string config = to_key_values(model.config()).dump();
    w.integer<std::uint64_t>(config.size());
    w.bytes(config);
    w.integer<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        w.integer<std::uint32_t>(static_cast<std::uint32_t>(p.name.size()));
        w.bytes(p.name);
        w.integer<std::uint32_t>(static_cast<std::uint32_t>(p.tensor.rank()));
        for (const auto extent : p.tensor.shape())
            w.integer<std::uint64_t>(extent);
        w.floats(p.tensor.data());
    }
    const bool with_opt = optimizer != nullptr && !optimizer->m.empty();
    w.integer<std::uint8_t>(with_opt ? 1 : 0);
    if (with_opt) {
        if (optimizer->m.size() != params.size() || optimizer->v.size() != params.size())
            throw ShapeError("checkpoint: optimizer state does not match the parameter list");
        w.integer<std::uint64_t>(optimizer->step);
        for (std::size_t i = 0; i < params.size(); ++i) {
            w.floats(optimizer->m[i]);
            w.floats(optimizer->v[i]);
        }
    }
    const std::uint64_t hash = fnv1a64(w.str());
    w.integer<std::uint64_t>(hash);
    return std::move(w.str());
}

void save_checkpoint(const std::filesystem::path& path, UnetrModel<float>& model,
                     const OptimizerState<float>* optimizer)
{
    write_file_atomic(path, encode_checkpoint(model, optimizer));
}

LoadedCheckpoint decode_checkpoint(std::string_view bytes)
{
    Decoded d = decode(bytes);
    LoadedCheckpoint out;
    out.config = d.config;
    out.model = std::make_unique<UnetrModel<float>>(d.config, 0);
    assign(d.tensors, *out.model);
    out.optimizer = std::move(d.optimizer);
    return out;
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path)
{
    return decode_checkpoint(read_file(path));
}

void load_parameters(std::string_view bytes, UnetrModel<float>& model)
{
    assign(decode(bytes).tensors, model);
}

} // namespace unetr
