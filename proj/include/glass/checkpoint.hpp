#pragma once

// Binary checkpoint container, little-endian throughout:
//
//   "GLSS"                 4 bytes magic
//   u32 version            currently 1
//   u32 x 8                input_dims, input_frames, output_frames, patch,
//                          model_dim, encoder_blocks, decoder_blocks, heads
//   f64 rope_base
//   u32 len, bytes         size name
//   u32 count              number of tensors, then per tensor:
//     u32 len, bytes       parameter name
//     u32 rank, u32[rank]  dims
//     f32[prod(dims)]      values

#include <bit>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "glass/glass_model.hpp"

namespace glass {

inline constexpr char checkpoint_magic[4] = {'G', 'L', 'S', 'S'};
inline constexpr std::uint32_t checkpoint_version = 1;

struct NamedTensor {
    std::string name;
    Tensor<float> value;
};

struct Checkpoint {
    GlassConfig config;
    std::vector<NamedTensor> tensors;
};

namespace detail {

class ByteWriter {
public:
    void u32(std::uint32_t v)
    {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void u64(std::uint64_t v)
    {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(const std::string& s)
    {
        u32(static_cast<std::uint32_t>(s.size()));
        buf_.append(s);
    }
    void raw(const char* p, std::size_t n) { buf_.append(p, n); }
    const std::string& bytes() const { return buf_; }

private:
    std::string buf_;
};

class ByteReader {
public:
    explicit ByteReader(const std::string& buf) : buf_(buf) { }

    std::uint64_t uint(int width)
    {
        need(static_cast<std::size_t>(width));
        std::uint64_t v = 0;
        for (int i = 0; i < width; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        pos_ += static_cast<std::size_t>(width);
        return v;
    }
    std::uint32_t u32() { return static_cast<std::uint32_t>(uint(4)); }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(uint(8)); }
    std::string str()
    {
        const std::size_t n = u32();
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t offset() const { return pos_; }
    bool done() const { return pos_ == buf_.size(); }

private:
    void need(std::size_t n) const
    {
        if (pos_ + n > buf_.size()) throw FormatError(pos_, "truncated checkpoint");
    }
    const std::string& buf_;
    std::size_t pos_ = 0;
};

} // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ck)
{
    detail::ByteWriter w;
    w.raw(checkpoint_magic, 4);
    w.u32(checkpoint_version);
    const auto& c = ck.config;
    for (auto v : {c.input_dims, c.input_frames, c.output_frames, c.patch, c.model_dim, c.encoder_blocks,
                   c.decoder_blocks, c.heads})
        w.u32(static_cast<std::uint32_t>(v));
    w.f64(c.rope_base);
    w.str(c.size_name);
    w.u32(static_cast<std::uint32_t>(ck.tensors.size()));
    for (const auto& t : ck.tensors) {
        w.str(t.name);
        w.u32(static_cast<std::uint32_t>(t.value.rank()));
        for (auto d : t.value.dims()) w.u32(static_cast<std::uint32_t>(d));
        for (float v : t.value.data()) w.f32(v);
    }
    return w.bytes();
}

inline Checkpoint decode_checkpoint(const std::string& bytes)
{
    if (bytes.size() < 4 || bytes.compare(0, 4, checkpoint_magic, 4) != 0) throw FormatError(0, "bad magic");
    detail::ByteReader r(bytes);
    r.uint(4);
    const auto version_at = r.offset();
    if (const auto v = r.u32(); v != checkpoint_version)
        throw FormatError(version_at, "unsupported checkpoint version " + std::to_string(v));
    Checkpoint ck;
    auto& c = ck.config;
    for (auto* f : {&c.input_dims, &c.input_frames, &c.output_frames, &c.patch, &c.model_dim, &c.encoder_blocks,
                    &c.decoder_blocks, &c.heads})
        *f = r.u32();
    c.rope_base = r.f64();
    c.size_name = r.str();
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        t.name = r.str();
        const std::uint32_t rank = r.u32();
        if (rank > 8) throw FormatError(r.offset() - 4, "implausible tensor rank");
        Shape dims(rank);
        for (auto& d : dims) d = r.u32();
        std::vector<float> data(shape_size(dims));
        for (auto& v : data) v = r.f32();
        t.value = Tensor<float>(std::move(dims), std::move(data));
        ck.tensors.push_back(std::move(t));
    }
    if (!r.done()) throw FormatError(r.offset(), "trailing bytes after checkpoint");
    return ck;
}

template <typename T>
Checkpoint make_checkpoint(const GlassModel<T>& model)
{
    Checkpoint ck{model.config(), {}};
    for (const auto& p : model.params()) ck.tensors.push_back({p.name, p.value.template cast<float>()});
    return ck;
}

template <typename T = float>
GlassModel<T> model_from_checkpoint(const Checkpoint& ck)
{
    try {
        ck.config.validate();
    } catch (const ConfigError& e) {
        throw FormatError(8, std::string("invalid stored config: ") + e.what());
    }
    GlassModel<T> model(ck.config);
    if (ck.tensors.size() != model.params().size())
        throw FormatError(0, "checkpoint holds " + std::to_string(ck.tensors.size()) + " tensors, model expects " +
                                 std::to_string(model.params().size()));
    for (const auto& t : ck.tensors) {
        if (!model.params().contains(t.name)) throw FormatError(0, "unexpected tensor " + t.name);
        auto& p = model.params().at(t.name);
        if (p.value.dims() != t.value.dims())
            throw FormatError(0, "tensor " + t.name + " has shape " + shape_str(t.value.dims()) + ", expected " +
                                     shape_str(p.value.dims()));
        p.value = t.value.template cast<T>();
    }
    return model;
}

inline std::string read_file_bytes(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, const std::string& bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

template <typename T>
void save_checkpoint(const GlassModel<T>& model, const std::filesystem::path& path)
{
    write_file_bytes(path, encode_checkpoint(make_checkpoint(model)));
}

template <typename T = float>
GlassModel<T> load_checkpoint(const std::filesystem::path& path)
{
    return model_from_checkpoint<T>(decode_checkpoint(read_file_bytes(path)));
}

// FNV-1a over the checkpoint bytes; joins pretraining and downstream rows.
inline std::string content_hash(const std::string& bytes)
{
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace glass
