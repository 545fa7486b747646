#include "trifield/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace trifield::checkpoint {

namespace {

constexpr char kMagic[4] = {'T', 'F', 'C', 'K'};
constexpr std::uint32_t kKindHead = 1, kKindTorso = 2;

class Writer {
  public:
    Writer(const std::string& path) : path_(path), out_(path, std::ios::binary) {
        if (!out_) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    }
    void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
    void u32(std::uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
        bytes(b, 4);
    }
    void i32(int v) { u32(static_cast<std::uint32_t>(v)); }
    void u64(std::uint64_t v) {
        u32(static_cast<std::uint32_t>(v));
        u32(static_cast<std::uint32_t>(v >> 32));
    }
    void f32(double v) {
        float f = static_cast<float>(v);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        u32(bits);
    }
    void doubles_as_f32(const std::vector<double>& v) {
        u64(v.size());
        for (double x : v) f32(x);
    }
    void close() {
        out_.close();
        if (!out_) throw std::runtime_error("checkpoint: failed to write " + path_);
    }

  private:
    std::string path_;
    std::ofstream out_;
};

class Reader {
  public:
    Reader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
        if (!in_) throw std::runtime_error("checkpoint: cannot open " + path);
    }
    void bytes(void* p, std::size_t n) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (in_.gcount() != static_cast<std::streamsize>(n))
            throw std::runtime_error("checkpoint: truncated file " + path_);
    }
    std::uint32_t u32() {
        unsigned char b[4];
        bytes(b, 4);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    }
    int i32() { return static_cast<int>(u32()); }
    std::uint64_t u64() {
        std::uint64_t lo = u32();
        return lo | (static_cast<std::uint64_t>(u32()) << 32);
    }
    double f32() {
        std::uint32_t bits = u32();
        float f;
        std::memcpy(&f, &bits, 4);
        return static_cast<double>(f);
    }
    void f32_into(std::vector<double>& v, const char* what) {
        std::uint64_t n = u64();
        if (n != v.size())
            throw std::runtime_error("checkpoint: " + path_ + ": " + what + " has " +
                                     std::to_string(n) + " params, expected " +
                                     std::to_string(v.size()));
        for (auto& x : v) x = f32();
    }
    const std::string& path() const { return path_; }

  private:
    std::string path_;
    std::ifstream in_;
};

void check_header(Reader& r, std::uint32_t want_kind, const char* kind_name) {
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("checkpoint: " + r.path() + " is not a checkpoint file");
    std::uint32_t version = r.u32();
    if (version != kVersion)
        throw std::runtime_error("checkpoint: " + r.path() + ": unsupported version " +
                                 std::to_string(version));
    std::uint32_t kind = r.u32();
    if (kind != want_kind)
        throw std::runtime_error("checkpoint: " + r.path() + ": expected a " +
                                 std::string(kind_name) + " checkpoint");
}

void write_grid(Writer& w, const hashenc::HashGrid& g) {
    w.u32(g.table_size());
    w.doubles_as_f32(g.raw_table());
}

void read_grid(Reader& r, hashenc::HashGrid& g, const char* what) {
    std::uint32_t table = r.u32();
    if (table != g.table_size())
        throw std::runtime_error("checkpoint: " + r.path() + ": " + what + " table size " +
                                 std::to_string(table) + ", expected " +
                                 std::to_string(g.table_size()));
    r.f32_into(g.raw_table(), what);
}

}  // namespace

void save_head(const nets::HeadField& hf, const std::string& path) {
    Writer w(path);
    w.bytes(kMagic, 4);
    w.u32(kVersion);
    w.u32(kKindHead);
    const auto& c = hf.config();
    w.i32(c.grid.levels);
    w.i32(c.grid.features);
    w.i32(c.grid.table_size_log2);
    w.i32(c.grid.res_min);
    w.i32(c.grid.res_max);
    w.i32(static_cast<int>(c.backbone));
    w.i32(static_cast<int>(c.attention));
    w.i32(c.equal_budget ? 1 : 0);
    w.i32(c.detach_attention ? 1 : 0);
    w.i32(c.audio_hidden);
    w.i32(c.eye_hidden);
    w.i32(c.density_hidden);
    w.i32(c.color_hidden);
    w.i32(c.latent_dim);
    w.i32(c.dir_octaves);
    auto grids = hf.encoder().grids();
    w.u32(static_cast<std::uint32_t>(grids.size()));
    for (const auto* g : grids) write_grid(w, *g);
    w.doubles_as_f32(hf.audio_attn().raw_params());
    w.doubles_as_f32(hf.eye_attn().raw_params());
    w.doubles_as_f32(hf.density_mlp().raw_params());
    w.doubles_as_f32(hf.color_mlp().raw_params());
    w.close();
}

nets::HeadField load_head(const std::string& path) {
    Reader r(path);
    check_header(r, kKindHead, "head");
    nets::HeadFieldConfig c;
    c.grid.levels = r.i32();
    c.grid.features = r.i32();
    c.grid.table_size_log2 = r.i32();
    c.grid.res_min = r.i32();
    c.grid.res_max = r.i32();
    c.backbone = static_cast<fieldrepr::Backbone>(r.i32());
    c.attention = static_cast<nets::AttentionMode>(r.i32());
    c.equal_budget = r.i32() != 0;
    c.detach_attention = r.i32() != 0;
    c.audio_hidden = r.i32();
    c.eye_hidden = r.i32();
    c.density_hidden = r.i32();
    c.color_hidden = r.i32();
    c.latent_dim = r.i32();
    c.dir_octaves = r.i32();

    Rng rng(0);
    nets::HeadField hf(c, rng);
    auto grids = hf.encoder().grids();
    std::uint32_t n_grids = r.u32();
    if (n_grids != grids.size())
        throw std::runtime_error("checkpoint: " + path + ": grid count mismatch");
    for (auto* g : grids) read_grid(r, *g, "encoder grid");
    r.f32_into(hf.audio_attn().raw_params(), "audio attention");
    r.f32_into(hf.eye_attn().raw_params(), "eye attention");
    r.f32_into(hf.density_mlp().raw_params(), "density mlp");
    r.f32_into(hf.color_mlp().raw_params(), "color mlp");
    return hf;
}

void save_torso(const nets::TorsoField& tf, const std::string& path) {
    Writer w(path);
    w.bytes(kMagic, 4);
    w.u32(kVersion);
    w.u32(kKindTorso);
    const auto& c = tf.config();
    w.i32(c.tex_grid.levels);
    w.i32(c.tex_grid.features);
    w.i32(c.tex_grid.table_size_log2);
    w.i32(c.tex_grid.res_min);
    w.i32(c.tex_grid.res_max);
    w.i32(c.deform_hidden);
    w.i32(c.head_hidden);
    for (const Vec3& p : tf.keys().pts) {
        w.f32(p.x);
        w.f32(p.y);
        w.f32(p.z);
    }
    w.f32(tf.keys().gamma);
    w.doubles_as_f32(tf.deform_mlp().raw_params());
    write_grid(w, tf.tex_grid());
    w.doubles_as_f32(tf.head_mlp().raw_params());
    w.close();
}

nets::TorsoField load_torso(const std::string& path) {
    Reader r(path);
    check_header(r, kKindTorso, "torso");
    nets::TorsoFieldConfig c;
    c.tex_grid.levels = r.i32();
    c.tex_grid.features = r.i32();
    c.tex_grid.table_size_log2 = r.i32();
    c.tex_grid.res_min = r.i32();
    c.tex_grid.res_max = r.i32();
    c.deform_hidden = r.i32();
    c.head_hidden = r.i32();

    Rng rng(0);
    nets::TorsoField tf(c, rng);
    for (Vec3& p : tf.keys().pts) {
        p.x = r.f32();
        p.y = r.f32();
        p.z = r.f32();
    }
    tf.keys().gamma = r.f32();
    r.f32_into(tf.deform_mlp().raw_params(), "deform mlp");
    read_grid(r, tf.tex_grid(), "texture grid");
    r.f32_into(tf.head_mlp().raw_params(), "head mlp");
    return tf;
}

}  // namespace trifield::checkpoint
