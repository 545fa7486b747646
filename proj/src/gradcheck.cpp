#include "trifield/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "trifield/headfield.hpp"
#include "trifield/render.hpp"
#include "trifield/rng.hpp"
#include "trifield/torso.hpp"

namespace trifield::gradcheck {

namespace {

constexpr double kParamH = 1e-5;
constexpr double kPosH = 1e-6;

double rel_err(double analytic, double fd) {
    double denom = std::max({std::abs(analytic), std::abs(fd), 1e-3});
    return std::abs(analytic - fd) / denom;
}

template <typename F>
double central(const F& eval, double& p, double h) {
    const double save = p;
    p = save + h;
    const double up = eval();
    p = save - h;
    const double dn = eval();
    p = save;
    return (up - dn) / (2.0 * h);
}

/// Every level's scaled coordinate keeps its fractional part away from the
/// interpolation lattice, so finite differences stay on one linear segment.
bool lattice_safe(const hashenc::HashGridConfig& cfg, const double* u, int dims) {
    for (int l = 0; l < cfg.levels; ++l) {
        int n = cfg.level_resolution(l);
        for (int d = 0; d < dims; ++d) {
            double s = u[d] * n;
            double frac = s - std::floor(s);
            if (frac < 0.01 || frac > 0.99) return false;
        }
    }
    return true;
}

/// Pre-activations away from the relu kink (cheap to enforce everywhere).
bool stack_safe(const nets::DenseStack::Tape& tape) {
    for (const auto& layer : tape.z)
        for (double z : layer)
            if (std::abs(z) < 1e-4) return false;
    return true;
}

/// Production grids start near zero, which drives downstream relu
/// pre-activations below any workable kink margin. The checks only need
/// representative arithmetic, so scale the tables up to O(1).
void randomize_table(hashenc::HashGrid& grid, Rng& rng) {
    for (auto& v : grid.raw_table()) v = rng.uniform(-0.5, 0.5);
}

void require_safe(bool safe, const char* module) {
    if (!safe)
        throw std::runtime_error(std::string("gradcheck: could not sample a kink-free "
                                             "instance for module '") +
                                 module + "'");
}

/// Random indices into a gradient vector: all nonzero entries (capped) plus a
/// few untouched ones to confirm true zeros.
std::vector<std::size_t> probe_indices(const std::vector<double>& g, Rng& rng, int max_touched,
                                       int extra) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < g.size(); ++i)
        if (g[i] != 0.0) idx.push_back(i);
    if (static_cast<int>(idx.size()) > max_touched) {
        for (int k = static_cast<int>(idx.size()) - 1; k > 0; --k)
            std::swap(idx[static_cast<std::size_t>(k)], idx[rng.uniform_index(k + 1)]);
        idx.resize(static_cast<std::size_t>(max_touched));
    }
    for (int k = 0; k < extra; ++k) idx.push_back(rng.uniform_index(g.size()));
    return idx;
}

ModuleResult check_hash(int dims, std::uint64_t seed, int instances) {
    Rng rng(seed);
    hashenc::HashGridConfig cfg;
    cfg.levels = 3;
    cfg.features = 2;
    cfg.table_size_log2 = 8;
    cfg.res_min = 4;
    cfg.res_max = 32;
    cfg.dims = dims;
    hashenc::HashGrid grid(cfg, rng);

    ModuleResult res{dims == 2 ? "hash2d" : "hash3d", 0.0, 0};
    const int out_dim = cfg.feature_dim();
    std::vector<double> u(dims), ups(out_dim), enc(out_dim), du(dims);

    for (int inst = 0; inst < instances; ++inst) {
        do {
            for (int d = 0; d < dims; ++d) u[d] = rng.uniform(0.05, 0.95);
        } while (!lattice_safe(cfg, u.data(), dims));
        for (auto& v : ups) v = rng.uniform(-1.0, 1.0);

        auto loss = [&] {
            grid.encode(u.data(), enc.data());
            double s = 0.0;
            for (int i = 0; i < out_dim; ++i) s += ups[i] * enc[i];
            return s;
        };

        hashenc::GradBuffer gb(grid);
        std::fill(du.begin(), du.end(), 0.0);
        grid.encode_backward(u.data(), ups.data(), gb, du.data());

        for (std::size_t i : probe_indices(gb.g, rng, 32, 4)) {
            double fd = central(loss, grid.raw_table()[i], kParamH);
            res.max_rel_err = std::max(res.max_rel_err, rel_err(gb.g[i], fd));
        }
        for (int d = 0; d < dims; ++d) {
            double fd = central(loss, u[d], kPosH);
            res.max_rel_err = std::max(res.max_rel_err, rel_err(du[d], fd));
        }
        ++res.instances;
    }
    return res;
}

ModuleResult check_triplane(std::uint64_t seed, int instances) {
    Rng rng(seed);
    hashenc::HashGridConfig cfg;
    cfg.levels = 3;
    cfg.features = 2;
    cfg.table_size_log2 = 8;
    cfg.res_min = 4;
    cfg.res_max = 32;
    cfg.dims = 2;
    fieldrepr::TriPlaneEncoder enc(cfg, rng);

    ModuleResult res{"triplane", 0.0, 0};
    const int out_dim = enc.feature_dim();
    std::vector<double> ups(out_dim), buf(out_dim);

    for (int inst = 0; inst < instances; ++inst) {
        Vec3 x;
        double coords[3];
        do {
            x = Vec3{rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)};
            coords[0] = x.x;
            coords[1] = x.y;
            coords[2] = x.z;
        } while (!lattice_safe(cfg, coords, 3));
        for (auto& v : ups) v = rng.uniform(-1.0, 1.0);

        auto loss = [&] {
            enc.encode(x, buf.data());
            double s = 0.0;
            for (int i = 0; i < out_dim; ++i) s += ups[i] * buf[i];
            return s;
        };

        fieldrepr::TriPlaneEncoder::Grads g(enc);
        Vec3 dx{};
        enc.encode_backward(x, ups.data(), g, &dx);

        for (int p = 0; p < 3; ++p)
            for (std::size_t i : probe_indices(g.per_plane[p].g, rng, 16, 2)) {
                double fd = central(loss, enc.plane(p).raw_table()[i], kParamH);
                res.max_rel_err = std::max(res.max_rel_err, rel_err(g.per_plane[p].g[i], fd));
            }
        for (int d = 0; d < 3; ++d) {
            double fd = central(loss, x[d], kPosH);
            res.max_rel_err = std::max(res.max_rel_err, rel_err(dx[d], fd));
        }
        ++res.instances;
    }
    return res;
}

ModuleResult check_mlp(std::uint64_t seed, int instances) {
    Rng rng(seed);
    using nets::Activation;
    nets::DenseStack relu_stack({5, 8, 8, 3}, {Activation::relu, Activation::relu,
                                               Activation::none},
                                rng);
    nets::DenseStack sig_stack({4, 6, 2}, {Activation::relu, Activation::sigmoid}, rng);

    ModuleResult res{"mlp", 0.0, 0};
    for (int inst = 0; inst < instances; ++inst) {
        nets::DenseStack& stack = inst % 2 ? sig_stack : relu_stack;
        const int in = stack.input_dim(), out = stack.output_dim();
        std::vector<double> x(in), y(out), ups(out), dx(in, 0.0);
        nets::DenseStack::Tape tape;
        do {
            for (auto& v : x) v = rng.uniform(-1.0, 1.0);
            stack.forward(x.data(), y.data(), &tape);
        } while (!stack_safe(tape));
        for (auto& v : ups) v = rng.uniform(-1.0, 1.0);

        auto loss = [&] {
            stack.forward(x.data(), y.data(), nullptr);
            double s = 0.0;
            for (int i = 0; i < out; ++i) s += ups[i] * y[i];
            return s;
        };

        nets::DenseStack::Grads g(stack);
        stack.backward(tape, ups.data(), g, dx.data());

        for (std::size_t i = 0; i < g.g.size(); ++i) {
            double fd = central(loss, stack.raw_params()[i], kParamH);
            res.max_rel_err = std::max(res.max_rel_err, rel_err(g.g[i], fd));
        }
        for (int d = 0; d < in; ++d) {
            double fd = central(loss, x[d], kParamH);
            res.max_rel_err = std::max(res.max_rel_err, rel_err(dx[d], fd));
        }
        ++res.instances;
    }
    return res;
}

nets::HeadFieldConfig small_head_config(nets::AttentionMode mode) {
    nets::HeadFieldConfig c;
    c.grid.levels = 2;
    c.grid.res_min = 3;
    c.grid.res_max = 9;
    c.grid.table_size_log2 = 8;
    c.attention = mode;
    c.audio_hidden = 8;
    c.eye_hidden = 4;
    c.density_hidden = 16;
    c.color_hidden = 16;
    c.latent_dim = 8;
    c.dir_octaves = 2;
    return c;
}

void check_headfield(std::uint64_t seed, int instances, ModuleResult& attn, ModuleResult& hmlp) {
    Rng rng(seed);
    nets::HeadField channel(small_head_config(nets::AttentionMode::channel), rng);
    nets::HeadField feature(small_head_config(nets::AttentionMode::feature), rng);
    for (auto* g : channel.encoder().grids()) randomize_table(*g, rng);
    for (auto* g : feature.encoder().grids()) randomize_table(*g, rng);
    attn = ModuleResult{"attention", 0.0, 0};
    hmlp = ModuleResult{"head_mlp", 0.0, 0};

    for (int inst = 0; inst < instances; ++inst) {
        nets::HeadField& hf = inst % 2 ? feature : channel;
        const auto& gcfg = hf.config().grid;

        Vec3 x, d;
        std::array<double, regionattn::kAudioDim> a{};
        double e = 0.0;
        Vec3 u_rgb;
        double u_sigma = 0.0;
        nets::HeadField::Tape tape;
        bool safe = false;
        for (int tries = 0; tries < 1000 && !safe; ++tries) {
            double coords[3];
            do {
                x = Vec3{rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95),
                         rng.uniform(0.05, 0.95)};
                coords[0] = x.x;
                coords[1] = x.y;
                coords[2] = x.z;
            } while (!lattice_safe(gcfg, coords, 3));
            d = normalized(Vec3{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
            for (auto& v : a) v = rng.uniform(-1.0, 1.0);
            e = rng.uniform(0.05, 0.95);
            hf.forward(x, d, a.data(), e, &tape);
            safe = stack_safe(tape.audio_tape) && stack_safe(tape.eye_tape) &&
                   stack_safe(tape.density_tape) && stack_safe(tape.color_tape) &&
                   std::abs(tape.sigma_pre - nets::kSigmaPreClamp) > 1e-3;
        }
        require_safe(safe, "head_mlp");
        u_rgb = Vec3{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        u_sigma = rng.uniform(-1.0, 1.0);

        auto loss = [&] {
            auto o = hf.forward(x, d, a.data(), e, nullptr);
            return dot(u_rgb, o.rgb) + u_sigma * o.sigma;
        };

        nets::HeadField::Grads g(hf);
        Vec3 dx{};
        hf.backward(tape, u_rgb, u_sigma, g, &dx);

        auto probe_stack = [&](nets::DenseStack& stack, const std::vector<double>& grads,
                               ModuleResult& out) {
            for (std::size_t i : probe_indices(grads, rng, 20, 2)) {
                double fd = central(loss, stack.raw_params()[i], kParamH);
                out.max_rel_err = std::max(out.max_rel_err, rel_err(grads[i], fd));
            }
        };
        probe_stack(hf.audio_attn(), g.audio.g, attn);
        probe_stack(hf.eye_attn(), g.eye.g, attn);
        probe_stack(hf.density_mlp(), g.density.g, hmlp);
        probe_stack(hf.color_mlp(), g.color.g, hmlp);

        // spatial-feature chain: encoder tables and position through the field
        auto grids = hf.encoder().grids();
        for (std::size_t p = 0; p < grids.size(); ++p)
            for (std::size_t i : probe_indices(g.enc.per_grid[p].g, rng, 8, 1)) {
                double fd = central(loss, grids[p]->raw_table()[i], kParamH);
                hmlp.max_rel_err = std::max(hmlp.max_rel_err, rel_err(g.enc.per_grid[p].g[i], fd));
            }
        for (int c = 0; c < 3; ++c) {
            double fd = central(loss, x[c], kPosH);
            hmlp.max_rel_err = std::max(hmlp.max_rel_err, rel_err(dx[c], fd));
        }
        ++attn.instances;
        ++hmlp.instances;
    }
}

ModuleResult check_torso(std::uint64_t seed, int instances) {
    Rng rng(seed);
    nets::TorsoFieldConfig cfg;
    cfg.tex_grid.levels = 3;
    cfg.tex_grid.table_size_log2 = 8;
    cfg.tex_grid.res_min = 4;
    cfg.tex_grid.res_max = 16;
    cfg.deform_hidden = 8;
    cfg.head_hidden = 8;
    nets::TorsoField tf(cfg, rng);
    randomize_table(tf.tex_grid(), rng);

    ModuleResult res{"torso", 0.0, 0};
    for (int inst = 0; inst < instances; ++inst) {
        Vec2 xp;
        nets::PoseEncoding enc;
        nets::TorsoField::Tape tape;
        bool safe = false;
        for (int tries = 0; tries < 1000 && !safe; ++tries) {
            xp = Vec2{rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)};
            for (auto& b : enc.bar) b = Vec2{rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3)};
            auto out = tf.forward(xp, enc, &tape);
            Vec2 tc = nets::TorsoField::tex_coords(tape.deformed);
            double coords[2] = {tc.x, tc.y};
            safe = !out.clamped && stack_safe(tape.deform_tape) && stack_safe(tape.head_tape) &&
                   lattice_safe(cfg.tex_grid, coords, 2);
        }
        require_safe(safe, "torso");
        Vec3 u_c{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        double u_a = rng.uniform(-1.0, 1.0);

        auto loss = [&] {
            auto o = tf.forward(xp, enc, nullptr);
            return dot(u_c, o.color) + u_a * o.alpha;
        };

        nets::TorsoField::Grads g(tf);
        std::array<Vec2, 3> d_enc{};
        tf.backward(tape, u_c, u_a, g, &d_enc);

        for (std::size_t i : probe_indices(g.deform.g, rng, 20, 2)) {
            double fd = central(loss, tf.deform_mlp().raw_params()[i], kParamH);
            res.max_rel_err = std::max(res.max_rel_err, rel_err(g.deform.g[i], fd));
        }
        for (std::size_t i : probe_indices(g.head.g, rng, 20, 2)) {
            double fd = central(loss, tf.head_mlp().raw_params()[i], kParamH);
            res.max_rel_err = std::max(res.max_rel_err, rel_err(g.head.g[i], fd));
        }
        for (std::size_t i : probe_indices(g.tex.g, rng, 12, 2)) {
            double fd = central(loss, tf.tex_grid().raw_table()[i], kParamH);
            res.max_rel_err = std::max(res.max_rel_err, rel_err(g.tex.g[i], fd));
        }
        for (int j = 0; j < 3; ++j) {
            double fdx = central(loss, enc.bar[j].x, kPosH);
            double fdy = central(loss, enc.bar[j].y, kPosH);
            res.max_rel_err = std::max(res.max_rel_err, rel_err(d_enc[j].x, fdx));
            res.max_rel_err = std::max(res.max_rel_err, rel_err(d_enc[j].y, fdy));
        }
        ++res.instances;
    }
    return res;
}

ModuleResult check_pose(std::uint64_t seed, int instances) {
    Rng rng(seed);
    ModuleResult res{"pose", 0.0, 0};
    for (int inst = 0; inst < instances; ++inst) {
        nets::KeyPoints keys;
        for (auto& p : keys.pts)
            p = Vec3{rng.uniform(-0.4, 0.4), rng.uniform(-0.8, 0.0), rng.uniform(0.1, 0.6)};
        keys.gamma = rng.uniform(0.5, 2.0);
        Vec3 axis = normalized(Vec3{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
        HeadPose pose = HeadPose::from_axis_angle(
            axis, rng.uniform(-0.4, 0.4),
            Vec3{rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-3.0, -2.0)});

        nets::PoseEncodingTape tape;
        nets::adaptive_pose_encoding(keys, pose, &tape);
        bool safe = true;
        for (const auto& xh : tape.xhat)
            if (std::abs(xh.z) < 0.05) safe = false;
        if (!safe) {
            --inst;
            continue;
        }

        std::array<Vec2, 3> ups;
        for (auto& u : ups) u = Vec2{rng.uniform(-1, 1), rng.uniform(-1, 1)};

        auto loss = [&] {
            auto enc = nets::adaptive_pose_encoding(keys, pose, nullptr);
            double s = 0.0;
            for (int j = 0; j < 3; ++j) s += dot(ups[j], enc.bar[j]);
            return s;
        };

        nets::KeyPointGrads g;
        g.zero();
        nets::adaptive_pose_encoding_backward(keys, pose, tape, ups, g);

        for (int j = 0; j < 3; ++j)
            for (int c = 0; c < 3; ++c) {
                double fd = central(loss, keys.pts[j][c], kParamH);
                res.max_rel_err = std::max(res.max_rel_err, rel_err(g.d_pts[j][c], fd));
            }
        double fd = central(loss, keys.gamma, kParamH);
        res.max_rel_err = std::max(res.max_rel_err, rel_err(g.d_gamma, fd));
        ++res.instances;
    }
    return res;
}

ModuleResult check_compositor(std::uint64_t seed, int instances) {
    Rng rng(seed);
    ModuleResult res{"compositor", 0.0, 0};
    for (int inst = 0; inst < instances; ++inst) {
        int n = 1 + static_cast<int>(rng.uniform_index(8));
        std::vector<double> ts(n);
        for (auto& t : ts) t = rng.uniform(0.0, 2.0);
        std::sort(ts.begin(), ts.end());
        auto s = render::make_samples(ts, 2.0 + rng.uniform(0.05, 0.5));
        for (int i = 0; i < n; ++i) {
            s.sigma[static_cast<std::size_t>(i)] = rng.uniform(0.05, 2.5);
            s.c[static_cast<std::size_t>(i)] =
                Vec3{rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1)};
        }
        Vec3 bg{rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1)};
        Vec3 u_c{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        double u_o = rng.uniform(-1.0, 1.0);

        auto loss = [&] {
            auto fwd = render::composite(s, bg);
            return dot(u_c, fwd.color) + u_o * fwd.opacity;
        };

        auto fwd = render::composite(s, bg);
        std::vector<Vec3> dc;
        std::vector<double> dsigma;
        Vec3 dbg{};
        render::composite_backward(s, bg, fwd, u_c, u_o, dc, dsigma, &dbg);

        for (int i = 0; i < n; ++i) {
            double fd = central(loss, s.sigma[static_cast<std::size_t>(i)], kParamH);
            res.max_rel_err =
                std::max(res.max_rel_err, rel_err(dsigma[static_cast<std::size_t>(i)], fd));
            for (int c = 0; c < 3; ++c) {
                double fdc = central(loss, s.c[static_cast<std::size_t>(i)][c], kParamH);
                res.max_rel_err =
                    std::max(res.max_rel_err, rel_err(dc[static_cast<std::size_t>(i)][c], fdc));
            }
        }
        for (int c = 0; c < 3; ++c) {
            double fd = central(loss, bg[c], kParamH);
            res.max_rel_err = std::max(res.max_rel_err, rel_err(dbg[c], fd));
        }
        ++res.instances;
    }
    return res;
}

}  // namespace

std::vector<std::string> module_names() {
    return {"hash2d", "hash3d",  "triplane", "mlp",  "attention",
            "head_mlp", "torso", "pose",     "compositor"};
}

std::vector<ModuleResult> run(const std::string& module, std::uint64_t seed, int instances) {
    if (instances < 1) throw std::invalid_argument("gradcheck: instances < 1");
    const bool all = module == "all";
    auto want = [&](const char* n) { return all || module == n; };

    std::vector<ModuleResult> out;
    if (want("hash2d")) out.push_back(check_hash(2, seed, instances));
    if (want("hash3d")) out.push_back(check_hash(3, seed + 1, instances));
    if (want("triplane")) out.push_back(check_triplane(seed + 2, instances));
    if (want("mlp")) out.push_back(check_mlp(seed + 3, instances));
    if (want("attention") || want("head_mlp")) {
        ModuleResult attn, hmlp;
        check_headfield(seed + 4, instances, attn, hmlp);
        if (want("attention")) out.push_back(attn);
        if (want("head_mlp")) out.push_back(hmlp);
    }
    if (want("torso")) out.push_back(check_torso(seed + 5, instances));
    if (want("pose")) out.push_back(check_pose(seed + 6, instances));
    if (want("compositor")) out.push_back(check_compositor(seed + 7, instances));
    if (out.empty()) throw std::invalid_argument("gradcheck: unknown module '" + module + "'");
    return out;
}

}  // namespace trifield::gradcheck
