#include "trifield/cli.hpp"

#include <algorithm>
#include <climits>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "trifield/checkpoint.hpp"
#include "trifield/collide.hpp"
#include "trifield/gradcheck.hpp"
#include "trifield/image.hpp"
#include "trifield/render.hpp"
#include "trifield/scene.hpp"
#include "trifield/train.hpp"

namespace fs = std::filesystem;

namespace trifield::cli {
namespace {

constexpr Vec3 kWhite{1.0, 1.0, 1.0};

[[noreturn]] void invalid(const std::string& msg) { throw std::invalid_argument(msg); }

std::string fixed2(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string sci3(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3e", v);
    return buf;
}

int thread_cap() {
    const char* env = std::getenv("ERNF_THREADS");
    if (!env || !*env) return INT_MAX;
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) invalid("ERNF_THREADS must be a positive integer");
    return static_cast<int>(std::min<long>(v, INT_MAX));
}

int cap_workers(int requested) { return std::max(1, std::min(requested, thread_cap())); }

fieldrepr::Backbone parse_backbone(const std::string& s) {
    if (s == "trihash") return fieldrepr::Backbone::trihash;
    if (s == "hash3d") return fieldrepr::Backbone::hash3d;
    invalid("unknown backbone '" + s + "' (expected trihash or hash3d)");
}

nets::AttentionMode parse_attention(const std::string& s) {
    if (s == "channel") return nets::AttentionMode::channel;
    if (s == "feature") return nets::AttentionMode::feature;
    if (s == "concat") return nets::AttentionMode::concat;
    invalid("unknown attention '" + s + "' (expected channel, feature, or concat)");
}

/// Failures while reading user-supplied inputs count as validation errors.
template <typename F>
auto load_input(F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const std::invalid_argument&) {
        throw;
    } catch (const std::exception& e) {
        invalid(e.what());
    }
}

train::TrainConfig load_train_config(const std::string& path) {
    if (path.empty()) return train::TrainConfig{};
    return load_input([&] { return train::parse_train_config(path); });
}

scene::Dataset load_data(const std::string& dir) {
    return load_input([&] { return scene::load_dataset(dir); });
}

nets::HeadField load_head(const std::string& path) {
    return load_input([&] { return checkpoint::load_head(path); });
}

nets::TorsoField load_torso(const std::string& path) {
    return load_input([&] { return checkpoint::load_torso(path); });
}

std::vector<int> split_indices(const scene::Dataset& ds, const std::string& split) {
    std::vector<int> idx;
    for (std::size_t i = 0; i < ds.frames.size(); ++i) {
        bool take = split == "all" || (split == "val") == ds.frames[i].val;
        if (take) idx.push_back(static_cast<int>(i));
    }
    if (idx.empty()) invalid("split '" + split + "' selects no frames");
    return idx;
}

/// Checkpoints carry no occupancy section, so evaluation rebuilds the grid
/// from the loaded field: start empty and take the running max of densities
/// under a few dataset conditions, exactly as the trainer's refresh does.
fieldrepr::OccupancyGrid rebuild_occupancy(const nets::HeadField& hf, const scene::Dataset& ds,
                                           const train::TrainConfig& cfg) {
    fieldrepr::OccupancyGrid occ(cfg.occupancy_res, cfg.occupancy_threshold);
    occ.fill(0.0);
    Rng occ_rng = Rng(cfg.seed).fork(2);
    std::vector<int> train_frames = split_indices(ds, "train");
    for (int pass = 0; pass < 8; ++pass) {
        std::vector<std::function<double(const Vec3&)>> fields;
        for (int k = 0; k < 2; ++k) {
            const scene::Frame& fr =
                ds.frames[static_cast<std::size_t>(
                    train_frames[occ_rng.uniform_index(train_frames.size())])];
            fields.emplace_back([&hf, a = fr.a, e = fr.e](const Vec3& u) {
                return hf.density_only(u, a.data(), e);
            });
        }
        occ.update(fields, occ_rng);
    }
    return occ;
}

struct TrainArgs {
    std::string data = "data";
    std::string config;
    std::string out;
    std::string head = "none";  // train-torso only
    std::uint64_t seed = 0;
    bool deterministic = false;
    int iters_coarse = 0, iters_fine = 0, iters_torso = 0;
    int workers = 1;
    std::string backbone, attention;

    CLI::Option *seed_opt = nullptr, *ic_opt = nullptr, *if_opt = nullptr, *it_opt = nullptr,
                *workers_opt = nullptr;

    train::TrainConfig make_config() const {
        train::TrainConfig cfg = load_train_config(config);
        if (seed_opt->count()) cfg.seed = seed;
        if (deterministic) cfg.deterministic = true;
        if (ic_opt && ic_opt->count()) cfg.coarse_iters = iters_coarse;
        if (if_opt && if_opt->count()) cfg.fine_iters = iters_fine;
        if (it_opt && it_opt->count()) cfg.torso_iters = iters_torso;
        if (workers_opt->count()) cfg.workers = workers;
        if (!backbone.empty()) cfg.model.backbone = parse_backbone(backbone);
        if (!attention.empty()) cfg.model.attention = parse_attention(attention);
        cfg.workers = cap_workers(cfg.workers);
        return cfg;
    }
};

void add_train_flags(CLI::App* cmd, TrainArgs& p) {
    cmd->add_option("--data", p.data, "dataset directory")->capture_default_str();
    cmd->add_option("--config", p.config, "training config file; flags override its values")
        ->capture_default_str();
    p.seed_opt = cmd->add_option("--seed", p.seed, "master random seed")->capture_default_str();
    cmd->add_flag("--deterministic", p.deterministic,
                  "single-worker mode with byte-identical artifacts (default off)");
    p.workers_opt =
        cmd->add_option("--workers", p.workers, "worker threads (capped by ERNF_THREADS)")
            ->capture_default_str();
}

struct RenderArgs {
    std::string ckpt = "none";
    std::string torso;
    std::string data = "data";
    std::string out = "render.ppm";
    std::string config;
    int frame = 0;
    int n_samples = 16;
    int supersample = 1;
    int workers = 1;
};

struct EvalArgs {
    std::string ckpt = "none";
    std::string torso;
    std::string data = "data";
    std::string out = "eval.json";
    std::string config;
    std::string split = "val";
    int n_samples = 16;
    int workers = 1;
};

struct CollisionArgs {
    std::vector<int> Rs{64, 128, 256};
    std::vector<int> Ns{4, 8, 16};
    int resolution = 512;
    int table_log2 = 14;
    std::string out;
};

struct GradcheckArgs {
    std::string module = "all";
    std::uint64_t seed = 7;
    int instances = 100;
};

struct GenDataArgs {
    std::string out = "data";
    std::uint64_t seed = 0;
    int frames = 40;
    int width = 128, height = 128;
    int supersample = 2;
};

void cmd_gen_data(const GenDataArgs& p, std::ostream& os) {
    scene::SyntheticScene s;
    scene::TrajectoryConfig t;
    t.n_frames = p.frames;
    t.width = p.width;
    t.height = p.height;
    t.supersample = p.supersample;
    scene::Dataset ds = scene::generate_dataset(s, t, p.seed, p.out);
    os << "wrote " << ds.frames.size() << " frames (" << p.width << "x" << p.height << ") to "
       << p.out << "\n";
}

void cmd_train_head(const TrainArgs& p, std::ostream& os) {
    train::TrainConfig cfg = p.make_config();
    scene::Dataset ds = load_data(p.data);
    train::TrainStats stats = train::train_head(ds, cfg, p.out);
    os << "head checkpoint: " << p.out << "/head.tfck\n";
    os << "final validation PSNR: " << fixed2(stats.final_val_psnr) << " dB\n";
}

void cmd_train_torso(const TrainArgs& p, std::ostream& os) {
    if (p.head == "none") invalid("head checkpoint required (--head)");
    if (!fs::exists(p.head)) invalid("head checkpoint not found: " + p.head);
    train::TrainConfig cfg = p.make_config();
    scene::Dataset ds = load_data(p.data);
    train::TrainStats stats = train::train_torso(ds, p.head, cfg, p.out);
    os << "torso checkpoint: " << p.out << "/torso.tfck\n";
    os << "final validation PSNR: " << fixed2(stats.final_val_psnr) << " dB\n";
}

void cmd_render(const RenderArgs& p, std::ostream& os) {
    if (p.ckpt == "none") invalid("checkpoint required");
    train::TrainConfig cfg = load_train_config(p.config);
    scene::Dataset ds = load_data(p.data);
    if (p.frame < 0 || p.frame >= static_cast<int>(ds.frames.size()))
        invalid("frame index " + std::to_string(p.frame) + " out of range (dataset has " +
                std::to_string(ds.frames.size()) + " frames)");
    nets::HeadField hf = load_head(p.ckpt);

    const scene::Frame& fr = ds.frames[static_cast<std::size_t>(p.frame)];
    HeadPose cam = fr.canonical_cam();
    const Aabb box{};
    render::RenderOptions opt;
    opt.n_samples = p.n_samples;
    opt.background = kWhite;
    opt.supersample = p.supersample;
    opt.workers = cap_workers(p.workers);

    std::optional<FrameBuffer> fb;
    if (p.torso.empty()) {
        fieldrepr::OccupancyGrid occ = rebuild_occupancy(hf, ds, cfg);
        opt.occupancy = &occ;
        fb = render::render_head_frame(hf, ds.cam, cam, box, fr.a.data(), fr.e, opt);
    } else {
        nets::TorsoField tf = load_torso(p.torso);
        nets::PoseEncoding enc;
        try {
            enc = nets::adaptive_pose_encoding(tf.keys(), cam);
        } catch (const nets::DegeneratePoseError& e) {
            invalid("frame " + std::to_string(p.frame) + ": " + e.what());
        }
        fb = render::render_head_frame(hf, ds.cam, cam, box, fr.a.data(), fr.e, opt);
        render::composite_torso_over(tf, enc, *fb, opt.workers);
    }
    write_ppm(*fb, p.out);
    os << "wrote " << p.out << "\n";
}

void cmd_collisions(const CollisionArgs& p, std::ostream& os) {
    if (p.Rs.empty() || p.Ns.empty()) invalid("need at least one --R and one --N");
    for (int v : p.Rs)
        if (v < 1) invalid("--R values must be >= 1");
    for (int v : p.Ns)
        if (v < 1) invalid("--N values must be >= 1");
    if (p.resolution < 2) invalid("--res must be >= 2");
    if (p.table_log2 < 4 || p.table_log2 > 28) invalid("--table-log2 must be in [4, 28]");

    std::uint32_t table3d = std::uint32_t{1} << p.table_log2;
    std::uint32_t table_tri = fieldrepr::TriPlaneEncoder::equal_budget_table(p.table_log2);
    auto rows = collide::complexity_sweep(p.Rs, p.Ns, p.resolution, table3d, table_tri);

    int R = *std::max_element(p.Rs.begin(), p.Rs.end());
    int N = *std::max_element(p.Ns.begin(), p.Ns.end());
    std::uint64_t c3d = 0, ctri = 0;
    for (const auto& r : rows) {
        if (r.R != R || r.N != N) continue;
        if (r.encoder == "hash3d" && r.plane == "all") c3d = r.collisions;
        if (r.encoder == "triplane" && r.plane == "total") ctri = r.collisions;
    }
    std::string ratio = ctri ? fixed2(static_cast<double>(c3d) / static_cast<double>(ctri)) : "inf";
    std::string summary = "# hash3d/triplane total collisions at R=" + std::to_string(R) +
                          " N=" + std::to_string(N) + ": " + ratio + "\n";

    if (p.out.empty()) {
        collide::write_sweep_csv(rows, os);
        os << summary;
    } else {
        std::ofstream f(p.out);
        if (!f) invalid("cannot open " + p.out + " for writing");
        collide::write_sweep_csv(rows, f);
        f << summary;
        if (!f) throw std::runtime_error("failed to write " + p.out);
        os << "wrote " << p.out << "\n" << summary;
    }
}

void cmd_gradcheck(const GradcheckArgs& p, std::ostream& os) {
    auto results = gradcheck::run(p.module, p.seed, p.instances);
    std::string failed;
    for (const auto& r : results) {
        os << r.name;
        for (std::size_t pad = r.name.size(); pad < 12; ++pad) os << ' ';
        os << "max_rel_err=" << sci3(r.max_rel_err) << "  instances=" << r.instances << "\n";
        if (!(r.max_rel_err <= 1e-4)) failed += (failed.empty() ? "" : ", ") + r.name;
    }
    if (!failed.empty()) throw std::runtime_error("gradient check failed for: " + failed);
    os << "all modules within 1e-4\n";
}

void cmd_eval(const EvalArgs& p, std::ostream& os) {
    if (p.ckpt == "none") invalid("checkpoint required");
    train::TrainConfig cfg = load_train_config(p.config);
    scene::Dataset ds = load_data(p.data);
    nets::HeadField hf = load_head(p.ckpt);
    std::vector<int> idx = split_indices(ds, p.split);

    render::RenderOptions opt;
    opt.n_samples = p.n_samples;
    opt.background = kWhite;
    opt.workers = cap_workers(p.workers);

    const Aabb box{};
    std::optional<fieldrepr::OccupancyGrid> occ;
    std::optional<nets::TorsoField> tf;
    const bool composite = !p.torso.empty();
    if (composite) {
        tf = load_torso(p.torso);
    } else {
        occ = rebuild_occupancy(hf, ds, cfg);
        opt.occupancy = &*occ;
    }

    nlohmann::json frames = nlohmann::json::array();
    double sum = 0.0;
    int n = 0;
    for (int i : idx) {
        const scene::Frame& fr = ds.frames[static_cast<std::size_t>(i)];
        HeadPose cam = fr.canonical_cam();
        std::string target_path = composite ? ds.frame_path(i) : ds.head_path(i);
        FrameBuffer target = load_input([&] { return read_ppm(target_path); });

        FrameBuffer pred = render::render_head_frame(hf, ds.cam, cam, box, fr.a.data(), fr.e, opt);
        if (composite) {
            nets::PoseEncoding enc;
            try {
                enc = nets::adaptive_pose_encoding(tf->keys(), cam);
            } catch (const nets::DegeneratePoseError&) {
                os << "frame " << i << " skipped (degenerate pose)\n";
                continue;
            }
            render::composite_torso_over(*tf, enc, pred, opt.workers);
        }
        double psnr = image_psnr(pred, target);
        frames.push_back({{"index", i},
                          {"file", composite ? fr.file : fr.head_file},
                          {"val", fr.val},
                          {"psnr", psnr}});
        sum += psnr;
        ++n;
        os << "frame " << i << (fr.val ? " (val)" : "") << ": " << fixed2(psnr) << " dB\n";
    }
    if (n == 0) throw std::runtime_error("no frames evaluated");
    double mean = sum / n;
    os << "mean PSNR over " << n << " frames: " << fixed2(mean) << " dB\n";

    nlohmann::json report{{"checkpoint", p.ckpt}, {"dataset", p.data},
                          {"split", p.split},    {"mode", composite ? "composite" : "head"},
                          {"n_samples", p.n_samples}, {"frames", frames},
                          {"mean_psnr", mean}};
    if (composite) report["torso"] = p.torso;
    std::ofstream f(p.out);
    if (!f) invalid("cannot open " + p.out + " for writing");
    f << report.dump(2) << "\n";
    if (!f) throw std::runtime_error("failed to write " + p.out);
    os << "report: " << p.out << "\n";
}

}  // namespace

int run(std::vector<std::string> args, std::ostream& os, std::ostream& err) {
    CLI::App app{"synthetic talking-head field toolkit: dataset generation, two-stage "
                 "head/torso training, rendering, hash-collision sweeps, gradient checks, "
                 "and PSNR evaluation"};
    app.name("trifield");
    app.footer("The ERNF_THREADS environment variable caps --workers for every subcommand.");
    app.require_subcommand(1);

    GenDataArgs gd;
    auto* c_gd = app.add_subcommand("gen-data", "Generate a synthetic condition-driven dataset");
    c_gd->add_option("--out", gd.out, "output dataset directory")->capture_default_str();
    c_gd->add_option("--seed", gd.seed, "trajectory and condition seed")->capture_default_str();
    c_gd->add_option("--frames", gd.frames, "number of frames")->capture_default_str();
    c_gd->add_option("--width", gd.width, "frame width in pixels")->capture_default_str();
    c_gd->add_option("--height", gd.height, "frame height in pixels")->capture_default_str();
    c_gd->add_option("--supersample", gd.supersample, "oracle supersampling factor")
        ->capture_default_str();
    c_gd->callback([&] { cmd_gen_data(gd, os); });

    TrainArgs th;
    th.out = "out/head";
    auto* c_th = app.add_subcommand("train-head", "Optimize the head field (coarse then fine)");
    add_train_flags(c_th, th);
    c_th->add_option("--out", th.out, "output directory for checkpoint and metrics")
        ->capture_default_str();
    th.ic_opt = c_th->add_option("--iters-coarse", th.iters_coarse,
                                 "coarse-stage iterations (default from config: 2000)");
    th.if_opt = c_th->add_option("--iters-fine", th.iters_fine,
                                 "fine-stage iterations (default from config: 500)");
    c_th->add_option("--backbone", th.backbone, "spatial encoder (default from config: trihash)")
        ->check(CLI::IsMember({"trihash", "hash3d"}));
    c_th->add_option("--attention", th.attention,
                     "condition fusion (default from config: channel)")
        ->check(CLI::IsMember({"channel", "feature", "concat"}));
    c_th->callback([&] { cmd_train_head(th, os); });

    TrainArgs tt;
    tt.out = "out/torso";
    auto* c_tt = app.add_subcommand("train-torso", "Optimize the torso field over a frozen head");
    add_train_flags(c_tt, tt);
    c_tt->add_option("--out", tt.out, "output directory for checkpoint and metrics")
        ->capture_default_str();
    c_tt->add_option("--head", tt.head, "trained head checkpoint (required)")
        ->capture_default_str();
    tt.it_opt = c_tt->add_option("--iters-torso", tt.iters_torso,
                                 "torso iterations (default from config: 1000)");
    c_tt->callback([&] { cmd_train_torso(tt, os); });

    RenderArgs rd;
    auto* c_rd = app.add_subcommand("render", "Render one dataset frame from a checkpoint");
    c_rd->add_option("--ckpt", rd.ckpt, "head checkpoint path")->capture_default_str();
    c_rd->add_option("--torso", rd.torso, "torso checkpoint to composite over the head")
        ->capture_default_str();
    c_rd->add_option("--data", rd.data, "dataset directory (camera poses and conditions)")
        ->capture_default_str();
    c_rd->add_option("--frame", rd.frame, "frame index to render")->capture_default_str();
    c_rd->add_option("--out", rd.out, "output PPM path")->capture_default_str();
    c_rd->add_option("--config", rd.config, "training config for occupancy settings")
        ->capture_default_str();
    c_rd->add_option("--N", rd.n_samples, "samples per ray")->capture_default_str();
    c_rd->add_option("--supersample", rd.supersample, "rays per pixel axis")
        ->capture_default_str();
    c_rd->add_option("--workers", rd.workers, "worker threads (capped by ERNF_THREADS)")
        ->capture_default_str();
    c_rd->callback([&] { cmd_render(rd, os); });

    CollisionArgs cl;
    auto* c_cl = app.add_subcommand("collisions",
                                    "Hash-collision sweep comparing 3D and tri-plane tables");
    c_cl->add_option("--R", cl.Rs, "image resolutions to sweep")
        ->delimiter(',')
        ->capture_default_str();
    c_cl->add_option("--N", cl.Ns, "samples per ray to sweep")
        ->delimiter(',')
        ->capture_default_str();
    c_cl->add_option("--res", cl.resolution, "grid level resolution")->capture_default_str();
    c_cl->add_option("--table-log2", cl.table_log2,
                     "log2 of the 3D table size; tri-plane tables get a third each")
        ->capture_default_str();
    c_cl->add_option("--out", cl.out, "CSV output path (default: stdout)")
        ->capture_default_str();
    c_cl->callback([&] { cmd_collisions(cl, os); });

    GradcheckArgs gc;
    auto* c_gc = app.add_subcommand("gradcheck",
                                    "Check every adjoint against central finite differences");
    c_gc->add_option("--module", gc.module,
                     "all, hash2d, hash3d, triplane, mlp, attention, head_mlp, torso, pose, "
                     "or compositor")
        ->capture_default_str();
    c_gc->add_option("--seed", gc.seed, "sampling seed")->capture_default_str();
    c_gc->add_option("--instances", gc.instances, "random instances per module")
        ->capture_default_str();
    c_gc->callback([&] { cmd_gradcheck(gc, os); });

    EvalArgs ev;
    auto* c_ev = app.add_subcommand("eval", "PSNR of rendered frames against dataset frames");
    c_ev->add_option("--ckpt", ev.ckpt, "head checkpoint path")->capture_default_str();
    c_ev->add_option("--torso", ev.torso,
                     "torso checkpoint; evaluates composite frames when given")
        ->capture_default_str();
    c_ev->add_option("--data", ev.data, "dataset directory")->capture_default_str();
    c_ev->add_option("--split", ev.split, "frame subset to score")
        ->check(CLI::IsMember({"val", "train", "all"}))
        ->capture_default_str();
    c_ev->add_option("--out", ev.out, "JSON report path")->capture_default_str();
    c_ev->add_option("--config", ev.config, "training config for occupancy settings")
        ->capture_default_str();
    c_ev->add_option("--N", ev.n_samples, "samples per ray")->capture_default_str();
    c_ev->add_option("--workers", ev.workers, "worker threads (capped by ERNF_THREADS)")
        ->capture_default_str();
    c_ev->callback([&] { cmd_eval(ev, os); });

    try {
        std::reverse(args.begin(), args.end());
        app.parse(std::move(args));
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e, os, err);
        return code == 0 ? 0 : 1;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

}  // namespace trifield::cli
