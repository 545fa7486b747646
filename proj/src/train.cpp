#include "trifield/train.hpp"

#include <algorithm>
#include <chrono>
#include <climits>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "trifield/checkpoint.hpp"
#include "trifield/optim.hpp"
#include "trifield/render.hpp"
#include "trifield/threading.hpp"

namespace trifield::train {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
    if (coarse_iters < 0 || fine_iters < 0 || torso_iters < 0)
        throw std::invalid_argument("TrainConfig: negative iteration count");
    if (rays_per_batch < 1) throw std::invalid_argument("TrainConfig: rays_per_batch < 1");
    if (patch_size < 1) throw std::invalid_argument("TrainConfig: patch_size < 1");
    if (n_samples < 1) throw std::invalid_argument("TrainConfig: n_samples < 1");
    if (val_every < 1) throw std::invalid_argument("TrainConfig: val_every < 1");
    if (occupancy_every < 1) throw std::invalid_argument("TrainConfig: occupancy_every < 1");
    if (occupancy_res < 1) throw std::invalid_argument("TrainConfig: occupancy_res < 1");
    if (!(lr_grid > 0.0) || !(lr_mlp > 0.0))
        throw std::invalid_argument("TrainConfig: learning rates must be positive");
    if (!(lambda >= 0.0) || !(alpha_l1 >= 0.0))
        throw std::invalid_argument("TrainConfig: negative loss weight");
    if (!(occupancy_threshold > 0.0))
        throw std::invalid_argument("TrainConfig: occupancy_threshold must be positive");
    if (workers < 1) throw std::invalid_argument("TrainConfig: workers < 1");
}

void TrainConfig::apply_profile(const std::string& name) {
    if (name == "desk") {
        coarse_iters = 2000;
        fine_iters = 500;
        torso_iters = 1000;
    } else if (name == "paper") {
        coarse_iters = 100000;
        fine_iters = 25000;
        torso_iters = 100000;
    } else {
        throw std::runtime_error("unknown profile '" + name + "'");
    }
}

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void fail_at(int line_no, const std::string& what) {
    throw std::runtime_error("config line " + std::to_string(line_no) + ": " + what);
}

std::string strip_comment(const std::string& line) {
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"')
            quoted = !quoted;
        else if (line[i] == '#' && !quoted)
            return line.substr(0, i);
    }
    return line;
}

double parse_double(const std::string& raw, int line_no) {
    try {
        std::size_t pos = 0;
        double d = std::stod(raw, &pos);
        if (pos != raw.size()) throw std::invalid_argument("");
        return d;
    } catch (...) {
        fail_at(line_no, "expected a number, got '" + raw + "'");
    }
}

int parse_int(const std::string& raw, int line_no) {
    try {
        std::size_t pos = 0;
        long long v = std::stoll(raw, &pos);
        if (pos != raw.size() || v < INT_MIN || v > INT_MAX) throw std::invalid_argument("");
        return static_cast<int>(v);
    } catch (...) {
        fail_at(line_no, "expected an integer, got '" + raw + "'");
    }
}

bool parse_bool(const std::string& raw, int line_no) {
    if (raw == "true") return true;
    if (raw == "false") return false;
    fail_at(line_no, "expected true or false, got '" + raw + "'");
}

std::string parse_string(const std::string& raw, int line_no) {
    if (raw.size() >= 2 && raw.front() == '"' && raw.back() == '"')
        return raw.substr(1, raw.size() - 2);
    if (raw.find('"') != std::string::npos) fail_at(line_no, "unterminated string");
    return raw;
}

void set_train_key(TrainConfig& cfg, const std::string& key, const std::string& raw, int ln) {
    if (key == "profile") {
        try {
            cfg.apply_profile(parse_string(raw, ln));
        } catch (const std::runtime_error& e) {
            fail_at(ln, e.what());
        }
    } else if (key == "coarse_iters")
        cfg.coarse_iters = parse_int(raw, ln);
    else if (key == "fine_iters")
        cfg.fine_iters = parse_int(raw, ln);
    else if (key == "torso_iters")
        cfg.torso_iters = parse_int(raw, ln);
    else if (key == "rays_per_batch")
        cfg.rays_per_batch = parse_int(raw, ln);
    else if (key == "lr_grid")
        cfg.lr_grid = parse_double(raw, ln);
    else if (key == "lr_mlp")
        cfg.lr_mlp = parse_double(raw, ln);
    else if (key == "lambda")
        cfg.lambda = parse_double(raw, ln);
    else if (key == "patch_size")
        cfg.patch_size = parse_int(raw, ln);
    else if (key == "seed")
        cfg.seed = static_cast<std::uint64_t>(parse_int(raw, ln));
    else if (key == "n_samples")
        cfg.n_samples = parse_int(raw, ln);
    else if (key == "val_every")
        cfg.val_every = parse_int(raw, ln);
    else if (key == "occupancy_every")
        cfg.occupancy_every = parse_int(raw, ln);
    else if (key == "occupancy_threshold")
        cfg.occupancy_threshold = parse_double(raw, ln);
    else if (key == "occupancy_res")
        cfg.occupancy_res = parse_int(raw, ln);
    else if (key == "alpha_l1")
        cfg.alpha_l1 = parse_double(raw, ln);
    else if (key == "workers")
        cfg.workers = parse_int(raw, ln);
    else if (key == "deterministic")
        cfg.deterministic = parse_bool(raw, ln);
    else
        fail_at(ln, "unknown key '" + key + "' in [train]");
}

void set_model_key(TrainConfig& cfg, const std::string& key, const std::string& raw, int ln) {
    auto& m = cfg.model;
    if (key == "backbone") {
        std::string v = parse_string(raw, ln);
        if (v == "trihash")
            m.backbone = fieldrepr::Backbone::trihash;
        else if (v == "hash3d")
            m.backbone = fieldrepr::Backbone::hash3d;
        else
            fail_at(ln, "unknown backbone '" + v + "'");
    } else if (key == "attention") {
        std::string v = parse_string(raw, ln);
        if (v == "channel")
            m.attention = nets::AttentionMode::channel;
        else if (v == "feature")
            m.attention = nets::AttentionMode::feature;
        else if (v == "concat")
            m.attention = nets::AttentionMode::concat;
        else
            fail_at(ln, "unknown attention mode '" + v + "'");
    } else if (key == "equal_budget")
        m.equal_budget = parse_bool(raw, ln);
    else if (key == "detach_attention")
        m.detach_attention = parse_bool(raw, ln);
    else if (key == "levels")
        m.grid.levels = parse_int(raw, ln);
    else if (key == "features")
        m.grid.features = parse_int(raw, ln);
    else if (key == "table_log2")
        m.grid.table_size_log2 = parse_int(raw, ln);
    else if (key == "res_min")
        m.grid.res_min = parse_int(raw, ln);
    else if (key == "res_max")
        m.grid.res_max = parse_int(raw, ln);
    else if (key == "audio_hidden")
        m.audio_hidden = parse_int(raw, ln);
    else if (key == "eye_hidden")
        m.eye_hidden = parse_int(raw, ln);
    else if (key == "density_hidden")
        m.density_hidden = parse_int(raw, ln);
    else if (key == "color_hidden")
        m.color_hidden = parse_int(raw, ln);
    else if (key == "latent_dim")
        m.latent_dim = parse_int(raw, ln);
    else if (key == "dir_octaves")
        m.dir_octaves = parse_int(raw, ln);
    else
        fail_at(ln, "unknown key '" + key + "' in [model]");
}

void set_torso_key(TrainConfig& cfg, const std::string& key, const std::string& raw, int ln) {
    auto& t = cfg.torso;
    if (key == "tex_levels")
        t.tex_grid.levels = parse_int(raw, ln);
    else if (key == "tex_features")
        t.tex_grid.features = parse_int(raw, ln);
    else if (key == "tex_table_log2")
        t.tex_grid.table_size_log2 = parse_int(raw, ln);
    else if (key == "tex_res_min")
        t.tex_grid.res_min = parse_int(raw, ln);
    else if (key == "tex_res_max")
        t.tex_grid.res_max = parse_int(raw, ln);
    else if (key == "deform_hidden")
        t.deform_hidden = parse_int(raw, ln);
    else if (key == "head_hidden")
        t.head_hidden = parse_int(raw, ln);
    else
        fail_at(ln, "unknown key '" + key + "' in [torso]");
}

}  // namespace

TrainConfig parse_train_config_text(const std::string& text) {
    TrainConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::string section = "train";
    int ln = 0;
    while (std::getline(in, line)) {
        ++ln;
        line = trim(strip_comment(line));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') fail_at(ln, "malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section != "train" && section != "model" && section != "torso")
                fail_at(ln, "unknown section [" + section + "]");
            continue;
        }
        std::size_t eq = line.find('=');
        if (eq == std::string::npos) fail_at(ln, "expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string raw = trim(line.substr(eq + 1));
        if (key.empty() || raw.empty()) fail_at(ln, "expected key = value");
        if (section == "train")
            set_train_key(cfg, key, raw, ln);
        else if (section == "model")
            set_model_key(cfg, key, raw, ln);
        else
            set_torso_key(cfg, key, raw, ln);
    }
    cfg.validate();
    return cfg;
}

TrainConfig parse_train_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_train_config_text(ss.str());
}

namespace {

constexpr Vec3 kWhite{1.0, 1.0, 1.0};

double median_of(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void finish_stats(TrainStats& st) {
    if (!st.val_psnr.empty()) st.final_val_psnr = st.val_psnr.back().second;
    std::size_t n = st.loss.size();
    if (n == 0) return;
    std::size_t k = std::max<std::size_t>(1, n / 10);
    st.median_first = median_of({st.loss.begin(), st.loss.begin() + k});
    st.median_last = median_of({st.loss.end() - k, st.loss.end()});
}

std::uint64_t iter_seed(std::uint64_t seed, int iter) {
    return splitmix64(splitmix64(seed) ^ static_cast<std::uint64_t>(iter));
}

/// One JSON object per line; wall_ms forced to 0 in deterministic mode so
/// reruns produce identical bytes.
class MetricsLog {
  public:
    MetricsLog(const std::string& path, bool deterministic)
        : out_(path), deterministic_(deterministic) {
        if (!out_) throw std::runtime_error("cannot open metrics log: " + path);
    }

    void line(int iter, const char* stage, double loss, const double* psnr_val,
              std::int64_t wall_ms) {
        json j;
        j["iter"] = iter;
        j["stage"] = stage;
        j["loss"] = loss;
        if (psnr_val)
            j["psnr_val"] = *psnr_val;
        else
            j["psnr_val"] = nullptr;
        j["wall_ms"] = deterministic_ ? 0 : wall_ms;
        out_ << j.dump() << '\n';
    }

  private:
    std::ofstream out_;
    bool deterministic_;
};

std::int64_t ms_since(std::chrono::steady_clock::time_point t0) {
    auto d = std::chrono::steady_clock::now() - t0;
    return std::chrono::duration_cast<std::chrono::milliseconds>(d).count();
}

struct ParamGroup {
    std::vector<double>* params;
    const std::vector<double>* grads;
    double lr;
    optim::AdamW opt;
};

void step_groups(std::vector<ParamGroup>& groups) {
    for (auto& g : groups) g.opt.step(*g.params, *g.grads, g.lr);
}

struct Split {
    std::vector<int> train, val;
};

Split split_frames(const scene::Dataset& ds) {
    Split s;
    for (int i = 0; i < static_cast<int>(ds.frames.size()); ++i)
        (ds.frames[i].val ? s.val : s.train).push_back(i);
    return s;
}

struct RayJob {
    int frame, px, py;
};

}  // namespace

TrainStats train_head(const scene::Dataset& ds, const TrainConfig& cfg,
                      const std::string& out_dir) {
    cfg.validate();
    ds.validate();
    fs::create_directories(out_dir);

    Rng root(cfg.seed);
    nets::HeadField hf(cfg.model, root);
    Rng batch_rng = root.fork(1);
    Rng occ_rng = root.fork(2);

    const int workers = resolve_workers(cfg.workers, cfg.deterministic);
    const int n_frames = static_cast<int>(ds.frames.size());
    const Split split = split_frames(ds);

    std::vector<FrameBuffer> targets;
    targets.reserve(n_frames);
    std::vector<HeadPose> cams(n_frames);
    for (int i = 0; i < n_frames; ++i) {
        targets.push_back(read_ppm(ds.head_path(i)));
        cams[i] = ds.frames[i].canonical_cam();
    }

    const Aabb box{};
    fieldrepr::OccupancyGrid occ(cfg.occupancy_res, cfg.occupancy_threshold);
    occ.fill(cfg.occupancy_threshold);  // fully occupied until densities settle

    auto refresh_occupancy = [&] {
        std::vector<std::function<double(const Vec3&)>> fields;
        for (int k = 0; k < 2; ++k) {
            int fi = split.train[occ_rng.uniform_index(split.train.size())];
            const scene::Frame& fr = ds.frames[fi];
            fields.emplace_back([&hf, a = fr.a, e = fr.e](const Vec3& u) {
                return hf.density_only(u, a.data(), e);
            });
        }
        occ.update(fields, occ_rng);
    };

    nets::HeadField::Grads total(hf);
    std::vector<nets::HeadField::Grads> wgrads;
    for (int w = 0; w < workers; ++w) wgrads.emplace_back(hf);

    std::vector<ParamGroup> groups;
    {
        auto grids = hf.encoder().grids();
        for (std::size_t gi = 0; gi < grids.size(); ++gi)
            groups.push_back(ParamGroup{&grids[gi]->raw_table(), &total.enc.per_grid[gi].g,
                                        cfg.lr_grid, optim::AdamW(grids[gi]->raw_table().size())});
        groups.push_back(ParamGroup{&hf.audio_attn().raw_params(), &total.audio.g, cfg.lr_mlp,
                                    optim::AdamW(hf.audio_attn().param_count())});
        groups.push_back(ParamGroup{&hf.eye_attn().raw_params(), &total.eye.g, cfg.lr_mlp,
                                    optim::AdamW(hf.eye_attn().param_count())});
        groups.push_back(ParamGroup{&hf.density_mlp().raw_params(), &total.density.g, cfg.lr_mlp,
                                    optim::AdamW(hf.density_mlp().param_count())});
        groups.push_back(ParamGroup{&hf.color_mlp().raw_params(), &total.color.g, cfg.lr_mlp,
                                    optim::AdamW(hf.color_mlp().param_count())});
    }

    auto val_psnr = [&]() {
        render::RenderOptions opt;
        opt.n_samples = cfg.n_samples;
        opt.background = kWhite;
        opt.occupancy = &occ;
        opt.workers = workers;
        double sum = 0.0;
        for (int i : split.val) {
            FrameBuffer pred = render::render_head_frame(hf, ds.cam, cams[i], box,
                                                         ds.frames[i].a.data(), ds.frames[i].e, opt);
            sum += image_psnr(pred, targets[i]);
        }
        return sum / static_cast<double>(split.val.size());
    };

    MetricsLog log(out_dir + "/metrics.jsonl", cfg.deterministic);
    TrainStats stats;
    const int total_iters = cfg.coarse_iters + cfg.fine_iters;

    auto merge_grads = [&] {
        total.zero();
        for (int w = 0; w < workers; ++w) {
            total.accumulate(wgrads[w]);
            wgrads[w].zero();
        }
    };

    auto log_iter = [&](int gi, const char* stage, double loss,
                        std::chrono::steady_clock::time_point t0) {
        stats.loss.push_back(loss);
        if ((gi + 1) % cfg.val_every == 0) {
            double p = val_psnr();
            stats.val_psnr.emplace_back(gi + 1, p);
            log.line(gi, stage, loss, &p, ms_since(t0));
        } else {
            log.line(gi, stage, loss, nullptr, ms_since(t0));
        }
    };

    // coarse stage: random ray batches, per-ray MSE
    std::vector<RayJob> batch(cfg.rays_per_batch);
    std::vector<double> wloss(workers, 0.0);
    for (int iter = 0; iter < cfg.coarse_iters; ++iter) {
        auto t0 = std::chrono::steady_clock::now();
        if (iter > 0 && iter % cfg.occupancy_every == 0) refresh_occupancy();
        for (auto& j : batch) {
            j.frame = split.train[batch_rng.uniform_index(split.train.size())];
            j.px = static_cast<int>(batch_rng.uniform_index(ds.cam.width));
            j.py = static_cast<int>(batch_rng.uniform_index(ds.cam.height));
        }
        const std::uint64_t seed = iter_seed(cfg.seed, iter);
        const double scale = 2.0 / static_cast<double>(batch.size());

        parallel_chunks(batch.size(), workers, [&](int w, std::size_t b0, std::size_t b1) {
            auto& g = wgrads[w];
            double loss = 0.0;
            std::vector<nets::HeadField::Tape> tapes(cfg.n_samples);
            std::vector<Vec3> dc;
            std::vector<double> dsigma;
            for (std::size_t bi = b0; bi < b1; ++bi) {
                const RayJob job = batch[bi];
                const scene::Frame& fr = ds.frames[job.frame];
                const Vec3 target = targets[job.frame].at(job.px, job.py);
                Vec3 pred = kWhite;
                auto ray = ray_for_pixel(ds.cam, cams[job.frame],
                                         Vec2{job.px + 0.5, job.py + 0.5}, box);
                bool backprop = false;
                render::RaySamples samples;
                render::CompositeResult fwd;
                if (ray) {
                    auto jit = [seed, job](int k) {
                        return hash_jitter(seed, static_cast<std::uint64_t>(job.px),
                                           static_cast<std::uint64_t>(job.py),
                                           static_cast<std::uint64_t>(k));
                    };
                    auto placed = fieldrepr::skip_empty(*ray, box, &occ, cfg.n_samples, jit);
                    if (!placed.ts.empty()) {
                        samples = render::make_samples(placed.ts, ray->t_far);
                        for (int i = 0; i < samples.count(); ++i) {
                            Vec3 u = normalize_to_unit_cube(ray->at(samples.t[i]), box);
                            auto out = hf.forward(u, ray->direction, fr.a.data(), fr.e,
                                                  &tapes[static_cast<std::size_t>(i)]);
                            samples.c[static_cast<std::size_t>(i)] = out.rgb;
                            samples.sigma[static_cast<std::size_t>(i)] = out.sigma;
                        }
                        fwd = render::composite(samples, kWhite);
                        pred = fwd.color;
                        backprop = true;
                    }
                }
                Vec3 diff = pred - target;
                loss += dot(diff, diff);
                if (backprop) {
                    render::composite_backward(samples, kWhite, fwd, scale * diff, 0.0, dc,
                                               dsigma, nullptr);
                    for (int i = 0; i < samples.count(); ++i)
                        hf.backward(tapes[static_cast<std::size_t>(i)],
                                    dc[static_cast<std::size_t>(i)],
                                    dsigma[static_cast<std::size_t>(i)], g, nullptr);
                }
            }
            wloss[w] = loss;
        });

        double loss = 0.0;
        for (int w = 0; w < workers; ++w) {
            loss += wloss[w];
            wloss[w] = 0.0;
        }
        loss /= static_cast<double>(batch.size());
        if (!std::isfinite(loss))
            throw std::runtime_error("train_head: non-finite loss at coarse iteration " +
                                     std::to_string(iter));
        merge_grads();
        step_groups(groups);
        log_iter(iter, "coarse", loss, t0);
    }

    // fine stage: one patch per iteration, two passes so only one pixel's
    // tapes are alive at a time. The second pass reuses the first pass's
    // jitter keys, so both see identical sample positions.
    optim::PerceptualMetric pm;
    const int P = std::min(cfg.patch_size, std::min(ds.cam.width, ds.cam.height));
    for (int fiter = 0; fiter < cfg.fine_iters; ++fiter) {
        auto t0 = std::chrono::steady_clock::now();
        const int gi = cfg.coarse_iters + fiter;
        if (gi > 0 && gi % cfg.occupancy_every == 0) refresh_occupancy();
        const int fidx = split.train[batch_rng.uniform_index(split.train.size())];
        const int x0 = static_cast<int>(batch_rng.uniform_index(ds.cam.width - P + 1));
        const int y0 = static_cast<int>(batch_rng.uniform_index(ds.cam.height - P + 1));
        const scene::Frame& fr = ds.frames[fidx];
        const std::uint64_t seed = iter_seed(cfg.seed, gi);

        render::RenderOptions ropt;
        ropt.n_samples = cfg.n_samples;
        ropt.background = kWhite;
        ropt.seed = seed;
        ropt.jitter = true;
        ropt.occupancy = &occ;

        FrameBuffer pred(P, P), target(P, P);
        for (int y = 0; y < P; ++y)
            for (int x = 0; x < P; ++x) target.set(x, y, targets[fidx].at(x0 + x, y0 + y));

        parallel_chunks(static_cast<std::size_t>(P), workers,
                        [&](int, std::size_t r0, std::size_t r1) {
                            for (std::size_t row = r0; row < r1; ++row) {
                                int y = static_cast<int>(row);
                                for (int x = 0; x < P; ++x) {
                                    auto ray = ray_for_pixel(ds.cam, cams[fidx],
                                                             Vec2{x0 + x + 0.5, y0 + y + 0.5}, box);
                                    Vec3 c = kWhite;
                                    if (ray)
                                        c = render::render_ray(
                                            hf, *ray, box, fr.a.data(), fr.e, ropt,
                                            static_cast<std::uint64_t>(x0 + x),
                                            static_cast<std::uint64_t>(y0 + y));
                                    pred.set(x, y, c);
                                }
                            }
                        });

        double loss = optim::fine_loss(pred, target, cfg.lambda, pm);
        if (!std::isfinite(loss))
            throw std::runtime_error("train_head: non-finite loss at fine iteration " +
                                     std::to_string(fiter));
        std::vector<Vec3> d_pred(static_cast<std::size_t>(P) * P, Vec3{});
        optim::fine_loss_backward(pred, target, cfg.lambda, pm, d_pred);

        parallel_chunks(static_cast<std::size_t>(P), workers, [&](int w, std::size_t r0,
                                                                  std::size_t r1) {
            auto& g = wgrads[w];
            std::vector<nets::HeadField::Tape> tapes(cfg.n_samples);
            std::vector<Vec3> dc;
            std::vector<double> dsigma;
            for (std::size_t row = r0; row < r1; ++row) {
                int y = static_cast<int>(row);
                for (int x = 0; x < P; ++x) {
                    auto ray = ray_for_pixel(ds.cam, cams[fidx], Vec2{x0 + x + 0.5, y0 + y + 0.5},
                                             box);
                    if (!ray) continue;
                    auto jit = [seed, x0, y0, x, y](int k) {
                        return hash_jitter(seed, static_cast<std::uint64_t>(x0 + x),
                                           static_cast<std::uint64_t>(y0 + y),
                                           static_cast<std::uint64_t>(k));
                    };
                    auto placed = fieldrepr::skip_empty(*ray, box, &occ, cfg.n_samples, jit);
                    if (placed.ts.empty()) continue;
                    auto samples = render::make_samples(placed.ts, ray->t_far);
                    for (int i = 0; i < samples.count(); ++i) {
                        Vec3 u = normalize_to_unit_cube(ray->at(samples.t[i]), box);
                        auto out = hf.forward(u, ray->direction, fr.a.data(), fr.e,
                                              &tapes[static_cast<std::size_t>(i)]);
                        samples.c[static_cast<std::size_t>(i)] = out.rgb;
                        samples.sigma[static_cast<std::size_t>(i)] = out.sigma;
                    }
                    auto fwd = render::composite(samples, kWhite);
                    render::composite_backward(samples, kWhite, fwd,
                                               d_pred[static_cast<std::size_t>(y) * P + x], 0.0,
                                               dc, dsigma, nullptr);
                    for (int i = 0; i < samples.count(); ++i)
                        hf.backward(tapes[static_cast<std::size_t>(i)],
                                    dc[static_cast<std::size_t>(i)],
                                    dsigma[static_cast<std::size_t>(i)], g, nullptr);
                }
            }
        });

        merge_grads();
        step_groups(groups);
        log_iter(gi, "fine", loss, t0);
    }

    if (stats.val_psnr.empty() || stats.val_psnr.back().first != total_iters) {
        stats.val_psnr.emplace_back(total_iters, val_psnr());
    }
    finish_stats(stats);
    checkpoint::save_head(hf, out_dir + "/head.tfck");
    return stats;
}

TrainStats train_torso(const scene::Dataset& ds, const std::string& head_ckpt,
                       const TrainConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    ds.validate();
    fs::create_directories(out_dir);

    Rng root(cfg.seed);
    nets::TorsoField tf(cfg.torso, root);
    Rng batch_rng = root.fork(1);

    nets::HeadField head = checkpoint::load_head(head_ckpt);
    const int workers = resolve_workers(cfg.workers, cfg.deterministic);
    const int n_frames = static_cast<int>(ds.frames.size());
    const Split split = split_frames(ds);
    const Aabb box{};
    const int W = ds.cam.width, H = ds.cam.height;

    // frozen-head renders become the per-frame background layer
    std::vector<FrameBuffer> head_bg;
    std::vector<FrameBuffer> targets;
    head_bg.reserve(n_frames);
    targets.reserve(n_frames);
    std::vector<HeadPose> cams(n_frames);
    {
        render::RenderOptions opt;
        opt.n_samples = cfg.n_samples;
        opt.background = kWhite;
        opt.workers = workers;
        for (int i = 0; i < n_frames; ++i) {
            cams[i] = ds.frames[i].canonical_cam();
            head_bg.push_back(render::render_head_frame(head, ds.cam, cams[i], box,
                                                        ds.frames[i].a.data(), ds.frames[i].e,
                                                        opt));
            targets.push_back(read_ppm(ds.frame_path(i)));
        }
    }

    nets::TorsoField::Grads total(tf);
    std::vector<nets::TorsoField::Grads> wgrads;
    for (int w = 0; w < workers; ++w) wgrads.emplace_back(tf);

    std::vector<double> key_params(10, 0.0);
    std::vector<double> key_grads(10, 0.0);
    std::vector<ParamGroup> groups;
    groups.push_back(ParamGroup{&tf.deform_mlp().raw_params(), &total.deform.g, cfg.lr_mlp,
                                optim::AdamW(tf.deform_mlp().param_count())});
    groups.push_back(ParamGroup{&tf.tex_grid().raw_table(), &total.tex.g, cfg.lr_grid,
                                optim::AdamW(tf.tex_grid().raw_table().size())});
    groups.push_back(ParamGroup{&tf.head_mlp().raw_params(), &total.head.g, cfg.lr_mlp,
                                optim::AdamW(tf.head_mlp().param_count())});
    optim::AdamW key_opt(key_params.size());

    auto val_psnr = [&]() {
        double sum = 0.0;
        int n = 0;
        for (int i : split.val) {
            nets::PoseEncoding enc;
            try {
                enc = nets::adaptive_pose_encoding(tf.keys(), cams[i]);
            } catch (const nets::DegeneratePoseError&) {
                continue;
            }
            FrameBuffer fb = head_bg[i];
            render::composite_torso_over(tf, enc, fb, workers);
            sum += image_psnr(fb, targets[i]);
            ++n;
        }
        return n ? sum / n : 0.0;
    };

    MetricsLog log(out_dir + "/metrics_torso.jsonl", cfg.deterministic);
    TrainStats stats;

    std::vector<RayJob> batch(cfg.rays_per_batch);
    std::vector<double> wloss(workers, 0.0);
    std::vector<nets::PoseEncoding> encs(n_frames);
    std::vector<nets::PoseEncodingTape> enc_tapes(n_frames);
    std::vector<char> enc_ok(n_frames, 0);
    std::vector<std::vector<std::array<Vec2, 3>>> wdenc(
        workers, std::vector<std::array<Vec2, 3>>(n_frames));
    std::vector<char> touched(n_frames, 0);

    for (int iter = 0; iter < cfg.torso_iters; ++iter) {
        auto t0 = std::chrono::steady_clock::now();
        // key points move each step, so the per-frame encodings are rebuilt
        for (int i : split.train) {
            try {
                encs[i] = nets::adaptive_pose_encoding(tf.keys(), cams[i], &enc_tapes[i]);
                enc_ok[i] = 1;
            } catch (const nets::DegeneratePoseError&) {
                enc_ok[i] = 0;
            }
        }
        int n_valid = 0;
        for (auto& j : batch) {
            j.frame = split.train[batch_rng.uniform_index(split.train.size())];
            j.px = static_cast<int>(batch_rng.uniform_index(W));
            j.py = static_cast<int>(batch_rng.uniform_index(H));
            if (enc_ok[j.frame]) ++n_valid;
        }
        if (n_valid == 0) {
            stats.loss.push_back(0.0);
            log.line(iter, "torso", 0.0, nullptr, ms_since(t0));
            continue;
        }
        const double scale = 2.0 / static_cast<double>(n_valid);
        const double alpha_w = cfg.alpha_l1 / static_cast<double>(n_valid);
        std::fill(touched.begin(), touched.end(), 0);
        for (const auto& j : batch)
            if (enc_ok[j.frame]) touched[j.frame] = 1;

        parallel_chunks(batch.size(), workers, [&](int w, std::size_t b0, std::size_t b1) {
            auto& g = wgrads[w];
            auto& denc = wdenc[w];
            double loss = 0.0;
            nets::TorsoField::Tape tape;
            for (std::size_t bi = b0; bi < b1; ++bi) {
                const RayJob job = batch[bi];
                if (!enc_ok[job.frame]) continue;
                Vec2 xp{(job.px + 0.5) / W, (job.py + 0.5) / H};
                auto out = tf.forward(xp, encs[job.frame], &tape);
                const Vec3 bg = head_bg[job.frame].at(job.px, job.py);
                const Vec3 target = targets[job.frame].at(job.px, job.py);
                Vec3 pred = out.alpha * out.color + (1.0 - out.alpha) * bg;
                Vec3 diff = pred - target;
                loss += dot(diff, diff) + cfg.alpha_l1 * out.alpha;
                Vec3 dc = (out.alpha * scale) * diff;
                double dalpha = scale * dot(diff, out.color - bg) + alpha_w;
                std::array<Vec2, 3> d_enc{};
                tf.backward(tape, dc, dalpha, g, &d_enc);
                for (int k = 0; k < 3; ++k) denc[job.frame][k] += d_enc[k];
            }
            wloss[w] = loss;
        });

        double loss = 0.0;
        for (int w = 0; w < workers; ++w) {
            loss += wloss[w];
            wloss[w] = 0.0;
        }
        loss /= static_cast<double>(n_valid);
        if (!std::isfinite(loss))
            throw std::runtime_error("train_torso: non-finite loss at torso iteration " +
                                     std::to_string(iter));

        total.zero();
        for (int w = 0; w < workers; ++w) {
            total.accumulate(wgrads[w]);
            wgrads[w].zero();
        }
        for (int i = 0; i < n_frames; ++i) {
            if (!touched[i]) continue;
            std::array<Vec2, 3> denc{};
            for (int w = 0; w < workers; ++w)
                for (int k = 0; k < 3; ++k) denc[k] += wdenc[w][i][k];
            nets::adaptive_pose_encoding_backward(tf.keys(), cams[i], enc_tapes[i], denc,
                                                  total.keys);
            for (int w = 0; w < workers; ++w) wdenc[w][i] = {};
        }

        step_groups(groups);
        for (int k = 0; k < 3; ++k) {
            key_params[3 * k + 0] = tf.keys().pts[k].x;
            key_params[3 * k + 1] = tf.keys().pts[k].y;
            key_params[3 * k + 2] = tf.keys().pts[k].z;
            key_grads[3 * k + 0] = total.keys.d_pts[k].x;
            key_grads[3 * k + 1] = total.keys.d_pts[k].y;
            key_grads[3 * k + 2] = total.keys.d_pts[k].z;
        }
        key_params[9] = tf.keys().gamma;
        key_grads[9] = total.keys.d_gamma;
        key_opt.step(key_params, key_grads, cfg.lr_mlp);
        for (int k = 0; k < 3; ++k)
            tf.keys().pts[k] = Vec3{key_params[3 * k + 0], key_params[3 * k + 1],
                                    key_params[3 * k + 2]};
        tf.keys().gamma = key_params[9];

        stats.loss.push_back(loss);
        if ((iter + 1) % cfg.val_every == 0) {
            double p = val_psnr();
            stats.val_psnr.emplace_back(iter + 1, p);
            log.line(iter, "torso", loss, &p, ms_since(t0));
        } else {
            log.line(iter, "torso", loss, nullptr, ms_since(t0));
        }
    }

    if (stats.val_psnr.empty() || stats.val_psnr.back().first != cfg.torso_iters)
        stats.val_psnr.emplace_back(cfg.torso_iters, val_psnr());
    finish_stats(stats);
    checkpoint::save_torso(tf, out_dir + "/torso.tfck");
    return stats;
}

}  // namespace trifield::train
