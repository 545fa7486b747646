// Python bindings for the main field, rendering and diagnostic operations.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "trifield/checkpoint.hpp"
#include "trifield/cli.hpp"
#include "trifield/collide.hpp"
#include "trifield/fieldrepr.hpp"
#include "trifield/gradcheck.hpp"
#include "trifield/render.hpp"
#include "trifield/torso.hpp"

namespace py = pybind11;
using namespace trifield;

namespace {

using Arr = py::array_t<double, py::array::c_style | py::array::forcecast>;

void expect_shape(const Arr& a, std::initializer_list<py::ssize_t> want, const char* name) {
    if (a.ndim() != static_cast<py::ssize_t>(want.size()))
        throw std::invalid_argument(std::string(name) + ": wrong rank");
    py::ssize_t i = 0;
    for (py::ssize_t w : want) {
        if (w >= 0 && a.shape(i) != w)
            throw std::invalid_argument(std::string(name) + ": wrong shape");
        ++i;
    }
}

Vec3 row3(const Arr& a, py::ssize_t i) {
    auto u = a.unchecked<2>();
    return Vec3{u(i, 0), u(i, 1), u(i, 2)};
}

HeadPose pose_from(const Arr& R, const Arr& t) {
    expect_shape(R, {3, 3}, "R");
    expect_shape(t, {3}, "t");
    auto r = R.unchecked<2>();
    auto tv = t.unchecked<1>();
    HeadPose p;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) p.R(i, j) = r(i, j);
    p.t = Vec3{tv(0), tv(1), tv(2)};
    return p;
}

std::array<double, regionattn::kAudioDim> audio_from(const Arr& a) {
    expect_shape(a, {regionattn::kAudioDim}, "a");
    auto u = a.unchecked<1>();
    std::array<double, regionattn::kAudioDim> out{};
    for (int i = 0; i < regionattn::kAudioDim; ++i) out[i] = u(i);
    return out;
}

struct PyHeadField {
    nets::HeadField field;

    py::dict forward(const Arr& x, const Arr& d, const Arr& a, double e) const {
        expect_shape(x, {-1, 3}, "x");
        expect_shape(d, {-1, 3}, "d");
        if (d.shape(0) != x.shape(0)) throw std::invalid_argument("d: wrong shape");
        auto audio = audio_from(a);
        py::ssize_t n = x.shape(0);
        Arr rgb({n, py::ssize_t(3)});
        Arr sigma(n);
        auto ro = rgb.mutable_unchecked<2>();
        auto so = sigma.mutable_unchecked<1>();
        for (py::ssize_t i = 0; i < n; ++i) {
            auto out = field.forward(row3(x, i), row3(d, i), audio.data(), e, nullptr);
            ro(i, 0) = out.rgb.x;
            ro(i, 1) = out.rgb.y;
            ro(i, 2) = out.rgb.z;
            so(i) = out.sigma;
        }
        py::dict r;
        r["rgb"] = rgb;
        r["sigma"] = sigma;
        return r;
    }

    Arr density(const Arr& x, const Arr& a, double e) const {
        expect_shape(x, {-1, 3}, "x");
        auto audio = audio_from(a);
        py::ssize_t n = x.shape(0);
        Arr sigma(n);
        auto so = sigma.mutable_unchecked<1>();
        for (py::ssize_t i = 0; i < n; ++i)
            so(i) = field.density_only(row3(x, i), audio.data(), e);
        return sigma;
    }

    Arr encode(const Arr& x) const {
        expect_shape(x, {-1, 3}, "x");
        py::ssize_t n = x.shape(0);
        py::ssize_t f = field.encoder().feature_dim();
        Arr feats({n, f});
        auto fo = feats.mutable_unchecked<2>();
        std::vector<double> buf(static_cast<std::size_t>(f));
        for (py::ssize_t i = 0; i < n; ++i) {
            field.encoder().encode(row3(x, i), buf.data());
            for (py::ssize_t j = 0; j < f; ++j) fo(i, j) = buf[static_cast<std::size_t>(j)];
        }
        return feats;
    }

    Arr render(double fx, double fy, double cx, double cy, int width, int height, const Arr& R,
               const Arr& t, const Arr& a, double e, int n_samples, int supersample) const {
        CameraIntrinsics cam{fx, fy, cx, cy, width, height};
        cam.validate();
        auto audio = audio_from(a);
        render::RenderOptions opt;
        opt.n_samples = n_samples;
        opt.supersample = supersample;
        FrameBuffer fb = render::render_head_frame(field, cam, pose_from(R, t), Aabb{},
                                                   audio.data(), e, opt);
        Arr img({py::ssize_t(height), py::ssize_t(width), py::ssize_t(3)});
        auto io = img.mutable_unchecked<3>();
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                Vec3 c = fb.at(x, y);
                io(y, x, 0) = c.x;
                io(y, x, 1) = c.y;
                io(y, x, 2) = c.z;
            }
        return img;
    }
};

struct PyTorsoField {
    nets::TorsoField field;

    py::dict forward(const Arr& xy, const Arr& R, const Arr& t) const {
        expect_shape(xy, {-1, 2}, "xy");
        nets::PoseEncoding enc = nets::adaptive_pose_encoding(field.keys(), pose_from(R, t));
        auto u = xy.unchecked<2>();
        py::ssize_t n = xy.shape(0);
        Arr color({n, py::ssize_t(3)});
        Arr alpha(n);
        auto co = color.mutable_unchecked<2>();
        auto ao = alpha.mutable_unchecked<1>();
        for (py::ssize_t i = 0; i < n; ++i) {
            auto out = field.forward(Vec2{u(i, 0), u(i, 1)}, enc, nullptr);
            co(i, 0) = out.color.x;
            co(i, 1) = out.color.y;
            co(i, 2) = out.color.z;
            ao(i) = out.alpha;
        }
        py::dict r;
        r["color"] = color;
        r["alpha"] = alpha;
        return r;
    }
};

py::dict composite_py(const Arr& t, double t_far, const Arr& sigma, const Arr& color,
                      const Arr& background) {
    expect_shape(t, {-1}, "t");
    expect_shape(sigma, {t.shape(0)}, "sigma");
    expect_shape(color, {t.shape(0), 3}, "color");
    expect_shape(background, {3}, "background");
    auto ts = t.unchecked<1>();
    std::vector<double> tv(static_cast<std::size_t>(t.shape(0)));
    for (py::ssize_t i = 0; i < t.shape(0); ++i) tv[static_cast<std::size_t>(i)] = ts(i);
    auto s = render::make_samples(tv, t_far);
    auto sg = sigma.unchecked<1>();
    for (py::ssize_t i = 0; i < t.shape(0); ++i) {
        s.sigma[static_cast<std::size_t>(i)] = sg(i);
        s.c[static_cast<std::size_t>(i)] = row3(color, i);
    }
    auto bg = background.unchecked<1>();
    auto fwd = render::composite(s, Vec3{bg(0), bg(1), bg(2)});
    Arr col(3), w(t.shape(0));
    auto co = col.mutable_unchecked<1>();
    co(0) = fwd.color.x;
    co(1) = fwd.color.y;
    co(2) = fwd.color.z;
    auto wo = w.mutable_unchecked<1>();
    for (py::ssize_t i = 0; i < t.shape(0); ++i)
        wo(i) = fwd.weights[static_cast<std::size_t>(i)];
    py::dict r;
    r["color"] = col;
    r["opacity"] = fwd.opacity;
    r["t_final"] = fwd.t_final;
    r["weights"] = w;
    return r;
}

Arr pose_encoding_py(const Arr& pts, double gamma, const Arr& R, const Arr& t) {
    expect_shape(pts, {3, 3}, "pts");
    nets::KeyPoints keys;
    for (int i = 0; i < 3; ++i) keys.pts[static_cast<std::size_t>(i)] = row3(pts, i);
    keys.gamma = gamma;
    auto enc = nets::adaptive_pose_encoding(keys, pose_from(R, t));
    Arr out({py::ssize_t(3), py::ssize_t(2)});
    auto o = out.mutable_unchecked<2>();
    for (int i = 0; i < 3; ++i) {
        o(i, 0) = enc.bar[static_cast<std::size_t>(i)].x;
        o(i, 1) = enc.bar[static_cast<std::size_t>(i)].y;
    }
    return out;
}

py::list collision_sweep_py(const std::vector<int>& Rs, const std::vector<int>& Ns, int res,
                            int table_log2) {
    std::uint32_t t3d = std::uint32_t{1} << table_log2;
    std::uint32_t ttri = fieldrepr::TriPlaneEncoder::equal_budget_table(table_log2);
    py::list rows;
    for (const auto& r : collide::complexity_sweep(Rs, Ns, res, t3d, ttri)) {
        py::dict d;
        d["encoder"] = r.encoder;
        d["R"] = r.R;
        d["N"] = r.N;
        d["level_res"] = r.level_res;
        d["table_size"] = r.table_size;
        d["distinct_vertices"] = r.distinct;
        d["collisions"] = r.collisions;
        d["plane"] = r.plane;
        rows.append(d);
    }
    return rows;
}

py::list gradcheck_py(const std::string& module, std::uint64_t seed, int instances) {
    py::list out;
    for (const auto& r : gradcheck::run(module, seed, instances)) {
        py::dict d;
        d["module"] = r.name;
        d["max_rel_err"] = r.max_rel_err;
        d["instances"] = r.instances;
        out.append(d);
    }
    return out;
}

int run_cli_py(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    int rc = cli::run(args, out, err);
    if (!out.str().empty()) py::print(out.str(), py::arg("end") = "");
    if (!err.str().empty()) py::print(err.str(), py::arg("end") = "", py::arg("file") = py::module_::import("sys").attr("stderr"));
    return rc;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Condition-driven neural field renderer: tri-plane hash encoding, region "
              "attention, volume rendering, pose-conditioned torso field.";

    py::class_<PyHeadField>(m, "HeadField")
        .def("forward", &PyHeadField::forward, py::arg("x"), py::arg("d"), py::arg("a"),
             py::arg("e"),
             "Color and density at points x (N,3) in the unit cube viewed along d (N,3), "
             "driven by an audio feature a (32,) and eye openness e.")
        .def("density", &PyHeadField::density, py::arg("x"), py::arg("a"), py::arg("e"))
        .def("encode", &PyHeadField::encode, py::arg("x"),
             "Raw multi-level spatial features for points x (N,3).")
        .def("render", &PyHeadField::render, py::arg("fx"), py::arg("fy"), py::arg("cx"),
             py::arg("cy"), py::arg("width"), py::arg("height"), py::arg("R"), py::arg("t"),
             py::arg("a"), py::arg("e"), py::arg("n_samples") = 16, py::arg("supersample") = 1,
             "Render one frame from a camera-to-world pose; returns (H,W,3) floats.");

    py::class_<PyTorsoField>(m, "TorsoField")
        .def("forward", &PyTorsoField::forward, py::arg("xy"), py::arg("R"), py::arg("t"),
             "Color and coverage alpha at image points xy (N,2) under a camera pose.");

    m.def("load_head", [](const std::string& p) { return PyHeadField{checkpoint::load_head(p)}; },
          py::arg("path"), "Load a trained head-field checkpoint (.tfck).");
    m.def("load_torso",
          [](const std::string& p) { return PyTorsoField{checkpoint::load_torso(p)}; },
          py::arg("path"), "Load a trained torso-field checkpoint (.tfck).");

    m.def("composite", &composite_py, py::arg("t"), py::arg("t_far"), py::arg("sigma"),
          py::arg("color"), py::arg("background"),
          "Volume-render one ray from sorted sample positions; returns color, opacity "
          "(sum of weights), t_final (residual transmittance) and per-sample weights.");

    m.def("pose_encoding", &pose_encoding_py, py::arg("pts"), py::arg("gamma"), py::arg("R"),
          py::arg("t"),
          "Project three key points through the inverse pose onto the z=1 plane, "
          "scaled by gamma; returns (3,2).");

    m.def("collision_sweep", &collision_sweep_py, py::arg("Rs"), py::arg("Ns"),
          py::arg("res") = 512, py::arg("table_log2") = 14,
          "Count hash collisions for the 3D and tri-plane encoders over grid sizes Rs "
          "and occupied-region fractions Ns at equal table budget.");

    m.def("gradcheck", &gradcheck_py, py::arg("module") = "all", py::arg("seed") = 7,
          py::arg("instances") = 100,
          "Compare analytic adjoints against central finite differences.");

    m.def("run_cli", &run_cli_py, py::arg("args"),
          "Run a command-line subcommand (gen-data, train-head, train-torso, render, "
          "collisions, gradcheck, eval) in-process; returns the exit code.");
}
