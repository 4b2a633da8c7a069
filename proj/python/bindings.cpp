#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "boxformer/aggregator.hpp"
#include "boxformer/data.hpp"
#include "boxformer/grad_suite.hpp"
#include "boxformer/losses.hpp"
#include "boxformer/metrics.hpp"
#include "boxformer/shape_walk.hpp"
#include "boxformer/trainer.hpp"
#include "cli.hpp"

namespace py = pybind11;
using namespace boxformer;

namespace {

using Array = py::array_t<Real, py::array::c_style | py::array::forcecast>;

Array to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Tensor from_numpy(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor::from(shape, std::vector<Real>(a.data(), a.data() + a.size()));
}

using PyBox = std::tuple<double, double, double, double>;

std::vector<BoundingBox> to_boxes(const std::vector<PyBox>& boxes) {
  std::vector<BoundingBox> out;
  for (const auto& [cx, cy, w, h] : boxes) out.push_back({cx, cy, w, h});
  return out;
}

std::vector<PyBox> from_boxes(const std::vector<BoundingBox>& boxes) {
  std::vector<PyBox> out;
  for (const auto& b : boxes) out.emplace_back(b.cx, b.cy, b.w, b.h);
  return out;
}

Domain to_domain(const std::string& d) { return domain_from_string(d); }

// Inference wrapper around a checkpointed model.
class Translator {
 public:
  explicit Translator(const std::string& path) : model_(load(path)) {}

  Array translate(const Array& images, const std::vector<std::vector<PyBox>>& boxes, std::uint64_t style_seed) const {
    auto x = from_numpy(images);
    if (x.rank() == 3) x = reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)});
    const auto batch = x.dim(0);
    BoxLists lists = no_boxes(batch);
    if (!boxes.empty()) {
      if (static_cast<std::int64_t>(boxes.size()) != batch) throw std::invalid_argument("one box list per image");
      for (std::int64_t i = 0; i < batch; ++i) lists[static_cast<std::size_t>(i)] = to_boxes(boxes[static_cast<std::size_t>(i)]);
    }
    Rng rng = derive_rng(style_seed, {0x7374796cull});
    const auto s = sample_style(rng, model_.config().backbone.style_dim, 1);
    NoGradScope no_grad;
    return to_numpy(model_.translate(x, lists, concat(std::vector<Tensor>(static_cast<std::size_t>(batch), s), 0)));
  }

  Array style(const Array& images) const {
    NoGradScope no_grad;
    return to_numpy(model_.style_encoder(from_numpy(images)));
  }

  std::int64_t image_size() const { return model_.config().backbone.image_size; }

 private:
  static Model load(const std::string& path) {
    const auto ckpt = load_checkpoint(path);
    Model m(model_config_from_checkpoint(ckpt));
    restore_model(m, ckpt);
    return m;
  }
  Model model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Box-conditioned transformer image translation";
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);

  m.def(
      "gen_scene",
      [](std::uint64_t seed, std::int64_t size, std::int64_t n, const std::string& domain) {
        const auto s = gen_scene({seed, size, n, to_domain(domain)});
        return py::make_tuple(to_numpy(s.image), from_boxes(s.boxes));
      },
      py::arg("seed"), py::arg("size") = 64, py::arg("n") = 2, py::arg("domain") = "A",
      "Synthetic scene: (image [3,H,W] in [-1,1], boxes as (cx, cy, w, h)).");

  m.def(
      "ssim", [](const Array& a, const Array& b) { return ssim(from_numpy(a), from_numpy(b)); }, py::arg("a"),
      py::arg("b"));
  m.def(
      "instance_ssim",
      [](const Array& a, const Array& b, const std::vector<PyBox>& boxes) {
        return instance_ssim(from_numpy(a), from_numpy(b), to_boxes(boxes));
      },
      py::arg("a"), py::arg("b"), py::arg("boxes"));
  m.def(
      "palette_distance",
      [](const Array& img, const std::string& domain) { return palette_distance(from_numpy(img), to_domain(domain)); },
      py::arg("image"), py::arg("domain"));

  m.def(
      "info_nce",
      [](const Array& anchor, const Array& positive, const Array& negatives, double tau) {
        return info_nce(from_numpy(anchor), from_numpy(positive), from_numpy(negatives), tau).item();
      },
      py::arg("anchor"), py::arg("positive"), py::arg("negatives"), py::arg("tau") = 0.07);
  m.def(
      "total_loss",
      [](double gan, double glob, double ins, double style, double img) {
        return total_loss(gan, glob, ins, style, img, LossWeights{});
      },
      py::arg("gan"), py::arg("nce_global"), py::arg("nce_instance"), py::arg("recon_style"), py::arg("recon_img"));

  m.def(
      "gamma", [](double a, std::int64_t bands) { return gamma(a, bands); }, py::arg("a"), py::arg("bands"));
  m.def(
      "pos_embed_global", [](std::int64_t gh, std::int64_t gw, std::int64_t bands) {
        return to_numpy(pos_embed_global(gh, gw, bands));
      },
      py::arg("grid_h"), py::arg("grid_w"), py::arg("bands"));
  m.def(
      "roi_align",
      [](const Array& c, const PyBox& box, std::int64_t out_res, double stride) {
        const auto [cx, cy, w, h] = box;
        return to_numpy(roi_align(from_numpy(c), {cx, cy, w, h}, out_res, stride));
      },
      py::arg("features"), py::arg("box"), py::arg("out_res"), py::arg("feature_stride") = 4.0);
  m.def(
      "adain",
      [](const Array& z, const Array& scale, const Array& shift) {
        return to_numpy(adain(from_numpy(z), from_numpy(scale), from_numpy(shift)));
      },
      py::arg("tokens"), py::arg("scale"), py::arg("shift"));

  m.def(
      "shape_walk",
      [](const std::string& scale) {
        ModelConfig mc;
        if (scale == "paper") {
          mc.backbone = BackboneConfig::paper();
          mc.aggregator = AggregatorConfig::paper();
        } else if (scale != "desk") {
          throw std::invalid_argument("scale must be desk or paper");
        }
        py::list rows;
        for (const auto& r : shape_walk(mc))
          rows.append(py::dict(py::arg("network") = r.network, py::arg("layer") = r.layer,
                               py::arg("params") = r.params, py::arg("output") = r.output));
        return rows;
      },
      py::arg("scale") = "desk");

  m.def(
      "grad_check",
      [](std::uint64_t seed) {
        auto entries = primitive_grad_suite(seed, 100);
        const auto composite = composite_grad_suite(seed);
        entries.insert(entries.end(), composite.begin(), composite.end());
        std::vector<std::tuple<std::string, double, bool>> out;
        for (const auto& e : entries) out.emplace_back(e.name, e.max_relative_error, e.passed);
        return out;
      },
      py::arg("seed") = 0, "Gradient-check suites: (name, max_relative_error, passed) per check.");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command-line tool in-process: (exit_code, stdout, stderr).");

  py::class_<Translator>(m, "Translator")
      .def(py::init<const std::string&>(), py::arg("checkpoint"))
      .def("translate", &Translator::translate, py::arg("images"), py::arg("boxes") = std::vector<std::vector<PyBox>>{},
           py::arg("style_seed") = 0)
      .def("style", &Translator::style, py::arg("images"))
      .def_property_readonly("image_size", &Translator::image_size);
}
