#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "acr/error.hpp"
#include "acr/grid_transform.hpp"
#include "acr/localization.hpp"
#include "acr/metrics.hpp"
#include "acr/regularizer.hpp"
#include "acr/synth_data.hpp"
#include "acr/trainer.hpp"
#include "acr/vit.hpp"

namespace py = pybind11;
using namespace acr;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using MaskArray = py::array_t<std::uint16_t, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

std::vector<Tensor> to_tensors(const std::vector<Array>& arrays) {
  std::vector<Tensor> out;
  for (const auto& a : arrays) out.push_back(to_tensor(a));
  return out;
}

std::vector<Array> to_arrays(const std::vector<Tensor>& tensors) {
  std::vector<Array> out;
  for (const auto& t : tensors) out.push_back(to_array(t));
  return out;
}

LabelMask to_mask(const MaskArray& a) {
  if (a.ndim() != 2) throw DimensionError("mask must be 2-D, got rank " + std::to_string(a.ndim()));
  LabelMask m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), m.labels.begin());
  return m;
}

MaskArray to_mask_array(const LabelMask& m) {
  MaskArray out({m.height, m.width});
  std::copy(m.labels.begin(), m.labels.end(), out.mutable_data());
  return out;
}

std::vector<LabelMask> to_masks(const std::vector<MaskArray>& arrays) {
  std::vector<LabelMask> out;
  for (const auto& a : arrays) out.push_back(to_mask(a));
  return out;
}

GridShape grid_of(std::pair<std::size_t, std::size_t> hw) { return {hw.first, hw.second}; }

py::dict sample_dict(const SyntheticSample& s) {
  py::dict d;
  d["image"] = to_array(s.image);
  d["mask"] = to_mask_array(s.mask);
  d["labels"] = std::vector<int>(s.labels.begin(), s.labels.end());
  return d;
}

SyntheticSample sample_of(const Array& image, const std::vector<int>& labels) {
  SyntheticSample s;
  s.image = to_tensor(image);
  s.labels.assign(labels.begin(), labels.end());
  return s;
}

}  // namespace

PYBIND11_MODULE(_acr, m) {
  m.doc() = "All-pairs consistency regularization on a mini vision transformer";

  auto base = py::register_exception<Error>(m, "AcrError", PyExc_RuntimeError);
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<ContractError>(m, "ContractError", base.ptr());
  py::register_exception<StateError>(m, "StateError", base.ptr());
  py::register_exception<NumericalError>(m, "NumericalError", base.ptr());
  py::register_exception<UnsupportedTransformError>(m, "UnsupportedTransformError", base.ptr());
  py::register_exception<ResourceError>(m, "ResourceError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());

  // Grid transforms
  m.def("transform_names", [] {
    std::vector<std::string> out;
    for (const auto& t : permutation_transforms()) out.push_back(t.name());
    return out;
  });
  m.def("transformed_grid", [](const std::string& t, std::pair<std::size_t, std::size_t> grid) {
    const GridShape g = transformed_grid(SpatialTransform::parse(t), grid_of(grid));
    return std::pair{g.h, g.w};
  }, py::arg("transform"), py::arg("grid"));
  m.def("token_permutation", [](const std::string& t, std::pair<std::size_t, std::size_t> grid) {
    return token_permutation(SpatialTransform::parse(t), grid_of(grid)).sigma;
  }, py::arg("transform"), py::arg("grid"),
        "sigma[j] is the source token landing at position j (row-major).");
  m.def("invert_attention", [](const Array& a, const std::string& t,
                               std::pair<std::size_t, std::size_t> grid) {
    return to_array(invert_attention_fast(to_tensor(a), SpatialTransform::parse(t), grid_of(grid)));
  }, py::arg("attention"), py::arg("transform"), py::arg("grid"));
  m.def("invert_attention_kronecker", [](const Array& a, const std::string& t,
                                         std::pair<std::size_t, std::size_t> grid) {
    return to_array(invert_attention_kronecker(to_tensor(a), SpatialTransform::parse(t), grid_of(grid)));
  }, py::arg("patch_attention"), py::arg("transform"), py::arg("grid"));
  m.def("commutation", [](std::size_t l, std::size_t mm) { return to_array(dense::commutation(l, mm)); });

  // Regularizer
  m.def("activation_loss", [](const std::vector<Array>& a, const std::vector<Array>& b,
                              const std::string& t, std::pair<std::size_t, std::size_t> grid,
                              const std::string& metric) {
    return region_activation_loss(to_tensors(a), to_tensors(b), SpatialTransform::parse(t),
                                  grid_of(grid), parse_distance(metric));
  }, py::arg("layers"), py::arg("layers_prime"), py::arg("transform"), py::arg("grid"),
        py::arg("distance") = "l1");
  m.def("affinity_loss", [](const std::vector<Array>& a, const std::vector<Array>& b,
                            const std::string& t, std::pair<std::size_t, std::size_t> grid,
                            const std::string& metric) {
    return region_affinity_loss(to_tensors(a), to_tensors(b), SpatialTransform::parse(t),
                                grid_of(grid), parse_distance(metric));
  }, py::arg("layers"), py::arg("layers_prime"), py::arg("transform"), py::arg("grid"),
        py::arg("distance") = "l1");

  // Model
  py::class_<ViTConfig>(m, "ViTConfig")
      .def(py::init<>())
      .def_readwrite("patch_size", &ViTConfig::patch_size)
      .def_property("grid", [](const ViTConfig& c) { return std::pair{c.grid.h, c.grid.w}; },
                    [](ViTConfig& c, std::pair<std::size_t, std::size_t> g) { c.grid = grid_of(g); })
      .def_readwrite("channels", &ViTConfig::channels)
      .def_readwrite("embed_dim", &ViTConfig::embed_dim)
      .def_readwrite("num_layers", &ViTConfig::num_layers)
      .def_readwrite("num_heads", &ViTConfig::num_heads)
      .def_readwrite("mlp_ratio", &ViTConfig::mlp_ratio)
      .def_readwrite("num_classes", &ViTConfig::num_classes)
      .def_readwrite("use_positional_embedding", &ViTConfig::use_positional_embedding)
      .def("validate", &ViTConfig::validate);

  py::class_<Parameters>(m, "Parameters")
      .def("names", [](const Parameters& p) {
        std::vector<std::string> out;
        for (const auto& e : p.entries()) out.push_back(e.name);
        return out;
      })
      .def("get", [](const Parameters& p, const std::string& name) { return to_array(p.get(name)); })
      .def("set", [](Parameters& p, const std::string& name, const Array& a) {
        Tensor& t = p.get(name);
        Tensor v = to_tensor(a);
        if (v.shape() != t.shape())
          throw DimensionError(name + ": expected " + shape_str(t.shape()) + ", got " + shape_str(v.shape()));
        t.values() = std::move(v.values());
      })
      .def("count", &Parameters::count)
      .def("__eq__", [](const Parameters& a, const Parameters& b) { return a == b; });

  m.def("init_parameters", &init_parameters, py::arg("config"), py::arg("seed"));
  m.def("save_checkpoint", &save_checkpoint, py::arg("path"), py::arg("config"), py::arg("params"));
  m.def("load_checkpoint", [](const std::filesystem::path& path) {
    Checkpoint c = load_checkpoint(path);
    return std::pair{c.config, std::move(c.params)};
  });
  m.def("forward", [](const Parameters& params, const ViTConfig& config, const Array& image) {
    Tape tape;
    const ForwardResult r = forward(tape, to_tensor(image), params, config);
    std::vector<Tensor> att;
    for (const auto& a : r.attentions) att.push_back(a.value());
    py::dict d;
    d["logits"] = to_array(r.logits.value());
    d["attentions"] = to_arrays(att);
    d["grid"] = std::pair{r.grid.h, r.grid.w};
    return d;
  }, py::arg("params"), py::arg("config"), py::arg("image"));
  m.def("attention_adjoints", [](const Parameters& params, const ViTConfig& config,
                                 const Array& image, std::size_t cls) {
    Tape tape;
    const ForwardResult r = forward(tape, to_tensor(image), params, config);
    return to_arrays(compute_attention_adjoints(r, cls));
  }, py::arg("params"), py::arg("config"), py::arg("image"), py::arg("class_index"));

  // Localization
  m.def("seed_mask", [](const Parameters& params, const ViTConfig& config, const Array& image,
                        const std::vector<int>& labels, std::pair<std::size_t, std::size_t> layers,
                        bool refined, double threshold) {
    const SyntheticSample s = sample_of(image, labels);
    const ImageEvidence ev = collect_evidence(params, config, s);
    const auto maps = localize(ev, {layers.first, layers.second}, refined, s.image.dim(1),
                               s.image.dim(2));
    return to_mask_array(seed_from_maps(maps, threshold, s.image.dim(1), s.image.dim(2)).mask);
  }, py::arg("params"), py::arg("config"), py::arg("image"), py::arg("labels"), py::arg("layers"),
        py::arg("refined") = true, py::arg("threshold") = 0.5);

  // Data
  m.def("generate_sample", [](std::size_t index, std::size_t num_classes, std::size_t height,
                              std::size_t width, std::uint64_t seed) {
    const SynthConfig c{.num_samples = index + 1, .num_classes = num_classes,
                        .height = height, .width = width, .seed = seed};
    return sample_dict(generate_sample(c, index));
  }, py::arg("index"), py::arg("num_classes") = 5, py::arg("height") = 32, py::arg("width") = 32,
        py::arg("seed") = 0);
  m.def("augment", [](const Array& image, const std::string& t, std::size_t patch_size) {
    return to_array(augment(to_tensor(image), SpatialTransform::parse(t), patch_size));
  }, py::arg("image"), py::arg("transform"), py::arg("patch_size") = 4);

  // Metrics
  m.def("miou", [](const std::vector<MaskArray>& pred, const std::vector<MaskArray>& gt,
                   std::size_t num_classes) {
    const auto p = to_masks(pred), g = to_masks(gt);
    const MiouResult r = miou(p, g, num_classes);
    py::dict d;
    d["mean"] = r.mean;
    d["per_class"] = r.per_class;
    return d;
  }, py::arg("pred"), py::arg("gt"), py::arg("num_classes"));
  m.def("fp_fn_rates", [](const std::vector<MaskArray>& pred, const std::vector<MaskArray>& gt) {
    const auto p = to_masks(pred), g = to_masks(gt);
    const FpFn r = fp_fn_rates(p, g);
    return std::pair{r.fp, r.fn};
  }, py::arg("pred"), py::arg("gt"));
  m.def("threshold_grid", &threshold_grid, py::arg("step") = 0.05);

  // Training
  m.def("train", [](const std::string& config_text, std::size_t num_samples, std::uint64_t data_seed) {
    const TrainConfig config = parse_train_config(config_text);
    const Dataset data = generate({.num_samples = num_samples,
                                   .num_classes = config.vit.num_classes,
                                   .height = config.vit.image_height(),
                                   .width = config.vit.image_width(),
                                   .seed = data_seed});
    TrainResult r;
    {
      py::gil_scoped_release release;
      r = train(config, data);
    }
    std::vector<std::string> log;
    for (const auto& e : r.log) log.push_back(to_json(e).dump());
    return std::pair{std::move(r.params), log};
  }, py::arg("config_text"), py::arg("num_samples"), py::arg("data_seed") = 0,
        "Trains on a generated dataset; returns (parameters, per-epoch JSON lines).");
}
