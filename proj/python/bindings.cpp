#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "gatevit/harness.hpp"

namespace py = pybind11;
using namespace gatevit;
using nlohmann::json;

namespace {

RunConfig run_from(const std::string& text) { return run_config_from_json(json::parse(text)); }

py::array_t<float> pixels_array(const Dataset& d) {
  py::array_t<float> a({d.size(), d.image_size, d.image_size, d.channels});
  std::copy(d.pixels.begin(), d.pixels.end(), a.mutable_data());
  return a;
}

py::dict dataset_dict(const Dataset& d) {
  py::dict out;
  out["images"] = pixels_array(d);
  const std::vector<py::ssize_t> n{static_cast<py::ssize_t>(d.size())};
  py::array_t<int> labels(n), diff(n);
  int* lp = labels.mutable_data();
  int* dp = diff.mutable_data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    lp[i] = d.labels[i];
    dp[i] = static_cast<int>(d.difficulty[i]);
  }
  out["labels"] = labels;
  out["difficulty"] = diff;
  return out;
}

SamplePolicy policy_from(const std::string& text) {
  const json j = json::parse(text);
  SamplePolicy p;
  for (const auto& b : j)
    p.blocks.push_back({b.at("patches").get<std::vector<float>>(), b.at("heads").get<std::vector<float>>(),
                        b.at("blocks").get<std::vector<float>>()});
  return p;
}

struct PyModel {
  Model model;

  // Logits and hard per-sample policies for images [B, S, S, C].
  py::tuple predict(py::array_t<float, py::array::c_style | py::array::forcecast> images, const std::string& source,
                    const std::string& head_mode) const {
    if (images.ndim() != 4) throw DimensionError("predict: expected images [B, S, S, C]");
    Shape shape;
    for (py::ssize_t i = 0; i < 4; ++i) shape.push_back(static_cast<std::size_t>(images.shape(i)));
    nd::Tensor<float> x(shape, std::vector<float>(images.data(), images.data() + images.size()));
    GateControl ctl;
    ctl.mode = GateMode::Eval;
    ctl.head_mode = head_mode_from_string(head_mode);
    if (source == "open" || !model.decision)
      ctl.source = GateSource::Open;
    else if (source == "learned")
      ctl.source = GateSource::Learned;
    else
      throw ConfigError("predict: source must be \"learned\" or \"open\"");
    nd::NoGradScope<float> no_grad;
    const auto res = forward_adaptive(model.backbone, model.decision ? &*model.decision : nullptr, x, ctl);
    py::array_t<float> logits({res.logits.dim(0), res.logits.dim(1)});
    std::copy(res.logits.data().begin(), res.logits.data().end(), logits.mutable_data());
    json pols = json::array();
    for (const auto& p : res.policies(model.config)) {
      json blocks = json::array();
      for (const auto& b : p.blocks) blocks.push_back({{"patches", b.patches}, {"heads", b.heads}, {"blocks", b.sublayers}});
      pols.push_back(blocks);
    }
    return py::make_tuple(logits, pols.dump());
  }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "gatevit native core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ArtifactError>(m, "ArtifactError", PyExc_IOError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);

  m.def("normalize_config", [](const std::string& text) { return to_json(run_from(text)).dump(); },
        "Validated config with every default filled in (JSON in, JSON out).");
  m.def("static_flops", [](const std::string& text) { return static_flops(run_from(text).model).to_json().dump(); });
  m.def("policy_flops",
        [](const std::string& text, const std::string& policy, const std::string& head_mode, bool charge_decisions) {
          const RunConfig run = run_from(text);
          return policy_flops(run.model, policy_from(policy), head_mode_from_string(head_mode), charge_decisions)
              .to_json()
              .dump();
        });
  m.def("synthetic_splits", [](const std::string& text) {
    const RunConfig run = run_from(text);
    const auto splits = load_splits(run);
    return py::make_tuple(dataset_dict(splits.train), dataset_dict(splits.test));
  });
  m.def("gumbel_softmax_binary", [](double p, double tau, double g_keep, double g_drop) {
    const auto r = gumbel_softmax_binary(p, tau, g_keep, g_drop);
    return py::make_tuple(r.keep, r.drop);
  });
  m.def("welch_t_test", [](const std::vector<double>& a, const std::vector<double>& b) {
    const auto w = welch_t_test(a, b);
    return py::dict(py::arg("t") = w.t, py::arg("dof") = w.dof, py::arg("p") = w.p_two_sided);
  });
  m.def(
      "train",
      [](const std::string& text, const std::string& mode, bool overwrite) {
        const RunConfig run = run_from(text);
        const auto data = load_splits(run);
        RunOptions ro;
        ro.overwrite = overwrite;
        py::gil_scoped_release release;
        const auto r = run_training(run, train_mode_from_string(mode), data, ro);
        return metrics_csv({r.metrics});
      },
      py::arg("config"), py::arg("mode") = "adaptive", py::arg("overwrite") = false);

  py::class_<PyModel>(m, "Model")
      .def_static("load", [](const std::string& path) { return PyModel{load_checkpoint(path).model}; })
      .def_property_readonly("config", [](const PyModel& p) { return to_json(p.model.config).dump(); })
      .def_property_readonly("adaptive", [](const PyModel& p) { return p.model.decision.has_value(); })
      .def("predict", &PyModel::predict, py::arg("images"), py::arg("source") = "learned",
           py::arg("head_mode") = "full");
}
