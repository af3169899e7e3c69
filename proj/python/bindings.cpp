#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "mground/errors.hpp"
#include "mground/eval.hpp"
#include "mground/lsp.hpp"
#include "mground/smo.hpp"
#include "mground/synth.hpp"

namespace py = pybind11;
using namespace mground;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Mat to_mat(const Array& a, const char* name) {
  if (a.ndim() != 2) throw py::value_error(std::string(name) + " must be 2-D");
  const auto rows = static_cast<std::size_t>(a.shape(0));
  const auto cols = static_cast<std::size_t>(a.shape(1));
  return Mat(rows, cols, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Mat& m) {
  Array out({m.rows(), m.cols()});
  std::copy(m.values().begin(), m.values().end(), out.mutable_data());
  return out;
}

Array to_array(std::span<const double> v) {
  Array out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

py::dict loss_dict(const LossBreakdown& l) {
  py::dict d;
  d["total"] = l.total;
  d["contrastive"] = l.contrastive;
  d["exclusivity"] = l.exclusivity;
  d["smoothness"] = l.smoothness;
  return d;
}

py::list segment_list(const std::vector<Segment>& segs) {
  py::list out;
  for (const Segment& s : segs) out.append(py::make_tuple(s.query_idx, s.start, s.end, s.confidence));
  return out;
}

py::dict synth_instance(int d, int k, int L, double noise_sigma, int transition_width,
                        int min_seg_len, std::uint64_t seed, std::uint64_t index) {
  SynthSpec spec;
  spec.d = d;
  spec.k = k;
  spec.L = L;
  spec.noise_sigma = noise_sigma;
  spec.transition_width = transition_width;
  spec.min_seg_len = min_seg_len;
  spec.seed = seed;
  const SynthInstance inst = generate_indexed(spec, index);

  Mat queries(inst.queries.size(), static_cast<std::size_t>(d));
  for (std::size_t i = 0; i < inst.queries.size(); ++i) {
    const std::span<const double> v = inst.queries[i];
    std::copy(v.begin(), v.end(), queries.row(i).begin());
  }
  py::list gt;
  for (const GtSegment& g : inst.gt) gt.append(py::make_tuple(g.query_idx, g.start, g.end));

  py::dict out;
  out["id"] = inst.id;
  out["text"] = inst.text;
  out["query_texts"] = inst.query_texts;
  out["features"] = to_array(inst.features.matrix());
  out["queries"] = to_array(queries);
  out["gt"] = gt;
  return out;
}

py::dict ground(const Array& features, const Array& queries, std::optional<Array> wk,
                std::optional<Array> wv, std::optional<Array> q, int steps, double lr, double tau,
                double alpha, double beta, double gamma, double init_jitter, std::uint64_t seed,
                const std::string& decoder) {
  FrameFeatures feats(to_mat(features, "features"));
  const Mat qm = to_mat(queries, "queries");
  if (qm.cols() != feats.dim()) throw py::value_error("queries and features differ in dimension");
  std::vector<TextEmbedding> qs;
  for (std::size_t i = 0; i < qm.rows(); ++i) qs.emplace_back(qm.row(i));

  AttentionPoolParams params = AttentionPoolParams::identity(feats.dim());
  if (wk) params.wk = to_mat(*wk, "wk");
  if (wv) params.wv = to_mat(*wv, "wv");
  if (q) {
    if (q->ndim() != 1) throw py::value_error("q must be 1-D");
    params.q = Vec(std::span<const double>(q->data(), static_cast<std::size_t>(q->size())));
  }

  SmoConfig cfg;
  cfg.steps = steps;
  cfg.lr = lr;
  cfg.tau = tau;
  cfg.alpha = alpha;
  cfg.beta = beta;
  cfg.gamma = gamma;
  cfg.init_jitter = init_jitter;
  cfg.seed = seed;

  Decoder dec = Decoder::kArgmax;
  if (decoder == "ordered") {
    dec = Decoder::kOrdered;
  } else if (decoder != "argmax") {
    throw py::value_error("decoder must be 'argmax' or 'ordered'");
  }

  GroundingResult r;
  {
    py::gil_scoped_release release;
    r = optimize_masks(params, feats, qs, cfg, dec);
  }

  py::list trace;
  for (const LossBreakdown& l : r.loss_trace) trace.append(loss_dict(l));
  py::dict out;
  out["labels"] = r.labels;
  out["segments"] = segment_list(r.segments);
  out["fragments"] = segment_list(r.fragments);
  out["absent_queries"] = r.absent_queries;
  out["masks"] = to_array(r.masks.values);
  out["loss_trace"] = trace;
  out["steps_run"] = r.steps_run;
  out["param_count"] = r.param_count;
  return out;
}

py::dict mean_ap_py(const std::vector<std::tuple<std::string, int, int, int, double>>& preds,
                    const std::vector<std::tuple<std::string, int, int, int>>& gts,
                    std::optional<std::vector<double>> thresholds) {
  std::vector<Prediction> p;
  for (const auto& [id, qi, s, e, c] : preds) p.push_back({id, Segment{qi, s, e, c}});
  std::vector<GroundTruth> g;
  for (const auto& [id, qi, s, e] : gts) g.push_back({id, GtSegment{qi, s, e}});
  const std::vector<double> taus = thresholds ? *thresholds : default_thresholds();
  const EvalReport rep = mean_ap(p, g, taus);
  py::dict out;
  out["thresholds"] = rep.thresholds;
  out["ap"] = rep.ap_per_threshold;
  out["map"] = rep.map_mean;
  return out;
}

py::dict gradcheck_py(std::uint64_t seed, int trials, double h) {
  const GradCheckReport r = run_gradcheck(seed, trials, h);
  py::dict out;
  out["max_rel_error"] = r.max_rel_error;
  out["worst_trial"] = r.worst_trial;
  out["trials"] = r.trials;
  return out;
}

}  // namespace

PYBIND11_MODULE(_mground, m) {
  m.doc() = "Soft-mask temporal grounding of sub-action queries.";
  m.attr("__version__") = MGROUND_VERSION;

  static py::exception<Error> error(m, "MgroundError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      const std::string msg = std::string(to_string(e.code())) + ": " + e.what();
      py::set_error(error, msg.c_str());
    }
  });

  m.def("synth_instance", &synth_instance, py::arg("d") = 16, py::arg("k") = 3,
        py::arg("L") = 60, py::arg("noise_sigma") = 0.05, py::arg("transition_width") = 2,
        py::arg("min_seg_len") = 8, py::arg("seed") = 0, py::arg("index") = 0,
        "Planted synthetic instance as a dict of numpy arrays and ground-truth spans.");

  m.def("ground", &ground, py::arg("features"), py::arg("queries"), py::arg("wk") = py::none(),
        py::arg("wv") = py::none(), py::arg("q") = py::none(), py::arg("steps") = 100,
        py::arg("lr") = 0.01, py::arg("tau") = 0.1, py::arg("alpha") = 1.0,
        py::arg("beta") = 0.005, py::arg("gamma") = 100.0, py::arg("init_jitter") = 0.01,
        py::arg("seed") = 0, py::arg("decoder") = "argmax",
        "Optimize k x L soft masks and decode one span per query. Pool weights default to identity.");

  m.def("segment_iou",
        [](int s0, int e0, int s1, int e1) { return segment_iou({s0, e0}, {s1, e1}); },
        py::arg("start_a"), py::arg("end_a"), py::arg("start_b"), py::arg("end_b"));

  m.def("mean_ap", &mean_ap_py, py::arg("predictions"), py::arg("ground_truth"),
        py::arg("thresholds") = py::none(),
        "predictions: (id, query, start, end, confidence); ground_truth: (id, query, start, end).");

  m.def("rule_based_split", [](const std::string& text) { return lsp::rule_based_split(text); },
        py::arg("text"));

  m.def("gradcheck", &gradcheck_py, py::arg("seed") = 0, py::arg("trials") = 20,
        py::arg("h") = 1e-5);
}
