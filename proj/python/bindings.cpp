// Python bindings over the core library: tensors/autodiff, the diffusion
// schedule, survival statistics, scoring helpers, the phantom generator, and
// the pipeline commands.

#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <sstream>

#include "normdae/diffusion.hpp"
#include "normdae/errors.hpp"
#include "normdae/model.hpp"
#include "normdae/phantom.hpp"
#include "normdae/pipeline.hpp"
#include "normdae/scoring.hpp"
#include "normdae/survival.hpp"
#include "normdae/tabular.hpp"
#include "normdae/tensor.hpp"

namespace py = pybind11;
using namespace normdae;

namespace {

std::string shape_str(const ag::Tensor& t) {
    std::ostringstream os;
    os << "Tensor(shape=[";
    for (size_t i = 0; i < t.shape().size(); ++i) {
        if (i) os << ", ";
        os << t.shape()[i];
    }
    os << "])";
    return os.str();
}

surv::SurvivalRecord make_record(std::string id, double duration, bool event,
                                 std::vector<double> covariates) {
    surv::SurvivalRecord r;
    r.id = std::move(id);
    r.duration = duration;
    r.event = event;
    r.covariates = std::move(covariates);
    return r;
}

pipe::Settings settings_from_ini(const std::string& text) {
    return pipe::parse_settings(tab::Config::parse(text));
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Normative diffusion autoencoder core";

    // Error categories surface as Python exceptions of matching granularity.
    const auto config_error = py::register_exception<ConfigError>(m, "ConfigError");
    py::register_exception<DataError>(m, "DataError");
    py::register_exception<NumericError>(m, "NumericError");
    (void)config_error;

    // --- tensors & autodiff -----------------------------------------------------
    py::class_<ag::Tensor>(m, "Tensor")
        .def(py::init([](const std::vector<int>& shape, float fill) {
                 return ag::Tensor(shape, fill);
             }),
             py::arg("shape"), py::arg("fill") = 0.0f)
        .def_static(
            "from_values",
            [](const std::vector<int>& shape, const std::vector<float>& values) {
                ag::Tensor t(shape, 0.0f);
                if (values.size() != t.size()) {
                    throw DimensionError("from_values: got " + std::to_string(values.size()) +
                                         " values for a tensor of " + std::to_string(t.size()));
                }
                std::copy(values.begin(), values.end(), t.data());
                return t;
            },
            py::arg("shape"), py::arg("values"))
        .def_property_readonly("shape", [](const ag::Tensor& t) { return t.shape(); })
        .def("numel", [](const ag::Tensor& t) { return t.size(); })
        .def("tolist",
             [](const ag::Tensor& t) {
                 return std::vector<float>(t.data(), t.data() + t.size());
             })
        .def("__repr__", &shape_str);

    py::class_<ag::Tape>(m, "Tape")
        .def(py::init<>())
        .def("track", [](ag::Tape& tape, ag::Tensor& t) { tape.track(t); }, py::arg("tensor"),
             "Mark a tensor as requiring gradient on this tape")
        .def("backward", [](ag::Tape& tape, ag::Tensor& loss) { tape.backward(loss); },
             py::arg("scalar_loss"));

    m.def("grad_of", [](const ag::Tensor& t) {
        if (!t.has_grad()) throw DataError("tensor has no gradient buffer");
        return std::vector<float>(t.grad(), t.grad() + t.size());
    });
    m.def("add", [](ag::Tape* t, const ag::Tensor& a, const ag::Tensor& b) { return ag::add(t, a, b); },
          py::arg("tape").none(true), py::arg("a"), py::arg("b"));
    m.def("mul", [](ag::Tape* t, const ag::Tensor& a, const ag::Tensor& b) { return ag::mul(t, a, b); },
          py::arg("tape").none(true), py::arg("a"), py::arg("b"));
    m.def("linear",
          [](ag::Tape* t, const ag::Tensor& x, const ag::Tensor& w, const ag::Tensor& b) {
              return ag::linear(t, x, w, b);
          },
          py::arg("tape").none(true), py::arg("input"), py::arg("weight"), py::arg("bias"));
    m.def("mse", [](ag::Tape* t, const ag::Tensor& a, const ag::Tensor& b) { return ag::mse(t, a, b); },
          py::arg("tape").none(true), py::arg("pred"), py::arg("target"));

    // --- diffusion ----------------------------------------------------------------
    py::class_<diff::NoiseSchedule>(m, "NoiseSchedule")
        .def_static("linear", &diff::NoiseSchedule::linear, py::arg("steps"),
                    py::arg("beta_start"), py::arg("beta_end"))
        .def_property_readonly("steps", &diff::NoiseSchedule::steps)
        .def("beta", &diff::NoiseSchedule::beta, py::arg("t"))
        .def("alpha_bar", &diff::NoiseSchedule::alpha_bar, py::arg("t"));

    py::class_<diff::SamplingPlan>(m, "SamplingPlan")
        .def_static("evenly_spaced", &diff::SamplingPlan::evenly_spaced, py::arg("total_steps"),
                    py::arg("sample_steps"))
        .def_property_readonly("timesteps",
                               [](const diff::SamplingPlan& p) { return p.timesteps; });

    // --- survival statistics --------------------------------------------------------
    py::class_<surv::SurvivalRecord>(m, "SurvivalRecord")
        .def(py::init(&make_record), py::arg("id"), py::arg("duration"), py::arg("event"),
             py::arg("covariates"))
        .def_readwrite("id", &surv::SurvivalRecord::id)
        .def_readwrite("duration", &surv::SurvivalRecord::duration)
        .def_readwrite("event", &surv::SurvivalRecord::event)
        .def_readwrite("covariates", &surv::SurvivalRecord::covariates);

    py::class_<surv::CoxFit>(m, "CoxFit")
        .def_readonly("names", &surv::CoxFit::names)
        .def_readonly("coef", &surv::CoxFit::coef)
        .def_readonly("se", &surv::CoxFit::se)
        .def_readonly("hazard_ratio", &surv::CoxFit::hazard_ratio)
        .def_readonly("ci_low", &surv::CoxFit::ci_low)
        .def_readonly("ci_high", &surv::CoxFit::ci_high)
        .def_readonly("p_value", &surv::CoxFit::p_value)
        .def_readonly("loglik", &surv::CoxFit::loglik)
        .def_readonly("loglik_null", &surv::CoxFit::loglik_null)
        .def_readonly("iterations", &surv::CoxFit::iterations);

    py::class_<surv::KMPoint>(m, "KMPoint")
        .def_readonly("time", &surv::KMPoint::time)
        .def_readonly("survival", &surv::KMPoint::survival)
        .def_readonly("at_risk", &surv::KMPoint::at_risk)
        .def_readonly("deaths", &surv::KMPoint::deaths);

    py::class_<surv::TestResult>(m, "TestResult")
        .def_readonly("statistic", &surv::TestResult::statistic)
        .def_readonly("p_value", &surv::TestResult::p_value)
        .def_readonly("n", &surv::TestResult::n)
        .def_readonly("m", &surv::TestResult::m);

    m.def("cox_fit", &surv::cox_fit, py::arg("records"), py::arg("names"),
          "Proportional-hazards fit with Efron tie handling");
    m.def("cox_partial_loglik", &surv::cox_partial_loglik, py::arg("records"), py::arg("beta"));
    m.def("km_estimate", &surv::km_estimate, py::arg("records"));
    m.def("ks_two_sample", &surv::ks_two_sample, py::arg("a"), py::arg("b"));
    m.def("pearson", &surv::pearson, py::arg("x"), py::arg("y"));
    m.def("kendall_tau", &surv::kendall_tau, py::arg("x"), py::arg("y"));
    m.def("normalized_mutual_info", &surv::normalized_mutual_info, py::arg("x"), py::arg("y"),
          py::arg("bins"));

    // --- scoring ------------------------------------------------------------------
    m.def("cosine_similarity", &scoring::cosine_similarity, py::arg("a"), py::arg("b"));
    m.def("standardize", &scoring::standardize, py::arg("values"));
    m.def(
        "compute_reference",
        [](const std::vector<std::vector<double>>& latents) {
            return scoring::compute_reference(latents).mu;
        },
        py::arg("latents"), "Mean latent of a healthy cohort");

    // --- phantom ------------------------------------------------------------------
    m.def(
        "render_phantom",
        [](int image_size, double age, double severity, int sex, double noise_sigma,
           uint64_t seed) {
            const ag::Tensor img = phantom::render_phantom(
                image_size, age, severity, sex, rng::Key(seed).with("img"), noise_sigma);
            return std::vector<float>(img.data(), img.data() + img.size());
        },
        py::arg("image_size"), py::arg("age"), py::arg("severity"), py::arg("sex"),
        py::arg("noise_sigma") = 0.0, py::arg("seed") = 1,
        "Render one synthetic head slice as a flat row-major list");

    // --- pipeline -----------------------------------------------------------------
    py::class_<pipe::Settings>(m, "Settings")
        .def_static("from_ini", &settings_from_ini, py::arg("text"))
        .def_readwrite("seed", &pipe::Settings::seed);

    m.def("run_generate", [](const pipe::Settings& s, const std::string& out) {
        pipe::cmd_generate(s, out);
    });
    m.def("run_train",
          [](const pipe::Settings& s, const std::string& out) { pipe::cmd_train(s, out); });
    m.def("run_train_age_baseline", [](const pipe::Settings& s, const std::string& out) {
        pipe::cmd_train_age_baseline(s, out);
    });
    m.def("run_score",
          [](const pipe::Settings& s, const std::string& out) { pipe::cmd_score(s, out); });
    m.def("run_survival",
          [](const pipe::Settings& s, const std::string& out) { pipe::cmd_survival(s, out); });
    m.def("run_report",
          [](const pipe::Settings& s, const std::string& out) { pipe::cmd_report(s, out); });
}
