#include "canonflow/canonicalizer.hpp"
#include "canonflow/coupling.hpp"
#include "canonflow/flowcore.hpp"
#include "canonflow/molecule.hpp"
#include "canonflow/sampler.hpp"
#include "canonflow/stats.hpp"
#include "canonflow/theorylab.hpp"

#include <nlohmann/json.hpp>
#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

namespace py = pybind11;
using namespace canonflow;

namespace {

using molecule::MoleculeState;

py::dict mol_to_dict(const MoleculeState& m) {
  py::dict d;
  d["coords"] = Mat(m.coords);
  d["atom_types"] = m.atom_types;
  d["charges"] = m.charges;
  d["bonds"] = m.bonds;
  return d;
}

MoleculeState mol_from_dict(const py::dict& d) {
  if (!d.contains("coords") || !d.contains("atom_types")) throw InputError("molecule needs 'coords' and 'atom_types'");
  const Mat x = d["coords"].cast<Mat>();
  if (x.cols() != 3) throw InputError("coords must have shape (N, 3)");
  MoleculeState m;
  m.coords = x;
  m.atom_types = d["atom_types"].cast<std::vector<int>>();
  const auto n = static_cast<Eigen::Index>(m.atom_types.size());
  m.charges = d.contains("charges") ? d["charges"].cast<std::vector<int>>() : std::vector<int>(m.atom_types.size(), 0);
  m.bonds = d.contains("bonds") ? d["bonds"].cast<MatI>() : MatI(MatI::Zero(n, n));
  m.validate();
  return m;
}

py::object json_to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

canon::Group parse_group(const std::string& s) {
  if (s == "perm") return canon::Group::kPerm;
  if (s == "perm-so3" || s == "perm_so3") return canon::Group::kPermSO3;
  throw InputError("unknown group: " + s);
}

canon::Ordering parse_ordering(const std::string& s) {
  if (s == "spectral") return canon::Ordering::kSpectral;
  if (s == "multihop") return canon::Ordering::kMultihop;
  if (s == "atomic") return canon::Ordering::kAtomic;
  throw InputError("unknown ordering: " + s);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "canonflow C++ core";
  m.attr("__version__") = "0.1.0";

  static py::exception<InputError> input_error(m, "InputError", PyExc_ValueError);
  static py::exception<ParseError> parse_error(m, "ParseError", PyExc_ValueError);
  static py::exception<NumericError> numeric_error(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ParseError& e) {
      py::set_error(parse_error, e.what());
    } catch (const InputError& e) {
      py::set_error(input_error, e.what());
    } catch (const NumericError& e) {
      py::set_error(numeric_error, e.what());
    } catch (const Error& e) {
      py::set_error(PyExc_RuntimeError, e.what());
    }
  });

  m.def("parse_xyz", [](const std::string& text) { return mol_to_dict(molecule::parse_xyz(text)); }, py::arg("text"));
  m.def("parse_sdf", [](const std::string& text) { return mol_to_dict(molecule::parse_sdf(text)); }, py::arg("text"));
  m.def(
      "to_xyz", [](const py::dict& mol, const std::string& comment) { return molecule::to_xyz(mol_from_dict(mol), comment); },
      py::arg("mol"), py::arg("comment") = "");

  m.def(
      "canonicalize",
      [](const py::dict& mol, const std::string& group, const std::string& ordering) {
        const auto r = canon::canonicalize(mol_from_dict(mol), parse_group(group), parse_ordering(ordering));
        py::dict d;
        d["representative"] = mol_to_dict(r.representative);
        d["perm"] = r.gauge.perm;
        d["rotation"] = Mat(r.gauge.rot);
        d["translation"] = Vec(r.gauge.trans);
        d["ranks"] = r.ranks;
        d["fiedler"] = r.fiedler;
        d["degenerate"] = r.degenerate;
        d["cube_flipped"] = r.cube_flipped;
        return d;
      },
      py::arg("mol"), py::arg("group") = "perm", py::arg("ordering") = "spectral",
      "Canonical representative and gauge; act(gauge, representative) reproduces the input.");

  m.def(
      "fiedler_vector",
      [](const py::dict& mol) {
        const auto f = canon::fiedler_vector(mol_from_dict(mol));
        py::dict d;
        d["u2"] = f.u2;
        d["lambda2"] = f.lambda2;
        d["lambda3"] = f.lambda3;
        d["degenerate"] = f.degenerate;
        return d;
      },
      py::arg("mol"));

  m.def("hungarian", &coupling::hungarian, py::arg("cost"), "Row -> column assignment minimising total cost.");
  m.def(
      "kabsch_align",
      [](const Mat& target, const Mat& source) {
        if (target.cols() != 3 || source.cols() != 3) throw InputError("kabsch_align: arrays must be (N, 3)");
        const auto r = coupling::kabsch_align(target, source);
        py::dict d;
        d["rotation"] = Mat(r.rotation);
        d["aligned"] = Mat(r.aligned);
        d["rmsd_before"] = r.rmsd_before;
        d["rmsd_after"] = r.rmsd_after;
        return d;
      },
      py::arg("target"), py::arg("source"));

  m.def("gaussian_condvar", &theory::gaussian_condvar, py::arg("sigma0"), py::arg("sigma1"), py::arg("t"));
  m.def(
      "mixture_score",
      [](const std::string& group, const Vec& mean, const Mat& cov, const Vec& z) {
        return theory::mixture_score(flow::group_by_name(group), mean, cov, z);
      },
      py::arg("group"), py::arg("mean"), py::arg("cov"), py::arg("z"));
  m.def(
      "mixture_log_density",
      [](const std::string& group, const Vec& mean, const Mat& cov, const Vec& z) {
        return theory::mixture_log_density(flow::group_by_name(group), mean, cov, z);
      },
      py::arg("group"), py::arg("mean"), py::arg("cov"), py::arg("z"));

  m.def(
      "haar_rotation",
      [](int d, std::uint64_t seed) {
        Rng rng(seed);
        return symgroup::haar_rotation(d, rng);
      },
      py::arg("d"), py::arg("seed") = 0);

  m.def("energy_distance", &stats::energy_distance, py::arg("x"), py::arg("y"));
  m.def(
      "ks_normal",
      [](std::vector<double> x) {
        const auto r = stats::ks_normal(std::move(x));
        return py::make_tuple(r.statistic, r.p_value);
      },
      py::arg("x"));
  m.def(
      "ks_two_sample",
      [](std::vector<double> a, std::vector<double> b) {
        const auto r = stats::ks_two_sample(std::move(a), std::move(b));
        return py::make_tuple(r.statistic, r.p_value);
      },
      py::arg("a"), py::arg("b"));

  m.def(
      "verify_theory",
      [](const std::string& system, long n, std::uint64_t seed, long knn_cap) {
        theory::SuiteOptions o;
        o.system = system;
        o.n = n;
        o.seed = seed;
        o.knn_cap = knn_cap;
        theory::TheoryReport rep;
        {
          py::gil_scoped_release release;
          rep = theory::run_suite(o);
        }
        return json_to_py(nlohmann::json(rep));
      },
      py::arg("system") = "signflip", py::arg("n") = 100000, py::arg("seed") = 0, py::arg("knn_cap") = 40000);

  m.def(
      "train_c4",
      [](bool canonical, int epochs, int steps_per_epoch, int batch, double lr, std::uint64_t seed) {
        flow::TrainConfig cfg;
        cfg.epochs = epochs;
        cfg.steps_per_epoch = steps_per_epoch;
        cfg.batch_size = batch;
        cfg.lr = lr;
        cfg.seed = seed;
        cfg.path_sigma = 0.0;
        cfg.time_dist = flow::TimeDist::kUniform;
        flow::TrainResult res;
        {
          py::gil_scoped_release release;
          Rng rng(seed ^ 0xc4c4c4ULL);
          const auto task = flow::c4_blob_task(canonical, rng);
          res = flow::train_points(task, cfg, flow::PointMlpConfig{});
        }
        py::list trace;
        for (const auto& r : res.trace) {
          py::dict d;
          d["epoch"] = r.epoch;
          d["loss"] = r.loss;
          d["val_loss"] = r.val_loss;
          d["val_energy"] = r.val_energy;
          trace.append(d);
        }
        py::dict out;
        out["trace"] = trace;
        out["checkpoint"] = flow::checkpoint_json(res.model).dump();
        return out;
      },
      py::arg("canonical") = true, py::arg("epochs") = 5, py::arg("steps_per_epoch") = 50, py::arg("batch") = 128,
      py::arg("lr") = 1e-3, py::arg("seed") = 0);

  m.def(
      "sample_checkpoint_points",
      [](const std::string& checkpoint, int n, int steps, bool randomize, std::uint64_t seed) {
        nlohmann::json j;
        try {
          j = nlohmann::json::parse(checkpoint);
        } catch (const nlohmann::json::exception& e) {
          throw ParseError(std::string("checkpoint: ") + e.what(), 0);
        }
        const auto model = flow::checkpoint_from_json(j);
        Rng rng(seed);
        return sampler::sample_points(model, n, steps, randomize, rng);
      },
      py::arg("checkpoint"), py::arg("n"), py::arg("steps") = 10, py::arg("randomize") = true, py::arg("seed") = 0);

  m.def(
      "molecule_metrics",
      [](const py::list& mols) {
        std::vector<MoleculeState> v;
        for (const auto& h : mols) v.push_back(mol_from_dict(h.cast<py::dict>()));
        const auto r = molecule::evaluate(v, molecule::ValenceTable::defaults());
        py::dict d;
        d["atom_stability"] = r.atom_stability;
        d["mol_stability"] = r.mol_stability;
        d["uniqueness"] = r.uniqueness;
        d["n_samples"] = r.n_samples;
        return d;
      },
      py::arg("mols"));
}
