// canonflow command-line entry point.

#include "canonflow/canonicalizer.hpp"
#include "canonflow/coupling.hpp"
#include "canonflow/flowcore.hpp"
#include "canonflow/molecule.hpp"
#include "canonflow/sampler.hpp"
#include "canonflow/theorylab.hpp"

#include <CLI11.hpp>
#include <boost/version.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#ifndef CANONFLOW_VERSION
#define CANONFLOW_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using namespace canonflow;
using ojson = nlohmann::ordered_json;

namespace {

enum Exit { kOk = 0, kCheckFailed = 1, kUsage = 2, kIo = 3 };

// Failures that map to a specific exit code.
struct ExitError : std::runtime_error {
  ExitError(int code, const std::string& msg) : std::runtime_error(msg), code(code) {}
  int code;
};

// flag options carry no value in configs; filled while building the parser
std::map<const CLI::Option*, const bool*> g_flags;

[[noreturn]] void io_fail(const std::string& msg) { throw ExitError(kIo, msg); }
[[noreturn]] void usage_fail(const std::string& msg) { throw ExitError(kUsage, msg); }

std::string default_out_dir() {
  const char* env = std::getenv("CANONFLOW_OUT_DIR");
  return env && *env ? std::string(env) : std::string("canonflow_out");
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  if (dir.empty()) return;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) io_fail("cannot create directory " + dir.string());
}

void ensure_parent(const fs::path& file) { ensure_dir(file.parent_path()); }

void write_text(const fs::path& path, const std::string& text) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) io_fail("cannot write " + path.string());
  out << text;
  if (!out) io_fail("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) io_fail("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// FNV-1a, a content fingerprint for the manifest
std::string fnv1a(const std::string& data) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << h;
  return ss.str();
}

long parse_count(const std::string& s, const char* what) {
  double v = 0.0;
  std::size_t used = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    usage_fail(std::string(what) + ": not a number: " + s);
  }
  if (used != s.size() || !std::isfinite(v) || v < 0 || v != std::floor(v) || v > 2e9) {
    usage_fail(std::string(what) + ": expected a non-negative integer, got " + s);
  }
  return static_cast<long>(v);
}

// ------------------------------------------------------------- manifests

ojson versions() {
  ojson v;
  v["canonflow"] = CANONFLOW_VERSION;
  v["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
               std::to_string(EIGEN_MINOR_VERSION);
  v["nlohmann_json"] = std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." + std::to_string(NLOHMANN_JSON_VERSION_MINOR) +
                       "." + std::to_string(NLOHMANN_JSON_VERSION_PATCH);
  v["boost"] = BOOST_LIB_VERSION;
  v["cli11"] = CLI11_VERSION;
  v["compiler"] = __VERSION__;
  return v;
}

// Resolved option values of a subcommand, keyed by long name.
ojson resolved_config(const CLI::App* sub) {
  ojson cfg = ojson::object();
  for (const CLI::Option* opt : sub->get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help" || name == "config" || opt->get_lnames().empty()) continue;
    if (opt->get_group().empty()) continue;  // hidden test hooks
    if (auto f = g_flags.find(opt); f != g_flags.end()) {
      cfg[name] = *f->second;
      continue;
    }
    const auto& res = opt->results();
    if (opt->get_expected_max() > 1) {
      cfg[name] = res;
    } else if (!res.empty()) {
      cfg[name] = res.back();
    } else {
      cfg[name] = opt->get_default_str();
    }
  }
  return cfg;
}

void write_manifest(const fs::path& path, const CLI::App* sub, std::uint64_t seed, const ojson& outputs,
                    const ojson& extra = ojson::object()) {
  ojson m;
  m["format"] = "canonflow-manifest";
  m["command"] = sub->get_name();
  m["seed"] = seed;
  m["config"] = resolved_config(sub);
  m["versions"] = versions();
  m["outputs"] = outputs;
  for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
  write_text(path, m.dump(2) + "\n");
}

ojson file_entry(const fs::path& p) {
  ojson e;
  e["path"] = p.string();
  e["fnv1a"] = fnv1a(read_text(p));
  return e;
}

// ------------------------------------------------------------------ SVG

struct Series {
  std::string name;
  std::vector<double> x, y;
};

std::string svg_plot(const std::vector<Series>& series, const std::string& title, const std::string& xlabel) {
  const double w = 640, h = 400, left = 60, right = 150, top = 40, bottom = 50;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series) {
    for (double v : s.x) xmin = std::min(xmin, v), xmax = std::max(xmax, v);
    for (double v : s.y) ymin = std::min(ymin, v), ymax = std::max(ymax, v);
  }
  if (!(xmax > xmin)) xmax = xmin + 1.0;
  if (!(ymax > ymin)) ymax = ymin + 1.0;
  auto px = [&](double v) { return left + (v - xmin) / (xmax - xmin) * (w - left - right); };
  auto py = [&](double v) { return h - bottom - (v - ymin) / (ymax - ymin) * (h - top - bottom); };
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  std::ostringstream o;
  o << std::setprecision(6);
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
    << " " << h << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << w / 2 << "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" << title
    << "</text>\n";
  o << "<line x1=\"" << left << "\" y1=\"" << h - bottom << "\" x2=\"" << w - right << "\" y2=\"" << h - bottom
    << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << h - bottom
    << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = xmin + k * (xmax - xmin) / 4, yv = ymin + k * (ymax - ymin) / 4;
    o << "<text x=\"" << px(xv) << "\" y=\"" << h - bottom + 16 << "\" text-anchor=\"middle\" font-size=\"10\">" << xv
      << "</text>\n";
    o << "<text x=\"" << left - 6 << "\" y=\"" << py(yv) + 3 << "\" text-anchor=\"end\" font-size=\"10\">" << yv
      << "</text>\n";
  }
  o << "<text x=\"" << (left + w - right) / 2 << "\" y=\"" << h - 12 << "\" text-anchor=\"middle\" font-size=\"12\">"
    << xlabel << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* c = colors[s % 8];
    o << "<polyline class=\"series\" data-name=\"" << series[s].name << "\" fill=\"none\" stroke=\"" << c
      << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < series[s].x.size(); ++i) {
      o << (i ? " " : "") << px(series[s].x[i]) << "," << py(series[s].y[i]);
    }
    o << "\"/>\n";
    const double ly = top + 14.0 * static_cast<double>(s);
    o << "<line x1=\"" << w - right + 10 << "\" y1=\"" << ly << "\" x2=\"" << w - right + 30 << "\" y2=\"" << ly
      << "\" stroke=\"" << c << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << w - right + 34 << "\" y=\"" << ly + 4 << "\" font-size=\"11\">" << series[s].name << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

// One polyline per loss column; columns with empty or negative cells are skipped.
std::vector<Series> trace_series(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("trace: empty file", 1);
  const std::vector<std::string> head = split_csv(line);
  if (head.empty() || head.front() != "epoch") throw ParseError("trace: first column must be epoch", 1);
  std::vector<std::vector<double>> cols(head.size());
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != head.size()) throw ParseError("trace: expected " + std::to_string(head.size()) + " fields", lineno);
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (cells[c].empty()) {
        cols[c].push_back(std::nan(""));
        continue;
      }
      try {
        std::size_t used = 0;
        cols[c].push_back(std::stod(cells[c], &used));
        if (used != cells[c].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ParseError("trace: bad number '" + cells[c] + "'", lineno);
      }
    }
  }
  if (cols[0].empty()) throw ParseError("trace: no rows", 1);
  std::vector<Series> out;
  for (std::size_t c = 1; c < head.size(); ++c) {
    if (std::any_of(cols[c].begin(), cols[c].end(), [](double v) { return !(v >= 0.0); })) continue;
    out.push_back({head[c], cols[0], cols[c]});
  }
  return out;
}

// --------------------------------------------------------------- inputs

std::vector<fs::path> molecule_files(const std::vector<std::string>& inputs) {
  std::vector<fs::path> files;
  auto is_mol = [](const fs::path& p) {
    const auto e = p.extension().string();
    return e == ".xyz" || e == ".sdf" || e == ".mol";
  };
  for (const auto& s : inputs) {
    const fs::path p(s);
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p)) {
        if (e.is_regular_file() && is_mol(e.path())) found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else if (fs::is_regular_file(p)) {
      files.push_back(p);
    } else {
      io_fail("no such file or directory: " + s);
    }
  }
  return files;
}

molecule::MoleculeState load_molecule(const fs::path& p, bool infer_bonds) {
  molecule::MoleculeState m = molecule::read_molecule_file(p.string());
  if (infer_bonds && p.extension() == ".xyz" && (m.bonds.array() == 0).all()) m.bonds = molecule::infer_single_bonds(m);
  return m;
}

canon::Group parse_group(const std::string& s) {
  if (s == "perm") return canon::Group::kPerm;
  if (s == "perm-so3" || s == "perm_so3") return canon::Group::kPermSO3;
  usage_fail("unknown group: " + s);
}

canon::Ordering parse_ordering(const std::string& s) {
  if (s == "spectral") return canon::Ordering::kSpectral;
  if (s == "multihop") return canon::Ordering::kMultihop;
  if (s == "atomic") return canon::Ordering::kAtomic;
  usage_fail("unknown ordering: " + s);
}

// ------------------------------------------------------------ commands

struct CanonArgs {
  std::string in, out, ranks, group = "perm", ordering = "spectral";
};

int cmd_canonicalize(const CLI::App* sub, const CanonArgs& a) {
  const fs::path in(a.in);
  const fs::path out = a.out.empty() ? fs::path(default_out_dir()) / "canonical.xyz" : fs::path(a.out);
  const fs::path ranks = a.ranks.empty() ? fs::path(out).replace_extension(".ranks.csv") : fs::path(a.ranks);
  const auto group = parse_group(a.group);
  const auto ordering = parse_ordering(a.ordering);
  if (!fs::is_regular_file(in)) io_fail("cannot read " + in.string());
  const auto m = molecule::read_molecule_file(in.string());
  const auto res = canon::canonicalize(m, group, ordering);
  if (res.degenerate) {
    std::cerr << "warning: degenerate canonicalization (exact symmetry, ties or too few atoms); result flagged\n";
  }
  ensure_parent(out);
  molecule::write_molecule_file(out.string(), res.representative);
  const auto order = symgroup::inverse_permutation(res.gauge.perm);
  std::ostringstream csv;
  csv << std::setprecision(12);
  csv << "index,source_index,atomic_number,rank,fiedler,degenerate,cube_flipped\n";
  for (int i = 0; i < res.representative.size(); ++i) {
    csv << i << "," << order[static_cast<std::size_t>(i)] << "," << res.representative.atom_types[static_cast<std::size_t>(i)]
        << "," << res.ranks[static_cast<std::size_t>(i)] << "," << (res.fiedler.size() > i ? res.fiedler(i) : 0.0) << ","
        << (res.degenerate ? 1 : 0) << "," << (res.cube_flipped ? 1 : 0) << "\n";
  }
  write_text(ranks, csv.str());
  ojson outputs = ojson::array({file_entry(out), file_entry(ranks)});
  ojson extra;
  extra["degenerate"] = res.degenerate;
  write_manifest(fs::path(out.string() + ".manifest.json"), sub, 0, outputs, extra);
  return kOk;
}

struct TrainArgs {
  std::string dataset = "c4", mode = "canonical", out, group = "perm", time_dist = "beta21", ot = "none";
  std::vector<std::string> data;
  int epochs = 10, steps_per_epoch = 50, batch = 16, warmup = 100, eval_steps = 10, eval_samples = 500;
  int n_train = 4000, n_val = 1000, prior_bins = 10;
  double lr = 3e-4, path_sigma = 0.2, rank_sigma = 0.05, p_drop = 0.1, ema = 0.999, clip = 1.0, val_fraction = 0.1;
  std::uint64_t seed = 0;
  bool isotropic_prior = false;
  int d_model = 64, d_rank = 16, layers = 3, n_sets = 8, d_pe = 16, hidden = 64, mlp_layers = 3;
};

int cmd_train(const CLI::App* sub, const TrainArgs& a) {
  const fs::path out = a.out.empty() ? fs::path(default_out_dir()) : fs::path(a.out);
  flow::TrainConfig cfg;
  cfg.lr = a.lr;
  cfg.warmup_steps = a.warmup;
  cfg.epochs = a.epochs;
  cfg.steps_per_epoch = a.steps_per_epoch;
  cfg.batch_size = a.batch;
  cfg.time_dist = flow::parse_time_dist(a.time_dist);
  cfg.path_sigma = a.path_sigma;
  cfg.rank_sigma = a.rank_sigma;
  cfg.p_drop = a.p_drop;
  cfg.ema_decay = a.ema;
  cfg.clip_norm = a.clip;
  cfg.ot = flow::parse_ot_policy(a.ot);
  cfg.seed = a.seed;
  cfg.eval_steps = a.eval_steps;
  cfg.eval_samples = a.eval_samples;

  flow::TrainResult res;
  ojson extra;
  if (a.dataset == "c4") {
    if (a.mode != "canonical" && a.mode != "invariant") usage_fail("--mode must be canonical or invariant");
    Rng rng(a.seed ^ 0xc4c4c4ULL);
    const auto task = flow::c4_blob_task(a.mode == "canonical", rng, a.n_train, a.n_val);
    flow::PointMlpConfig arch;
    arch.hidden = a.hidden;
    arch.n_layers = a.mlp_layers;
    res = flow::train_points(task, cfg, arch);
  } else if (a.dataset == "molecules") {
    if (a.data.empty()) usage_fail("--dataset molecules needs --data files or directories");
    const auto files = molecule_files(a.data);
    if (files.empty()) io_fail("no molecule files found");
    const auto group = parse_group(a.group);
    std::vector<molecule::MoleculeState> mols;
    for (const auto& f : files) mols.push_back(canon::canonicalize(load_molecule(f, true), group).representative);
    std::size_t n_val = static_cast<std::size_t>(std::floor(a.val_fraction * static_cast<double>(mols.size())));
    if (a.val_fraction < 0.0 || a.val_fraction >= 1.0) usage_fail("--val-fraction must lie in [0, 1)");
    std::vector<molecule::MoleculeState> train(mols.begin(), mols.end() - static_cast<long>(n_val));
    std::vector<molecule::MoleculeState> val(mols.end() - static_cast<long>(n_val), mols.end());
    flow::CanonLiteConfig arch;
    arch.d_model = a.d_model;
    arch.d_rank = a.d_rank;
    arch.n_layers = a.layers;
    arch.n_sets = a.n_sets;
    arch.d_pe = a.d_pe;
    res = flow::train_graphs(train, val, cfg, arch, a.prior_bins, a.isotropic_prior);
    extra["n_train"] = train.size();
    extra["n_validation"] = val.size();
  } else {
    usage_fail("--dataset must be c4 or molecules");
  }
  if (cfg.ot == flow::OtPolicy::kAnneal) {
    ojson sched = ojson::array();
    for (int e = 0; e < cfg.epochs; ++e) sched.push_back(coupling::ot_probability(e, {std::max(1, cfg.epochs)}));
    extra["ot_probability"] = sched;
  }
  ensure_dir(out);
  const fs::path ckpt = out / "checkpoint.json";
  const fs::path trace = out / "trace.csv";
  flow::save_checkpoint(res.model, ckpt.string());
  flow::write_trace_csv(res.trace, trace.string());
  ojson outputs = ojson::array({file_entry(ckpt), file_entry(trace)});
  if (!res.trace.empty()) {
    const fs::path svg = out / "trace.svg";
    write_text(svg, svg_plot(trace_series(read_text(trace)), "training trace", "epoch"));
    outputs.push_back(file_entry(svg));
  }
  if (!res.trace.empty()) {
    const auto& last = res.trace.back();
    std::cout << "epoch " << last.epoch << " loss " << last.loss << " val_loss " << last.val_loss;
    if (last.val_energy >= 0.0) std::cout << " energy " << last.val_energy;
    std::cout << "\n";
  }
  write_manifest(out / "manifest.json", sub, a.seed, outputs, extra);
  return kOk;
}

struct SampleArgs {
  std::string model, out, n = "100", regime = "a", rerank = "predict", haar = "perm-so3", format = "sdf";
  int steps = 20, n_atoms = 0;
  double cfg_scale = 1.0;
  std::uint64_t seed = 0;
  bool isotropic_prior = false;
};

int cmd_sample(const CLI::App* sub, const SampleArgs& a) {
  const long n = parse_count(a.n, "--n");
  const fs::path out = a.out.empty() ? fs::path(default_out_dir()) / "samples" : fs::path(a.out);
  if (a.format != "xyz" && a.format != "sdf") usage_fail("--format must be xyz or sdf");
  if (a.regime != "a" && a.regime != "b") usage_fail("--regime must be a or b");
  if (a.rerank != "predict" && a.rerank != "canonicalize") usage_fail("--rerank must be predict or canonicalize");
  if (!fs::is_regular_file(a.model)) io_fail("cannot read checkpoint " + a.model);
  const flow::FlowModel model = flow::load_checkpoint(a.model);
  ensure_dir(out);
  ojson outputs = ojson::array();
  if (model.kind == flow::ModelKind::kPointMlp) {
    Rng rng(a.seed);
    const bool randomize = a.haar != "off" && a.haar != "none";
    const Mat z = sampler::sample_points(model, static_cast<int>(n), a.steps, randomize, rng);
    if (n > 0) {
      std::ostringstream csv;
      csv << std::setprecision(12);
      for (int c = 0; c < z.cols(); ++c) csv << (c ? "," : "") << "x" << c;
      csv << "\n";
      for (int i = 0; i < z.rows(); ++i) {
        for (int c = 0; c < z.cols(); ++c) csv << (c ? "," : "") << z(i, c);
        csv << "\n";
      }
      const fs::path p = out / "samples.csv";
      write_text(p, csv.str());
      outputs.push_back(file_entry(p));
    }
  } else {
    sampler::SampleConfig sc;
    sc.steps = a.steps;
    sc.regime = a.regime == "b" ? sampler::Regime::kB : sampler::Regime::kA;
    sc.rerank = a.rerank == "canonicalize" ? sampler::Rerank::kCanonicalize : sampler::Rerank::kPredict;
    sc.cfg_scale = a.cfg_scale;
    sc.aligned_prior = !a.isotropic_prior;
    sc.group = sampler::parse_haar_group(a.haar);
    sc.seed = a.seed;
    sc.n_atoms = a.n_atoms;
    sampler::SampleStats stats;
    const auto mols = sampler::sample(model, static_cast<int>(n), sc, &stats);
    if (!mols.empty()) {
      const auto table = molecule::ValenceTable::defaults();
      std::ostringstream csv;
      csv << "sample,file,n_atoms,atom_stable_fraction,mol_stable\n";
      for (std::size_t i = 0; i < mols.size(); ++i) {
        std::ostringstream name;
        name << "sample_" << std::setw(5) << std::setfill('0') << i << "." << a.format;
        molecule::write_molecule_file((out / name.str()).string(), mols[i]);
        const auto st = molecule::stability(mols[i], table);
        const double frac = static_cast<double>(std::count(st.atom_stable.begin(), st.atom_stable.end(), true)) /
                            std::max<std::size_t>(1, st.atom_stable.size());
        csv << i << "," << name.str() << "," << mols[i].size() << "," << frac << "," << (st.mol_stable ? 1 : 0) << "\n";
      }
      const fs::path p = out / "sample_metrics.csv";
      write_text(p, csv.str());
      outputs.push_back(file_entry(p));
    }
    ojson s;
    s["model_calls"] = stats.model_calls;
    s["canonicalizer_calls"] = stats.canonicalizer_calls;
    s["rank_estimates"] = stats.rank_estimates;
    ojson extra;
    extra["stats"] = s;
    write_manifest(out / "manifest.json", sub, a.seed, outputs, extra);
    return kOk;
  }
  write_manifest(out / "manifest.json", sub, a.seed, outputs);
  return kOk;
}

struct VerifyArgs {
  std::string system = "all", n = "1e6", out, knn_cap = "40000";
  std::uint64_t seed = 0;
  double inject = 0.0;
};

int cmd_verify(const CLI::App* sub, const VerifyArgs& a) {
  theory::SuiteOptions o;
  o.system = a.system;
  if (o.system != "signflip" && o.system != "c4" && o.system != "s3" && o.system != "all") {
    usage_fail("--system must be signflip, c4, s3 or all");
  }
  o.n = parse_count(a.n, "--n");
  o.knn_cap = parse_count(a.knn_cap, "--knn-cap");
  if (o.n < 1000 || o.knn_cap < 1000) usage_fail("--n and --knn-cap must be at least 1000");
  o.seed = a.seed;
  o.inject_reference_offset = a.inject;
  const fs::path out = a.out.empty() ? fs::path(default_out_dir()) / "theory_report.json" : fs::path(a.out);
  const auto rep = theory::run_suite(o);
  nlohmann::json j = rep;
  j["system"] = o.system;
  write_text(out, j.dump(2) + "\n");
  for (const auto& c : rep.checks) {
    std::cout << (c.pass ? "PASS " : "FAIL ") << std::left << std::setw(42) << c.name << " " << c.kind
              << " estimate=" << c.estimate << " reference=" << c.reference << " tol=" << c.tolerance << "\n";
  }
  std::cout << (rep.all_pass() ? "all checks passed" : "some checks failed") << "\n";
  write_manifest(fs::path(out.string() + ".manifest.json"), sub, a.seed, ojson::array({file_entry(out)}));
  return rep.all_pass() ? kOk : kCheckFailed;
}

struct MetricsArgs {
  std::string samples, trace, out;
  bool infer_bonds = true;
};

int cmd_metrics(const CLI::App* sub, const MetricsArgs& a) {
  if (a.samples.empty() && a.trace.empty()) usage_fail("give --samples and/or --trace");
  const fs::path out = a.out.empty() ? fs::path(default_out_dir()) / "metrics" : fs::path(a.out);
  ensure_dir(out);
  ojson outputs = ojson::array();
  if (!a.samples.empty()) {
    if (!fs::is_directory(a.samples)) io_fail("not a directory: " + a.samples);
    const auto files = molecule_files({a.samples});
    if (files.empty()) usage_fail("no .xyz/.sdf files in " + a.samples);
    std::vector<molecule::MoleculeState> mols;
    for (const auto& f : files) mols.push_back(load_molecule(f, a.infer_bonds));
    const auto rep = molecule::evaluate(mols, molecule::ValenceTable::defaults());
    ojson j;
    j["n_samples"] = rep.n_samples;
    j["atom_stability"] = rep.atom_stability;
    j["mol_stability"] = rep.mol_stability;
    j["uniqueness"] = rep.uniqueness;
    const fs::path pj = out / "metrics.json";
    const fs::path pc = out / "metrics.csv";
    write_text(pj, j.dump(2) + "\n");
    std::ostringstream csv;
    csv << "n_samples,atom_stability,mol_stability,uniqueness\n"
        << rep.n_samples << "," << rep.atom_stability << "," << rep.mol_stability << "," << rep.uniqueness << "\n";
    write_text(pc, csv.str());
    outputs.push_back(file_entry(pj));
    outputs.push_back(file_entry(pc));
    std::cout << "atom_stability " << rep.atom_stability << " mol_stability " << rep.mol_stability << " uniqueness "
              << rep.uniqueness << " (n=" << rep.n_samples << ")\n";
  }
  if (!a.trace.empty()) {
    const auto series = trace_series(read_text(a.trace));
    const fs::path svg = out / (fs::path(a.trace).stem().string() + ".svg");
    write_text(svg, svg_plot(series, fs::path(a.trace).filename().string(), "epoch"));
    outputs.push_back(file_entry(svg));
  }
  write_manifest(out / "manifest.json", sub, 0, outputs);
  return kOk;
}

// ---------------------------------------------------------- config files

std::vector<std::string> config_tokens(const CLI::App* sub, const fs::path& path) {
  ojson j;
  try {
    j = ojson::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what(), 0);
  }
  // a manifest can be replayed directly
  if (j.is_object() && j.contains("format") && j["format"] == "canonflow-manifest") {
    if (j.value("command", "") != sub->get_name()) usage_fail("manifest is for command " + j.value("command", "?"));
    j = j["config"];
  }
  if (!j.is_object()) usage_fail("config must be a JSON object");
  std::vector<std::string> tokens;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = it.key();
    const CLI::Option* opt = sub->get_option_no_throw("--" + key);
    if (!opt || key == "config" || key == "help") usage_fail("unknown config key: " + key);
    const auto& v = it.value();
    auto scalar = [&](const ojson& x) -> std::string {
      if (x.is_string()) return x.get<std::string>();
      if (x.is_number_integer() || x.is_number_unsigned()) return x.dump();
      if (x.is_number_float()) {
        std::ostringstream ss;
        ss << std::setprecision(17) << x.get<double>();
        return ss.str();
      }
      if (x.is_boolean()) return x.get<bool>() ? "true" : "false";
      usage_fail("config key " + key + ": unsupported value");
    };
    if (g_flags.count(opt)) {
      if (!v.is_boolean()) usage_fail("config key " + key + " must be true or false");
      tokens.push_back("--" + key + "=" + (v.get<bool>() ? "true" : "false"));
      continue;
    }
    if (v.is_array()) {
      if (v.empty()) continue;
      tokens.push_back("--" + key);
      for (const auto& x : v) tokens.push_back(scalar(x));
    } else {
      tokens.push_back("--" + key);
      tokens.push_back(scalar(v));
    }
  }
  return tokens;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"canonflow: canonical flow matching toolkit"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.set_version_flag("--version", CANONFLOW_VERSION);
  app.footer("Default output directory: $CANONFLOW_OUT_DIR, else ./canonflow_out.\n"
             "Exit codes: 0 success, 1 check failure, 2 usage error, 3 I/O error.");
  std::string config_path;

  CanonArgs ca;
  auto* c = app.add_subcommand("canonicalize", "Canonical ordering (and frame) of one molecule");
  c->add_option("--in", ca.in, "Input .xyz or .sdf")->required();
  c->add_option("--out", ca.out, "Canonical molecule (.xyz or .sdf)");
  c->add_option("--ranks", ca.ranks, "Ranks CSV (default: next to --out)");
  c->add_option("--group", ca.group, "perm or perm-so3")->check(CLI::IsMember({"perm", "perm-so3"}));
  c->add_option("--ordering", ca.ordering, "spectral, multihop or atomic")
      ->check(CLI::IsMember({"spectral", "multihop", "atomic"}));

  TrainArgs ta;
  auto* t = app.add_subcommand("train", "Train a flow model on the C4 toy or a molecule list");
  t->add_option("--dataset", ta.dataset, "c4 or molecules")->check(CLI::IsMember({"c4", "molecules"}));
  t->add_option("--data", ta.data, "Molecule files or directories (molecules dataset)")->expected(1, -1);
  t->add_option("--mode", ta.mode, "c4: canonical or invariant")->check(CLI::IsMember({"canonical", "invariant"}));
  t->add_option("--group", ta.group, "molecules: canonicalization group")->check(CLI::IsMember({"perm", "perm-so3"}));
  t->add_option("--out", ta.out, "Output directory");
  t->add_option("--epochs", ta.epochs, "Epochs")->check(CLI::NonNegativeNumber);
  t->add_option("--steps-per-epoch", ta.steps_per_epoch, "Steps per epoch (c4)");
  t->add_option("--batch", ta.batch, "Batch size");
  t->add_option("--lr", ta.lr, "Learning rate");
  t->add_option("--warmup", ta.warmup, "Linear warmup steps");
  t->add_option("--time-dist", ta.time_dist, "uniform or beta21")->check(CLI::IsMember({"uniform", "beta21"}));
  t->add_option("--path-sigma", ta.path_sigma, "Gaussian path width");
  t->add_option("--rank-sigma", ta.rank_sigma, "Rank noise scale");
  t->add_option("--p-drop", ta.p_drop, "PE dropout probability (guidance)");
  t->add_option("--ema", ta.ema, "EMA decay");
  t->add_option("--clip", ta.clip, "Gradient clip norm");
  t->add_option("--ot", ta.ot, "none, exact, sinkhorn or anneal")
      ->check(CLI::IsMember({"none", "off", "exact", "on", "sinkhorn", "anneal"}));
  t->add_option("--seed", ta.seed, "Seed");
  t->add_option("--eval-steps", ta.eval_steps, "Euler steps for the per-epoch energy distance");
  t->add_option("--eval-samples", ta.eval_samples, "Samples for the per-epoch energy distance");
  t->add_option("--n-train", ta.n_train, "c4: training points");
  t->add_option("--n-val", ta.n_val, "c4: validation points");
  t->add_option("--val-fraction", ta.val_fraction, "molecules: held-out fraction");
  t->add_option("--prior-bins", ta.prior_bins, "molecules: rank bins of the adaptive prior");
  g_flags[t->add_flag("--isotropic-prior", ta.isotropic_prior, "molecules: N(0, I) coordinates instead of the fitted prior")] =
      &ta.isotropic_prior;
  t->add_option("--d-model", ta.d_model, "molecules: hidden width");
  t->add_option("--d-rank", ta.d_rank, "molecules: rank stream width");
  t->add_option("--layers", ta.layers, "molecules: message-passing layers");
  t->add_option("--n-sets", ta.n_sets, "molecules: coordinate sets");
  t->add_option("--d-pe", ta.d_pe, "molecules: positional encoding width");
  t->add_option("--hidden", ta.hidden, "c4: MLP width");
  t->add_option("--mlp-layers", ta.mlp_layers, "c4: MLP depth");

  SampleArgs sa;
  auto* s = app.add_subcommand("sample", "Draw samples from a checkpoint");
  s->add_option("--model", sa.model, "Checkpoint JSON")->required();
  s->add_option("--n", sa.n, "Number of samples (1e3 notation accepted)");
  s->add_option("--steps", sa.steps, "Euler steps")->check(CLI::PositiveNumber);
  s->add_option("--regime", sa.regime, "a (fixed ranks) or b (re-ranked)")->check(CLI::IsMember({"a", "b"}));
  s->add_option("--rerank", sa.rerank, "Regime B: predict or canonicalize")
      ->check(CLI::IsMember({"predict", "canonicalize"}));
  s->add_option("--cfg-scale", sa.cfg_scale, "Guidance weight w");
  s->add_option("--haar", sa.haar, "Post-hoc randomization: off, perm or perm-so3")
      ->check(CLI::IsMember({"off", "none", "perm", "perm-so3", "on"}));
  g_flags[s->add_flag("--isotropic-prior", sa.isotropic_prior, "Ignore the fitted coordinate prior")] = &sa.isotropic_prior;
  s->add_option("--n-atoms", sa.n_atoms, "Atoms per sample (0: training sizes)");
  s->add_option("--seed", sa.seed, "Seed");
  s->add_option("--out", sa.out, "Output directory");
  s->add_option("--format", sa.format, "xyz or sdf")->check(CLI::IsMember({"xyz", "sdf"}));

  VerifyArgs va;
  auto* v = app.add_subcommand("verify-theory", "Monte Carlo and closed-form checks on symmetric toy systems");
  v->add_option("--system", va.system, "signflip, c4, s3 or all");
  v->add_option("--n", va.n, "Monte Carlo samples (1e6 notation accepted)");
  v->add_option("--knn-cap", va.knn_cap, "Sample cap for k-NN estimators on 2-D/3-D systems");
  v->add_option("--seed", va.seed, "Seed");
  v->add_option("--out", va.out, "Report JSON");
  v->add_option("--inject-reference-offset", va.inject, "Test hook: shift the first reference")->group("");

  MetricsArgs ma;
  auto* mt = app.add_subcommand("metrics", "Stability/uniqueness of a sample directory; SVG of a training trace");
  mt->add_option("--samples", ma.samples, "Directory of .xyz/.sdf samples");
  mt->add_option("--trace", ma.trace, "Trace CSV to plot");
  mt->add_option("--out", ma.out, "Output directory");
  g_flags[mt->add_flag("--infer-bonds,!--no-infer-bonds", ma.infer_bonds, "Infer single bonds for bond-free XYZ files")] =
      &ma.infer_bonds;

  for (auto* sub : app.get_subcommands({})) {
    sub->add_option("--config", config_path, "JSON config (flat option object or a manifest)");
  }

  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    // expand --config into tokens placed before the explicit flags
    CLI::App* chosen = nullptr;
    for (auto* sub : app.get_subcommands({})) {
      if (!args.empty() && args.front() == sub->get_name()) chosen = sub;
    }
    if (chosen) {
      for (std::size_t i = 1; i < args.size(); ++i) {
        std::string path;
        if (args[i] == "--config" && i + 1 < args.size()) {
          path = args[i + 1];
        } else if (args[i].rfind("--config=", 0) == 0) {
          path = args[i].substr(9);
        }
        if (!path.empty()) {
          if (!fs::is_regular_file(path)) io_fail("cannot read config " + path);
          const auto tokens = config_tokens(chosen, path);
          args.insert(args.begin() + 1, tokens.begin(), tokens.end());
          break;
        }
      }
    }
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  } catch (const ExitError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  }

  try {
    if (c->parsed()) return cmd_canonicalize(c, ca);
    if (t->parsed()) return cmd_train(t, ta);
    if (s->parsed()) return cmd_sample(s, sa);
    if (v->parsed()) return cmd_verify(v, va);
    if (mt->parsed()) return cmd_metrics(mt, ma);
  } catch (const ExitError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kCheckFailed;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  }
  return kUsage;
}
