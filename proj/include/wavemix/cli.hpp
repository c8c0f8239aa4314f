// Config-driven pipelines behind the wavemix executable.
#ifndef WAVEMIX_CLI_HPP
#define WAVEMIX_CLI_HPP

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <set>
#include <string>

#include "wavemix/diagnostics.hpp"

namespace wavemix::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

/** \brief A ConfigError that knows which key was at fault (dotted path). */
struct KeyError : ConfigError {
  std::string key;
  KeyError(std::string k, const std::string& msg) : ConfigError(k + ": " + msg), key(std::move(k)) {}
};

// ---------------------------------------------------------------------------
// Schema

namespace cli_detail {

inline json number(std::optional<double> exclusive_min = {}) {
  json s = {{"type", "number"}};
  if (exclusive_min) s["exclusiveMinimum"] = *exclusive_min;
  return s;
}
inline json integer(int minimum) { return {{"type", "integer"}, {"minimum", minimum}}; }
inline json string_enum(std::vector<std::string> values) {
  return {{"type", "string"}, {"enum", values}};
}
inline json boolean() { return {{"type", "boolean"}}; }
inline json array_of(json items, int min_items = 0, int max_items = -1) {
  json s = {{"type", "array"}, {"items", std::move(items)}, {"minItems", min_items}};
  if (max_items >= 0) s["maxItems"] = max_items;
  return s;
}
inline json object(json props, std::vector<std::string> required = {}) {
  return {{"type", "object"},
          {"properties", std::move(props)},
          {"required", required},
          {"additionalProperties", false}};
}

inline json system_properties() {
  return {{"family", string_enum({"lambda_omega"})},
          {"gamma", number()},
          {"d", integer(1)},
          {"D", array_of(number(), 1)},
          {"f_polynomial",
           array_of(object({{"target_component", integer(0)},
                            {"coefficient", number()},
                            {"exponents", array_of(integer(0), 1)}},
                           {"target_component", "coefficient", "exponents"}))}};
}

/// Keys shared by every command that needs a reaction-diffusion system and a wave train.
inline json rd_command(json extra, std::vector<std::string> required) {
  json props = system_properties();
  props["command"] = {{"type", "string"}};
  props["system"] = object(system_properties());
  props["M"] = integer(8);
  props["guess"] = object({{"omega", number()}, {"profile", array_of(array_of(number(), 8), 1)}},
                          {"omega", "profile"});
  for (auto& [key, val] : extra.items()) props[key] = val;
  required.insert(required.begin(), "command");
  return object(props, required);
}

inline json burgers_properties() {
  return {{"command", {{"type", "string"}}},
          {"alpha", number(0.0)},
          {"beta", number()},
          {"gamma", number()},
          {"d1", integer(0)},
          {"d2", integer(0)},
          {"q0", object({{"kind", string_enum({"gaussian", "gaussian_derivative", "sech"})},
                         {"amplitude", number()},
                         {"width", number(0.0)},
                         {"center", number()}})},
          {"grid", object({{"n", integer(8)}, {"length", number(0.0)}})},
          {"dt", number(0.0)}};
}

inline json phi0_schema() {
  return object({{"kind", string_enum({"zero", "gaussian_bump", "tanh_step"})},
                 {"amplitude", number()},
                 {"width", number(0.0)},
                 {"phi_minus", number()},
                 {"phi_plus", number()},
                 {"center", number()}});
}

inline json run_properties() {
  return {{"wavelengths", integer(1)},
          {"points_per_wavelength", integer(8)},
          {"T", number(0.0)},
          {"dt", number(0.0)},
          {"first_snapshot", number(0.0)},
          {"snapshot_ratio", number(1.0)},
          {"theta0", number()},
          {"wavenumber_consistent", boolean()},
          {"v0", object({{"amplitudes", array_of(number(), 1)},
                         {"width", number(0.0)},
                         {"center", number()}},
                        {"amplitudes"})}};
}

}  // namespace cli_detail

/** \brief The published configuration schema: one JSON Schema per command.
 *
 * Only a draft-07 subset is used (type, properties, required,
 * additionalProperties, enum, items, minItems, maxItems, minimum,
 * exclusiveMinimum), which is what validate() understands.
 */
inline const json& schema() {
  using namespace cli_detail;
  static const json s = [] {
    json cmds;
    cmds["wavetrain"] = rd_command({{"k", number()}}, {"k"});
    cmds["branch"] = rd_command({{"k", array_of(number(), 2, 2)}, {"steps", integer(8)}}, {"k"});
    cmds["bloch"] = rd_command({{"k", number()}, {"n_ell", integer(4)}, {"n_eigs", integer(1)}}, {"k"});

    json bp = burgers_properties();
    bp["case"] = string_enum({"i", "ii", "iii"});
    bp["T"] = array_of(number(0.0), 2);
    bp["b"] = number(0.0);
    cmds["burgers"] = object(bp, {"command", "case"});

    json rp = burgers_properties();
    rp["L"] = number(0.0);
    rp["N"] = integer(1);
    rp["scaling"] = string_enum({"nonzero_mass", "zero_mass"});
    cmds["rg"] = object(rp, {"command"});

    json sim = run_properties();
    sim["k"] = number();
    sim["phi0"] = phi0_schema();
    cmds["simulate"] = rd_command(sim, {"k"});

    json mix = run_properties();
    mix["k"] = number();
    mix["phi_d"] = number();
    mix["phi_minus"] = number();
    mix["width"] = number(0.0);
    mix["bump"] = object({{"amplitude", number()}, {"width", number(0.0)}, {"center", number()}},
                         {"amplitude"});
    mix["t_min"] = number(0.0);
    mix["t_max"] = number(0.0);
    cmds["mixing-report"] = rd_command(mix, {"k"});

    return json{{"$schema", "http://json-schema.org/draft-07/schema#"},
                {"title", "wavemix run configuration"},
                {"description", "The 'command' key selects one of the schemas under 'commands'."},
                {"commands", cmds}};
  }();
  return s;
}

inline std::string join_key(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

/// Throws KeyError naming the first offending key.
inline void validate(const json& v, const json& s, const std::string& path = "") {
  const std::string where = path.empty() ? "<root>" : path;
  const std::string type = s.value("type", "");
  if (type == "object") {
    if (!v.is_object()) throw KeyError(where, "expected an object");
    for (const auto& r : s.at("required"))
      if (!v.contains(r.get<std::string>()))
        throw KeyError(join_key(path, r.get<std::string>()), "required key is missing");
    const json& props = s.at("properties");
    for (const auto& [key, val] : v.items()) {
      if (!props.contains(key)) throw KeyError(join_key(path, key), "unknown key");
      validate(val, props.at(key), join_key(path, key));
    }
    return;
  }
  if (type == "array") {
    if (!v.is_array()) throw KeyError(where, "expected an array");
    const int n = static_cast<int>(v.size());
    if (n < s.value("minItems", 0))
      throw KeyError(where, "needs at least " + std::to_string(s.value("minItems", 0)) + " entries");
    if (s.contains("maxItems") && n > s.at("maxItems").get<int>())
      throw KeyError(where, "allows at most " + std::to_string(s.at("maxItems").get<int>()) + " entries");
    for (int i = 0; i < n; ++i) validate(v[i], s.at("items"), path + "[" + std::to_string(i) + "]");
    return;
  }
  if (type == "number" || type == "integer") {
    if (type == "integer" ? !v.is_number_integer() : !v.is_number())
      throw KeyError(where, "expected " + std::string(type == "integer" ? "an integer" : "a number"));
    const double x = v.get<double>();
    if (s.contains("minimum") && x < s.at("minimum").get<double>())
      throw KeyError(where, "must be >= " + s.at("minimum").dump());
    if (s.contains("exclusiveMinimum") && !(x > s.at("exclusiveMinimum").get<double>()))
      throw KeyError(where, "must be > " + s.at("exclusiveMinimum").dump());
    return;
  }
  if (type == "string") {
    if (!v.is_string()) throw KeyError(where, "expected a string");
    if (s.contains("enum")) {
      for (const auto& e : s.at("enum"))
        if (e == v) return;
      throw KeyError(where, "must be one of " + s.at("enum").dump());
    }
    return;
  }
  if (type == "boolean") {
    if (!v.is_boolean()) throw KeyError(where, "expected true or false");
    return;
  }
}

/// Validates a whole run configuration and returns its command.
inline std::string validate_config(const json& cfg) {
  if (!cfg.is_object()) throw KeyError("<root>", "config must be a JSON object");
  if (!cfg.contains("command")) throw KeyError("command", "required key is missing");
  if (!cfg.at("command").is_string()) throw KeyError("command", "expected a string");
  const std::string cmd = cfg.at("command").get<std::string>();
  const json& cmds = schema().at("commands");
  if (!cmds.contains(cmd)) {
    std::string names;
    for (const auto& [key, val] : cmds.items()) names += (names.empty() ? "" : ", ") + key;
    throw KeyError("command", "unknown command '" + cmd + "' (expected one of " + names + ")");
  }
  validate(cfg, cmds.at(cmd));
  return cmd;
}

// ---------------------------------------------------------------------------
// Parameter access with defaults; every value read is recorded for meta.json.

class Params {
 public:
  Params(const json& cfg, std::string path = "") : cfg_(cfg), path_(std::move(path)) {}

  bool has(const std::string& key) const { return cfg_.contains(key); }
  std::string key(const std::string& k) const { return join_key(path_, k); }

  double num(const std::string& k, double def) { return record(k, cfg_.value(k, def)); }
  double num(const std::string& k) { return record(k, cfg_.at(k).get<double>()); }
  int integer(const std::string& k, int def) { return record(k, cfg_.value(k, def)); }
  bool flag(const std::string& k, bool def) { return record(k, cfg_.value(k, def)); }
  std::string str(const std::string& k, const std::string& def) { return record(k, cfg_.value(k, def)); }
  RVec nums(const std::string& k, RVec def) {
    return record(k, cfg_.contains(k) ? cfg_.at(k).get<RVec>() : def);
  }
  /// Nested object; missing objects read as empty so their defaults apply.
  Params sub(const std::string& k) const {
    static const json empty = json::object();
    return Params(cfg_.contains(k) ? cfg_.at(k) : empty, key(k));
  }
  void put(const std::string& k, const Params& p) { resolved_[k] = p.resolved_; }
  void put(const std::string& k, json v) { resolved_[k] = std::move(v); }

  const json& raw() const { return cfg_; }
  const json& resolved() const { return resolved_; }

 private:
  template <class T>
  T record(const std::string& k, T v) {
    resolved_[k] = v;
    return v;
  }
  const json& cfg_;
  std::string path_;
  json resolved_ = json::object();
};

// ---------------------------------------------------------------------------
// Output helpers

inline std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw Error("cannot write " + p.string());
  out << std::setprecision(17);
  return out;
}

inline void write_json(const json& j, const fs::path& p) { open_out(p) << j.dump(2) << "\n"; }

/// Context shared by the command runners.
struct Run {
  Params& params;
  fs::path out;
  std::ostream& log;
  bool verbose = false;

  void stage(const std::string& line) const { log << line << "\n"; }
  void warnings(const Warnings& w) const {
    if (verbose)
      for (const auto& s : w) log << "  warning: " << s << "\n";
  }
};

inline std::string fmt(double v, int prec = 6) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// System and wave-train setup

inline RDSystem resolve_system(Params& p) {
  static const std::vector<std::string> keys = {"family", "gamma", "d", "D", "f_polynomial"};
  json sys_cfg = json::object();
  if (p.has("system")) {
    for (const auto& k : keys)
      if (p.has(k)) throw KeyError(k, "give system keys either at top level or under 'system', not both");
    sys_cfg = p.raw().at("system");
  } else {
    for (const auto& k : keys)
      if (p.has(k)) sys_cfg[k] = p.raw().at(k);
  }
  if (sys_cfg.empty() || (!sys_cfg.contains("d") && !sys_cfg.contains("family"))) {
    if (sys_cfg.contains("D") || sys_cfg.contains("f_polynomial"))
      throw KeyError("d", "polynomial systems need d, D and f_polynomial");
    sys_cfg["family"] = "lambda_omega";
  }
  if (sys_cfg.contains("family")) sys_cfg["gamma"] = sys_cfg.value("gamma", 0.0);
  for (const auto& k : {"d", "D", "f_polynomial"})
    if (!sys_cfg.contains("family") && !sys_cfg.contains(k))
      throw KeyError(k, "polynomial systems need d, D and f_polynomial");
  p.put("system", sys_cfg);
  return load_system(sys_cfg);
}

inline WaveTrain resolve_wave_train(Params& p, const RDSystem& sys, double k) {
  if (p.has("guess")) {
    const json& g = p.raw().at("guess");
    const auto rows = g.at("profile").get<std::vector<RVec>>();
    if (static_cast<int>(rows.size()) != sys.d)
      throw KeyError("guess.profile", "needs one row per component (d = " + std::to_string(sys.d) + ")");
    const std::size_t M = rows[0].size();
    for (const auto& r : rows)
      if (r.size() != M) throw KeyError("guess.profile", "rows must have equal length");
    Field guess(PeriodicGrid(M, 2.0 * pi), rows.size());
    for (std::size_t c = 0; c < rows.size(); ++c)
      for (std::size_t i = 0; i < M; ++i) guess(c, i) = rows[c][i];
    p.put("guess", g);
    return solve_wave_train(sys, k, guess, g.at("omega").get<double>());
  }
  if (!sys.lambda_omega)
    throw KeyError("guess", "systems other than lambda_omega need an initial guess {omega, profile}");
  const int M = p.integer("M", 64);
  return solve_wave_train(sys, k, lambda_omega_profile(k, M), sys.gamma * (1.0 - k * k));
}

// ---------------------------------------------------------------------------
// Commands

inline void write_profile_csv(const WaveTrain& wt, const fs::path& path) {
  auto out = open_out(path);
  out << "theta";
  for (std::size_t c = 0; c < wt.profile.components; ++c) out << ",u" << c;
  out << "\n";
  for (std::size_t i = 0; i < wt.M(); ++i) {
    out << wt.profile.grid.x(i);
    for (std::size_t c = 0; c < wt.profile.components; ++c) out << "," << wt.profile(c, i).real();
    out << "\n";
  }
}

inline void cmd_wavetrain(Run& r) {
  RDSystem sys = resolve_system(r.params);
  const double k = r.params.num("k");
  WaveTrain wt = resolve_wave_train(r.params, sys, k);
  write_profile_csv(wt, r.out / "profile.csv");
  write_json({{"k", wt.k},
              {"omega", wt.omega},
              {"c_p", wt.c_p()},
              {"residual", wt.residual},
              {"M", wt.M()},
              {"components", wt.profile.components},
              {"newton_residuals", wt.newton_residuals},
              {"system", sys.name}},
             r.out / "wavetrain.json");
  r.stage("wavetrain: k=" + fmt(k) + " omega=" + fmt(wt.omega, 12) + " residual=" + fmt(wt.residual, 3) +
          " newton_steps=" + std::to_string(wt.newton_steps.size()));
}

inline void cmd_branch(Run& r) {
  RDSystem sys = resolve_system(r.params);
  const RVec kr = r.params.nums("k", {});
  if (!(kr[0] < kr[1])) throw KeyError("k", "needs k_min < k_max");
  const int steps = r.params.integer("steps", 17);
  const double dk = (kr[1] - kr[0]) / (steps - 1);
  const double k_mid = kr[0] + dk * ((steps - 1) / 2);
  WaveTrain seed = resolve_wave_train(r.params, sys, k_mid);
  // Two extra samples per side give the quartic fit neighbours at the ends.
  DispersionBranch br = continue_branch(sys, kr[0] - 2 * dk, kr[1] + 2 * dk, steps + 4, seed);
  auto out = open_out(r.out / "branch.csv");
  out << "k,omega,c_g,beta,residual_norm\n";
  int rows = 0;
  for (std::size_t i = 0; i < br.size(); ++i) {
    const double k = br.k_samples[i];
    if (k < kr[0] - 1e-9 * dk || k > kr[1] + 1e-9 * dk) continue;
    const WaveTrain& wt = *br.trains[i];
    const double c_g = dk_profile(sys, wt).dk_omega;
    const bool inner = i >= 2 && i + 2 < br.size();
    const double beta = inner ? dispersion_derivatives(br, k).beta : std::nan("");
    out << k << "," << wt.omega << "," << c_g << "," << beta << "," << wt.residual << "\n";
    ++rows;
  }
  if (rows < steps) {
    std::ostringstream os;
    os << "branch stops at k in [" << br.k_reached_min << ", " << br.k_reached_max << "]";
    throw ConvergenceError(os.str());
  }
  r.stage("branch: " + std::to_string(rows) + " samples on [" + fmt(kr[0]) + ", " + fmt(kr[1]) + "]" +
          (br.truncated ? " (extension truncated)" : ""));
}

inline void cmd_bloch(Run& r) {
  RDSystem sys = resolve_system(r.params);
  const double k = r.params.num("k");
  const int n_ell = r.params.integer("n_ell", 64);
  const int n_eigs = r.params.integer("n_eigs", 8);
  WaveTrain wt = resolve_wave_train(r.params, sys, k);
  r.stage("wavetrain: k=" + fmt(k) + " omega=" + fmt(wt.omega, 12) + " residual=" + fmt(wt.residual, 3));

  RVec grid = symmetric_grid(0.02, 4);
  RVec bz = brillouin_grid(k, static_cast<std::size_t>(n_ell));
  grid.insert(grid.end(), bz.begin(), bz.end());
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end(), [](double a, double b) { return std::abs(a - b) < 1e-12; }),
             grid.end());
  BlochEigenData data = compute_spectrum(sys, wt, grid, n_eigs);
  StabilityReport rep = verify_hypothesis1(data);

  auto out = open_out(r.out / "spectrum.csv");
  out << "ell,j,re_lambda,im_lambda\n";
  for (std::size_t q = 0; q < data.size(); ++q) {
    const cplx l1 = data.lambda1(q);
    out << data.ell[q] << ",1," << l1.real() << "," << l1.imag() << "\n";
    // The critical eigenvalue is also in the list; skip the closest copy once.
    const CVec& ev = data.eigenvalues[q];
    std::size_t skip = 0;
    for (std::size_t e = 1; e < ev.size(); ++e)
      if (std::abs(ev[e] - l1) < std::abs(ev[skip] - l1)) skip = e;
    int j = 2;
    for (std::size_t e = 0; e < ev.size(); ++e) {
      if (e == skip) continue;
      out << data.ell[q] << "," << j++ << "," << ev[e].real() << "," << ev[e].imag() << "\n";
    }
  }
  json viol = json::array();
  for (const auto& v : rep.violations)
    viol.push_back({{"j", v.j}, {"ell", v.ell}, {"re_lambda", v.lambda.real()}, {"im_lambda", v.lambda.imag()}});
  write_json({{"stable", rep.stable},
              {"sigma0", rep.sigma0},
              {"ell0", rep.ell0},
              {"alpha0", rep.alpha0},
              {"ell1", rep.ell1},
              {"alpha", data.alpha},
              {"violations", viol},
              {"warnings", rep.warnings}},
             r.out / "stability.json");
  r.warnings(rep.warnings);
  r.stage(std::string("bloch: ") + (rep.stable ? "stable" : "unstable") + " alpha=" + fmt(data.alpha) +
          " sigma0=" + fmt(rep.sigma0, 4) + " alpha0=" + fmt(rep.alpha0, 4) +
          " violations=" + std::to_string(rep.violations.size()));
}

inline BurgersProblem resolve_burgers(Params& p) {
  BurgersProblem bp{p.num("alpha", 1.0), p.num("beta", 0.0), p.num("gamma", 0.0), p.integer("d1", 0),
                    p.integer("d2", 0)};
  bp.validate();
  return bp;
}

inline Field resolve_q0(Params& p, const std::string& def_kind) {
  Params g = p.sub("grid");
  const PeriodicGrid grid(static_cast<std::size_t>(g.integer("n", 2048)), g.num("length", 400.0));
  p.put("grid", g);
  Params q = p.sub("q0");
  const std::string kind = q.str("kind", def_kind);
  const double def_amp = kind == "gaussian" ? 1.0 / std::sqrt(pi) : 1.0;
  const double A = q.num("amplitude", def_amp), w = q.num("width", 1.0), c = q.num("center", 0.0);
  p.put("q0", q);
  if (kind == "gaussian")
    return line_field(grid, [=](double X) { return A * std::exp(-(X - c) * (X - c) / w); });
  if (kind == "gaussian_derivative")
    return line_field(grid, [=](double X) { return A * (X - c) * std::exp(-(X - c) * (X - c) / w); });
  return line_field(grid, [=](double X) { return A / std::cosh((X - c) / w); });
}

inline void cmd_burgers(Run& r) {
  BurgersProblem bp = resolve_burgers(r.params);
  const std::string which = r.params.str("case", "ii");
  const Prop1Case pc = which == "i" ? Prop1Case::i : which == "ii" ? Prop1Case::ii : Prop1Case::iii;
  Field q0 = resolve_q0(r.params, pc == Prop1Case::i ? "gaussian_derivative" : "gaussian");
  const RVec T = r.params.nums("T", {10, 25, 50, 100, 200, 400});
  const double dt = r.params.num("dt", 0.01);
  const double b = r.params.num("b", 0.1);
  ErrorSeries es = verify_prop1(pc, bp, q0, T, dt, b);
  auto out = open_out(r.out / "burgers_error.csv");
  out << "T,sup_err,weighted_err,fitted_slope_so_far\n";
  for (const auto& row : es.rows)
    out << row.T << "," << row.sup_err << "," << row.weighted_err << "," << row.fitted_slope_so_far << "\n";
  r.stage("burgers: case " + which + " sup_err(T=" + fmt(es.rows.back().T) + ")=" + fmt(es.rows.back().sup_err, 4) +
          " slope=" + fmt(es.slope(), 4));
}

inline void cmd_rg(Run& r) {
  BurgersProblem bp = resolve_burgers(r.params);
  const std::string sc = r.params.str("scaling", "nonzero_mass");
  const ScalingKind kind = sc == "zero_mass" ? ScalingKind::zero_mass : ScalingKind::nonzero_mass;
  Field q0 = resolve_q0(r.params, kind == ScalingKind::zero_mass ? "gaussian_derivative" : "gaussian");
  const double L = r.params.num("L", 2.0);
  const int N = r.params.integer("N", 6);
  const double dt = r.params.num("dt", 0.01);
  RenormSequence rs = rg_iterate(bp, q0, L, N, kind, dt);
  auto out = open_out(r.out / "rg.csv");
  out << "n,distance,ratio,mass\n";
  for (std::size_t n = 0; n < rs.distances.size(); ++n) {
    out << n << "," << rs.distances[n] << ",";
    if (n >= 1 && n - 1 < rs.ratios.size()) out << rs.ratios[n - 1];
    else out << "nan";
    out << "," << (n < rs.masses.size() ? rs.masses[n] : std::nan("")) << "\n";
  }
  r.stage("rg: " + std::to_string(N) + " steps, L=" + fmt(L) + ", last distance " + fmt(rs.distances.back(), 4));
}

/// Mixing experiment from the shared run keys; phi0 has been filled in by the caller.
inline MixingExperiment resolve_experiment(Params& p, const RDSystem& sys, const WaveTrain& wt,
                                           InitialDataSpec init) {
  MixingExperiment exp{sys, wt, init};
  exp.wavelengths = static_cast<std::size_t>(p.integer("wavelengths", 256));
  exp.points_per_wavelength = static_cast<std::size_t>(p.integer("points_per_wavelength", 16));
  exp.T_final = p.num("T", 100.0);
  exp.dt = p.num("dt", 0.05);
  exp.first_snapshot = p.num("first_snapshot", 1.0);
  exp.snapshot_ratio = p.num("snapshot_ratio", std::sqrt(2.0));
  exp.initial.theta0 = p.num("theta0", 0.0);
  exp.initial.wavenumber_consistent = p.flag("wavenumber_consistent", true);
  if (p.has("v0")) {
    Params v = p.sub("v0");
    exp.initial.v0_amplitudes = v.nums("amplitudes", {});
    if (static_cast<int>(exp.initial.v0_amplitudes.size()) != sys.d)
      throw KeyError("v0.amplitudes", "needs one amplitude per component");
    exp.initial.v0_width = v.num("width", 1.0);
    exp.initial.v0_center = v.num("center", std::nan(""));
    p.put("v0", v);
  }
  return exp;
}

inline Trajectory run_and_report(Run& r, const MixingExperiment& exp) {
  Trajectory traj = run_mixing_experiment(exp);
  const auto& m = traj.meta;
  r.stage("simulate: " + std::to_string(traj.grid.n_points) + " points, " + std::to_string(traj.size()) +
          " snapshots to t=" + fmt(traj.times.back()) + " c_g=" + fmt(m.c_g) + " alpha=" + fmt(m.alpha) +
          " beta=" + fmt(m.beta) + (m.stopped_early ? " (stopped early)" : ""));
  r.warnings(m.warnings);
  return traj;
}

inline void cmd_simulate(Run& r) {
  RDSystem sys = resolve_system(r.params);
  const double k = r.params.num("k");
  WaveTrain wt = resolve_wave_train(r.params, sys, k);
  Params ph = r.params.sub("phi0");
  InitialDataSpec init;
  const std::string kind = ph.str("kind", "zero");
  init.phi0_kind = kind == "gaussian_bump" ? PhaseKind::gaussian_bump
                   : kind == "tanh_step"   ? PhaseKind::tanh_step
                                           : PhaseKind::zero;
  init.amplitude = ph.num("amplitude", 0.0);
  init.width = ph.num("width", 2.0);
  init.phi_minus = ph.num("phi_minus", 0.0);
  init.phi_plus = ph.num("phi_plus", 0.0);
  init.center = ph.num("center", std::nan(""));
  r.params.put("phi0", ph);
  MixingExperiment exp = resolve_experiment(r.params, sys, wt, init);
  Trajectory traj = run_and_report(r, exp);
  write_trajectory(traj, r.out / "trajectory");
}

inline void write_fronts_csv(const PhaseField& pf, const AsymptoticProfile& prof, double c_g,
                             const fs::path& path) {
  auto out = open_out(path);
  out << "t,x,X,phi,q,phi_profile\n";
  for (std::size_t s = 0; s < pf.size(); ++s) {
    const double t = pf.times[s];
    FramePoints fp = frame_points(pf, c_g, t);
    RVec theory = profile_eval(prof, fp.X, t + pf.meta.clock_offset);
    for (std::size_t j = 0; j < fp.index.size(); ++j) {
      const std::size_t i = fp.index[j];
      out << t << "," << pf.grid.x(i) << "," << fp.X[j] << "," << pf.phi[s][i] << "," << pf.q[s][i] << ","
          << theory[j] << "\n";
    }
  }
}

inline void cmd_mixing_report(Run& r) {
  RDSystem sys = resolve_system(r.params);
  const double k = r.params.num("k");
  const bool step = r.params.has("phi_d");
  if (step == r.params.has("bump")) throw KeyError("phi_d", "give exactly one of phi_d (step) or bump");
  WaveTrain wt = resolve_wave_train(r.params, sys, k);
  r.stage("wavetrain: k=" + fmt(k) + " omega=" + fmt(wt.omega, 12) + " residual=" + fmt(wt.residual, 3));

  InitialDataSpec init;
  if (step) {
    init.phi0_kind = PhaseKind::tanh_step;
    init.phi_minus = r.params.num("phi_minus", 0.0);
    init.phi_plus = init.phi_minus + r.params.num("phi_d");
    init.width = r.params.num("width", 2.0);
  } else {
    Params b = r.params.sub("bump");
    init.phi0_kind = PhaseKind::gaussian_bump;
    init.amplitude = b.num("amplitude");
    init.width = b.num("width", 2.0);
    init.center = b.num("center", std::nan(""));
    r.params.put("bump", b);
  }
  MixingExperiment exp = resolve_experiment(r.params, sys, wt, init);
  const double t_min = r.params.num("t_min", 10.0);
  const double t_max = r.params.num("t_max", exp.T_final);
  Trajectory traj = run_and_report(r, exp);
  const auto& m = traj.meta;

  PhaseField pf = extract_phase(traj, wt);
  AsymptoticProfile prof;
  double phi_lim = std::nan("");
  if (step) {
    prof = mixing_profile(m);
  } else {
    phi_lim = fit_phi_lim(pf, pf.size() - 1);
    prof.kind = ProfileKind::gaussian;
    prof.alpha = m.alpha;
    prof.A = phi_lim;
  }
  DiagnosticSeries ser = compare_to_profile(pf, prof, m.c_g, CompareKind::phase);
  write_error_csv(ser, r.out / "error.csv");
  RateFit fit = fit_decay_rate(ser, t_min, t_max);
  json rate = rate_to_json(fit);
  rate["profile"] = step ? (prof.kind == ProfileKind::erf_phase ? "erf" : "logerf") : "gaussian";
  rate["clock_offset"] = m.clock_offset;
  if (!step) rate["phi_lim"] = phi_lim;
  write_json(rate, r.out / "rate.json");

  FourierCheck mass = renormalized_fourier_check(pf, m.alpha, FourierTarget::mass_conservation);
  FourierCheck shape = renormalized_fourier_check(pf, m.alpha, FourierTarget::uc_profile);
  {
    auto out = open_out(r.out / "fourier.csv");
    out << "t,mass,correlation,amplitude_re,amplitude_im\n";
    for (std::size_t s = 0; s < pf.size(); ++s)
      out << pf.times[s] << "," << mass.mass[s] << "," << shape.correlation[s] << "," << shape.amplitude[s].real()
          << "," << shape.amplitude[s].imag() << "\n";
  }
  write_fronts_csv(pf, prof, m.c_g, r.out / "fronts.csv");
  r.stage("mixing-report: sup_err(t=" + fmt(ser.times.back()) + ")=" + fmt(ser.sup_err.back(), 4) +
          " slope=" + fmt(fit.slope, 4) + " over [" + fmt(fit.t_lo) + ", " + fmt(fit.t_hi) + "]" +
          (step ? "" : " phi_lim=" + fmt(phi_lim, 4)));
}

// ---------------------------------------------------------------------------
// Entry point

struct RunOptions {
  int threads = 1;
  bool verbose = false;
};

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const InvalidField*>(&e)) return 3;
  if (dynamic_cast<const json::exception*>(&e)) return 3;
  if (dynamic_cast<const RegimeError*>(&e) || dynamic_cast<const ConvergenceError*>(&e)) return 2;
  return 1;
}

inline std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const CommensurabilityError*>(&e)) return "CommensurabilityError";
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const json::exception*>(&e)) return "ConfigError";
  if (dynamic_cast<const InvalidField*>(&e)) return "InvalidField";
  if (dynamic_cast<const DegenerateGuess*>(&e)) return "DegenerateGuess";
  if (dynamic_cast<const RegimeError*>(&e)) return "RegimeError";
  if (dynamic_cast<const InstabilityError*>(&e)) return "InstabilityError";
  if (dynamic_cast<const ConvergenceError*>(&e)) return "ConvergenceError";
  return "InternalError";
}

/// Writes errors.json and returns the exit code.
inline int report_error(const std::exception& e, const fs::path& out, std::ostream& log) {
  const int code = exit_code_for(e);
  json err = {{"error", error_kind(e)}, {"message", e.what()}, {"key", nullptr}, {"exit_code", code}};
  if (auto* ke = dynamic_cast<const KeyError*>(&e)) err["key"] = ke->key;
  try {
    fs::create_directories(out);
    write_json(err, out / "errors.json");
  } catch (const std::exception&) {
  }
  log << "error: " << e.what() << "\n";
  return code;
}

/** \brief Validates cfg, runs its command into out and returns the exit status.
 *
 * 0 on success, 2 for regime or convergence errors, 3 for config errors.
 * meta.json is always written; errors.json only on failure.
 */
inline int run(const json& cfg, const fs::path& out, const RunOptions& opt, std::ostream& log) {
  json meta = {{"config", cfg}, {"seed", 0}, {"threads", opt.threads}};
  Params params(cfg);
  auto finish = [&](const std::string& status) {
    meta["resolved"] = params.resolved();
    meta["status"] = status;
    try {
      fs::create_directories(out);
      write_json(meta, out / "meta.json");
    } catch (const std::exception&) {
    }
  };
  try {
    const std::string cmd = validate_config(cfg);
    meta["command"] = cmd;
    params.put("command", cmd);
    fs::create_directories(out);
    Run r{params, out, log, opt.verbose};
    if (cmd == "wavetrain") cmd_wavetrain(r);
    else if (cmd == "branch") cmd_branch(r);
    else if (cmd == "bloch") cmd_bloch(r);
    else if (cmd == "burgers") cmd_burgers(r);
    else if (cmd == "rg") cmd_rg(r);
    else if (cmd == "simulate") cmd_simulate(r);
    else cmd_mixing_report(r);
  } catch (const std::exception& e) {
    finish("error");
    return report_error(e, out, log);
  }
  finish("ok");
  return 0;
}

}  // namespace wavemix::cli

#endif
