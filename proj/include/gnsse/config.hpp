#pragma once

// JSON experiment configuration. Top-level keys: model, noise, grid,
// ensemble, experiment. Requires nlohmann/json.

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gnsse/ensemble.hpp"

namespace gnsse {

using json = nlohmann::json;

enum class Verdict { Pass, Fail };

inline const char* to_string(Verdict v) { return v == Verdict::Pass ? "pass" : "fail"; }

/// Settings that only some subcommands use.
struct ExperimentExtras {
    std::optional<Verdict> expected_verdict;
    std::vector<double> dt_levels;
    ConvergenceMode convergence_mode = ConvergenceMode::WeakNorm;
    std::optional<double> gksl_rate;
    std::optional<CorrelationPair> eta_pair;   ///< second pair with the same alpha
    std::optional<std::pair<double, double>> order_range;
};

struct RunConfig {
    ExperimentConfig exp;
    ExperimentExtras extras;
    json source;                               ///< the parsed document, for hashing
};

namespace detail {

template <class T>
T get_or(const json& j, const char* key, T fallback)
{
    const auto it = j.find(key);
    return it == j.end() ? fallback : it->template get<T>();
}

inline const json& require(const json& j, const char* key, const std::string& where)
{
    const auto it = j.find(key);
    if (it == j.end())
        throw ConfigError(where + ": missing key '" + key + "'");
    return *it;
}

inline Component parse_component(const json& arr, const std::string& where)
{
    if (!arr.is_array())
        throw ConfigError(where + ": expected an array of kernels");
    Component c;
    for (const auto& k : arr) {
        const auto type = require(k, "type", where).get<std::string>();
        if (type == "white")
            c.kernels.emplace_back(WhiteKernel{require(k, "weight", where).get<double>()});
        else if (type == "exp")
            c.kernels.emplace_back(ExpKernel{require(k, "c", where).get<double>(), require(k, "a", where).get<double>()});
        else
            throw ConfigError(where + ": unknown kernel type '" + type + "'");
    }
    return c;
}

inline CorrelationPair parse_pair(const json& j, const std::string& where)
{
    CorrelationPair p;
    p.x = j.contains("x") ? parse_component(j["x"], where + ".x") : no_noise();
    p.y = j.contains("y") ? parse_component(j["y"], where + ".y") : no_noise();
    return p;
}

inline Complex parse_complex(const json& v)
{
    if (v.is_number())
        return {v.get<double>(), 0.0};
    if (v.is_array() && v.size() == 2)
        return {v[0].get<double>(), v[1].get<double>()};
    throw ConfigError("model: matrix entries must be numbers or [re, im] pairs");
}

inline ComplexMatrix parse_matrix(const json& j, const std::string& where)
{
    if (!j.is_array() || j.empty())
        throw ConfigError(where + ": expected a nonempty array of rows");
    const auto n = static_cast<Eigen::Index>(j.size());
    ComplexMatrix m(n, n);
    for (Eigen::Index r = 0; r < n; ++r) {
        const auto& row = j[static_cast<std::size_t>(r)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != n)
            throw ConfigError(where + ": matrix must be square");
        for (Eigen::Index c = 0; c < n; ++c)
            m(r, c) = parse_complex(row[static_cast<std::size_t>(c)]);
    }
    return m;
}

inline StateVector parse_state(const json& j, Eigen::Index dim)
{
    if (j.is_string()) {
        const auto name = j.get<std::string>();
        if (name == "ground")
            return states::basis(dim, 0);
        if (dim != 2)
            throw ConfigError("model: named states other than 'ground' need a two-level system");
        if (name == "plus")
            return states::plus();
        if (name == "up")
            return states::up();
        if (name == "down")
            return states::down();
        throw ConfigError("model: unknown state '" + name + "'");
    }
    if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != dim)
        throw ConfigError("model: psi0 length must equal the dimension");
    StateVector v(dim);
    for (Eigen::Index i = 0; i < dim; ++i)
        v(i) = parse_complex(j[static_cast<std::size_t>(i)]);
    return v;
}

inline ModelSpec parse_model(const json& j)
{
    const auto kind = require(j, "kind", "model").get<std::string>();
    const double omega = get_or(j, "omega", 1.0);
    const double g = get_or(j, "g", 1.0);
    ModelSpec m;
    if (kind == "spin_boson") {
        m = spin_boson(omega, g, j.contains("psi0") ? parse_state(j["psi0"], 2) : states::plus());
    } else if (kind == "dephasing") {
        m = dephasing(omega, g, j.contains("psi0") ? parse_state(j["psi0"], 2) : states::plus());
    } else if (kind == "qbm") {
        const auto dim = static_cast<Eigen::Index>(get_or(j, "dim", 16));
        m = qbm(omega, dim, g, j.contains("psi0") ? parse_state(j["psi0"], dim) : StateVector{});
    } else if (kind == "custom") {
        m.kind = ModelKind::Custom;
        m.omega = omega;
        m.g = g;
        m.H = parse_matrix(require(j, "H", "model"), "model.H");
        m.L = parse_matrix(require(j, "L", "model"), "model.L");
        m.psi0 = parse_state(require(j, "psi0", "model"), m.H.rows());
    } else {
        throw ConfigError("model: unknown kind '" + kind + "'");
    }
    return m;
}

inline IntegratorKind parse_integrator(const std::string& s)
{
    if (s == "em_ito")
        return IntegratorKind::EmIto;
    if (s == "heun_strat")
        return IntegratorKind::HeunStrat;
    if (s == "dephasing_exact")
        return IntegratorKind::DephasingExact;
    throw ConfigError("ensemble: unknown integrator '" + s + "'");
}

inline Verdict parse_verdict(const std::string& s)
{
    if (s == "pass")
        return Verdict::Pass;
    if (s == "fail")
        return Verdict::Fail;
    throw ConfigError("experiment: expected_verdict must be 'pass' or 'fail'");
}

}  // namespace detail

/// Parse a configuration document. Structural problems throw ConfigError;
/// the physics-level checks happen in validate_config.
inline RunConfig parse_config(const json& doc)
{
    RunConfig rc;
    rc.source = doc;
    try {
        if (!doc.is_object())
            throw ConfigError("config: top level must be an object");
        for (const auto& [key, _] : doc.items())
            if (key != "model" && key != "noise" && key != "grid" && key != "ensemble" && key != "experiment")
                throw ConfigError("config: unknown top-level key '" + key + "'");
        auto& e = rc.exp;
        e.model = detail::parse_model(detail::require(doc, "model", "config"));
        const auto& noise = detail::require(doc, "noise", "config");
        e.pair = detail::parse_pair(noise, "noise");
        e.noise.stationary_start = detail::get_or(noise, "stationary_start", true);

        const auto& grid = detail::require(doc, "grid", "config");
        try {
            e.grid = TimeGrid::make(detail::require(grid, "t_max", "grid").get<double>(),
                                    detail::require(grid, "dt", "grid").get<double>());
        } catch (const NoiseError& err) {
            throw ConfigError(err.what());
        }

        const json ens = doc.value("ensemble", json::object());
        e.n_trajectories = detail::get_or<std::size_t>(ens, "n_trajectories", 1000);
        e.master_seed = detail::get_or<std::uint64_t>(ens, "master_seed", 0);
        e.integrator = detail::parse_integrator(detail::get_or<std::string>(ens, "integrator", "em_ito"));
        e.n_snapshots = detail::get_or<std::size_t>(ens, "snapshots", 100);
        e.track_derivatives = detail::get_or(ens, "track_derivatives", false);

        const json ex = doc.value("experiment", json::object());
        e.branch.s = detail::get_or(ex, "branch_time", e.grid.t_max / 2.0);
        e.branch.continuations = detail::get_or<std::size_t>(ex, "continuations", 1000);
        e.branch.prefixes = detail::get_or<std::size_t>(ex, "prefixes", 64);
        if (ex.contains("checkpoints"))
            e.branch.checkpoint_offsets = ex["checkpoints"].get<std::vector<double>>();
        auto& x = rc.extras;
        if (ex.contains("expected_verdict"))
            x.expected_verdict = detail::parse_verdict(ex["expected_verdict"].get<std::string>());
        if (ex.contains("dt_levels"))
            x.dt_levels = ex["dt_levels"].get<std::vector<double>>();
        const auto mode = detail::get_or<std::string>(ex, "convergence_mode", "weak");
        if (mode == "weak")
            x.convergence_mode = ConvergenceMode::WeakNorm;
        else if (mode == "pathwise")
            x.convergence_mode = ConvergenceMode::PathwiseVsExact;
        else
            throw ConfigError("experiment: convergence_mode must be 'weak' or 'pathwise'");
        if (ex.contains("gksl_rate"))
            x.gksl_rate = ex["gksl_rate"].get<double>();
        if (ex.contains("order_range")) {
            const auto r = ex["order_range"].get<std::vector<double>>();
            if (r.size() != 2 || !(r[0] <= r[1]))
                throw ConfigError("experiment: order_range must be [lo, hi]");
            x.order_range = std::pair{r[0], r[1]};
        }
        if (ex.contains("eta_noise"))
            x.eta_pair = detail::parse_pair(ex["eta_noise"], "experiment.eta_noise");
    } catch (const json::exception& err) {
        throw ConfigError(std::string("config: ") + err.what());
    } catch (const ModelError& err) {
        throw ConfigError(std::string("model: ") + err.what());
    }
    return rc;
}

inline RunConfig load_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("config: cannot open '" + path + "'");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& err) {
        throw ConfigError(std::string("config: ") + err.what());
    }
    return parse_config(doc);
}

/// FNV-1a 64 over the canonical dump (sorted keys, no whitespace). Numbers
/// are printed by the JSON library's shortest round-trip formatter, so the
/// hash does not depend on the platform.
inline std::uint64_t config_hash(const json& doc)
{
    const std::string s = doc.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v)
{
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << v;
    return os.str();
}

}  // namespace gnsse
