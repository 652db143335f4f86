#pragma once

// CSV and manifest output. Every floating-point field is printed with 17
// significant digits so values round-trip exactly.

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gnsse/config.hpp"
#include "gnsse/ensemble.hpp"
#include "gnsse/me_residual.hpp"

namespace gnsse {

inline constexpr const char* kVersion = "0.1.0";

inline std::string fmt(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

class CsvWriter {
public:
    explicit CsvWriter(const std::string& path) : out_(path)
    {
        if (!out_)
            throw std::runtime_error("cannot write " + path);
    }

    void header(const std::vector<std::string>& cols) { row(cols); }

    void row(const std::vector<std::string>& cells)
    {
        for (std::size_t i = 0; i < cells.size(); ++i)
            out_ << (i ? "," : "") << cells[i];
        out_ << '\n';
    }

private:
    std::ofstream out_;
};

inline void write_ensemble_csv(const std::string& path, const EnsembleStats& st)
{
    const auto d = st.rho_raw.empty() ? 0 : st.rho_raw[0].rows();
    std::vector<std::string> cols{"t", "mean_norm_sq", "se_norm_sq"};
    for (const char* part : {"rho_re_", "rho_im_"})
        for (Eigen::Index i = 0; i < d; ++i)
            for (Eigen::Index j = 0; j < d; ++j)
                cols.push_back(part + std::to_string(i) + std::to_string(j));
    cols.push_back("raw_trace");
    CsvWriter w(path);
    w.header(cols);
    for (std::size_t k = 0; k < st.times.size(); ++k) {
        std::vector<std::string> r{fmt(st.times[k]), fmt(st.mean_norm_sq[k]), fmt(st.se_norm_sq[k])};
        for (Eigen::Index i = 0; i < d; ++i)
            for (Eigen::Index j = 0; j < d; ++j)
                r.push_back(fmt(st.rho[k](i, j).real()));
        for (Eigen::Index i = 0; i < d; ++i)
            for (Eigen::Index j = 0; j < d; ++j)
                r.push_back(fmt(st.rho[k](i, j).imag()));
        r.push_back(fmt(st.raw_trace[k]));
        w.row(r);
    }
}

inline void write_branching_csv(const std::string& path, const BranchingReport& rep)
{
    CsvWriter w(path);
    w.header({"prefix", "t", "norm_sq_s", "cond_mean", "se", "z", "oracle", "z_oracle", "continuations", "aborted"});
    for (const auto& pr : rep.prefixes) {
        for (const auto& cr : pr.checkpoints) {
            w.row({std::to_string(pr.index), fmt(cr.t), fmt(pr.norm_s), fmt(cr.mean), fmt(cr.se), fmt(cr.z),
                   cr.oracle ? fmt(*cr.oracle) : "", cr.z_oracle ? fmt(*cr.z_oracle) : "",
                   std::to_string(pr.n_continuations), std::to_string(pr.n_aborted)});
        }
    }
}

inline json branching_json(const BranchingReport& rep)
{
    json j{{"branch_time", rep.s},
           {"checkpoints", rep.checkpoint_times},
           {"prefixes", rep.prefixes.size()},
           {"n_z", rep.n_z},
           {"n_exceed", rep.n_exceed},
           {"fraction_exceed", rep.fraction_exceed},
           {"binomial_p", rep.binomial_p},
           {"rms_z", rep.rms_z},
           {"mean_abs_z", rep.mean_abs_z},
           {"max_abs_z", rep.max_abs_z},
           {"verdict", rep.pass ? "pass" : "fail"}};
    if (rep.oracle_available)
        j["oracle"] = {{"n", rep.oracle_n}, {"exceed", rep.oracle_exceed}, {"max_abs_z", rep.oracle_max_abs_z}};
    return j;
}

inline void write_comparison_csv(const std::string& path, const StateComparison& cmp)
{
    CsvWriter w(path);
    w.header({"t", "trace_distance", "envelope"});
    for (std::size_t k = 0; k < cmp.times.size(); ++k)
        w.row({fmt(cmp.times[k]), fmt(cmp.distance[k]), fmt(cmp.envelope[k])});
}

inline json comparison_json(const StateComparison& cmp)
{
    return {{"max_trace_distance", cmp.max_distance},
            {"max_ratio", cmp.max_ratio},
            {"verdict", cmp.pass ? "pass" : "fail"}};
}

inline void write_convergence_csv(const std::string& path, const ConvergenceReport& rep)
{
    CsvWriter w(path);
    w.header({"dt", "mean_f", "se_f", "error", "se_error"});
    for (const auto& r : rep.rows)
        w.row({fmt(r.dt), fmt(r.mean_f), fmt(r.se_f), fmt(r.error), fmt(r.se_error)});
}

inline void write_me_residual_csv(const std::string& path, const MeResidualReport& rep)
{
    CsvWriter w(path);
    w.header({"t", "max_abs_residual", "max_ratio"});
    for (const auto& p : rep.points)
        w.row({fmt(p.t), fmt(p.max_abs_residual), fmt(p.max_ratio)});
}

struct RunManifest {
    std::uint64_t config_hash = 0;
    std::uint64_t master_seed = 0;
    double wall_time_s = 0.0;
    std::string kind;
    json verdicts = json::object();
    std::optional<Verdict> expected_verdict;
};

inline void write_manifest(const std::string& path, const RunManifest& m)
{
    json j{{"config_hash", hex64(m.config_hash)},
           {"master_seed", m.master_seed},
           {"version", kVersion},
           {"wall_time_s", m.wall_time_s},
           {"experiment_kind", m.kind},
           {"verdicts", m.verdicts}};
    j["expected_verdict"] = m.expected_verdict ? json(to_string(*m.expected_verdict)) : json(nullptr);
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("cannot write " + path);
    out << j.dump(2) << '\n';
}

inline void write_json(const std::string& path, const json& j)
{
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("cannot write " + path);
    out << j.dump(2) << '\n';
}

}  // namespace gnsse
