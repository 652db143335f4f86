// gnsse: batch front end for the simulator.
//
// Exit codes: 0 success or expected verdict, 2 configuration/validation
// error, 3 verdict differs from expected_verdict, 4 more than 1% of
// trajectories aborted.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "gnsse/config.hpp"
#include "gnsse/ensemble.hpp"
#include "gnsse/io.hpp"
#include "gnsse/me_residual.hpp"

namespace fs = std::filesystem;
using namespace gnsse;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitVerdict = 3;
constexpr int kExitAborts = 4;

struct Options {
    std::string config;
    std::string out = ".";
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> workers;
};

struct Run {
    RunConfig rc;
    RunManifest manifest;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    fs::path out;

    std::string path(const std::string& name) const { return (out / name).string(); }

    int finish(const std::string& kind, std::optional<bool> pass, int abort_code = kExitOk)
    {
        manifest.kind = kind;
        manifest.config_hash = config_hash(rc.source);
        manifest.master_seed = rc.exp.master_seed;
        manifest.expected_verdict = rc.extras.expected_verdict;
        manifest.wall_time_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        int code = abort_code;
        if (code == kExitOk && pass) {
            const Verdict got = *pass ? Verdict::Pass : Verdict::Fail;
            const Verdict want = rc.extras.expected_verdict.value_or(Verdict::Pass);
            manifest.verdicts["verdict"] = to_string(got);
            if (got != want)
                code = kExitVerdict;
            std::cout << kind << ": verdict " << to_string(got) << " (expected " << to_string(want) << ")\n";
        }
        manifest.verdicts["exit_code"] = code;
        write_manifest(path("manifest.json"), manifest);
        return code;
    }
};

Run prepare(const Options& o)
{
    Run r;
    r.rc = load_config(o.config);
    if (o.seed) {
        r.rc.exp.master_seed = *o.seed;
        r.rc.source["ensemble"]["master_seed"] = *o.seed;
    }
    if (o.workers)
        r.rc.exp.workers = *o.workers;
    r.out = o.out;
    fs::create_directories(r.out);
    return r;
}

int cmd_simulate(const Options& o)
{
    auto r = prepare(o);
    validate_config(r.rc.exp);
    const auto st = run_ensemble(r.rc.exp);
    write_ensemble_csv(r.path("ensemble_stats.csv"), st);
    r.manifest.verdicts["trajectories"] = st.n_trajectories;
    r.manifest.verdicts["aborted"] = st.n_aborted;
    std::cout << "simulate: " << st.n_trajectories << " trajectories, " << st.n_aborted << " aborted\n";
    return r.finish("simulate", std::nullopt, st.aborts_acceptable() ? kExitOk : kExitAborts);
}

int cmd_martingale(const Options& o)
{
    auto r = prepare(o);
    validate_config(r.rc.exp, true);
    const auto rep = martingale_branch_test(r.rc.exp);
    write_branching_csv(r.path("branching.csv"), rep);
    const auto j = branching_json(rep);
    write_json(r.path("branching.json"), j);
    r.manifest.verdicts["martingale"] = j;
    std::size_t done = 0, aborted = 0;
    for (const auto& p : rep.prefixes) {
        done += p.n_continuations + (p.prefix_aborted ? 0 : 1);
        aborted += p.n_aborted + (p.prefix_aborted ? 1 : 0);
    }
    std::cout << "martingale-test: " << rep.n_exceed << "/" << rep.n_z << " |z| > 3, binomial p = " << rep.binomial_p
              << ", rms z = " << rep.rms_z << "\n";
    const bool too_many = static_cast<double>(aborted) > kMaxAbortFraction * static_cast<double>(done + aborted);
    return r.finish("martingale-test", rep.pass, too_many ? kExitAborts : kExitOk);
}

int cmd_validate_noise(const Options& o)
{
    auto r = prepare(o);
    const auto rep = validate_pair(r.rc.exp.pair);
    const json j{{"accepted", rep.accepted},
                 {"violation", rep.violation},
                 {"kappa", rep.kappa},
                 {"residual", rep.residual},
                 {"probe_psd", rep.probe_psd},
                 {"probe_min_eigenvalue", rep.probe_min_eigenvalue}};
    write_json(r.path("noise_validation.json"), j);
    CsvWriter w(r.path("noise_validation.csv"));
    w.header({"accepted", "kappa", "residual", "probe_min_eigenvalue"});
    w.row({rep.accepted ? "1" : "0", fmt(rep.kappa), fmt(rep.residual), fmt(rep.probe_min_eigenvalue)});
    r.manifest.verdicts["noise"] = j;
    std::cout << "validate-noise: " << (rep.accepted ? "accepted" : "rejected: " + rep.violation) << ", kappa = "
              << rep.kappa << ", residual = " << rep.residual << "\n";
    const int code = r.finish("validate-noise", rep.accepted);
    // A rejected pair that was not expected to be rejected is a validation error.
    return code == kExitVerdict && !rep.accepted ? kExitConfig : code;
}

int cmd_compare_gksl(const Options& o)
{
    auto r = prepare(o);
    auto& e = r.rc.exp;
    const bool dephasing = e.model.kind == ModelKind::Dephasing;
    if (dephasing)
        e.track_derivatives = true;
    validate_config(e);
    const auto g = compare_gksl(e, r.rc.extras.gksl_rate);
    write_comparison_csv(r.path("gksl_comparison.csv"), g.cmp);
    write_ensemble_csv(r.path("ensemble_stats.csv"), g.stats);
    json j{{"gksl_rate", g.rate}, {"gksl", comparison_json(g.cmp)}};
    std::cout << "compare-gksl: rate " << g.rate << ", max trace distance " << g.cmp.max_distance
              << ", max distance/envelope " << g.cmp.max_ratio << "\n";
    if (dephasing) {
        std::vector<ComplexMatrix> ref;
        for (double t : g.stats.times)
            ref.push_back(dephasing_reduced_state(e.model, e.pair, t));
        const auto oc = compare_states(g.stats, ref);
        write_comparison_csv(r.path("oracle_comparison.csv"), oc);
        j["dephasing_oracle"] = comparison_json(oc);
        try {
            const auto me = me_residual_check(g.stats, e.model, e.pair);
            write_me_residual_csv(r.path("me_residual.csv"), me);
            j["me_residual"] = {{"max_ratio", me.max_ratio}, {"verdict", me.pass ? "pass" : "fail"}};
        } catch (const OracleError& err) {
            j["me_residual"] = {{"skipped", err.what()}};
        }
    }
    if (r.rc.extras.eta_pair) {
        ExperimentConfig other = e;
        other.pair = *r.rc.extras.eta_pair;
        other.track_derivatives = false;
        validate_config(other);
        ExperimentConfig first = e;
        first.track_derivatives = false;
        const auto eta = eta_independence_check(first, other);
        write_comparison_csv(r.path("eta_comparison.csv"), eta.between);
        j["eta_independence"] = comparison_json(eta.between);
        if (eta.oracle_a && eta.oracle_b) {
            j["eta_independence"]["oracle_a_max_ratio"] = eta.oracle_a->max_ratio;
            j["eta_independence"]["oracle_b_max_ratio"] = eta.oracle_b->max_ratio;
        }
        j["eta_independence"]["verdict"] = eta.pass ? "pass" : "fail";
    }
    write_json(r.path("gksl_comparison.json"), j);
    r.manifest.verdicts["compare_gksl"] = j;
    return r.finish("compare-gksl", g.cmp.pass, g.stats.aborts_acceptable() ? kExitOk : kExitAborts);
}

int cmd_convergence(const Options& o)
{
    auto r = prepare(o);
    if (r.rc.extras.dt_levels.empty())
        throw ConfigError("experiment: convergence needs dt_levels");
    const auto rep = convergence_study(r.rc.exp, r.rc.extras.dt_levels, r.rc.extras.convergence_mode);
    write_convergence_csv(r.path("convergence.csv"), rep);
    json j{{"integrator", to_string(rep.integrator)},
           {"mode", rep.mode == ConvergenceMode::WeakNorm ? "weak" : "pathwise"},
           {"fitted_order", rep.fitted_order}};
    std::optional<bool> pass;
    if (const auto& range = r.rc.extras.order_range) {
        pass = rep.fitted_order >= range->first && rep.fitted_order <= range->second;
        j["order_range"] = {range->first, range->second};
    }
    write_json(r.path("convergence.json"), j);
    r.manifest.verdicts["convergence"] = j;
    std::cout << "convergence: fitted order " << rep.fitted_order << "\n";
    return r.finish("convergence", pass);
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Monte Carlo tests of the martingale property for Gaussian non-Markovian SSEs"};
    app.require_subcommand(1);
    Options o;
    std::uint64_t seed = 0;
    unsigned workers = 0;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "experiment configuration (JSON)")->required();
        sub->add_option("--out", o.out, "output directory");
        sub->add_option("--seed", seed, "master seed, overrides the config");
        sub->add_option("--workers", workers, "worker threads, overrides GNSSE_WORKERS")->check(CLI::PositiveNumber);
    };
    auto* sim = app.add_subcommand("simulate", "ensemble average of |psi><psi| and the squared norm");
    auto* mart = app.add_subcommand("martingale-test", "conditional branching test of the martingale property");
    auto* val = app.add_subcommand("validate-noise", "check a correlation pair");
    auto* gk = app.add_subcommand("compare-gksl", "compare the ensemble with Markovian and exact references");
    auto* conv = app.add_subcommand("convergence", "time-step convergence study");
    for (auto* s : {sim, mart, val, gk, conv})
        add_common(s);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitConfig;
    }
    for (auto* s : {sim, mart, val, gk, conv}) {
        if (s->count("--seed"))
            o.seed = seed;
        if (s->count("--workers"))
            o.workers = workers;
    }

    try {
        if (*sim)
            return cmd_simulate(o);
        if (*mart)
            return cmd_martingale(o);
        if (*val)
            return cmd_validate_noise(o);
        if (*gk)
            return cmd_compare_gksl(o);
        return cmd_convergence(o);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
}
