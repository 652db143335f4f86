#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <string>

#include "gnsse/config.hpp"
#include "gnsse/io.hpp"

using namespace gnsse;

namespace {

json base_doc()
{
    return json::parse(R"({
      "model": {"kind": "spin_boson", "omega": 1.0, "g": 1.0},
      "noise": {"x": [{"type": "white", "weight": 0.5}], "y": [{"type": "exp", "c": 1.0, "a": 1.0}]},
      "grid": {"t_max": 2.0, "dt": 0.001},
      "ensemble": {"n_trajectories": 100, "master_seed": 7, "integrator": "em_ito", "snapshots": 20},
      "experiment": {"branch_time": 1.0, "checkpoints": [0.1, 0.5, 1.0], "expected_verdict": "pass"}
    })");
}

}  // namespace

TEST(Config, ParsesReferenceDocument)
{
    const auto rc = parse_config(base_doc());
    const auto& e = rc.exp;
    EXPECT_EQ(e.model.kind, ModelKind::SpinBoson);
    EXPECT_EQ(e.grid.n_steps, 2000u);
    EXPECT_EQ(e.n_trajectories, 100u);
    EXPECT_EQ(e.master_seed, 7u);
    EXPECT_EQ(e.integrator, IntegratorKind::EmIto);
    EXPECT_DOUBLE_EQ(e.pair.x.white_weight(), 0.5);
    ASSERT_EQ(e.pair.y.exp_kernels().size(), 1u);
    EXPECT_DOUBLE_EQ(e.branch.s, 1.0);
    EXPECT_EQ(e.branch.checkpoint_offsets.size(), 3u);
    ASSERT_TRUE(rc.extras.expected_verdict.has_value());
    EXPECT_EQ(*rc.extras.expected_verdict, Verdict::Pass);
    EXPECT_NO_THROW(validate_config(e, true));
}

TEST(Config, SummedKernelsAndCustomModel)
{
    auto doc = base_doc();
    doc["noise"]["x"] = json::parse(R"([{"type": "white", "weight": 0.25}, {"type": "white", "weight": 0.25}])");
    doc["model"] = json::parse(R"({"kind": "custom", "H": [[0.5, 0], [0, -0.5]], "L": [[0, 0], [1, 0]],
                                  "psi0": [[0.7071067811865476, 0], 0.7071067811865476]})");
    const auto rc = parse_config(doc);
    EXPECT_DOUBLE_EQ(rc.exp.pair.x.white_weight(), 0.5);
    EXPECT_EQ(rc.exp.model.kind, ModelKind::Custom);
    EXPECT_EQ(rc.exp.model.L(1, 0), Complex(1.0, 0.0));
    EXPECT_FALSE(rc.exp.model.coupling_hermitian());
}

TEST(Config, StructuralErrorsNameTheProblem)
{
    auto bad_grid = base_doc();
    bad_grid["grid"]["dt"] = 0.3;
    try {
        parse_config(bad_grid);
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("multiple"), std::string::npos);
    }
    auto bad_kernel = base_doc();
    bad_kernel["noise"]["x"][0]["type"] = "gauss";
    EXPECT_THROW(parse_config(bad_kernel), ConfigError);
    auto extra = base_doc();
    extra["extra"] = 1;
    EXPECT_THROW(parse_config(extra), ConfigError);
    auto no_model = base_doc();
    no_model.erase("model");
    EXPECT_THROW(parse_config(no_model), ConfigError);
    auto wrong_type = base_doc();
    wrong_type["grid"]["t_max"] = "two";
    EXPECT_THROW(parse_config(wrong_type), ConfigError);
    auto bad_verdict = base_doc();
    bad_verdict["experiment"]["expected_verdict"] = "maybe";
    EXPECT_THROW(parse_config(bad_verdict), ConfigError);
}

TEST(Config, HashIgnoresKeyOrderAndWhitespace)
{
    const auto a = json::parse(R"({"grid": {"dt": 0.001, "t_max": 2.0}, "model": {"kind": "dephasing"}})");
    const auto b = json::parse("{\n \"model\" : {\"kind\":\"dephasing\"},\n \"grid\":{\"t_max\":2.0,\"dt\":0.001}}");
    EXPECT_EQ(config_hash(a), config_hash(b));
    auto c = b;
    c["grid"]["dt"] = 0.002;
    EXPECT_NE(config_hash(a), config_hash(c));
    // FNV-1a of the empty object "{}"
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : std::string("{}")) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    EXPECT_EQ(config_hash(json::object()), h);
    EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}

TEST(Io, SeventeenSignificantDigitsRoundTrip)
{
    for (double v : {0.1, 1.0 / 3.0, 2.718281828459045, 1e-300, -123456.789012345678}) {
        const auto s = fmt(v);
        EXPECT_EQ(std::stod(s), v) << s;
    }
    EXPECT_EQ(fmt(0.1), "0.10000000000000001");
}
