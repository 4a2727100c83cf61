#include <catch_amalgamated.hpp>

#include <sstream>

#include "cli.hpp"

using namespace qtazrp;
using cli::json;

namespace {

json profile_json() { return {{"q", 0.5}, {"default_a", 1.0}, {"overrides", {{"0", 1.3}}}}; }

}  // namespace

TEST_CASE("config schema: required fields, known commands, no extras") {
    const auto c = cli::parse_config(json{{"command", "constants"}, {"params", {{"q", 0.5}, {"theta", 1.0}}}, {"seed", 7}});
    CHECK(c.command == "constants");
    CHECK(c.seed == 7);
    CHECK_FALSE(c.out.has_value());
    CHECK(cli::parse_config(json{{"command", "validate"}}).seed == cli::kDefaultSeed);

    CHECK_THROWS_AS(cli::parse_config(json{{"params", json::object()}}), ConfigError);
    CHECK_THROWS_AS(cli::parse_config(json{{"command", "plot"}}), ConfigError);
    CHECK_THROWS_AS(cli::parse_config(json{{"command", "validate"}, {"verbose", true}}), ConfigError);
    CHECK_THROWS_AS(cli::parse_config(json{{"command", "validate"}, {"seed", -3}}), ConfigError);
    CHECK_THROWS_AS(cli::parse_config(json{{"command", "validate"}, {"params", json::array()}}), ConfigError);
    CHECK_THROWS_AS(cli::parse_config(json::array()), ConfigError);
}

TEST_CASE("flags override the config") {
    auto c = cli::parse_config(json{{"command", "validate"}, {"seed", 1}, {"out", "a.csv"}});
    cli::Overrides o;
    o.seed = 9;
    o.out = "b.csv";
    c = cli::apply(c, o);
    CHECK(c.seed == 9);
    CHECK(c.out == "b.csv");
}

TEST_CASE("unknown parameter fields are rejected per command") {
    const char* commands[] = {"simulate", "exact", "step-dist", "limit-dist", "converge", "validate", "constants"};
    for (const char* cmd : commands) {
        auto c = cli::parse_config(json{{"command", cmd}, {"params", {{"bogus_field", 1}}}});
        CHECK_THROWS_AS(cli::run(c), ConfigError);
    }
}

TEST_CASE("constants command") {
    auto c = cli::parse_config(json{{"command", "constants"},
                                    {"params", {{"q", 0.5}, {"alpha", 0.6}, {"theta", {{"from", 0.5}, {"to", 2.0}, {"count", 4}}}}}});
    const auto t = cli::run(c);
    REQUIRE(t.rows.size() == 4);
    CHECK(t.columns == std::vector<std::string>{"theta", "kappa", "f", "chi", "g", "sigma"});
    const auto s = scaling_constants(2.0, 0.6, QParam(0.5));
    CHECK(t.rows[3][0].get<double>() == 2.0);
    CHECK(t.rows[3][1].get<double>() == s.kappa);
    CHECK(t.rows[3][4].get<double>() == *s.g);

    auto one = cli::parse_config(json{{"command", "constants"}, {"params", {{"q", 0.5}, {"theta", {1.0, 2.0}}}}});
    const auto t1 = cli::run(one);
    CHECK(t1.rows[0][4].is_null());
    CHECK(cli::to_csv(t1).find("theta,kappa,f,chi,g,sigma\n1,") == 0);

    auto bad = cli::parse_config(json{{"command", "constants"}, {"params", {{"q", 1.5}, {"theta", 1.0}}}});
    CHECK_THROWS_AS(cli::run(bad), DomainError);
}

TEST_CASE("simulate command is reproducible and independent of workers") {
    auto c = cli::parse_config(json{{"command", "simulate"},
                                    {"seed", 5},
                                    {"params", {{"profile", profile_json()}, {"t", 1.0}, {"M_range", {0, 3}}, {"m", 1}}}});
    cli::Overrides o;
    o.samples = 2000;
    o.workers = 1;
    const auto a = cli::to_csv(cli::run(c, o));
    o.workers = 3;
    const auto b = cli::to_csv(cli::run(c, o));
    CHECK(a == b);
    CHECK(a.rfind("M,p_hat,stderr,samples\n", 0) == 0);

    auto both = c;
    both.params["Y"] = {0};
    CHECK_THROWS_AS(cli::run(both, o), ConfigError);
    auto finite = cli::parse_config(json{
        {"command", "simulate"},
        {"params", {{"profile", profile_json()}, {"t", 1.0}, {"M_range", {0, 2}}, {"Y", {1, 0}}, {"n", 2}, {"samples", 500}}}});
    CHECK(cli::run(finite).rows.size() == 3);
    finite.params["n"] = 3;
    CHECK_THROWS_AS(cli::run(finite), ConfigError);
    finite.params["n"] = 2;
    finite.params["M_range"] = {3, 1};
    CHECK_THROWS_AS(cli::run(finite), ConfigError);
}

TEST_CASE("exact and step-dist commands emit certified rows") {
    auto e = cli::parse_config(json{{"command", "exact"},
                                    {"params",
                                     {{"formula", "leftmost"},
                                      {"profile", profile_json()},
                                      {"t", 0.5},
                                      {"Y", {1, 0}},
                                      {"M_range", {0, 2}}}}});
    const auto te = cli::run(e);
    CHECK(te.rows.size() == 3);
    CHECK(te.failures.empty());
    CHECK(te.rows[0][4] == "dist_leftmost");

    auto tr = e;
    tr.params.erase("M_range");
    tr.params["formula"] = "transition";
    tr.params["X"] = {{1, 0}, {2, 0}};
    const auto tt = cli::run(tr);
    CHECK(tt.rows[0][0] == "1 0");
    CHECK(tt.rows[0][1].get<double>() > 0.0);

    auto tagged = e;
    tagged.params["formula"] = "tagged_right";
    CHECK_THROWS_AS(cli::run(tagged), ConfigError);  // needs n
    tagged.params["n"] = 1;
    CHECK(cli::run(tagged).rows.size() == 3);

    auto s = cli::parse_config(json{{"command", "step-dist"},
                                    {"params", {{"profile", profile_json()}, {"m", 1}, {"t", 1.0}, {"M_range", {0, 0}}}}});
    const auto ts = cli::run(s);
    CHECK_THAT(ts.rows[0][1].get<double>(), Catch::Matchers::WithinAbs(1.0 - std::exp(-1.3), 1e-10));
    s.params["route"] = "residues";
    CHECK_THAT(cli::run(s).rows[0][1].get<double>(), Catch::Matchers::WithinAbs(1.0 - std::exp(-1.3), 1e-10));
    s.params["route"] = "magic";
    CHECK_THROWS_AS(cli::run(s), ConfigError);
}

TEST_CASE("a failed certificate is reported as an invariant failure") {
    auto e = cli::parse_config(json{{"command", "exact"},
                                    {"params",
                                     {{"formula", "leftmost"},
                                      {"profile", profile_json()},
                                      {"t", 2.0},
                                      {"Y", {1, 0}},
                                      {"M_range", {1, 1}},
                                      {"quadrature", {{"nodes", 16}}}}}});
    const auto t = cli::run(e);
    CHECK(t.rows.size() == 1);
    CHECK_FALSE(t.failures.empty());
}

TEST_CASE("CSV and envelope rendering") {
    cli::Table t;
    t.columns = {"a", "b", "c", "d"};
    t.rows.push_back({1, 0.1, "x,y", nullptr});
    t.rows.push_back({-2, 1e-300, "say \"hi\"", true});
    const std::string csv = cli::to_csv(t);
    CHECK(csv == "a,b,c,d\n1,0.1,\"x,y\",\n-2,1e-300,\"say \"\"hi\"\"\",true\n");
    CHECK(cli::format_number(0.30000000000000004) == "0.30000000000000004");

    const auto c = cli::parse_config(json{{"command", "validate"}});
    const auto env = cli::envelope(c, t, "test-build", 1.5);
    CHECK(env["build"] == "test-build");
    CHECK(env["status"] == "ok");
    CHECK(env["rows"].size() == 2);
    CHECK(env["rows"][0]["c"] == "x,y");
    CHECK(env["inputs"]["command"] == "validate");
    t.failures.push_back("x");
    CHECK(cli::envelope(c, t, "b", 0.0)["status"] == "invariant_failure");
}

TEST_CASE("exit codes by error class") {
    CHECK(cli::exit_code(ConfigError("x")) == 2);
    CHECK(cli::exit_code(DomainError("x")) == 2);
    CHECK(cli::exit_code(NumericFailure("x")) == 3);
    CHECK(cli::exit_code(SingularError("x")) == 3);
    CHECK(cli::exit_code(InvariantViolation("x")) == 4);
    CHECK(cli::exit_code(std::runtime_error("x")) == 1);
}
