// qtazrp: run one experiment from a JSON config and write CSV plus a JSON envelope.
//
//   qtazrp [COMMAND] [--config PATH] [--out PATH] [--seed U64] [--workers N]
//          [--nodes N] [--samples N]
//
// With --out PATH the CSV goes to PATH and the envelope to PATH.json; without
// it the CSV goes to stdout. Exit codes: 0 ok, 2 config/domain error,
// 3 numeric failure, 4 invariant violation (including failed validate checks).

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "cli.hpp"

#ifndef QTAZRP_BUILD_ID
#define QTAZRP_BUILD_ID "unknown"
#endif

namespace {

using qtazrp::cli::json;

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw qtazrp::ConfigError("cannot open config file '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw qtazrp::ConfigError("config file '" + path + "': " + e.what());
    }
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out || !(out << text)) throw qtazrp::ConfigError("cannot write '" + path + "'");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"q-TAZRP exact formulas, Fredholm determinants and simulation"};
    std::string command, config_path;
    qtazrp::cli::Overrides ov;
    std::string out_path;
    std::uint64_t seed = 0;
    unsigned workers = 1;
    int nodes = 0;
    long samples = 0;
    app.add_option("command", command, "simulate | exact | step-dist | limit-dist | converge | validate | constants");
    app.add_option("--config", config_path, "JSON experiment config")->check(CLI::ExistingFile);
    auto* o_out = app.add_option("--out", out_path, "CSV output path (envelope at PATH.json)");
    auto* o_seed = app.add_option("--seed", seed, "RNG seed");
    auto* o_workers = app.add_option("--workers", workers, "worker threads")->check(CLI::Range(1u, 1024u));
    auto* o_nodes = app.add_option("--nodes", nodes, "quadrature node override")->check(CLI::PositiveNumber);
    auto* o_samples = app.add_option("--samples", samples, "Monte Carlo samples")->check(CLI::PositiveNumber);
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }
    if (o_out->count()) ov.out = out_path;
    if (o_seed->count()) ov.seed = seed;
    if (o_workers->count()) ov.workers = workers;
    if (o_nodes->count()) ov.nodes = nodes;
    if (o_samples->count()) ov.samples = samples;

    const std::string build = QTAZRP_BUILD_ID;
    json raw = json::object();
    std::optional<std::string> envelope_path;
    try {
        if (!config_path.empty()) raw = read_json_file(config_path);
        if (!raw.is_object()) throw qtazrp::ConfigError("config: expected a JSON object");
        if (!command.empty()) {
            if (raw.contains("command") && raw.at("command") != command)
                throw qtazrp::ConfigError("command '" + command + "' disagrees with the config file");
            raw["command"] = command;
        }
        auto cfg = qtazrp::cli::apply(qtazrp::cli::parse_config(raw), ov);
        if (cfg.out) envelope_path = *cfg.out + ".json";

        const auto t0 = std::chrono::steady_clock::now();
        auto report = [](const qtazrp::validation::CheckResult& r) {
            std::fprintf(stderr, "%s  [%2d] %s: %s (%.1fs)\n", r.pass ? "PASS" : "FAIL", r.id, r.name.c_str(),
                         r.detail.c_str(), r.seconds);
        };
        const auto table = qtazrp::cli::run(cfg, ov, report);
        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const std::string csv = qtazrp::cli::to_csv(table);
        if (cfg.out) {
            write_file(*cfg.out, csv);
            write_file(*envelope_path, qtazrp::cli::envelope(cfg, table, build, wall).dump(2) + "\n");
        } else {
            std::cout << csv;
        }
        for (const auto& f : table.failures) std::cerr << "invariant failure: " << f << '\n';
        return table.failures.empty() ? 0 : 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        if (envelope_path) {
            try {
                write_file(*envelope_path, qtazrp::cli::error_envelope(raw, build, e).dump(2) + "\n");
            } catch (const std::exception&) {
            }
        }
        return qtazrp::cli::exit_code(e);
    }
}
