//
// Copyright 2026 The VGM2 Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

// Command-line driver: run, ablate, attack, report.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vgm2/vgm2.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

namespace fs = std::filesystem;

void print_summary(const vgm2::RunResult& r) {
    const auto [f1, ece] = vgm2::mean_client_metrics(r);
    std::cerr << vgm2::to_string(r.method) << " seed=" << r.seed << " f1=" << vgm2::fixed(f1)
              << " ece=" << vgm2::fixed(ece) << " (" << vgm2::fixed(r.wall_seconds, 1) << "s)\n";
}

void run_all(const vgm2::RunConfig& cfg, const fs::path& out) {
    vgm2::RunWriter writer(out, cfg);
    for (auto seed : cfg.seeds) {
        for (auto method : cfg.methods) {
            auto res = vgm2::run_federation(cfg, method, seed);
            print_summary(res);
            writer.add(res);
        }
    }
    const auto digest = writer.finish(cfg.dp.delta);
    std::cerr << "wrote " << out.string() << " (digest " << vgm2::hex64(digest) << ")\n";
}

int cmd_run(const std::string& config_path, const std::string& out_override) {
    auto cfg = vgm2::load_config(config_path);
    if (!out_override.empty()) {
        cfg.output = out_override;
    }
    run_all(cfg, cfg.output);
    std::cout << vgm2::render_report(vgm2::load_run(cfg.output), vgm2::ReportFormat::txt);
    return 0;
}

int cmd_ablate(const std::string& sweep, const std::string& config_path, const std::string& out_override) {
    const auto eq = sweep.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw vgm2::ConfigError("--sweep expects key=v1,v2,...; got '" + sweep + "'");
    }
    const std::string key = sweep.substr(0, eq);
    const auto values = vgm2::detail::split_list(sweep.substr(eq + 1));
    if (values.empty()) {
        throw vgm2::ConfigError("--sweep lists no values for '" + key + "'");
    }
    vgm2::RunConfig base = config_path.empty() ? vgm2::RunConfig{} : vgm2::load_config(config_path);
    base.methods = {vgm2::Method::vgm2};
    const fs::path root = out_override.empty() ? fs::path(base.output) / ("ablate_" + key) : fs::path(out_override);
    std::vector<vgm2::RunDirectory> runs;
    for (const auto& v : values) {
        vgm2::RunConfig cfg = base;
        vgm2::set_config_value(cfg, key, v);
        cfg.validate();
        cfg.output = (root / (key + "=" + v)).string();
        run_all(cfg, cfg.output);
        runs.push_back(vgm2::load_run(cfg.output));
    }
    const auto table = vgm2::ablation_to_table(vgm2::ablation_table(runs, key), key);
    std::ofstream(root / "ablation.csv") << vgm2::render(table, vgm2::ReportFormat::csv);
    std::cout << vgm2::render(table, vgm2::ReportFormat::txt);
    return 0;
}

int cmd_attack(const std::string& dir, const std::string& seeds) {
    auto cfg = vgm2::load_config((fs::path(dir) / "config.txt").string());
    if (!seeds.empty()) {
        vgm2::set_config_value(cfg, "seeds", seeds);
    }
    std::vector<vgm2::AttackReport> reports;
    for (auto seed : cfg.seeds) {
        reports.push_back(vgm2::run_attack(cfg, seed));
        std::cerr << "attack seed=" << seed << " auc_client=" << vgm2::fixed(reports.back().auc_client) << "\n";
    }
    vgm2::write_attack_csv(dir, reports);
    std::cout << vgm2::render(vgm2::attack_table(reports), vgm2::ReportFormat::txt);
    return 0;
}

int cmd_report(const std::string& dir, const std::string& format) {
    const auto f = vgm2::parse_report_format(format);
    std::cout << vgm2::render_report(vgm2::load_run(dir), f);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"vgm2: personalized federated learning with relation-marker posteriors"};
    app.require_subcommand(1);

    std::string config_path, out, sweep, run_dir, format = "txt", seeds;
    auto* run = app.add_subcommand("run", "train all configured methods and seeds");
    run->add_option("--config", config_path, "key = value config file")->required();
    run->add_option("--out", out, "run directory (overrides 'output')");

    auto* ablate = app.add_subcommand("ablate", "one-parameter sweep of the vgm2 method");
    ablate->add_option("--sweep", sweep, "key=v1,v2,...")->required();
    ablate->add_option("--config", config_path, "base config (defaults if omitted)");
    ablate->add_option("--out", out, "sweep root directory");

    auto* attack = app.add_subcommand("attack", "membership-inference stress test on a run's config");
    attack->add_option("--run", run_dir, "run directory")->required();
    attack->add_option("--seeds", seeds, "comma-separated seeds (default: the run's)");

    auto* report = app.add_subcommand("report", "summary tables from a run directory");
    report->add_option("--run", run_dir, "run directory")->required();
    report->add_option("--format", format, "csv or txt")->check(CLI::IsMember({"csv", "txt"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    try {
        if (*run) {
            return cmd_run(config_path, out);
        }
        if (*ablate) {
            return cmd_ablate(sweep, config_path, out);
        }
        if (*attack) {
            return cmd_attack(run_dir, seeds);
        }
        return cmd_report(run_dir, format);
    } catch (const vgm2::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const vgm2::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const vgm2::FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
