// Command-line front end: gen, train, eval, verify.
//
// Exit codes: 0 success, 1 configuration or input error, 2 numeric failure
// during a run, 3 verification failure.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "pico/harness.hpp"

namespace {

enum Exit { kOk = 0, kConfig = 1, kNumeric = 2, kVerify = 3 };

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool out_required) {
    cmd->add_option("--config", c.config, "key=value configuration file")->check(CLI::ExistingFile);
    cmd->add_option("--seed", c.seed, "seed (overrides the config file)");
    auto* out = cmd->add_option("--out", c.out, "output directory");
    if (out_required) out->required();
}

pico::harness::RunConfig resolve(const Common& c) {
    pico::harness::RunConfig cfg = c.config.empty() ? pico::harness::RunConfig{} : pico::harness::load_config(c.config);
    if (c.seed) cfg.seed = *c.seed;
    return cfg;
}

std::optional<std::filesystem::path> out_dir(const Common& c) {
    if (c.out.empty()) return std::nullopt;
    return std::filesystem::path(c.out);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Partial-label learning with contrastive prototypes"};
    app.require_subcommand(1);

    Common gen_opts, train_opts, eval_opts, verify_opts;
    auto* gen = app.add_subcommand("gen", "generate a synthetic partial-label dataset");
    add_common(gen, gen_opts, true);

    auto* train = app.add_subcommand("train", "train PiCO or PiCO+ and write a run directory");
    add_common(train, train_opts, false);

    std::string checkpoint, dataset;
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset file");
    add_common(eval, eval_opts, false);
    eval->add_option("--checkpoint", checkpoint, "checkpoint.txt from a train run")->required();
    eval->add_option("--data", dataset, "dataset file (.pll)")->required();

    bool inject_fault = false;
    int instances = 1000;
    auto* verify = app.add_subcommand("verify", "run the theory property suite");
    add_common(verify, verify_opts, false);
    verify->add_option("--instances", instances, "random instances per property")->check(CLI::PositiveNumber);
    verify->add_flag("--inject-fault", inject_fault, "perturb one embedding norm per instance (negative test)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kConfig;
    }

    try {
        if (*gen) {
            const auto cfg = resolve(gen_opts);
            const auto data = pico::harness::cmd_gen(cfg, gen_opts.out);
            const auto s = pico::harness::dataset_stats(data.train);
            std::cout << "wrote " << gen_opts.out << ": n=" << s.n << " mean|Y|=" << s.mean_candidates
                      << " noisy=" << s.noisy_fraction << '\n';
        } else if (*train) {
            const auto cfg = resolve(train_opts);
            const auto r = pico::harness::cmd_train(cfg, out_dir(train_opts));
            std::cout << "test_accuracy=" << r.test_accuracy << " train_accuracy=" << r.train_accuracy
                      << " pseudo_target_accuracy=" << r.pseudo_target_accuracy << " mmc=" << r.mmc
                      << " seconds=" << r.wall_seconds << '\n';
        } else if (*eval) {
            const auto r = pico::harness::cmd_eval(checkpoint, dataset, out_dir(eval_opts));
            std::cout << r.to_json() << '\n';
        } else if (*verify) {
            pico::theory::VerifyOptions opts;
            opts.seed = verify_opts.seed.value_or(0);
            opts.instances = instances;
            opts.fault = inject_fault ? pico::theory::Fault::PerturbNorm : pico::theory::Fault::None;
            const auto report = pico::harness::cmd_verify(opts, out_dir(verify_opts));
            std::cout << report.to_text();
            if (!report.all_passed()) return kVerify;
        }
    } catch (const pico::harness::ConfigError& e) {
        std::cerr << "configuration error:\n";
        for (const auto& p : e.problems()) std::cerr << "  " << p << '\n';
        return kConfig;
    } catch (const pico::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return kNumeric;
    } catch (const pico::DataFormatError& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return kConfig;
    } catch (const pico::ShapeError& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return kConfig;
    } catch (const std::invalid_argument& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return kConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kConfig;
    }
    return kOk;
}
