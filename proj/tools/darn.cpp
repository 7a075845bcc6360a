// darn: command-line front end for training and evaluating the decoder.

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "darn/commands.hpp"
#include "darn/error.hpp"

namespace {

std::string config_key_help() {
    std::ostringstream out;
    out << "\nConfig keys (key=value per line, '#' starts a comment; defaults shown):\n";
    const darn::RunConfig defaults;
    for (const auto& k : darn::config_keys()) {
        const std::string v = darn::get_config_value(defaults, k.key);
        out << "  " << k.key << " = " << v << std::string(k.key.size() + v.size() < 34 ? 34 - k.key.size() - v.size() : 1, ' ')
            << k.help << "\n";
    }
    out << "\nEnvironment: DARN_OUT_DIR overrides out_dir.\n";
    return out.str();
}

struct ConfigArgs {
    std::string path;
    std::vector<std::string> overrides;

    void attach(CLI::App* cmd, bool required = false) {
        auto* opt = cmd->add_option("-c,--config", path, "key=value config file")->check(CLI::ExistingFile);
        if (required) opt->required();
        cmd->add_option("-s,--set", overrides, "override a config key (key=value), repeatable");
    }

    darn::RunConfig load() const {
        darn::RunConfig cfg = path.empty() ? darn::RunConfig{} : darn::load_config(path);
        std::string extra;
        for (const auto& o : overrides) extra += o + "\n";
        cfg = darn::parse_config(extra, cfg);
        darn::apply_environment(cfg);
        darn::validate(cfg);
        return cfg;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Complexity-adaptive segmentation decoder: training, ablation and robustness tools"};
    app.footer(config_key_help());
    app.require_subcommand(1);

    ConfigArgs train_cfg, eval_cfg, ablate_cfg, robust_cfg, sweep_cfg, gen_cfg;
    std::string resume, eval_ckpt, robust_ckpt, sweep_key, gen_split = "train", gen_out;
    std::vector<std::string> sweep_values;
    std::size_t seeds = 1;
    bool negative_control = false;

    auto* train = app.add_subcommand("train", "train a decoder; writes metrics.csv, best.ckpt, last.ckpt");
    train_cfg.attach(train);
    train->add_option("--resume", resume, "continue from a checkpoint")->check(CLI::ExistingFile);

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the validation split");
    eval_cfg.attach(eval);
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();

    auto* ablate = app.add_subcommand("ablate", "five-arm component ladder; writes ablation.csv");
    ablate_cfg.attach(ablate);
    ablate->add_option("--seeds", seeds, "number of seeds (seed, seed+1, ...)")->check(CLI::PositiveNumber);

    auto* robust = app.add_subcommand("robustness", "corruption grid + FGSM; writes robustness.csv");
    robust_cfg.attach(robust);
    robust->add_option("--checkpoint", robust_ckpt, "checkpoint file")->required();

    auto* sweep = app.add_subcommand("sweep", "one training run per value of a numeric key; writes sweep.csv");
    sweep_cfg.attach(sweep);
    sweep->add_option("--key", sweep_key, "numeric config key")->required();
    sweep->add_option("--values", sweep_values, "values to try")->required()->delimiter(',');

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
    gradcheck->add_flag("--negative-control", negative_control, "add a case with a deliberately wrong backward");

    auto* gen = app.add_subcommand("gen-data", "write a synthetic split to a .dsyn file");
    gen_cfg.attach(gen);
    gen->add_option("--split", gen_split, "train or val")->check(CLI::IsMember({"train", "val"}));
    gen->add_option("-o,--output", gen_out, "output path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train) {
            const auto cfg = train_cfg.load();
            const auto sum = darn::cli::cmd_train(cfg, resume, &std::cerr);
            std::cout << "epochs " << sum.epochs_completed << " best_val_miou " << darn::format_sig9(sum.best_val_miou)
                      << (sum.early_stopped ? " (early stop)" : "") << "\n";
        } else if (*eval) {
            darn::cli::write_eval(std::cout, darn::cli::cmd_eval(eval_cfg.load(), eval_ckpt));
        } else if (*ablate) {
            const auto cfg = ablate_cfg.load();
            darn::cli::write_ablation_csv(std::cout, darn::cli::cmd_ablate(cfg, seeds, &std::cerr));
        } else if (*robust) {
            darn::cli::write_robustness_csv(std::cout, darn::cli::cmd_robustness(robust_cfg.load(), robust_ckpt));
        } else if (*sweep) {
            darn::cli::write_sweep_csv(std::cout, darn::cli::cmd_sweep(sweep_cfg.load(), sweep_key, sweep_values, &std::cerr));
        } else if (*gradcheck) {
            const auto cases = darn::cli::gradcheck_suite(negative_control);
            darn::cli::write_gradcheck(std::cout, cases);
            for (const auto& c : cases)
                if (!c.passed) return 1;
        } else if (*gen) {
            const std::size_t n = darn::cli::cmd_gen_data(gen_cfg.load(), gen_split, gen_out);
            std::cout << "wrote " << n << " samples to " << gen_out << "\n";
        }
    } catch (const darn::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
