#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "darn/checkpoint.hpp"
#include "darn/commands.hpp"
#include "darn/error.hpp"
#include "darn/synth.hpp"
#include "doctest.h"

using namespace darn;
namespace fs = std::filesystem;

namespace {

RunConfig tiny(const std::string& dir) {
    RunConfig cfg;
    cfg.seed = 5;
    cfg.dataset_count = 8;
    cfg.dataset_val_count = 4;
    cfg.decoder_width = 4;
    cfg.epochs = 2;
    cfg.warmup_steps = 1;
    cfg.lr = 1e-3;
    cfg.out_dir = (fs::temp_directory_path() / dir).string();
    fs::remove_all(cfg.out_dir);
    return cfg;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

// Runs the CLI binary; returns its exit status and captures stdout.
int run_cli(const std::string& args, std::string* out = nullptr, const std::string& env = {}) {
    const fs::path capture = fs::temp_directory_path() / "darn_cli_stdout.txt";
    const std::string cmd = env + " " + std::string(DARN_CLI_PATH) + " " + args + " > " + capture.string() + " 2>/dev/null";
    const int status = std::system(cmd.c_str());
    if (out) *out = slurp(capture);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_SUITE("config") {
    TEST_CASE("parse overrides defaults and ignores comments") {
        const RunConfig c = parse_config("# comment\nseed = 7\n\nlr=0.5  # trailing\nencoder_widths=8,16,32,64\n");
        CHECK(c.seed == 7);
        CHECK(c.lr == 0.5);
        CHECK(c.encoder_widths == std::array<std::size_t, 4>{8, 16, 32, 64});
        CHECK(c.decoder_width == RunConfig{}.decoder_width);
    }

    TEST_CASE("every problem is reported at once") {
        try {
            parse_config("bogus=1\nseed=abc\nno_equals_sign\n");
            FAIL("expected ConfigError");
        } catch (const ConfigError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("bogus") != std::string::npos);
            CHECK(msg.find("seed") != std::string::npos);
            CHECK(msg.find("no_equals_sign") != std::string::npos);
        }
    }

    TEST_CASE("boolean spellings") {
        RunConfig c;
        for (const char* t : {"true", "1", "on", "yes"}) {
            set_config_value(c, "adm", "false");
            set_config_value(c, "adm", t);
            CHECK(c.adm);
        }
        for (const char* f : {"false", "0", "off", "no"}) {
            set_config_value(c, "adm", "true");
            set_config_value(c, "adm", f);
            CHECK_FALSE(c.adm);
        }
        CHECK_THROWS_AS(set_config_value(c, "adm", "maybe"), ConfigError);
    }

    TEST_CASE("format round-trips through parse") {
        RunConfig c = tiny("darn_cfg_rt");
        c.alpha = 0.123456789012345;
        c.tcp = false;
        c.adm = false;
        const RunConfig d = parse_config(format_config(c));
        CHECK(format_config(d) == format_config(c));
        CHECK(d.alpha == c.alpha);
        for (const auto& k : config_keys()) CHECK(format_config(c).find(k.key + "=") != std::string::npos);
    }

    TEST_CASE("cross-field validation") {
        RunConfig c;
        CHECK_NOTHROW(validate(c));
        c.tcp = false;
        CHECK_THROWS_AS(validate(c), ConfigError);  // adm without tcp
        c = RunConfig{};
        c.image_size = 40;
        CHECK_THROWS_AS(validate(c), ConfigError);
        c = RunConfig{};
        c.p_min = 0.6;
        CHECK_THROWS_AS(validate(c), ConfigError);
        c = RunConfig{};
        c.num_classes = 7;
        CHECK_THROWS_AS(validate(c), ConfigError);
        c = RunConfig{};
        c.lr = -1e-3;
        CHECK_THROWS_AS(validate(c), ConfigError);
    }

    TEST_CASE("DARN_OUT_DIR replaces out_dir") {
        RunConfig c;
        ::setenv("DARN_OUT_DIR", "/tmp/elsewhere", 1);
        apply_environment(c);
        ::unsetenv("DARN_OUT_DIR");
        CHECK(c.out_dir == "/tmp/elsewhere");
        RunConfig d;
        apply_environment(d);
        CHECK(d.out_dir == RunConfig{}.out_dir);
    }
}

TEST_SUITE("train") {
    TEST_CASE("zero epochs writes a header and an initial checkpoint") {
        RunConfig c = tiny("darn_cli_e0");
        c.epochs = 0;
        cli::cmd_train(c);
        const std::string csv = slurp(fs::path(c.out_dir) / "metrics.csv");
        CHECK(csv == run_record_header() + "\n");
        CHECK(fs::exists(fs::path(c.out_dir) / "last.ckpt"));
        CHECK(load_checkpoint((fs::path(c.out_dir) / "last.ckpt").string()).epoch == 0);
        fs::remove_all(c.out_dir);
    }

    TEST_CASE("one train and one val row per epoch") {
        RunConfig c = tiny("darn_cli_rows");
        const TrainSummary s = cli::cmd_train(c);
        const std::string csv = slurp(fs::path(c.out_dir) / "metrics.csv");
        CHECK(lines(csv) == 1 + 2 * c.epochs);
        CHECK(s.records.size() == 2 * c.epochs);
        fs::remove_all(c.out_dir);
    }

    TEST_CASE("resume appends rows and matches a straight run") {
        RunConfig straight = tiny("darn_cli_straight");
        straight.epochs = 3;
        cli::cmd_train(straight);

        RunConfig first = tiny("darn_cli_part");
        first.epochs = 3;
        Trainer t(first);
        RunOptions o;
        o.max_epochs = 1;
        o.write_files = true;
        t.run(o);
        cli::cmd_train(first, (fs::path(first.out_dir) / "last.ckpt").string());
        const auto a = slurp(fs::path(straight.out_dir) / "metrics.csv");
        const auto b = slurp(fs::path(first.out_dir) / "metrics.csv");
        CHECK(lines(b) == 7);
        CHECK(a == b);
        fs::remove_all(straight.out_dir);
        fs::remove_all(first.out_dir);
    }

    TEST_CASE("eval reports the validation metrics of a checkpoint") {
        RunConfig c = tiny("darn_cli_eval");
        const TrainSummary s = cli::cmd_train(c);
        const cli::EvalReport r = cli::cmd_eval(c, (fs::path(c.out_dir) / "best.ckpt").string());
        CHECK(r.result.metrics.miou == s.best_val_miou);
        CHECK_THROWS_AS(cli::cmd_eval(c, "/nonexistent.ckpt"), FormatError);
        fs::remove_all(c.out_dir);
    }
}

TEST_SUITE("ablate") {
    TEST_CASE("arm slugs and configs") {
        CHECK(cli::arm_slug(AblationArm::Baseline) == "baseline");
        CHECK(cli::arm_slug(AblationArm::TcpAdm) == "tcp_adm");
        CHECK(cli::arm_slug(AblationArm::Full) == "full");
        const RunConfig base;
        const RunConfig b = cli::arm_config(base, AblationArm::Baseline);
        CHECK_FALSE(b.tcp);
        CHECK_FALSE(b.adm);
        CHECK_FALSE(b.dcg);
        const RunConfig d = cli::arm_config(base, AblationArm::TcpDcg);
        CHECK(d.tcp);
        CHECK_FALSE(d.adm);
        CHECK(d.dcg);
        const RunConfig f = cli::arm_config(base, AblationArm::Full);
        CHECK((f.tcp && f.adm && f.dcg));
        for (auto arm : kAblationLadder) CHECK_NOTHROW(validate(cli::arm_config(base, arm)));
    }

    TEST_CASE("ladder run writes one row per arm") {
        RunConfig c = tiny("darn_cli_ablate");
        c.epochs = 1;
        const cli::AblationReport r = cli::cmd_ablate(c, 1);
        CHECK(r.arms.size() == 5);
        CHECK(r.runs.size() == 5);
        CHECK(r.arms[0].delta_vs_baseline == 0.0);
        for (const auto& a : r.arms) CHECK(a.n_seeds == 1);
        const std::string csv = slurp(fs::path(c.out_dir) / "ablation.csv");
        CHECK(lines(csv) == 6);
        CHECK(csv.rfind("arm,miou,delta_vs_baseline,miou_std,n_seeds\n", 0) == 0);
        CHECK(std::isnan(r.runs[0].mean_c_simple));  // baseline has no complexity head
        for (const auto& run : r.runs) CHECK(fs::exists(run.checkpoint));
        fs::remove_all(c.out_dir);
    }
}

TEST_SUITE("robustness") {
    TEST_CASE("grid, attack and summaries") {
        RunConfig c = tiny("darn_cli_robust");
        c.epochs = 1;
        cli::cmd_train(c);
        const cli::RobustnessReport r = cli::cmd_robustness(c, (fs::path(c.out_dir) / "best.ckpt").string());
        CHECK(r.cells.size() == 40);
        // clean + 40 cells + fgsm, then 4 categories and the mean
        CHECK(r.rows.size() == 42 + 5);
        CHECK(lines(slurp(fs::path(c.out_dir) / "robustness.csv")) == 1 + 47);
        CHECK(r.fgsm_max_linf <= kFgsmEpsilon + 1e-12);

        // Independent mCE from the cells.
        std::map<std::string, double> per;
        for (const auto& cell : r.cells) per[cell.name] += std::clamp(1.0 - cell.miou / r.clean_miou, 0.0, 1.0) / 5.0;
        std::map<CorruptionCategory, std::pair<double, int>> cat;
        for (const auto& info : corruption_table()) {
            cat[info.category].first += per[info.name];
            cat[info.category].second += 1;
        }
        double mean = 0.0;
        for (const auto& [k, v] : cat) mean += v.first / v.second / static_cast<double>(cat.size());
        CHECK(r.mce.mean == doctest::Approx(mean).epsilon(1e-12));
        fs::remove_all(c.out_dir);
    }
}

TEST_SUITE("sweep") {
    TEST_CASE("non-numeric keys are rejected") {
        const RunConfig c = tiny("darn_cli_sweep_bad");
        CHECK_THROWS_AS(cli::cmd_sweep(c, "tcp", {"true"}), ConfigError);
        CHECK_THROWS_AS(cli::cmd_sweep(c, "out_dir", {"x"}), ConfigError);
        CHECK_THROWS_AS(cli::cmd_sweep(c, "no_such_key", {"1"}), ConfigError);
        CHECK_THROWS_AS(cli::cmd_sweep(c, "beta", {}), ConfigError);
    }

    TEST_CASE("one row per value") {
        RunConfig c = tiny("darn_cli_sweep");
        c.epochs = 1;
        const auto rows = cli::cmd_sweep(c, "beta", {"0", "0.1"});
        REQUIRE(rows.size() == 2);
        CHECK(rows[0].value == "0");
        CHECK(lines(slurp(fs::path(c.out_dir) / "sweep.csv")) == 3);
        CHECK(fs::exists(fs::path(c.out_dir) / "sweep" / "beta=0.1" / "metrics.csv"));
        fs::remove_all(c.out_dir);
    }
}

TEST_SUITE("gradcheck") {
    TEST_CASE("every case passes") {
        const auto cases = cli::gradcheck_suite();
        CHECK(cases.size() >= 10);
        for (const auto& g : cases) {
            INFO(g.name << " " << g.max_rel_error);
            CHECK(g.passed);
            CHECK(g.max_rel_error < cli::kGradTolerance);
        }
    }

    TEST_CASE("negative control fails") {
        const auto cases = cli::gradcheck_suite(true);
        CHECK_FALSE(cases.back().passed);
        CHECK(cases.back().max_rel_error > cli::kGradTolerance);
    }
}

TEST_SUITE("gen-data") {
    TEST_CASE("writes the requested split") {
        RunConfig c = tiny("darn_cli_gen");
        const std::string path = (fs::path(c.out_dir) / "val.dsyn").string();
        CHECK(cli::cmd_gen_data(c, "val", path) == 4);
        const SampleBatch b = read_dsyn(path);
        CHECK(b.size() == 4);
        CHECK_THROWS_AS(cli::cmd_gen_data(c, "test", path), ConfigError);
        fs::remove_all(c.out_dir);
    }
}

TEST_SUITE("binary") {
    TEST_CASE("help lists every subcommand and config key") {
        std::string out;
        CHECK(run_cli("--help", &out) == 0);
        for (const char* s : {"train", "eval", "ablate", "robustness", "sweep", "gradcheck", "gen-data"})
            CHECK(out.find(s) != std::string::npos);
        for (const auto& k : config_keys()) CHECK(out.find(k.key) != std::string::npos);
    }

    TEST_CASE("gradcheck exit codes") {
        std::string out;
        CHECK(run_cli("gradcheck", &out) == 0);
        CHECK(out.find("FAIL") == std::string::npos);
        CHECK(run_cli("gradcheck --negative-control", &out) != 0);
        CHECK(out.find("FAIL") != std::string::npos);
    }

    TEST_CASE("unknown config key exits with a config error") {
        CHECK(run_cli("train --set bogus=1") == 2);
    }

    TEST_CASE("DARN_OUT_DIR redirects outputs") {
        const fs::path dir = fs::temp_directory_path() / "darn_cli_env";
        fs::remove_all(dir);
        const std::string env = "DARN_OUT_DIR=" + dir.string();
        CHECK(run_cli("train --set out_dir=/nonexistent/never --set epochs=0 --set decoder_width=4", nullptr, env) == 0);
        CHECK(fs::exists(dir / "metrics.csv"));
        CHECK(fs::exists(dir / "last.ckpt"));
        CHECK_FALSE(fs::exists("/nonexistent/never"));
        fs::remove_all(dir);
    }
}
