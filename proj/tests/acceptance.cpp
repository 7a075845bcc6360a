// Acceptance runner: one PASS/FAIL line per criterion.
//
//   acceptance [--config FILE] [--only 1,2,...] [--expect-fail 6,...]
//
// Criteria listed in --expect-fail are still run and still print FAIL when
// they fail; they just do not affect the exit status. An expected failure that
// passes is reported as such.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "CLI11.hpp"
#include "darn/checkpoint.hpp"
#include "darn/commands.hpp"
#include "darn/decoder.hpp"
#include "darn/encoder.hpp"
#include "darn/objectives.hpp"
#include "darn/ops.hpp"
#include "darn/optim.hpp"
#include "darn/synth.hpp"
#include "darn/trainer.hpp"

using namespace darn;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string num(double v, int prec = 6) {
    std::ostringstream o;
    o << std::setprecision(prec) << v;
    return o.str();
}

// Shortest round-trip text, so exact values read as exact.
std::string exact(double v) {
    char buf[64];
    return std::string(buf, std::to_chars(buf, buf + sizeof buf, v).ptr);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

// ---------------------------------------------------------------------------

Outcome gradient_correctness() {
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path log = fs::temp_directory_path() / "darn_acceptance_gradcheck.txt";
    const std::string cmd = std::string(DARN_CLI_PATH) + " gradcheck > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    const double secs = seconds_since(t0);
    const std::string out = slurp(log);
    const auto n_pass = std::count(out.begin(), out.end(), '\n');
    const bool exit_ok = WIFEXITED(status) && WEXITSTATUS(status) == 0;
    const bool e2e = out.find("PASS end-to-end") != std::string::npos;
    return {exit_ok && e2e && out.find("FAIL") == std::string::npos && secs < 120.0,
            std::to_string(n_pass) + " cases, end-to-end " + (e2e ? "ok" : "missing") + ", " + num(secs, 3) + " s"};
}

Outcome closed_forms() {
    const Tensor p = adm_rate(Tensor::from({2}, {0.0, 1.0}));
    Tape tape;
    Tensor c = Tensor::from({1}, {0.5}, true);
    Tensor s;
    {
        Tape::Recording rec(tape);
        s = ops::reduce_all(adm_rate(c), ops::Reduce::Sum);
    }
    tape.backward(s);
    const Tensor g = gate_factor(Tensor::from({3}, {0.0, 0.5, 1.0}));
    const bool ok = p.data()[0] == 0.5 && p.data()[1] == 0.1 && c.grad()[0] == -0.4 && g.data()[0] == 0.3 &&
                    g.data()[1] == 0.65 && g.data()[2] == 1.0;
    return {ok, "p(0)=" + exact(p.data()[0]) + " p(1)=" + exact(p.data()[1]) + " dp/dc=" + exact(c.grad()[0]) +
                    " g={" + exact(g.data()[0]) + "," + exact(g.data()[1]) + "," + exact(g.data()[2]) + "}"};
}

Outcome loss_identity() {
    Rng rng(2024);
    double worst = 0.0, worst_reg = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t b = 1 + rng.below(4), k = 2 + rng.below(5), h = 4 * (1 + rng.below(3)), w = 4 * (1 + rng.below(3));
        std::vector<double> z(b * k * h * w), cv(b);
        for (auto& v : z) v = rng.uniform(-6.0, 6.0);
        for (auto& v : cv) v = rng.uniform(0.0, 1.0);
        LabelMask y{b, h, w, std::vector<std::uint8_t>(b * h * w)};
        for (auto& l : y.data) l = static_cast<std::uint8_t>(rng.below(k));
        const Tensor c = Tensor::from({b}, cv);
        const LossBreakdown l = total_loss(Tensor::from({b, k, h, w}, std::move(z)), y, c);
        worst = std::max(worst, std::abs(l.total.item() - (l.ce + 1.0 * l.dice + 0.05 * l.complexity)));

        // Independent regulariser: population variance plus squared offset of the mean.
        double mean = 0.0, var = 0.0;
        for (double v : cv) mean += v / static_cast<double>(b);
        for (double v : cv) var += (v - mean) * (v - mean) / static_cast<double>(b);
        worst_reg = std::max(worst_reg, std::abs(l.complexity - (var + (mean - 0.5) * (mean - 0.5))));
    }
    const double half = complexity_loss(Tensor::from({2}, {0.5, 0.5})).item();
    return {worst < 1e-12 && worst_reg < 1e-12 && half == 0.0,
            "max |total - sum| = " + num(worst, 3) + ", regulariser oracle " + num(worst_reg, 3) +
                ", complexity([0.5,0.5]) = " + num(half)};
}

Outcome equivalence_oracle() {
    const RunConfig rc;
    const Encoder enc = Encoder::build(rc.seed, rc.in_channels, rc.encoder_widths);
    SceneConfig sc;
    sc.global_seed = 77;
    sc.count = 4;
    const FeaturePyramid pyr = enc.encode(generate(sc).images);

    DecoderConfig full = rc.decoder_config();
    Decoder darn = Decoder::build(full, 9);
    // Zeroing the last TCP layer pins sigmoid(0) = 0.5 for every sample.
    for (const char* name : {"tcp.fc2.w", "tcp.fc2.b"})
        for (auto& v : darn.param(name).mutable_data()) v = 0.0;

    DecoderConfig base = with_arm(full, AblationArm::Baseline);
    base.dcg = true;
    base.fixed_gate = 0.65;
    base.fixed_p = 0.3;
    const Decoder ref = Decoder::build(base, 9);

    double worst = 0.0;
    bool pinned = true;
    for (Mode mode : {Mode::Train, Mode::Eval}) {
        Rng r1(3), r2(3);
        const DecodeResult a = darn.decode(pyr, mode, r1);
        const DecodeResult b = ref.decode(pyr, mode, r2);
        for (double c : a.state.c.data()) pinned = pinned && c == 0.5;
        for (std::size_t i = 0; i < a.logits.numel(); ++i)
            worst = std::max(worst, std::abs(a.logits.data()[i] - b.logits.data()[i]));
    }
    return {pinned && worst < 1e-10, "max |logit diff| = " + num(worst, 3) + " (train and eval modes)"};
}

// ---------------------------------------------------------------------------
// Trained criteria share one three-seed ablation run.

struct Trained {
    cli::AblationReport report;
    double seconds = 0.0;
    RunConfig cfg;
};

const cli::ArmRun* find_run(const Trained& t, AblationArm arm, std::uint64_t seed) {
    for (const auto& r : t.report.runs)
        if (r.arm == arm && r.seed == seed) return &r;
    return nullptr;
}

Outcome ablation_direction(const Trained& t) {
    std::ostringstream d;
    double base = 0.0, full = 0.0;
    for (const auto& a : t.report.arms) {
        if (a.arm == AblationArm::Baseline) base = a.miou;
        if (a.arm == AblationArm::Full) full = a.miou;
    }
    bool ladder_ok = true;
    for (const auto& a : t.report.arms) {
        ladder_ok = ladder_ok && a.miou >= base - 0.005;
        d << arm_name(a.arm) << "=" << num(100 * a.miou, 4) << " ";
    }
    const double gain = 100 * (full - base);
    d << "| full - baseline = " << num(gain, 3) << " pp | " << num(t.seconds, 4) << " s";
    return {gain >= 1.0 && ladder_ok && t.seconds < 900.0, d.str()};
}

Outcome complexity_separation(const Trained& t, std::size_t n_seeds) {
    std::ostringstream d;
    int wins = 0;
    for (std::size_t s = 0; s < n_seeds; ++s) {
        const cli::ArmRun* r = find_run(t, AblationArm::Full, t.cfg.seed + s);
        if (!r) continue;
        wins += r->mean_c_complex > r->mean_c_simple;
        d << "seed" << r->seed << " complex=" << num(r->mean_c_complex, 10) << " simple=" << num(r->mean_c_simple, 10)
          << "; ";
    }
    d << wins << "/" << n_seeds << " seeds";
    return {wins >= 2, d.str()};
}

Outcome robustness_direction(const Trained& t, std::size_t n_seeds) {
    std::ostringstream d;
    int wins = 0;
    double worst_linf = 0.0;
    for (std::size_t s = 0; s < n_seeds; ++s) {
        const std::uint64_t seed = t.cfg.seed + s;
        const cli::ArmRun* full = find_run(t, AblationArm::Full, seed);
        const cli::ArmRun* base = find_run(t, AblationArm::Baseline, seed);
        if (!full || !base) continue;
        const auto eval = [&](const cli::ArmRun& run) {
            const RunConfig cfg = cli::arm_config(t.cfg, run.arm);
            RunConfig seeded = cfg;
            seeded.seed = seed;
            const LoadedModel m = load_model(seeded, load_checkpoint(run.checkpoint));
            return cli::robustness(seeded, m.encoder, m.decoder);
        };
        const cli::RobustnessReport rf = eval(*full), rb = eval(*base);
        worst_linf = std::max({worst_linf, rf.fgsm_max_linf, rb.fgsm_max_linf});
        wins += rf.mce.mean <= rb.mce.mean;
        d << "seed" << seed << " mCE full=" << num(rf.mce.mean, 4) << " base=" << num(rb.mce.mean, 4) << "; ";
    }
    const bool linf_ok = worst_linf <= kFgsmEpsilon;
    d << wins << "/" << n_seeds << " seeds; max FGSM Linf = " << num(worst_linf, 10) << " (eps " << num(kFgsmEpsilon, 10)
      << ")";
    return {wins >= 2 && linf_ok, d.str()};
}

Outcome stationarity(const Trained& t, std::size_t n_seeds) {
    std::ostringstream d;
    bool all = true;
    for (std::size_t s = 0; s < n_seeds; ++s) {
        const cli::ArmRun* r = find_run(t, AblationArm::Full, t.cfg.seed + s);
        if (!r || r->grad_norm_trace.size() < 4) {
            all = false;
            continue;
        }
        const auto& g = r->grad_norm_trace;
        const std::size_t q = g.size() / 4;
        double first = 0.0, last = 0.0;
        for (std::size_t i = 0; i < q; ++i) {
            first += g[i] / static_cast<double>(q);
            last += g[g.size() - q + i] / static_cast<double>(q);
        }
        all = all && last < first;
        d << "seed" << r->seed << " q1=" << num(first, 4) << " q4=" << num(last, 4) << "; ";
    }
    return {all, d.str() + "(full arm)"};
}

// ---------------------------------------------------------------------------

bool same_state(const Trainer& a, const Trainer& b) {
    const auto pa = a.decoder().parameters(), pb = b.decoder().parameters();
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i)
        if (values(pa[i].tensor) != values(pb[i].tensor)) return false;
    return a.global_step() == b.global_step();
}

Outcome determinism(const RunConfig& acc) {
    RunConfig cfg = acc;
    cfg.dataset_count = 64;
    cfg.dataset_val_count = 32;
    cfg.epochs = 6;
    cfg.warmup_steps = 8;
    const fs::path root = fs::path(acc.out_dir) / "determinism";
    fs::remove_all(root);

    RunConfig a = cfg, b = cfg;
    a.out_dir = (root / "a").string();
    b.out_dir = (root / "b").string();
    a.epochs = b.epochs = 3;
    Trainer(a).run();
    Trainer(b).run();
    const bool same_csv = slurp(fs::path(a.out_dir) / "metrics.csv") == slurp(fs::path(b.out_dir) / "metrics.csv");

    // 3 epochs, save, reload in a fresh trainer, 3 more epochs vs 6 straight.
    RunConfig straight = cfg, split = cfg;
    straight.out_dir = (root / "straight").string();
    split.out_dir = (root / "split").string();
    Trainer whole(straight);
    const auto enc_before = checksum(whole.encoder().parameters());
    whole.run();
    const bool frozen_ok = checksum(whole.encoder().parameters()) == enc_before;

    {
        Trainer first(split);
        RunOptions o;
        o.max_epochs = 3;
        first.run(o);
    }
    Trainer second(split);
    second.restore(load_checkpoint((fs::path(split.out_dir) / "last.ckpt").string()));
    second.run();
    const bool resumed = same_state(second, whole);
    const bool csv_resumed = slurp(fs::path(split.out_dir) / "metrics.csv") == slurp(fs::path(straight.out_dir) / "metrics.csv");

    return {same_csv && resumed && csv_resumed && frozen_ok,
            std::string("repeat csv ") + (same_csv ? "identical" : "DIFFERS") + ", resume params " +
                (resumed ? "bit-exact" : "DIFFER") + ", resume csv " + (csv_resumed ? "identical" : "DIFFERS") +
                ", encoder checksum " + (frozen_ok ? "unchanged" : "CHANGED")};
}

Outcome optimizer_exactness() {
    std::ostringstream d;
    std::vector<NamedTensor> ps{{"w", Tensor::scalar(1.0, true)}};
    ps[0].tensor.zero_grad();
    ps[0].tensor.mutable_grad()[0] = 0.1;
    AdamW opt;
    opt.step(ps, 1e-3);
    const double want = 1.0 - 1e-3 * (0.1 / (0.1 + 1e-8)) - 1e-3 * 0.05;
    const double step_err = std::abs(ps[0].tensor.item() - want);

    const CosineSchedule s{1e-3, 1e-5, 10, 110};
    const double mid_err = std::abs(s.lr_at(60) - (1e-3 + 1e-5) / 2);
    const bool ends = s.lr_at(10) == 1e-3 && s.lr_at(110) == 1e-5;

    std::vector<NamedTensor> q{{"theta", Tensor::scalar(5.0, true)}};
    AdamWConfig qc;
    qc.weight_decay = 0.0;
    AdamW qopt(qc);
    for (int i = 0; i < 500; ++i) {
        q[0].tensor.zero_grad();
        q[0].tensor.mutable_grad()[0] = 2.0 * q[0].tensor.item();
        qopt.step(q, 0.05);
    }
    const double theta = q[0].tensor.item();
    d << "step " << num(ps[0].tensor.item(), 12) << " (err " << num(step_err, 3) << "), lr endpoints "
      << (ends ? "exact" : "WRONG") << ", midpoint err " << num(mid_err, 3) << ", quadratic |theta| = " << num(std::abs(theta), 3);
    return {step_err <= 1e-12 && ends && mid_err <= 1e-12 && std::abs(theta) < 1e-2, d.str()};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria runner"};
    std::string config_path = std::string(DARN_SOURCE_DIR) + "/configs/acceptance.cfg";
    std::vector<int> only, expect_fail;
    std::size_t n_seeds = 3;
    app.add_option("--config", config_path, "config for the trained criteria")->check(CLI::ExistingFile);
    app.add_option("--only", only, "run only these criteria")->delimiter(',');
    app.add_option("--expect-fail", expect_fail, "criteria whose failure does not change the exit status")->delimiter(',');
    app.add_option("--seeds", n_seeds, "seeds for the trained criteria");
    CLI11_PARSE(app, argc, argv);

    RunConfig acc = load_config(config_path);
    apply_environment(acc);
    validate(acc);
    const std::set<int> wanted(only.begin(), only.end()), xfail(expect_fail.begin(), expect_fail.end());
    const auto want = [&](int k) { return wanted.empty() || wanted.count(k); };

    Trained trained;
    trained.cfg = acc;
    if (want(5) || want(6) || want(7) || want(8)) {
        std::cerr << "training " << kAblationLadder.size() << " arms x " << n_seeds << " seeds into " << acc.out_dir << "\n";
        const auto t0 = std::chrono::steady_clock::now();
        trained.report = cli::cmd_ablate(acc, n_seeds);
        trained.seconds = seconds_since(t0);
    }

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gradient correctness", gradient_correctness},
        {"closed-form rate and gate constants", closed_forms},
        {"loss identity", loss_identity},
        {"pinned-complexity equivalence", equivalence_oracle},
        {"ablation direction", [&] { return ablation_direction(trained); }},
        {"complexity separation", [&] { return complexity_separation(trained, n_seeds); }},
        {"robustness direction", [&] { return robustness_direction(trained, n_seeds); }},
        {"gradient-norm trend", [&] { return stationarity(trained, n_seeds); }},
        {"determinism and persistence", [&] { return determinism(acc); }},
        {"optimizer and schedule exactness", optimizer_exactness},
    };

    int unexpected = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int k = static_cast<int>(i) + 1;
        if (!want(k)) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const bool expected = xfail.count(k) > 0;
        std::string tag = o.pass ? "PASS" : "FAIL";
        if (expected) tag += o.pass ? " (expected failure, passed)" : " (expected)";
        std::cout << "criterion " << std::setw(2) << k << ": " << tag << "  " << criteria[i].first << " -- " << o.detail
                  << std::endl;
        if (!o.pass && !expected) ++unexpected;
    }
    return unexpected == 0 ? 0 : 1;
}
