#include "darn/commands.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <ostream>

#include "darn/error.hpp"
#include "darn/rng.hpp"
#include "darn/synth.hpp"

namespace darn::cli {

namespace fs = std::filesystem;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::pair<double, double> mean_c_by_tag(const std::vector<double>& c, const std::vector<ComplexityTag>& tags) {
    if (c.empty() || c.size() != tags.size()) return {kNaN, kNaN};
    double s[2] = {0, 0};
    std::size_t n[2] = {0, 0};
    for (std::size_t i = 0; i < c.size(); ++i) {
        const auto t = static_cast<std::size_t>(tags[i]);
        s[t] += c[i];
        ++n[t];
    }
    return {n[0] ? s[0] / static_cast<double>(n[0]) : kNaN, n[1] ? s[1] / static_cast<double>(n[1]) : kNaN};
}

void write_file(const fs::path& path, const std::function<void(std::ostream&)>& body) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    body(out);
    if (!out) throw Error("short write to " + path.string());
}

void log_record(std::ostream* log, const RunRecord& r) {
    if (!log) return;
    *log << r.run_id << " epoch " << r.epoch << " " << r.split << " loss=" << format_sig9(r.loss_total)
         << " miou=" << format_sig9(r.miou) << " mean_c=" << format_sig9(r.mean_c) << "\n";
    log->flush();
}

std::uint64_t corruption_seed(std::uint64_t seed, std::size_t corruption, int severity) {
    return mix_seed(mix_seed(seed, 0xC0441Full + corruption), static_cast<std::uint64_t>(severity));
}

}  // namespace

TrainSummary cmd_train(const RunConfig& cfg, const std::string& resume_from, std::ostream* log) {
    Trainer trainer(cfg);
    if (!resume_from.empty()) trainer.restore(load_checkpoint(resume_from));
    RunOptions opts;
    opts.run_id = "train";
    opts.on_record = [log](const RunRecord& r) { log_record(log, r); };
    return trainer.run(opts);
}

EvalReport cmd_eval(const RunConfig& cfg, const std::string& checkpoint) {
    validate(cfg);
    const LoadedModel m = load_model(cfg, load_checkpoint(checkpoint));
    const SampleBatch val = make_datasets(cfg).val;
    EvalReport rep;
    rep.result = evaluate(m.encoder, m.decoder, val.images, val.labels, cfg.batch_size, cfg.loss_weights());
    std::tie(rep.mean_c_simple, rep.mean_c_complex) = mean_c_by_tag(rep.result.c, val.tags);
    return rep;
}

void write_eval(std::ostream& out, const EvalReport& r) {
    out << "metric,value\n";
    out << "miou," << format_sig9(r.result.metrics.miou) << "\n";
    for (std::size_t k = 0; k < r.result.metrics.per_class_iou.size(); ++k) {
        out << "iou_class" << k << "," << format_sig9(r.result.metrics.per_class_iou[k]) << "\n";
    }
    out << "loss_total," << format_sig9(r.result.loss_total) << "\n";
    out << "loss_ce," << format_sig9(r.result.loss_ce) << "\n";
    out << "loss_dice," << format_sig9(r.result.loss_dice) << "\n";
    out << "loss_complexity," << format_sig9(r.result.loss_complexity) << "\n";
    out << "mean_c," << format_sig9(r.result.mean_c) << "\n";
    out << "std_c," << format_sig9(r.result.std_c) << "\n";
    out << "mean_c_simple," << format_sig9(r.mean_c_simple) << "\n";
    out << "mean_c_complex," << format_sig9(r.mean_c_complex) << "\n";
}

// ---------------------------------------------------------------------------

std::string arm_slug(AblationArm arm) {
    switch (arm) {
        case AblationArm::Baseline: return "baseline";
        case AblationArm::Tcp: return "tcp";
        case AblationArm::TcpAdm: return "tcp_adm";
        case AblationArm::TcpDcg: return "tcp_dcg";
        case AblationArm::Full: return "full";
    }
    return "unknown";
}

RunConfig arm_config(RunConfig cfg, AblationArm arm) {
    const DecoderConfig d = with_arm(cfg.decoder_config(), arm);
    cfg.tcp = d.tcp;
    cfg.adm = d.adm;
    cfg.dcg = d.dcg;
    return cfg;
}

AblationReport cmd_ablate(const RunConfig& base, std::size_t n_seeds, std::ostream* log) {
    if (n_seeds == 0) throw ConfigError("ablate: need at least one seed");
    AblationReport rep;
    for (auto arm : kAblationLadder) {
        for (std::size_t s = 0; s < n_seeds; ++s) {
            RunConfig cfg = arm_config(base, arm);
            cfg.seed = base.seed + s;
            cfg.out_dir = (fs::path(base.out_dir) / "ablation" / arm_slug(arm) / ("seed" + std::to_string(cfg.seed))).string();
            Trainer trainer(cfg);
            RunOptions opts;
            opts.run_id = arm_slug(arm) + "_seed" + std::to_string(cfg.seed);
            opts.on_record = [log](const RunRecord& r) { log_record(log, r); };
            const TrainSummary sum = trainer.run(opts);

            // Complexity scores of the best model on the validation split.
            const LoadedModel best = load_model(cfg, load_checkpoint((fs::path(cfg.out_dir) / "best.ckpt").string()));
            const EvalResult ev = evaluate(best.encoder, best.decoder, trainer.val_data().images,
                                           trainer.val_data().labels, cfg.batch_size, cfg.loss_weights());
            const auto [cs, cc] = mean_c_by_tag(ev.c, trainer.val_data().tags);
            rep.runs.push_back({arm, cfg.seed, sum.best_val_miou, cs, cc, sum.grad_norm_trace,
                                (fs::path(cfg.out_dir) / "best.ckpt").string()});
        }
    }
    double baseline = 0.0;
    for (auto arm : kAblationLadder) {
        ArmSummary a{arm, 0.0, 0.0, 0.0, 0};
        for (const auto& r : rep.runs)
            if (r.arm == arm) {
                a.miou += r.best_miou;
                ++a.n_seeds;
            }
        a.miou /= static_cast<double>(a.n_seeds);
        double var = 0.0;
        for (const auto& r : rep.runs)
            if (r.arm == arm) var += (r.best_miou - a.miou) * (r.best_miou - a.miou);
        a.miou_std = std::sqrt(var / static_cast<double>(a.n_seeds));
        if (arm == AblationArm::Baseline) baseline = a.miou;
        a.delta_vs_baseline = arm == AblationArm::Baseline ? 0.0 : a.miou - baseline;
        rep.arms.push_back(a);
    }
    write_file(fs::path(base.out_dir) / "ablation.csv", [&](std::ostream& o) { write_ablation_csv(o, rep); });
    write_file(fs::path(base.out_dir) / "ablation_runs.csv", [&](std::ostream& o) { write_ablation_runs_csv(o, rep); });
    return rep;
}

void write_ablation_csv(std::ostream& out, const AblationReport& rep) {
    out << "arm,miou,delta_vs_baseline,miou_std,n_seeds\n";
    for (const auto& a : rep.arms) {
        out << '"' << arm_name(a.arm) << "\"," << format_sig9(a.miou) << "," << format_sig9(a.delta_vs_baseline) << ","
            << format_sig9(a.miou_std) << "," << a.n_seeds << "\n";
    }
}

void write_ablation_runs_csv(std::ostream& out, const AblationReport& rep) {
    out << "arm,seed,best_miou,mean_c_simple,mean_c_complex\n";
    for (const auto& r : rep.runs) {
        out << '"' << arm_name(r.arm) << "\"," << r.seed << "," << format_sig9(r.best_miou) << ","
            << format_sig9(r.mean_c_simple) << "," << format_sig9(r.mean_c_complex) << "\n";
    }
}

// ---------------------------------------------------------------------------

RobustnessReport robustness(const RunConfig& cfg, const Encoder& encoder, const Decoder& decoder) {
    const SampleBatch val = make_datasets(cfg).val;
    const LossWeights w = cfg.loss_weights();
    const std::size_t bs = cfg.batch_size;
    RobustnessReport rep;
    rep.clean_miou = evaluate(encoder, decoder, val.images, val.labels, bs, w).metrics.miou;

    const auto& table = corruption_table();
    for (std::size_t ci = 0; ci < table.size(); ++ci) {
        for (int s = 1; s <= 5; ++s) {
            const Tensor x = corrupt(val.images, {table[ci].category, table[ci].name, s}, corruption_seed(cfg.seed, ci, s));
            const double m = evaluate(encoder, decoder, x, val.labels, bs, w).metrics.miou;
            rep.cells.push_back({table[ci].name, table[ci].category, s, m});
        }
    }

    // Adversarial copy of the validation split, attacked one batch at a time.
    const std::size_t n = val.size();
    std::vector<double> adv;
    adv.reserve(val.images.numel());
    Rng unused(0);
    const ImageLoss loss = [&](const Tensor& x, const LabelMask& y) {
        const DecodeResult out = decoder.decode(encoder.encode(x), Mode::Eval, unused);
        return total_loss(out.logits, y, out.state.c, w).total;
    };
    for (std::size_t b = 0; b < n; b += bs) {
        std::vector<std::size_t> idx;
        for (std::size_t i = b; i < std::min(n, b + bs); ++i) idx.push_back(i);
        const Tensor x = take_rows(val.images, idx);
        const Tensor xa = fgsm(loss, x, take_rows(val.labels, idx));
        const auto d0 = x.data();
        const auto d1 = xa.data();
        for (std::size_t i = 0; i < d0.size(); ++i) rep.fgsm_max_linf = std::max(rep.fgsm_max_linf, std::abs(d1[i] - d0[i]));
        adv.insert(adv.end(), d1.begin(), d1.end());
    }
    const Tensor adv_images = Tensor::from(val.images.shape(), std::move(adv));
    rep.fgsm_miou = evaluate(encoder, decoder, adv_images, val.labels, bs, w).metrics.miou;

    rep.mce = mce(rep.clean_miou, rep.cells);

    rep.rows.push_back({"clean", "clean", 0, rep.clean_miou, 0.0});
    for (const auto& c : rep.cells) rep.rows.push_back({"corruption", c.name, c.severity, c.miou, degradation(rep.clean_miou, c.miou)});
    rep.rows.push_back({"fgsm", "fgsm", 0, rep.fgsm_miou, degradation(rep.clean_miou, rep.fgsm_miou)});
    for (const auto& [cat, v] : rep.mce.per_category) rep.rows.push_back({"category", category_name(cat), 0, kNaN, v});
    rep.rows.push_back({"mce", "mean", 0, kNaN, rep.mce.mean});
    return rep;
}

RobustnessReport cmd_robustness(const RunConfig& cfg, const std::string& checkpoint) {
    if (checkpoint.empty() || !fs::exists(checkpoint)) throw FormatError("robustness: checkpoint not found: " + checkpoint);
    validate(cfg);
    const LoadedModel m = load_model(cfg, load_checkpoint(checkpoint));
    RobustnessReport rep = robustness(cfg, m.encoder, m.decoder);
    write_file(fs::path(cfg.out_dir) / "robustness.csv", [&](std::ostream& o) { write_robustness_csv(o, rep); });
    return rep;
}

void write_robustness_csv(std::ostream& out, const RobustnessReport& rep) {
    out << "kind,name,severity,miou,degradation\n";
    for (const auto& r : rep.rows) {
        out << r.kind << "," << r.name << "," << r.severity << "," << format_sig9(r.miou) << ","
            << format_sig9(r.degradation) << "\n";
    }
}

// ---------------------------------------------------------------------------

std::vector<SweepRow> cmd_sweep(const RunConfig& base, const std::string& key, const std::vector<std::string>& values,
                                std::ostream* log) {
    bool numeric = false;
    for (const auto& k : config_keys())
        if (k.key == key) numeric = k.numeric;
    if (!numeric) throw ConfigError("sweep: '" + key + "' is not a numeric config key");
    if (values.empty()) throw ConfigError("sweep: no values given");
    std::vector<SweepRow> rows;
    for (const auto& v : values) {
        RunConfig cfg = base;
        set_config_value(cfg, key, v);
        cfg.out_dir = (fs::path(base.out_dir) / "sweep" / (key + "=" + v)).string();
        const auto t0 = std::chrono::steady_clock::now();
        Trainer trainer(cfg);
        RunOptions opts;
        opts.run_id = key + "=" + v;
        opts.on_record = [log](const RunRecord& r) { log_record(log, r); };
        const TrainSummary sum = trainer.run(opts);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const double std_c = sum.records.empty() ? kNaN : sum.records.back().std_c;
        rows.push_back({v, sum.best_val_miou, std_c, secs});
    }
    write_file(fs::path(base.out_dir) / "sweep.csv", [&](std::ostream& o) { write_sweep_csv(o, rows); });
    return rows;
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
    out << "value,best_miou,std_c_final,wall_seconds\n";
    for (const auto& r : rows) {
        out << r.value << "," << format_sig9(r.best_miou) << "," << format_sig9(r.std_c_final) << ","
            << format_sig9(r.wall_seconds) << "\n";
    }
}

// ---------------------------------------------------------------------------

void write_gradcheck(std::ostream& out, const std::vector<GradCase>& cases) {
    for (const auto& c : cases) {
        out << (c.passed ? "PASS " : "FAIL ") << c.name << " max_rel_error=" << format_sig9(c.max_rel_error)
            << " coords=" << c.coordinates << "\n";
    }
}

std::size_t cmd_gen_data(const RunConfig& cfg, const std::string& split, const std::string& path) {
    validate(cfg);
    SceneConfig sc;
    sc.global_seed = cfg.seed;
    sc.height = sc.width = cfg.image_size;
    sc.channels = cfg.in_channels;
    sc.classes = cfg.num_classes;
    sc.complex_fraction = cfg.dataset_complex_fraction;
    if (split == "train") {
        sc.count = cfg.dataset_count;
    } else if (split == "val") {
        sc.count = cfg.dataset_val_count;
        sc.first_index = cfg.dataset_count;
    } else {
        throw ConfigError("gen-data: split must be 'train' or 'val'");
    }
    const SampleBatch b = generate(sc);
    if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
    write_dsyn(path, b, cfg.num_classes);
    return b.size();
}

}  // namespace darn::cli
