#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "darn/config.hpp"
#include "darn/decoder.hpp"
#include "darn/metrics.hpp"
#include "darn/trainer.hpp"

namespace darn::cli {

// ---- train -----------------------------------------------------------------
// Writes out_dir/metrics.csv, best.ckpt, last.ckpt. With `resume_from`, the
// checkpoint state is restored first and rows are appended.
TrainSummary cmd_train(const RunConfig& cfg, const std::string& resume_from = {}, std::ostream* log = nullptr);

// ---- eval ------------------------------------------------------------------
struct EvalReport {
    EvalResult result;
    double mean_c_simple = 0.0;  // NaN without a complexity head or samples
    double mean_c_complex = 0.0;
};
EvalReport cmd_eval(const RunConfig& cfg, const std::string& checkpoint);
void write_eval(std::ostream& out, const EvalReport& report);

// ---- ablate ----------------------------------------------------------------
std::string arm_slug(AblationArm arm);
RunConfig arm_config(RunConfig cfg, AblationArm arm);

struct ArmRun {
    AblationArm arm;
    std::uint64_t seed = 0;
    double best_miou = 0.0;
    double mean_c_simple = 0.0;
    double mean_c_complex = 0.0;
    std::vector<double> grad_norm_trace;
    std::string checkpoint;  // best.ckpt of this run
};

struct ArmSummary {
    AblationArm arm;
    double miou = 0.0;  // mean over seeds of the best validation mIoU
    double delta_vs_baseline = 0.0;
    double miou_std = 0.0;  // population std over seeds (0 for a single seed)
    std::size_t n_seeds = 0;
};

struct AblationReport {
    std::vector<ArmRun> runs;
    std::vector<ArmSummary> arms;  // ladder order
};

// Seeds cfg.seed, cfg.seed+1, ... Each arm/seed trains into
// out_dir/ablation/<arm>/seed<N>/. Writes out_dir/ablation.csv and
// out_dir/ablation_runs.csv.
AblationReport cmd_ablate(const RunConfig& cfg, std::size_t n_seeds = 1, std::ostream* log = nullptr);
void write_ablation_csv(std::ostream& out, const AblationReport& report);
void write_ablation_runs_csv(std::ostream& out, const AblationReport& report);

// ---- robustness --------------------------------------------------------------
struct RobustnessRow {
    std::string kind;  // clean, corruption, fgsm, category, mce
    std::string name;
    int severity = 0;
    double miou = 0.0;  // NaN on summary rows
    double degradation = 0.0;
};

struct RobustnessReport {
    double clean_miou = 0.0;
    std::vector<CorruptionCell> cells;
    double fgsm_miou = 0.0;
    double fgsm_max_linf = 0.0;  // max |x_adv - x| over every batch
    MceReport mce;
    std::vector<RobustnessRow> rows;
};

// Evaluates the validation split of `cfg` under the checkpointed model.
RobustnessReport robustness(const RunConfig& cfg, const Encoder& encoder, const Decoder& decoder);
RobustnessReport cmd_robustness(const RunConfig& cfg, const std::string& checkpoint);
void write_robustness_csv(std::ostream& out, const RobustnessReport& report);

// ---- sweep -----------------------------------------------------------------
struct SweepRow {
    std::string value;
    double best_miou = 0.0;
    double std_c_final = 0.0;
    double wall_seconds = 0.0;
};
// One full training run per value into out_dir/sweep/<key>=<value>/.
std::vector<SweepRow> cmd_sweep(const RunConfig& cfg, const std::string& key, const std::vector<std::string>& values,
                                std::ostream* log = nullptr);
void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows);

// ---- gradcheck -------------------------------------------------------------
struct GradCase {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t coordinates = 0;
    bool passed = false;
};
inline constexpr double kGradTolerance = 1e-4;
// `negative_control` adds a case whose backward is deliberately wrong.
std::vector<GradCase> gradcheck_suite(bool negative_control = false);
void write_gradcheck(std::ostream& out, const std::vector<GradCase>& cases);

// ---- gen-data --------------------------------------------------------------
// split: "train" or "val". Returns the number of samples written.
std::size_t cmd_gen_data(const RunConfig& cfg, const std::string& split, const std::string& path);

}  // namespace darn::cli
