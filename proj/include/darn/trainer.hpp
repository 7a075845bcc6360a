#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "darn/checkpoint.hpp"
#include "darn/config.hpp"
#include "darn/decoder.hpp"
#include "darn/encoder.hpp"
#include "darn/metrics.hpp"
#include "darn/optim.hpp"
#include "darn/synth.hpp"

namespace darn {

// One metrics.csv row.
struct RunRecord {
    std::string run_id;
    std::size_t epoch = 0;  // 1-based
    std::string split;      // "train" or "val"
    double loss_total = 0.0;
    double loss_ce = 0.0;
    double loss_dice = 0.0;
    double loss_complexity = 0.0;
    double miou = 0.0;
    double mean_c = 0.0;  // NaN without a complexity head
    double std_c = 0.0;
    double lr = 0.0;
    double grad_norm = 0.0;  // NaN on validation rows
    std::uint64_t seed = 0;
};

// %.9g, with "nan", "inf", "-inf" spelled out.
std::string format_sig9(double v);
std::string run_record_header();
std::string format_run_record(const RunRecord& r);

struct EvalResult {
    MetricRecord metrics;
    double loss_total = 0.0;
    double loss_ce = 0.0;
    double loss_dice = 0.0;
    double loss_complexity = 0.0;
    std::vector<double> c;  // per sample; empty without a complexity head
    double mean_c = std::numeric_limits<double>::quiet_NaN();
    double std_c = std::numeric_limits<double>::quiet_NaN();
};

// Eval-mode pass over `images` in chunks of `batch_size`. mIoU comes from a
// single confusion matrix accumulated over every pixel; losses are
// sample-weighted means of per-chunk values.
EvalResult evaluate(const Encoder& encoder, const Decoder& decoder, const Tensor& images, const LabelMask& labels,
                    std::size_t batch_size, const LossWeights& weights);

// Rows `indices` of the leading axis.
Tensor take_rows(const Tensor& t, const std::vector<std::size_t>& indices);
LabelMask take_rows(const LabelMask& m, const std::vector<std::size_t>& indices);

// Train split: sample indices 0..count-1; validation continues the index
// range, so the two never overlap.
struct Datasets {
    SampleBatch train;
    SampleBatch val;
};
Datasets make_datasets(const RunConfig& cfg);

struct RunOptions {
    std::string run_id = "train";
    bool write_files = true;  // metrics.csv, best.ckpt, last.ckpt under out_dir
    // Stop after this many epochs in this call (training can be resumed).
    std::size_t max_epochs = std::numeric_limits<std::size_t>::max();
    std::function<void(const RunRecord&)> on_record;
    // Test hook: replaces the validation mIoU used for early stopping.
    std::function<double(std::size_t epoch, double miou)> val_metric_override;
};

struct TrainSummary {
    std::vector<RunRecord> records;
    std::vector<double> grad_norm_trace;  // per-epoch mean of the global gradient norm
    double best_val_miou = 0.0;
    std::size_t epochs_completed = 0;
    bool early_stopped = false;
};

// Owns data, frozen-or-trainable encoder, decoder, optimizer and schedule.
// Randomness: data from (seed, sample index); epoch shuffles from
// mix_seed(seed, epoch); dropout noise from a stream keyed by the global step.
// Consequently the whole trajectory is a function of the checkpointed state.
class Trainer {
   public:
    explicit Trainer(RunConfig cfg);

    TrainSummary run(const RunOptions& opts = {});

    bool finished() const;
    std::size_t epoch() const { return epoch_; }
    std::size_t global_step() const { return global_step_; }
    std::size_t steps_per_epoch() const;
    double best_val_miou() const { return best_val_miou_; }
    std::size_t epochs_since_best() const { return epochs_since_best_; }

    const RunConfig& config() const { return cfg_; }
    const Encoder& encoder() const { return encoder_; }
    const Decoder& decoder() const { return decoder_; }
    Decoder& decoder() { return decoder_; }
    const SampleBatch& train_data() const { return train_; }
    const SampleBatch& val_data() const { return val_; }
    const CosineSchedule& schedule() const { return schedule_; }
    const AdamW& optimizer() const { return adam_; }

    EvalResult evaluate_validation() const;

    Checkpoint checkpoint() const;
    // Replaces model, optimizer and loop state. Throws FormatError when the
    // checkpoint does not match this configuration's parameter set.
    void restore(const Checkpoint& ckpt);

   private:
    struct EpochStats;
    EpochStats train_epoch();
    // Encoder then decoder parameters; handles share storage with the model.
    std::vector<NamedTensor> parameter_view() const;

    RunConfig cfg_;
    SampleBatch train_;
    SampleBatch val_;
    Encoder encoder_;
    Decoder decoder_;
    AdamW adam_;
    CosineSchedule schedule_;
    std::optional<FeaturePyramid> train_cache_;  // frozen encoder only
    std::optional<FeaturePyramid> val_cache_;

    std::size_t epoch_ = 0;
    std::size_t global_step_ = 0;
    std::size_t epochs_since_best_ = 0;
    double best_val_miou_ = -std::numeric_limits<double>::infinity();
};

// Loads a checkpoint's parameters into a freshly built encoder/decoder pair.
struct LoadedModel {
    Encoder encoder;
    Decoder decoder;
};
LoadedModel load_model(const RunConfig& cfg, const Checkpoint& ckpt);

}  // namespace darn
