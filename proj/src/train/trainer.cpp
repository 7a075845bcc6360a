#include "darn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "darn/error.hpp"
#include "darn/objectives.hpp"
#include "darn/rng.hpp"

namespace darn {

namespace {

constexpr std::uint64_t kNoiseSalt = 0x6E6F697365ULL;

FeaturePyramid take_rows(const FeaturePyramid& p, const std::vector<std::size_t>& idx) {
    FeaturePyramid out;
    for (std::size_t l = 0; l < 4; ++l) out.levels[l] = take_rows(p.levels[l], idx);
    out.input_h = p.input_h;
    out.input_w = p.input_w;
    return out;
}

std::vector<std::size_t> iota_range(std::size_t begin, std::size_t end) {
    std::vector<std::size_t> v(end - begin);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = begin + i;
    return v;
}

// Encodes `images` in chunks so peak memory stays bounded.
FeaturePyramid encode_all(const Encoder& enc, const Tensor& images, std::size_t chunk) {
    const std::size_t n = images.dim(0);
    std::array<std::vector<double>, 4> data;
    std::array<Shape, 4> shapes;
    FeaturePyramid out;
    for (std::size_t b = 0; b < n; b += chunk) {
        const FeaturePyramid part = enc.encode(take_rows(images, iota_range(b, std::min(n, b + chunk))));
        for (std::size_t l = 0; l < 4; ++l) {
            const auto d = part.levels[l].data();
            data[l].insert(data[l].end(), d.begin(), d.end());
            shapes[l] = part.levels[l].shape();
        }
        out.input_h = part.input_h;
        out.input_w = part.input_w;
    }
    for (std::size_t l = 0; l < 4; ++l) {
        shapes[l][0] = n;
        out.levels[l] = Tensor::from(shapes[l], std::move(data[l]));
    }
    return out;
}

struct CStats {
    double mean = std::numeric_limits<double>::quiet_NaN();
    double std = std::numeric_limits<double>::quiet_NaN();
};

CStats c_stats(const std::vector<double>& c) {
    if (c.empty()) return {};
    double mean = 0.0;
    for (double v : c) mean += v;
    mean /= static_cast<double>(c.size());
    double var = 0.0;
    for (double v : c) var += (v - mean) * (v - mean);
    var /= static_cast<double>(c.size());
    return {mean, std::sqrt(var)};
}

// Shared eval loop; `pyramid_for` yields the features of rows [b, e).
template <typename PyramidFor>
EvalResult evaluate_impl(const Decoder& decoder, const LabelMask& labels, std::size_t batch_size,
                         const LossWeights& weights, PyramidFor&& pyramid_for) {
    if (batch_size == 0) throw ConfigError("evaluate: batch_size must be positive");
    const std::size_t n = labels.batch;
    const std::size_t k = decoder.config().num_classes;
    EvalResult res;
    ConfusionMatrix cm(k);
    Rng unused(0);
    for (std::size_t b = 0; b < n; b += batch_size) {
        const std::size_t e = std::min(n, b + batch_size);
        const auto idx = iota_range(b, e);
        const FeaturePyramid pyr = pyramid_for(b, e);
        const LabelMask target = take_rows(labels, idx);
        const DecodeResult out = decoder.decode(pyr, Mode::Eval, unused);
        const LossBreakdown loss = total_loss(out.logits, target, out.state.c, weights);
        const double w = static_cast<double>(e - b);
        res.loss_total += w * loss.total.item();
        res.loss_ce += w * loss.ce;
        res.loss_dice += w * loss.dice;
        res.loss_complexity += w * loss.complexity;
        cm.add(argmax(out.logits), target);
        if (out.state.c.defined()) {
            const auto c = out.state.c.data();
            res.c.insert(res.c.end(), c.begin(), c.end());
        }
    }
    if (n > 0) {
        const double inv = 1.0 / static_cast<double>(n);
        res.loss_total *= inv;
        res.loss_ce *= inv;
        res.loss_dice *= inv;
        res.loss_complexity *= inv;
    }
    res.metrics = miou_from_confusion(cm);
    const CStats s = c_stats(res.c);
    res.mean_c = s.mean;
    res.std_c = s.std;
    return res;
}

void append_text(const std::filesystem::path& path, const std::string& text, bool truncate) {
    std::ofstream out(path, truncate ? std::ios::trunc : std::ios::app);
    if (!out) throw TrainingError("cannot write " + path.string());
    out << text;
    if (!out) throw TrainingError("short write to " + path.string());
}

}  // namespace

std::string format_sig9(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

std::string run_record_header() {
    return "run_id,epoch,split,loss_total,loss_ce,loss_dice,loss_complexity,miou,mean_c,std_c,lr,grad_norm,seed";
}

std::string format_run_record(const RunRecord& r) {
    std::string s = r.run_id + "," + std::to_string(r.epoch) + "," + r.split;
    for (double v : {r.loss_total, r.loss_ce, r.loss_dice, r.loss_complexity, r.miou, r.mean_c, r.std_c, r.lr,
                     r.grad_norm}) {
        s += "," + format_sig9(v);
    }
    s += "," + std::to_string(r.seed);
    return s;
}

Tensor take_rows(const Tensor& t, const std::vector<std::size_t>& indices) {
    if (!t.defined() || t.rank() == 0) throw DimensionError("take_rows: need a tensor with a leading axis");
    const std::size_t rows = t.dim(0);
    const std::size_t stride = t.numel() / std::max<std::size_t>(rows, 1);
    std::vector<double> out;
    out.reserve(indices.size() * stride);
    const auto d = t.data();
    for (auto i : indices) {
        if (i >= rows) throw DimensionError("take_rows: index out of range");
        out.insert(out.end(), d.begin() + static_cast<std::ptrdiff_t>(i * stride),
                   d.begin() + static_cast<std::ptrdiff_t>((i + 1) * stride));
    }
    Shape shape = t.shape();
    shape[0] = indices.size();
    return Tensor::from(std::move(shape), std::move(out));
}

LabelMask take_rows(const LabelMask& m, const std::vector<std::size_t>& indices) {
    LabelMask out{indices.size(), m.height, m.width, {}};
    const std::size_t stride = m.height * m.width;
    out.data.reserve(indices.size() * stride);
    for (auto i : indices) {
        if (i >= m.batch) throw DimensionError("take_rows: index out of range");
        out.data.insert(out.data.end(), m.data.begin() + static_cast<std::ptrdiff_t>(i * stride),
                        m.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * stride));
    }
    return out;
}

EvalResult evaluate(const Encoder& encoder, const Decoder& decoder, const Tensor& images, const LabelMask& labels,
                    std::size_t batch_size, const LossWeights& weights) {
    if (!images.defined() || images.rank() != 4 || images.dim(0) != labels.batch) {
        throw DimensionError("evaluate: images and labels disagree on batch size");
    }
    return evaluate_impl(decoder, labels, batch_size, weights, [&](std::size_t b, std::size_t e) {
        return encoder.encode(take_rows(images, iota_range(b, e)));
    });
}

Datasets make_datasets(const RunConfig& cfg) {
    SceneConfig sc;
    sc.global_seed = cfg.seed;
    sc.height = sc.width = cfg.image_size;
    sc.channels = cfg.in_channels;
    sc.classes = cfg.num_classes;
    sc.complex_fraction = cfg.dataset_complex_fraction;
    sc.count = cfg.dataset_count;
    Datasets d;
    d.train = generate(sc);
    sc.count = cfg.dataset_val_count;
    sc.first_index = cfg.dataset_count;
    d.val = generate(sc);
    return d;
}

// ---------------------------------------------------------------------------

struct Trainer::EpochStats {
    double loss_total = 0.0, loss_ce = 0.0, loss_dice = 0.0, loss_complexity = 0.0;
    double grad_norm = 0.0;
    double lr = 0.0;
    double miou = 0.0;
    CStats c;
};

Trainer::Trainer(RunConfig cfg) : cfg_(std::move(cfg)) {
    validate(cfg_);
    Datasets data = make_datasets(cfg_);
    train_ = std::move(data.train);
    val_ = std::move(data.val);

    encoder_ = Encoder::build(cfg_.seed, cfg_.in_channels, cfg_.encoder_widths, cfg_.frozen);
    decoder_ = Decoder::build(cfg_.decoder_config(), cfg_.seed);
    adam_ = AdamW(cfg_.optimizer_config());

    const std::size_t total = cfg_.epochs * steps_per_epoch();
    schedule_.base_lr = cfg_.lr;
    schedule_.min_lr = cfg_.min_lr;
    schedule_.total_steps = total;
    // Short runs would otherwise never leave warmup.
    schedule_.warmup_steps = total == 0 ? 0 : std::min(cfg_.warmup_steps, total - 1);

    if (cfg_.frozen) {
        train_cache_ = encode_all(encoder_, train_.images, 64);
        val_cache_ = encode_all(encoder_, val_.images, 64);
    }
}

std::size_t Trainer::steps_per_epoch() const {
    return (cfg_.dataset_count + cfg_.batch_size - 1) / cfg_.batch_size;
}

bool Trainer::finished() const {
    if (epoch_ >= cfg_.epochs) return true;
    return cfg_.patience > 0 && epochs_since_best_ >= cfg_.patience;
}

std::vector<NamedTensor> Trainer::parameter_view() const {
    std::vector<NamedTensor> v = encoder_.parameters();
    const auto& d = decoder_.parameters();
    v.insert(v.end(), d.begin(), d.end());
    return v;
}

EvalResult Trainer::evaluate_validation() const {
    if (val_cache_) {
        return evaluate_impl(decoder_, val_.labels, cfg_.batch_size, cfg_.loss_weights(),
                             [&](std::size_t b, std::size_t e) { return take_rows(*val_cache_, iota_range(b, e)); });
    }
    return evaluate(encoder_, decoder_, val_.images, val_.labels, cfg_.batch_size, cfg_.loss_weights());
}

Trainer::EpochStats Trainer::train_epoch() {
    const std::size_t n = train_.size();
    std::vector<std::size_t> order = iota_range(0, n);
    {
        Rng shuffle(mix_seed(cfg_.seed, epoch_));
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
    }
    std::vector<NamedTensor> params = parameter_view();
    const LossWeights weights = cfg_.loss_weights();
    ConfusionMatrix cm(cfg_.num_classes);
    std::vector<double> all_c;
    EpochStats st;
    std::size_t steps = 0;

    for (std::size_t b = 0; b < n; b += cfg_.batch_size) {
        const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(b),
                                           order.begin() + static_cast<std::ptrdiff_t>(std::min(n, b + cfg_.batch_size)));
        const LabelMask target = take_rows(train_.labels, idx);
        const double lr = schedule_.lr_at(global_step_);
        Rng noise(mix_seed(cfg_.seed ^ kNoiseSalt, global_step_));

        for (auto& p : params) p.tensor.zero_grad();
        Tape tape;
        LossBreakdown loss;
        DecodeResult out;
        {
            Tape::Recording rec(tape);
            const FeaturePyramid pyr =
                train_cache_ ? take_rows(*train_cache_, idx) : encoder_.encode(take_rows(train_.images, idx));
            out = decoder_.decode(pyr, Mode::Train, noise);
            loss = total_loss(out.logits, target, out.state.c, weights);
        }
        const double total = loss.total.item();
        if (!std::isfinite(total)) {
            throw TrainingError("non-finite loss at epoch " + std::to_string(epoch_ + 1) + ", step " +
                                std::to_string(global_step_));
        }
        tape.backward(loss.total);
        const double gn = global_grad_norm(params);
        adam_.step(params, lr);

        const double w = static_cast<double>(idx.size());
        st.loss_total += w * total;
        st.loss_ce += w * loss.ce;
        st.loss_dice += w * loss.dice;
        st.loss_complexity += w * loss.complexity;
        st.grad_norm += gn;
        st.lr = lr;
        cm.add(argmax(out.logits), target);
        if (out.state.c.defined()) {
            const auto c = out.state.c.data();
            all_c.insert(all_c.end(), c.begin(), c.end());
        }
        ++steps;
        ++global_step_;
    }
    for (auto& p : params) p.tensor.zero_grad();
    if (n > 0) {
        const double inv = 1.0 / static_cast<double>(n);
        st.loss_total *= inv;
        st.loss_ce *= inv;
        st.loss_dice *= inv;
        st.loss_complexity *= inv;
    }
    if (steps > 0) st.grad_norm /= static_cast<double>(steps);
    st.miou = miou_from_confusion(cm).miou;
    st.c = c_stats(all_c);
    return st;
}

TrainSummary Trainer::run(const RunOptions& opts) {
    namespace fs = std::filesystem;
    TrainSummary summary;
    const fs::path dir(cfg_.out_dir);
    const bool fresh = epoch_ == 0;
    if (opts.write_files) {
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec || !fs::is_directory(dir)) throw TrainingError("cannot create output directory " + dir.string());
        if (fresh) {
            append_text(dir / "metrics.csv", run_record_header() + "\n", true);
            const Checkpoint initial = checkpoint();
            save_checkpoint((dir / "last.ckpt").string(), initial);
            save_checkpoint((dir / "best.ckpt").string(), initial);
        }
    }

    std::size_t done = 0;
    while (!finished() && done < opts.max_epochs) {
        const EpochStats tr = train_epoch();
        ++epoch_;
        ++done;
        const EvalResult va = evaluate_validation();

        RunRecord rt{opts.run_id, epoch_, "train", tr.loss_total, tr.loss_ce, tr.loss_dice, tr.loss_complexity,
                     tr.miou, tr.c.mean, tr.c.std, tr.lr, tr.grad_norm, cfg_.seed};
        RunRecord rv{opts.run_id,       epoch_,         "val",      va.loss_total,
                     va.loss_ce,        va.loss_dice,   va.loss_complexity, va.metrics.miou,
                     va.mean_c,         va.std_c,       tr.lr,      std::numeric_limits<double>::quiet_NaN(),
                     cfg_.seed};

        double metric = va.metrics.miou;
        if (opts.val_metric_override) metric = opts.val_metric_override(epoch_, metric);
        const bool improved = metric > best_val_miou_ + 1e-6;
        if (improved) {
            best_val_miou_ = metric;
            epochs_since_best_ = 0;
        } else {
            ++epochs_since_best_;
        }

        summary.grad_norm_trace.push_back(tr.grad_norm);
        for (const auto* r : {&rt, &rv}) {
            summary.records.push_back(*r);
            if (opts.on_record) opts.on_record(*r);
        }
        if (opts.write_files) {
            append_text(dir / "metrics.csv", format_run_record(rt) + "\n" + format_run_record(rv) + "\n", false);
            const Checkpoint ck = checkpoint();
            if (improved) save_checkpoint((dir / "best.ckpt").string(), ck);
            save_checkpoint((dir / "last.ckpt").string(), ck);
        }
    }
    summary.best_val_miou = best_val_miou_;
    summary.epochs_completed = epoch_;
    summary.early_stopped = epoch_ < cfg_.epochs && finished();
    return summary;
}

Checkpoint Trainer::checkpoint() const {
    Checkpoint c;
    c.epoch = static_cast<std::uint32_t>(epoch_);
    c.epochs_since_best = static_cast<std::uint32_t>(epochs_since_best_);
    c.best_val_miou = best_val_miou_;
    c.seed = cfg_.seed;
    c.global_step = global_step_;
    c.schedule = schedule_;
    c.adam = adam_.config();
    c.adam_steps = adam_.steps();
    for (const auto& p : parameter_view()) {
        const bool frozen = !p.tensor.requires_grad();
        const auto d = p.tensor.data();
        c.tensors.push_back({p.name, TensorKind::Param, frozen, p.tensor.shape(), {d.begin(), d.end()}});
    }
    for (const auto& [name, mom] : adam_.moments()) {
        Shape shape{mom.m.size()};
        for (const auto& p : parameter_view())
            if (p.name == name) shape = p.tensor.shape();
        c.tensors.push_back({name, TensorKind::AdamM, false, shape, mom.m});
        c.tensors.push_back({name, TensorKind::AdamV, false, shape, mom.v});
    }
    return c;
}

namespace {

void load_params(std::vector<NamedTensor>& params, const Checkpoint& ckpt) {
    for (auto& p : params) {
        const CheckpointTensor* t = ckpt.find(p.name, TensorKind::Param);
        if (!t) throw FormatError("checkpoint: missing parameter " + p.name);
        if (t->shape != p.tensor.shape()) {
            throw FormatError("checkpoint: parameter " + p.name + " has shape " + shape_str(t->shape) + ", expected " +
                              shape_str(p.tensor.shape()));
        }
        std::copy(t->data.begin(), t->data.end(), p.tensor.mutable_data().begin());
    }
    std::size_t n_params = 0;
    for (const auto& t : ckpt.tensors) n_params += t.kind == TensorKind::Param;
    if (n_params != params.size()) {
        throw FormatError("checkpoint: holds " + std::to_string(n_params) + " parameters, model has " +
                          std::to_string(params.size()));
    }
}

}  // namespace

void Trainer::restore(const Checkpoint& ckpt) {
    if (ckpt.seed != cfg_.seed) throw FormatError("checkpoint: seed does not match the configuration");
    std::vector<NamedTensor> params = parameter_view();
    load_params(params, ckpt);
    std::map<std::string, AdamWMoments> moments;
    for (const auto& t : ckpt.tensors) {
        if (t.kind == TensorKind::AdamM) moments[t.name].m = t.data;
        if (t.kind == TensorKind::AdamV) moments[t.name].v = t.data;
    }
    adam_ = AdamW(ckpt.adam);
    adam_.restore(ckpt.adam_steps, std::move(moments));
    schedule_ = ckpt.schedule;
    epoch_ = ckpt.epoch;
    epochs_since_best_ = ckpt.epochs_since_best;
    best_val_miou_ = ckpt.best_val_miou;
    global_step_ = ckpt.global_step;
    if (cfg_.frozen) {
        train_cache_ = encode_all(encoder_, train_.images, 64);
        val_cache_ = encode_all(encoder_, val_.images, 64);
    }
}

LoadedModel load_model(const RunConfig& cfg, const Checkpoint& ckpt) {
    LoadedModel m{Encoder::build(cfg.seed, cfg.in_channels, cfg.encoder_widths, cfg.frozen),
                  Decoder::build(cfg.decoder_config(), cfg.seed)};
    std::vector<NamedTensor> params = m.encoder.parameters();
    const auto& d = m.decoder.parameters();
    params.insert(params.end(), d.begin(), d.end());
    load_params(params, ckpt);
    return m;
}

}  // namespace darn
