#include "darn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "darn/error.hpp"

namespace darn {

void ConfusionMatrix::add(const LabelMask& pred, const LabelMask& target) {
    if (pred.data.size() != target.data.size() || pred.batch != target.batch || pred.height != target.height ||
        pred.width != target.width) {
        throw DimensionError("confusion: prediction and target masks differ in shape");
    }
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const std::size_t t = target.data[i], p = pred.data[i];
        if (t >= k_ || p >= k_) throw DomainError("confusion: label outside [0,K)");
        ++counts_[t * k_ + p];
    }
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t target) const {
    std::uint64_t s = 0;
    for (std::size_t p = 0; p < k_; ++p) s += at(target, p);
    return s;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t pred) const {
    std::uint64_t s = 0;
    for (std::size_t t = 0; t < k_; ++t) s += at(t, pred);
    return s;
}

MetricRecord miou_from_confusion(const ConfusionMatrix& cm) {
    MetricRecord r;
    r.confusion = cm;
    const std::size_t k = cm.classes();
    r.per_class_iou.assign(k, std::numeric_limits<double>::quiet_NaN());
    double sum = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < k; ++c) {
        const std::uint64_t tp = cm.at(c, c);
        const std::uint64_t uni = cm.row_sum(c) + cm.col_sum(c) - tp;
        if (uni == 0) continue;
        r.per_class_iou[c] = static_cast<double>(tp) / static_cast<double>(uni);
        sum += r.per_class_iou[c];
        ++present;
    }
    r.miou = present == 0 ? 0.0 : sum / static_cast<double>(present);
    return r;
}

MetricRecord miou(const LabelMask& pred, const LabelMask& target, std::size_t classes) {
    ConfusionMatrix cm(classes);
    cm.add(pred, target);
    return miou_from_confusion(cm);
}

std::string category_name(CorruptionCategory c) {
    switch (c) {
        case CorruptionCategory::Noise: return "Noise";
        case CorruptionCategory::Blur: return "Blur";
        case CorruptionCategory::Digital: return "Digital";
        case CorruptionCategory::Weather: return "Weather";
    }
    return "?";
}

double degradation(double clean_miou, double corrupted_miou) {
    if (!(clean_miou > 0.0)) throw DomainError("degradation: clean mIoU must be positive");
    return std::clamp(1.0 - corrupted_miou / clean_miou, 0.0, 1.0);
}

MceReport mce(double clean_miou, const std::vector<CorruptionCell>& cells) {
    if (!(clean_miou > 0.0)) throw DomainError("mce: clean mIoU must be positive");
    if (cells.empty()) throw FormatError("mce: no corruption cells");

    struct Acc {
        CorruptionCategory category;
        std::set<int> severities;
        double sum = 0.0;
    };
    std::map<std::string, Acc> by_name;
    for (const auto& cell : cells) {
        if (cell.severity < 1 || cell.severity > 5) {
            throw FormatError("mce: severity " + std::to_string(cell.severity) + " outside 1..5 for " + cell.name);
        }
        auto [it, inserted] = by_name.try_emplace(cell.name, Acc{cell.category, {}, 0.0});
        if (!it->second.severities.insert(cell.severity).second) {
            throw FormatError("mce: duplicate severity " + std::to_string(cell.severity) + " for " + cell.name);
        }
        it->second.sum += degradation(clean_miou, cell.miou);
    }

    MceReport rep;
    std::map<CorruptionCategory, std::pair<double, std::size_t>> cat;
    for (const auto& [name, acc] : by_name) {
        if (acc.severities.size() != 5) {
            throw FormatError("mce: incomplete severity grid for " + name + " (" + std::to_string(acc.severities.size()) +
                              " of 5)");
        }
        const double m = acc.sum / 5.0;
        rep.per_corruption[name] = m;
        auto& c = cat[acc.category];
        c.first += m;
        c.second += 1;
    }
    double total = 0.0;
    for (const auto& [c, acc] : cat) {
        rep.per_category[c] = acc.first / static_cast<double>(acc.second);
        total += rep.per_category[c];
    }
    rep.mean = total / static_cast<double>(rep.per_category.size());
    return rep;
}

}  // namespace darn
