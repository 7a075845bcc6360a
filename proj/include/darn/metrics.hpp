#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "darn/objectives.hpp"

namespace darn {

// K x K pixel counts, rows = target class, columns = predicted class.
class ConfusionMatrix {
   public:
    explicit ConfusionMatrix(std::size_t classes = 0) : k_(classes), counts_(classes * classes, 0) {}

    void add(const LabelMask& pred, const LabelMask& target);
    std::size_t classes() const { return k_; }
    std::uint64_t at(std::size_t target, std::size_t pred) const { return counts_[target * k_ + pred]; }
    std::uint64_t row_sum(std::size_t target) const;
    std::uint64_t col_sum(std::size_t pred) const;

   private:
    std::size_t k_;
    std::vector<std::uint64_t> counts_;
};

struct MetricRecord {
    std::vector<double> per_class_iou;  // NaN for classes absent from both masks
    double miou = 0.0;
    ConfusionMatrix confusion;
};

// IoU_k = TP / (TP + FP + FN); classes with empty union are skipped by the mean.
MetricRecord miou_from_confusion(const ConfusionMatrix& cm);
MetricRecord miou(const LabelMask& pred, const LabelMask& target, std::size_t classes);

enum class CorruptionCategory { Noise, Blur, Digital, Weather };

std::string category_name(CorruptionCategory c);

struct CorruptionCell {
    std::string name;
    CorruptionCategory category;
    int severity;  // 1..5
    double miou;
};

struct MceReport {
    std::map<std::string, double> per_corruption;        // mean degradation over severities
    std::map<CorruptionCategory, double> per_category;   // mean over corruptions in the category
    double mean = 0.0;                                   // mean over categories present
};

// Relative degradation 1 - miou_corrupt / miou_clean, clamped to [0,1].
double degradation(double clean_miou, double corrupted_miou);

// Requires clean_miou > 0 and severities 1..5 for every corruption present;
// throws DomainError / FormatError otherwise.
MceReport mce(double clean_miou, const std::vector<CorruptionCell>& cells);

}  // namespace darn
