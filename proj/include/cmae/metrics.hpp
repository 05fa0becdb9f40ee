#pragma once

// confusion-matrix bookkeeping and the macro (one-vs-rest, equal class
// weight) metric family, plus the misclassification counts that matter for
// intrusion detection: benign traffic flagged as attack and attacks let
// through as benign.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cmae/data.hpp"

namespace cmae::eval {

struct ConfusionMatrix {
    // rows = actual class, columns = predicted class
    std::array<std::array<std::int64_t, data::kNumClasses>, data::kNumClasses> cells{};

    std::int64_t& at(int actual, int predicted) { return cells[actual][predicted]; }
    std::int64_t at(int actual, int predicted) const { return cells[actual][predicted]; }
    std::int64_t total() const;
    ConfusionMatrix& operator+=(const ConfusionMatrix& other);
};

ConfusionMatrix confusion(const std::vector<int>& predicted, const std::vector<int>& actual);

struct MacroReport {
    // percentages in [0, 100]
    double accuracy = 0;
    double precision = 0;
    double recall = 0;
    double f1 = 0;
    double fp_rate = 0;
    std::array<std::int64_t, data::kNumClasses> per_class_correct{};
    std::int64_t wrongly_detected = 0; // actual benign predicted as any attack
    std::int64_t missed_attacks = 0;   // actual attack predicted as benign

    // run context carried into reports
    std::string length = "-";
    std::string model = "-";
    std::string tokenizer = "-";
    double train_hours = 0;
    double predict_per_sec = 0;
};

MacroReport macro_metrics(const ConfusionMatrix& cm);
std::pair<std::int64_t, std::int64_t> security_counts(const ConfusionMatrix& cm);
std::array<std::int64_t, data::kNumClasses> per_class_correct(const ConfusionMatrix& cm);

enum class ReportFormat { Text, Csv };
std::string emit_report(const MacroReport& report, ReportFormat format);

struct PredictionRow {
    std::string source_id;
    int actual = -1; // -1 when the input was unlabeled
    int predicted = 0;
    std::array<double, data::kNumClasses> probabilities{};
};

// dump format: source_id,actual,predicted,p0..p6 (labels by class name,
// actual blank when unknown)
std::string format_predictions(const std::vector<PredictionRow>& rows);

} // namespace cmae::eval
