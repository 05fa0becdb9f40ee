#include "cmae/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

namespace cmae::eval {

std::int64_t ConfusionMatrix::total() const {
    std::int64_t n = 0;
    for (const auto& row : cells)
        for (std::int64_t v : row) n += v;
    return n;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
    for (int r = 0; r < data::kNumClasses; ++r)
        for (int c = 0; c < data::kNumClasses; ++c) cells[r][c] += other.cells[r][c];
    return *this;
}

ConfusionMatrix confusion(const std::vector<int>& predicted, const std::vector<int>& actual) {
    if (predicted.size() != actual.size())
        raise(ErrorCode::InputError,
              "prediction count " + std::to_string(predicted.size()) +
                  " does not match label count " + std::to_string(actual.size()));
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const int y = actual[i];
        const int y_hat = predicted[i];
        if (y < 0 || y >= data::kNumClasses || y_hat < 0 || y_hat >= data::kNumClasses)
            raise(ErrorCode::InputError,
                  "class code out of range at sample " + std::to_string(i));
        ++cm.cells[static_cast<std::size_t>(y)][static_cast<std::size_t>(y_hat)];
    }
    return cm;
}

std::pair<std::int64_t, std::int64_t> security_counts(const ConfusionMatrix& cm) {
    std::int64_t wrongly_detected = 0, missed_attacks = 0;
    for (int c = 1; c < data::kNumClasses; ++c) {
        wrongly_detected += cm.at(0, c); // actual benign, predicted attack c
        missed_attacks += cm.at(c, 0);   // actual attack c, predicted benign
    }
    return {wrongly_detected, missed_attacks};
}

std::array<std::int64_t, data::kNumClasses> per_class_correct(const ConfusionMatrix& cm) {
    std::array<std::int64_t, data::kNumClasses> diag{};
    for (int c = 0; c < data::kNumClasses; ++c) diag[static_cast<std::size_t>(c)] = cm.at(c, c);
    return diag;
}

MacroReport macro_metrics(const ConfusionMatrix& cm) {
    MacroReport report;
    const double total = static_cast<double>(cm.total());

    double acc_sum = 0, prec_sum = 0, rec_sum = 0, f1_sum = 0, fpr_sum = 0;
    for (int i = 0; i < data::kNumClasses; ++i) {
        const double tp = static_cast<double>(cm.at(i, i));
        double fn = 0, fp = 0;
        for (int j = 0; j < data::kNumClasses; ++j) {
            if (j == i) continue;
            fn += static_cast<double>(cm.at(i, j));
            fp += static_cast<double>(cm.at(j, i));
        }
        const double tn = total - tp - fp - fn;

        // zero-denominator rates are defined as 0 and still averaged
        const double accuracy = total > 0 ? (tp + tn) / total : 0.0;
        const double precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
        const double recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
        const double f1 = precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
        const double fp_rate = fp + tn > 0 ? fp / (fp + tn) : 0.0;
        acc_sum += accuracy;
        prec_sum += precision;
        rec_sum += recall;
        f1_sum += f1;
        fpr_sum += fp_rate;
    }

    const double n = static_cast<double>(data::kNumClasses);
    report.accuracy = acc_sum / n * 100.0;
    report.precision = prec_sum / n * 100.0;
    report.recall = rec_sum / n * 100.0;
    report.f1 = f1_sum / n * 100.0;
    report.fp_rate = fpr_sum / n * 100.0;
    report.per_class_correct = per_class_correct(cm);
    const auto [wrongly, missed] = security_counts(cm);
    report.wrongly_detected = wrongly;
    report.missed_attacks = missed;
    return report;
}

namespace {

std::string fixed4(double v) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(4) << v;
    return out.str();
}

} // namespace

std::string emit_report(const MacroReport& r, ReportFormat format) {
    static const char* kColumns[] = {"Length",        "Model",         "Tokenizer", "Accuracy",
                                     "Precision",     "Recall",        "F1",        "FPRate",
                                     "WronglyDetected", "MissedAttacks", "TrainHours",
                                     "PredictPerSec"};
    const std::string values[] = {r.length,
                                  r.model,
                                  r.tokenizer,
                                  fixed4(r.accuracy),
                                  fixed4(r.precision),
                                  fixed4(r.recall),
                                  fixed4(r.f1),
                                  fixed4(r.fp_rate),
                                  std::to_string(r.wrongly_detected),
                                  std::to_string(r.missed_attacks),
                                  fixed4(r.train_hours),
                                  fixed4(r.predict_per_sec)};
    constexpr std::size_t kCount = sizeof(kColumns) / sizeof(kColumns[0]);

    std::ostringstream out;
    if (format == ReportFormat::Csv) {
        for (std::size_t i = 0; i < kCount; ++i) out << (i ? "," : "") << kColumns[i];
        out << '\n';
        for (std::size_t i = 0; i < kCount; ++i) out << (i ? "," : "") << values[i];
        out << '\n';
        return out.str();
    }

    std::size_t widths[kCount];
    for (std::size_t i = 0; i < kCount; ++i)
        widths[i] = std::max(std::string(kColumns[i]).size(), values[i].size());
    for (std::size_t i = 0; i < kCount; ++i)
        out << (i ? "  " : "") << std::left << std::setw(static_cast<int>(widths[i])) << kColumns[i];
    out << '\n';
    for (std::size_t i = 0; i < kCount; ++i)
        out << (i ? "  " : "") << std::left << std::setw(static_cast<int>(widths[i])) << values[i];
    out << '\n';
    out << "per-class correct:";
    for (int c = 0; c < data::kNumClasses; ++c)
        out << ' ' << data::class_name(static_cast<data::ClassLabel>(c)) << '='
            << r.per_class_correct[static_cast<std::size_t>(c)];
    out << '\n';
    out << "note: per-class rates with a zero denominator are defined as 0 and included in "
           "macro averages\n";
    return out.str();
}

std::string format_predictions(const std::vector<PredictionRow>& rows) {
    std::ostringstream out;
    out << "source_id,actual,predicted";
    for (int c = 0; c < data::kNumClasses; ++c) out << ",p" << c;
    out << '\n';
    out << std::fixed << std::setprecision(6);
    for (const auto& row : rows) {
        out << row.source_id << ',';
        if (row.actual >= 0) out << data::class_name(static_cast<data::ClassLabel>(row.actual));
        out << ',' << data::class_name(static_cast<data::ClassLabel>(row.predicted));
        for (double p : row.probabilities) out << ',' << p;
        out << '\n';
    }
    return out.str();
}

} // namespace cmae::eval
