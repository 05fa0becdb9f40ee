#pragma once

// optimization loop: AdaBelief updates, plateau-driven learning-rate decay,
// early stopping with best-weight restoration, and per-epoch history.

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "cmae/data.hpp"
#include "cmae/errors.hpp"
#include "cmae/model.hpp"

namespace cmae::train {

enum class Monitor { ValidationLoss, ValidationAccuracy };

struct TrainConfig {
    std::int64_t epochs = 50;
    std::int64_t batch_size = 64;
    std::int64_t infer_batch_size = 256; // validation/inference batching, 8..2048
    double lr = 5e-4;
    double eps = 1e-16;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double scheduler_factor = 0.3;
    std::int64_t scheduler_patience = 2;
    double min_lr = 1e-5;
    std::int64_t early_stop_patience = 5;
    Monitor monitor = Monitor::ValidationLoss;
    std::uint64_t seed = 1;

    void validate() const;
};

// first/belief moments kept in 64-bit regardless of parameter precision so
// the tiny epsilon (1e-16) participates in the accumulation faithfully.
template <typename T>
class AdaBelief {
public:
    AdaBelief(std::vector<model::NamedParam<T>> trainable, const TrainConfig& config)
        : config_(config) {
        for (auto& p : trainable) {
            if (!p.trainable()) continue; // frozen parameters carry no state
            Slot s;
            s.param = p.node;
            s.m.assign(static_cast<std::size_t>(p.node->value.numel()), 0.0);
            s.s.assign(static_cast<std::size_t>(p.node->value.numel()), 0.0);
            slots_.push_back(std::move(s));
        }
    }

    double& lr() { return config_.lr; }
    double lr() const { return config_.lr; }
    std::int64_t step_count() const { return t_; }

    // applies one update from the gradients currently stored on the nodes.
    // a missing gradient (never touched by backward) counts as zero.
    void step() {
        for (const auto& slot : slots_)
            for (const T g : slot.param->grad.data)
                if (!std::isfinite(static_cast<double>(g)))
                    raise(ErrorCode::NumericalError, "non-finite gradient; step aborted");

        ++t_;
        const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
        for (auto& slot : slots_) {
            const bool has_grad = !slot.param->grad.data.empty();
            auto& theta = slot.param->value.data;
            for (std::size_t i = 0; i < theta.size(); ++i) {
                const double g = has_grad ? static_cast<double>(slot.param->grad.data[i]) : 0.0;
                double& m = slot.m[i];
                double& s = slot.s[i];
                m = config_.beta1 * m + (1.0 - config_.beta1) * g;
                const double diff = g - m;
                s = config_.beta2 * s + (1.0 - config_.beta2) * diff * diff + config_.eps;
                const double m_hat = m / bc1;
                const double s_hat = s / bc2;
                const double th = static_cast<double>(theta[i]);
                theta[i] = static_cast<T>(
                    th - config_.lr * (m_hat / (std::sqrt(s_hat) + config_.eps) +
                                       config_.weight_decay * th));
            }
        }
    }

private:
    struct Slot {
        nn::NodePtr<T> param;
        std::vector<double> m, s;
    };
    std::vector<Slot> slots_;
    TrainConfig config_;
    std::int64_t t_ = 0;
};

// reduce-on-plateau: after `patience` consecutive epochs without strict
// improvement, multiply lr by factor (floored at min_lr) and reset the
// stall counter. improvement resets counter and best.
class PlateauScheduler {
public:
    PlateauScheduler(double initial_lr, double factor, std::int64_t patience, double min_lr,
                     bool higher_is_better = false);
    double feed(double metric); // returns the lr in force after this epoch
    double lr() const { return lr_; }

private:
    bool improved(double metric) const;
    double lr_;
    double factor_;
    std::int64_t patience_;
    double min_lr_;
    bool higher_is_better_;
    bool has_best_ = false;
    double best_ = 0;
    std::int64_t stalls_ = 0;
};

// stop after `patience` consecutive non-improving epochs.
class EarlyStopper {
public:
    explicit EarlyStopper(std::int64_t patience, bool higher_is_better = false);
    bool feed(double metric); // true = stop now
    bool last_improved() const { return last_improved_; }

private:
    std::int64_t patience_;
    bool higher_is_better_;
    bool has_best_ = false;
    double best_ = 0;
    std::int64_t stalls_ = 0;
    bool last_improved_ = false;
};

struct EpochStats {
    std::int64_t epoch = 0; // 1-based
    double train_loss = 0;
    double val_loss = 0;
    double val_macro_acc = 0; // percentage
    double lr = 0;            // lr in force during the epoch
    double seconds = 0;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    std::int64_t best_epoch = 0;
    bool stopped_early = false;
};

std::string history_csv(const TrainHistory& history);
void save_history_csv(const std::string& path, const TrainHistory& history);

struct Batch {
    nn::IntTensor ids;    // [n, len]
    nn::IntTensor labels; // [n]
};

// encodes a slice of records into padded id/label tensors; the tokenizer and
// length policy are fixed inside the callable for the whole run.
using BatchEncoder = std::function<Batch(const std::vector<const data::PayloadRecord*>&)>;

struct TrainResult {
    TrainHistory history;
};

// full loop: seeded shuffle into batches of batch_size (last partial batch
// kept), per-epoch validation, scheduler + early stopping fed the monitored
// validation metric, best-epoch weights restored into the model at the end.
// when checkpoint_path is non-empty the best checkpoint is (re)written each
// time the monitored metric improves, carrying `manifest` verbatim.
TrainResult train_loop(model::CmaeModel<float>& m,
                       const std::vector<data::PayloadRecord>& train_set,
                       const std::vector<data::PayloadRecord>& val_set,
                       const TrainConfig& config,
                       const BatchEncoder& encode,
                       const std::string& checkpoint_path = "",
                       const std::map<std::string, std::string>& manifest = {},
                       std::ostream* log = nullptr);

} // namespace cmae::train
