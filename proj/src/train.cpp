#include "cmae/train.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "cmae/checkpoint.hpp"
#include "cmae/metrics.hpp"
#include "cmae/rng.hpp"

namespace cmae::train {

void TrainConfig::validate() const {
    if (epochs < 1) raise(ErrorCode::ConfigError, "epochs must be at least 1");
    if (batch_size < 1) raise(ErrorCode::ConfigError, "batch_size must be at least 1");
    if (infer_batch_size < 8 || infer_batch_size > 2048)
        raise(ErrorCode::ConfigError, "infer_batch_size must be in [8, 2048]");
    if (!(lr > 0)) raise(ErrorCode::ConfigError, "lr must be positive");
    if (!(eps > 0)) raise(ErrorCode::ConfigError, "eps must be positive");
    if (weight_decay < 0) raise(ErrorCode::ConfigError, "weight_decay must be non-negative");
    if (!(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1))
        raise(ErrorCode::ConfigError, "betas must lie in (0, 1)");
    if (!(scheduler_factor > 0 && scheduler_factor < 1))
        raise(ErrorCode::ConfigError, "scheduler_factor must lie in (0, 1)");
    if (scheduler_patience < 1) raise(ErrorCode::ConfigError, "scheduler_patience must be at least 1");
    if (!(min_lr <= lr)) raise(ErrorCode::ConfigError, "min_lr must not exceed lr");
    if (early_stop_patience < 1)
        raise(ErrorCode::ConfigError, "early_stop_patience must be at least 1");
}

PlateauScheduler::PlateauScheduler(double initial_lr, double factor, std::int64_t patience,
                                   double min_lr, bool higher_is_better)
    : lr_(initial_lr),
      factor_(factor),
      patience_(patience),
      min_lr_(min_lr),
      higher_is_better_(higher_is_better) {}

bool PlateauScheduler::improved(double metric) const {
    if (!has_best_) return true;
    return higher_is_better_ ? metric > best_ : metric < best_;
}

double PlateauScheduler::feed(double metric) {
    if (improved(metric)) {
        has_best_ = true;
        best_ = metric;
        stalls_ = 0;
    } else if (++stalls_ >= patience_) {
        lr_ = std::max(lr_ * factor_, min_lr_);
        stalls_ = 0;
    }
    return lr_;
}

EarlyStopper::EarlyStopper(std::int64_t patience, bool higher_is_better)
    : patience_(patience), higher_is_better_(higher_is_better) {}

bool EarlyStopper::feed(double metric) {
    const bool better = !has_best_ || (higher_is_better_ ? metric > best_ : metric < best_);
    last_improved_ = better;
    if (better) {
        has_best_ = true;
        best_ = metric;
        stalls_ = 0;
        return false;
    }
    return ++stalls_ >= patience_;
}

namespace {

std::string num(double v) {
    std::ostringstream out;
    out << std::setprecision(17) << v;
    return out.str();
}

} // namespace

std::string history_csv(const TrainHistory& history) {
    std::ostringstream out;
    out << "epoch,train_loss,val_loss,val_macro_acc,lr,seconds\n";
    for (const auto& e : history.epochs)
        out << e.epoch << ',' << num(e.train_loss) << ',' << num(e.val_loss) << ','
            << num(e.val_macro_acc) << ',' << num(e.lr) << ',' << num(e.seconds) << '\n';
    return out.str();
}

void save_history_csv(const std::string& path, const TrainHistory& history) {
    std::ofstream out(path, std::ios::binary);
    if (!out) raise(ErrorCode::IoError, "cannot open " + path + " for writing");
    out << history_csv(history);
    if (!out) raise(ErrorCode::IoError, "write failed for " + path);
}

namespace {

struct ValStats {
    double loss = 0;
    double macro_acc = 0;
};

std::vector<const data::PayloadRecord*> slice_pointers(
    const std::vector<data::PayloadRecord>& records, const std::vector<std::size_t>& order,
    std::size_t begin, std::size_t end) {
    std::vector<const data::PayloadRecord*> out;
    out.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) out.push_back(&records[order[i]]);
    return out;
}

ValStats evaluate(model::CmaeModel<float>& m, const std::vector<data::PayloadRecord>& records,
                  const BatchEncoder& encode, std::int64_t batch_size) {
    nn::NoGradGuard guard;
    double loss_sum = 0;
    std::vector<int> predicted, actual;
    predicted.reserve(records.size());
    actual.reserve(records.size());

    std::vector<std::size_t> order(records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t begin = 0; begin < records.size();
         begin += static_cast<std::size_t>(batch_size)) {
        const std::size_t end =
            std::min(records.size(), begin + static_cast<std::size_t>(batch_size));
        const Batch batch = encode(slice_pointers(records, order, begin, end));
        auto probs = m.forward(batch.ids, /*training=*/false);
        auto loss = nn::cross_entropy(probs, batch.labels);
        const std::int64_t n = batch.ids.dim(0);
        loss_sum += static_cast<double>(loss->value.data[0]) * static_cast<double>(n);

        const std::int64_t classes = probs->value.dim(1);
        for (std::int64_t r = 0; r < n; ++r) {
            std::int64_t best = 0;
            for (std::int64_t c = 1; c < classes; ++c)
                if (probs->value[r * classes + c] > probs->value[r * classes + best]) best = c;
            predicted.push_back(static_cast<int>(best));
            actual.push_back(static_cast<int>(batch.labels[r]));
        }
    }

    ValStats stats;
    stats.loss = loss_sum / static_cast<double>(records.size());
    stats.macro_acc = eval::macro_metrics(eval::confusion(predicted, actual)).accuracy;
    return stats;
}

} // namespace

TrainResult train_loop(model::CmaeModel<float>& m,
                       const std::vector<data::PayloadRecord>& train_set,
                       const std::vector<data::PayloadRecord>& val_set, const TrainConfig& config,
                       const BatchEncoder& encode, const std::string& checkpoint_path,
                       const std::map<std::string, std::string>& manifest, std::ostream* log) {
    config.validate();
    if (train_set.empty()) raise(ErrorCode::InputError, "training set is empty");
    if (val_set.empty()) raise(ErrorCode::InputError, "validation set is empty");

    const bool higher_is_better = config.monitor == Monitor::ValidationAccuracy;

    AdaBelief<float> optimizer(m.params, config);
    PlateauScheduler scheduler(config.lr, config.scheduler_factor, config.scheduler_patience,
                               config.min_lr, higher_is_better);
    EarlyStopper stopper(config.early_stop_patience, higher_is_better);

    // run metadata carried in the best checkpoint; caller-supplied keys win.
    std::map<std::string, std::string> meta = manifest;
    meta.emplace("dropout_sites", "attention_output,ff_hidden");
    meta.emplace("early_stop_restore", "best_validation");
    meta.emplace("train.epochs", std::to_string(config.epochs));
    meta.emplace("train.batch_size", std::to_string(config.batch_size));
    meta.emplace("train.infer_batch_size", std::to_string(config.infer_batch_size));
    meta.emplace("train.lr", num(config.lr));
    meta.emplace("train.eps", num(config.eps));
    meta.emplace("train.weight_decay", num(config.weight_decay));
    meta.emplace("train.beta1", num(config.beta1));
    meta.emplace("train.beta2", num(config.beta2));
    meta.emplace("train.scheduler_factor", num(config.scheduler_factor));
    meta.emplace("train.scheduler_patience", std::to_string(config.scheduler_patience));
    meta.emplace("train.min_lr", num(config.min_lr));
    meta.emplace("train.early_stop_patience", std::to_string(config.early_stop_patience));
    meta.emplace("train.monitor", higher_is_better ? "accuracy" : "loss");
    meta.emplace("train.seed", std::to_string(config.seed));

    std::mt19937_64 shuffle_rng(config.seed);
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    TrainResult result;
    bool have_best = false;
    double best_metric = 0;
    std::vector<std::vector<float>> best_values; // trainable params, registration order

    for (std::int64_t epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto epoch_start = std::chrono::steady_clock::now();
        const double epoch_lr = optimizer.lr();

        rng::shuffle(order, shuffle_rng);
        double loss_sum = 0;
        std::int64_t batch_index = 0;
        for (std::size_t begin = 0; begin < train_set.size();
             begin += static_cast<std::size_t>(config.batch_size)) {
            ++batch_index;
            const std::size_t end =
                std::min(train_set.size(), begin + static_cast<std::size_t>(config.batch_size));
            try {
                const Batch batch = encode(slice_pointers(train_set, order, begin, end));
                auto probs = m.forward(batch.ids, /*training=*/true);
                auto loss = nn::cross_entropy(probs, batch.labels);
                m.zero_grad();
                nn::backward(loss);
                optimizer.step();
                loss_sum += static_cast<double>(loss->value.data[0]) *
                            static_cast<double>(end - begin);
            } catch (const Error& e) {
                std::string message = e.what();
                const std::string prefix = std::string(error_code_name(e.code())) + ": ";
                if (message.rfind(prefix, 0) == 0) message = message.substr(prefix.size());
                raise(e.code(), message + " (epoch " + std::to_string(epoch) + ", batch " +
                                    std::to_string(batch_index) + ")");
            }
        }

        const ValStats val = evaluate(m, val_set, encode, config.infer_batch_size);
        const double monitored = higher_is_better ? val.macro_acc : val.loss;

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = loss_sum / static_cast<double>(train_set.size());
        stats.val_loss = val.loss;
        stats.val_macro_acc = val.macro_acc;
        stats.lr = epoch_lr;
        stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                                      epoch_start)
                            .count();
        result.history.epochs.push_back(stats);

        const bool improved =
            !have_best || (higher_is_better ? monitored > best_metric : monitored < best_metric);
        if (improved) {
            have_best = true;
            best_metric = monitored;
            result.history.best_epoch = epoch;
            best_values.clear();
            for (const auto& p : m.params)
                if (p.trainable()) best_values.push_back(p.node->value.data);
            if (!checkpoint_path.empty()) {
                meta["best_epoch"] = std::to_string(epoch);
                meta["best_metric"] = num(monitored);
                checkpoint::save_checkpoint(m, checkpoint_path, meta);
            }
        }

        if (log)
            *log << "epoch " << epoch << "/" << config.epochs << " train_loss="
                 << stats.train_loss << " val_loss=" << stats.val_loss
                 << " val_macro_acc=" << stats.val_macro_acc << " lr=" << stats.lr << " ("
                 << stats.seconds << "s)" << (improved ? " *" : "") << "\n";

        optimizer.lr() = scheduler.feed(monitored);
        if (stopper.feed(monitored)) {
            result.history.stopped_early = true;
            break;
        }
    }

    // leave the model holding its best-validation weights.
    if (have_best) {
        std::size_t slot = 0;
        for (auto& p : m.params)
            if (p.trainable()) p.node->value.data = best_values[slot++];
    }
    return result;
}

} // namespace cmae::train
