#pragma once

#include <fstream>

#include "mantis/checkpoint.hpp"
#include "mantis/data.hpp"
#include "mantis/ftnmt.hpp"
#include "mantis/metrics.hpp"

namespace mantis {

struct AdamConfig {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

class Adam {
public:
    explicit Adam(std::vector<Parameter*> params, AdamConfig cfg = {})
        : params_(std::move(params)), cfg_(cfg) {
        for (auto* p : params_) {
            m_.emplace_back(p->value().shape, 0.0);
            v_.emplace_back(p->value().shape, 0.0);
        }
    }

    void zero_grad() {
        for (auto* p : params_) p->zero_grad();
    }

    void step(double lr) {
        ++t_;
        double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (size_t i = 0; i < params_.size(); ++i) {
            Parameter& p = *params_[i];
            if (!p.trainable()) continue;
            Tensor& g = p.grad();
            Tensor& m = m_[i];
            Tensor& v = v_[i];
            for (long long j = 0; j < g.size(); ++j) {
                m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
                v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
                double mhat = m[j] / bc1;
                double vhat = v[j] / bc2;
                p.value()[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

private:
    std::vector<Parameter*> params_;
    std::vector<Tensor> m_, v_;
    long long t_ = 0;
    AdamConfig cfg_;
};

struct Stage {
    double lr = 1e-3;
    int ft_depth = 0;
};

struct EvolveSchedule {
    std::vector<Stage> stages{{1e-3, 0}, {1e-4, 10}, {1e-5, 20}};
    int patience = 10;

    void validate() const {
        if (stages.empty()) throw std::invalid_argument("EvolveSchedule: no stages");
        if (patience < 1) throw std::invalid_argument("EvolveSchedule: patience must be >= 1");
        for (size_t i = 1; i < stages.size(); ++i) {
            if (!(stages[i].lr < stages[i - 1].lr))
                throw std::invalid_argument("EvolveSchedule: learning rates must strictly decrease");
            if (stages[i].ft_depth < stages[i - 1].ft_depth)
                throw std::invalid_argument("EvolveSchedule: depths must be nondecreasing");
        }
    }
};

// Mean of the three per-task losses at the current depth.
inline Var multitask_loss(const MantisOutputs& preds, const Var& seg_target, const Var& boundary_target,
                          const Var& distance_target, int depth, double smooth = 1e-5) {
    Var ls = ftnmt_loss(preds.segmentation, seg_target, depth, smooth);
    Var lb = ftnmt_loss(preds.boundary, boundary_target, depth, smooth);
    Var ld = ftnmt_loss(preds.distance, distance_target, depth, smooth);
    return affine(add(add(ls, lb), ld), 1.0 / 3.0, 0.0);
}

struct Batch {
    Var t1, t2, seg_target, boundary_target, distance_target;
    std::vector<Tensor> masks;  // per-sample (H,W) ground truth
};

inline Batch make_batch(const std::vector<const ChipPair*>& chips) {
    if (chips.empty()) throw std::invalid_argument("make_batch: empty batch");
    long long B = static_cast<long long>(chips.size());
    long long C = chips[0]->t1.dim(0), H = chips[0]->t1.dim(1), W = chips[0]->t1.dim(2);
    Tensor t1(Shape{B, C, H, W}), t2(Shape{B, C, H, W});
    Tensor seg(Shape{B, 2, H, W}), bound(Shape{B, 1, H, W}), dist(Shape{B, 1, H, W});
    Batch batch;
    for (long long b = 0; b < B; ++b) {
        const ChipPair& chip = *chips[static_cast<size_t>(b)];
        std::copy_n(chip.t1.data.data(), C * H * W, &t1.data[static_cast<size_t>(b * C * H * W)]);
        std::copy_n(chip.t2.data.data(), C * H * W, &t2.data[static_cast<size_t>(b * C * H * W)]);
        for (long long i = 0; i < H * W; ++i) {
            double m = chip.mask[i] > 0.5 ? 1.0 : 0.0;
            seg.data[static_cast<size_t>((b * 2 + 0) * H * W + i)] = 1.0 - m;
            seg.data[static_cast<size_t>((b * 2 + 1) * H * W + i)] = m;
            bound.data[static_cast<size_t>(b * H * W + i)] = chip.boundary[i];
            dist.data[static_cast<size_t>(b * H * W + i)] = chip.distance[i];
        }
        batch.masks.push_back(chip.mask);
    }
    batch.t1 = make_var(std::move(t1));
    batch.t2 = make_var(std::move(t2));
    batch.seg_target = make_var(std::move(seg));
    batch.boundary_target = make_var(std::move(bound));
    batch.distance_target = make_var(std::move(dist));
    return batch;
}

struct CheckpointRecord {
    int epoch = 0;
    double mcc = 0.0;
    double ftnmt = 0.0;
    std::string path;
};

inline std::vector<size_t> pareto_front(const std::vector<CheckpointRecord>& records) {
    std::vector<std::pair<double, double>> pts;
    pts.reserve(records.size());
    for (const auto& r : records) pts.emplace_back(r.mcc, r.ftnmt);
    return pareto_front_indices(pts);
}

struct EpochStats {
    int epoch = 0;
    int stage = 0;
    double lr = 0.0;
    int ft_depth = 0;
    double train_loss = 0.0;
    double train_f1 = 0.0;
    double val_loss = 0.0;
    double val_mcc = 0.0;
    double val_ft = 0.0;
    bool stage_switched = false;
};

struct TrainOptions {
    int max_epochs = 200;
    int batch_size = 4;
    uint64_t seed = 42;
    bool augment = true;
    AugmentConfig augment_cfg;
    std::optional<int> val_ft_depth;  // depth for the validation <FT> metric; default: stage depth
    std::string out_dir;              // empty: nothing written to disk
    bool keep_pareto_only = true;
    double stop_train_f1 = -1.0;      // early stop threshold; < 0 disables
    int min_epochs_after_last_stage = 0;
    std::function<bool(const EpochStats&)> epoch_callback;  // return false to stop
};

struct ValResult {
    double loss = 0.0;
    double mcc = 0.0;
    double ft = 0.0;
    Confusion confusion;
};

// Forward-only evaluation: multitask loss at `depth`, confusion counts of the
// thresholded change class, and the <FT> similarity of the segmentation at
// `ft_depth`.
inline ValResult evaluate(const MantisNet& net, const std::vector<ChipPair>& chips, int batch_size,
                          int depth, int ft_depth, double threshold = 0.5) {
    ValResult res;
    if (chips.empty()) return res;
    double loss_sum = 0.0, ft_sum = 0.0;
    long long total = 0;
    for (size_t start = 0; start < chips.size(); start += static_cast<size_t>(batch_size)) {
        std::vector<const ChipPair*> ptrs;
        for (size_t i = start; i < std::min(chips.size(), start + static_cast<size_t>(batch_size)); ++i)
            ptrs.push_back(&chips[i]);
        Batch batch = make_batch(ptrs);
        MantisOutputs out = net.forward(batch.t1, batch.t2);
        double l = multitask_loss(out, batch.seg_target, batch.boundary_target, batch.distance_target,
                                  depth, net.config().smooth)->value[0];
        double ft = 1.0 - ftnmt_loss(out.segmentation, batch.seg_target, ft_depth,
                                     net.config().smooth)->value[0];
        long long B = static_cast<long long>(ptrs.size());
        loss_sum += l * static_cast<double>(B);
        ft_sum += ft * static_cast<double>(B);
        total += B;
        long long H = batch.masks[0].dim(0), W = batch.masks[0].dim(1);
        for (long long b = 0; b < B; ++b) {
            Tensor pred(Shape{H, W});
            for (long long i = 0; i < H * W; ++i)
                pred[i] = out.segmentation->value[(b * 2 + 1) * H * W + i] > threshold ? 1.0 : 0.0;
            res.confusion += confusion_counts(pred, batch.masks[static_cast<size_t>(b)]);
        }
    }
    res.loss = loss_sum / static_cast<double>(total);
    res.ft = ft_sum / static_cast<double>(total);
    res.mcc = metrics_from(res.confusion).mcc;
    return res;
}

// Evolving-loss training: Adam(0.9, 0.999); on a validation-loss plateau the
// next stage applies its learning rate and loss depth. Every epoch gets a log
// row and a checkpoint record with validation MCC and <FT>.
inline std::vector<CheckpointRecord> train(MantisNet& net, const std::vector<ChipPair>& train_chips,
                                           const std::vector<ChipPair>& val_chips,
                                           const EvolveSchedule& schedule, const TrainOptions& opts,
                                           std::vector<EpochStats>* stats_out = nullptr) {
    schedule.validate();
    if (train_chips.empty()) throw std::invalid_argument("train: empty training set");

    namespace fs = std::filesystem;
    ParamRefs refs;
    net.params(refs);
    Adam opt(pointers(refs));

    std::ofstream log;
    if (!opts.out_dir.empty()) {
        fs::create_directories(opts.out_dir);
        log.open(fs::path(opts.out_dir) / "train_log.csv");
        log << "epoch,lr,depth,train_loss,val_loss,val_mcc,val_ft\n";
    }

    std::vector<CheckpointRecord> records;
    size_t stage = 0;
    double best_val = std::numeric_limits<double>::infinity();
    int since_improve = 0;
    int last_switch_epoch = 0;

    for (int epoch = 1; epoch <= opts.max_epochs; ++epoch) {
        double lr = schedule.stages[stage].lr;
        int depth = schedule.stages[stage].ft_depth;

        // one pass over the shuffled training chips
        std::vector<size_t> order(train_chips.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle_rng(chip_stream_seed(opts.seed, 0xe9ull * static_cast<uint64_t>(epoch)));
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[static_cast<size_t>(shuffle_rng.uniform_int(0, static_cast<long long>(i) - 1))]);

        double train_loss_sum = 0.0;
        long long seen = 0;
        Confusion train_conf;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(opts.batch_size)) {
            std::vector<ChipPair> holder;
            std::vector<const ChipPair*> ptrs;
            for (size_t i = start; i < std::min(order.size(), start + static_cast<size_t>(opts.batch_size)); ++i) {
                const ChipPair& src = train_chips[order[i]];
                if (opts.augment) {
                    Rng aug_rng(chip_stream_seed(opts.seed,
                                                 static_cast<uint64_t>(epoch) * 100000ull + order[i]));
                    holder.push_back(augment(src, opts.augment_cfg, aug_rng));
                } else {
                    holder.push_back(src);
                }
            }
            for (const auto& c : holder) ptrs.push_back(&c);
            Batch batch = make_batch(ptrs);
            opt.zero_grad();
            MantisOutputs out = net.forward(batch.t1, batch.t2);
            Var loss = multitask_loss(out, batch.seg_target, batch.boundary_target,
                                      batch.distance_target, depth, net.config().smooth);
            double lv = loss->value[0];
            if (!std::isfinite(lv))
                throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                         " (stage " + std::to_string(stage) + ", lr " +
                                         std::to_string(lr) + ", d " + std::to_string(depth) + ")");
            backward(loss);
            opt.step(lr);
            long long B = static_cast<long long>(ptrs.size());
            train_loss_sum += lv * static_cast<double>(B);
            seen += B;
            long long H = batch.masks[0].dim(0), W = batch.masks[0].dim(1);
            for (long long b = 0; b < B; ++b) {
                Tensor pred(Shape{H, W});
                for (long long i = 0; i < H * W; ++i)
                    pred[i] = out.segmentation->value[(b * 2 + 1) * H * W + i] > 0.5 ? 1.0 : 0.0;
                train_conf += confusion_counts(pred, batch.masks[static_cast<size_t>(b)]);
            }
        }

        int ft_metric_depth = opts.val_ft_depth ? *opts.val_ft_depth : depth;
        ValResult val = evaluate(net, val_chips, opts.batch_size, depth, ft_metric_depth);

        EpochStats st;
        st.epoch = epoch;
        st.stage = static_cast<int>(stage);
        st.lr = lr;
        st.ft_depth = depth;
        st.train_loss = train_loss_sum / static_cast<double>(seen);
        st.train_f1 = metrics_from(train_conf).f1;
        st.val_loss = val.loss;
        st.val_mcc = val.mcc;
        st.val_ft = val.ft;

        if (log.is_open()) {
            log << epoch << "," << lr << "," << depth << "," << st.train_loss << "," << st.val_loss
                << "," << st.val_mcc << "," << st.val_ft << "\n";
            log.flush();
        }

        CheckpointRecord rec;
        rec.epoch = epoch;
        rec.mcc = st.val_mcc;
        rec.ftnmt = st.val_ft;
        if (!opts.out_dir.empty()) {
            char name[32];
            std::snprintf(name, sizeof name, "epoch_%04d", epoch);
            rec.path = (fs::path(opts.out_dir) / "checkpoints" / name).string();
            save_checkpoint(rec.path, net,
                            {{"epoch", epoch}, {"val_mcc", st.val_mcc}, {"val_ft", st.val_ft}});
        }
        records.push_back(rec);

        if (!opts.out_dir.empty() && opts.keep_pareto_only) {
            auto front = pareto_front(records);
            std::vector<bool> keep(records.size(), false);
            for (size_t idx : front) keep[idx] = true;
            keep.back() = true;  // always keep the latest weights
            for (size_t i = 0; i < records.size(); ++i) {
                if (!keep[i] && !records[i].path.empty()) {
                    fs::remove_all(records[i].path);
                    records[i].path.clear();
                }
            }
        }

        // plateau detection on the validation multitask loss, within-stage
        if (val.loss < best_val - 1e-12) {
            best_val = val.loss;
            since_improve = 0;
        } else {
            ++since_improve;
        }
        if (since_improve >= schedule.patience && stage + 1 < schedule.stages.size()) {
            ++stage;
            best_val = std::numeric_limits<double>::infinity();
            since_improve = 0;
            st.stage_switched = true;
            last_switch_epoch = epoch;
        }

        if (stats_out) stats_out->push_back(st);
        if (opts.epoch_callback && !opts.epoch_callback(st)) break;
        if (opts.stop_train_f1 > 0.0 && st.train_f1 >= opts.stop_train_f1 &&
            stage + 1 == schedule.stages.size() &&
            epoch - last_switch_epoch >= opts.min_epochs_after_last_stage)
            break;
    }
    return records;
}

}  // namespace mantis
