#include "infoseg/trainer.hpp"

#include "infoseg/segmenter.hpp"
#include "infoseg/transforms.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

namespace infoseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

constexpr std::uint64_t kEpochStream = 0xE90C5ULL;
constexpr std::uint64_t kPairStream = 0x9A125ULL;
constexpr std::uint64_t kViewStream = 0x71E35ULL;

void adam_update(VecX<float>& params, AdamState& adam, const VecX<float>& grad, double lr) {
    adam.t += 1;
    adam.m = float(kAdamBeta1) * adam.m + float(1.0 - kAdamBeta1) * grad;
    adam.v = (float(kAdamBeta2) * adam.v.array() +
              float(1.0 - kAdamBeta2) * grad.array().square())
                 .matrix();
    double corr1 = 1.0 - std::pow(kAdamBeta1, double(adam.t));
    double corr2 = 1.0 - std::pow(kAdamBeta2, double(adam.t));
    double step_size = lr / corr1;
    params.array() -=
        float(step_size) * adam.m.array() /
        ((adam.v.array() / float(corr2)).sqrt() + float(kAdamEps));
}

std::string score_stats(const VecX<float>& v) {
    std::ostringstream os;
    os << "min=" << v.minCoeff() << " max=" << v.maxCoeff() << " mean=" << v.mean();
    return os.str();
}

struct ForwardBundle {
    std::vector<LocalFeatureMap<float>> local;
    std::vector<GlobalFeatureSet<float>> global;
    std::vector<ClassProbVolume<float>> vol;
    std::vector<Network<float>::Tape> tapes;
};

ForwardBundle forward_batch(const std::vector<Image<float>>& batch, const Network<float>& net,
                            const VecX<float>& params, double tau) {
    const int b = int(batch.size());
    ForwardBundle f;
    f.local.resize(b);
    f.global.resize(b);
    f.vol.resize(b);
    f.tapes.resize(b);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < b; ++i) {
        net.forward(batch[i], params, f.local[i], f.global[i], &f.tapes[i]);
        f.vol[i] = prob_volume(class_scores(f.local[i], f.global[i]), f.local[i].u,
                               f.local[i].v, float(tau));
    }
    return f;
}

// Parameter gradients accumulated in fixed image order (chunked so the
// per-image buffers stay small), keeping runs bit-reproducible.
VecX<float> backward_batch(const Network<float>& net, const VecX<float>& params,
                           ForwardBundle& f, const MiStepGrads<float>& grads) {
    const int b = int(f.local.size());
    VecX<float> grad = VecX<float>::Zero(params.size());
    constexpr int kChunk = 8;
    std::vector<VecX<float>> buf(std::min(b, kChunk));
    for (int start = 0; start < b; start += kChunk) {
        int len = std::min(kChunk, b - start);
#pragma omp parallel for schedule(static)
        for (int i = 0; i < len; ++i) {
            buf[i] = VecX<float>::Zero(params.size());
            net.backward(f.tapes[start + i], grads.d_local[start + i],
                         grads.d_global[start + i], params, buf[i]);
        }
        for (int i = 0; i < len; ++i) grad += buf[i];
    }
    return grad;
}

StepReport infoseg_step(const std::vector<Image<float>>& batch, const Network<float>& net,
                        VecX<float>& params, AdamState& adam, const TrainConfig& config,
                        std::int64_t step_index) {
    ForwardBundle f = forward_batch(batch, net, params, config.tau);
    auto pairing =
        pair_marginals(int(batch.size()), hash_seed(config.seed, kPairStream + step_index));
    MiStepGrads<float> grads;
    MiLossReport report =
        mi_step_loss(f.local, f.vol, f.global, pairing, config.assignment, config.estimator,
                     &grads);
    if (!std::isfinite(report.total)) {
        std::ostringstream os;
        os << "non-finite loss at step " << step_index << "; local features ";
        for (int i = 0; i < int(batch.size()); ++i)
            os << "[" << i << ": L " << score_stats(f.local[i].values.reshaped()) << "] ";
        throw NumericalError(os.str());
    }
    VecX<float> grad = backward_batch(net, params, f, grads);
    adam_update(params, adam, grad, config.lr);
    StepReport out;
    out.loss = report;
    return out;
}

StepReport iic_step(const std::vector<Image<float>>& batch, const Network<float>& net,
                    VecX<float>& params, AdamState& adam, const TrainConfig& config,
                    std::int64_t step_index) {
    const int b = int(batch.size());
    std::mt19937_64 view_rng(hash_seed(config.seed, kViewStream + step_index));
    std::vector<ViewTransform> views(b);
    std::vector<Image<float>> transformed(b);
    for (int i = 0; i < b; ++i) {
        views[i] = sample_view_transform(view_rng, batch[i].channels(), config.iic_jitter,
                                         config.iic_max_shift_cells);
        transformed[i] = apply_view(batch[i], views[i], config.network.downsampling);
    }
    ForwardBundle f = forward_batch(batch, net, params, config.tau);
    ForwardBundle fp = forward_batch(transformed, net, params, config.tau);

    // Stack aligned (cell, transformed cell) distribution pairs.
    std::vector<std::vector<std::pair<int, int>>> pairs(b);
    Eigen::Index total = 0;
    for (int i = 0; i < b; ++i) {
        pairs[i] = paired_cell_indices(f.vol[i].u, f.vol[i].v, views[i]);
        total += Eigen::Index(pairs[i].size());
    }
    const int k = config.network.num_classes;
    MatX<float> y(total, k), yp(total, k);
    Eigen::Index row = 0;
    for (int i = 0; i < b; ++i)
        for (auto [a, c] : pairs[i]) {
            y.row(row) = f.vol[i].values.row(a);
            yp.row(row) = fp.vol[i].values.row(c);
            ++row;
        }
    MatX<float> dy, dyp;
    IicMiReport iic = iic_mi_core(y, yp, &dy, &dyp);
    if (!std::isfinite(iic.mi)) throw NumericalError("iic_step: non-finite objective");

    // Loss is -MI; scatter gradients back into per-image dV, then through
    // the softmax into dL and dH.
    auto scatter = [&](ForwardBundle& fb, const MatX<float>& dstack, bool transformed_side) {
        MiStepGrads<float> g;
        g.d_local.resize(b);
        g.d_global.resize(b);
        Eigen::Index r = 0;
        for (int i = 0; i < b; ++i) {
            MatX<float> d_vol = MatX<float>::Zero(fb.vol[i].values.rows(), k);
            for (auto [a, c] : pairs[i]) {
                int cell = transformed_side ? c : a;
                d_vol.row(cell) -= dstack.row(r);  // -MI
                ++r;
            }
            VecX<float> dot = (d_vol.array() * fb.vol[i].values.array()).rowwise().sum();
            MatX<float> d_scores =
                fb.vol[i].tau *
                (fb.vol[i].values.array() * (d_vol.colwise() - dot).array()).matrix();
            g.d_local[i] = d_scores * fb.global[i];
            g.d_global[i] = d_scores.transpose() * fb.local[i].values;
        }
        return g;
    };
    // Note: rows of dstack must be consumed in the same order they were
    // packed; both scatter passes walk (i, pairs[i]) identically.
    MiStepGrads<float> g1 = scatter(f, dy, false);
    MiStepGrads<float> g2 = scatter(fp, dyp, true);
    VecX<float> grad = backward_batch(net, params, f, g1);
    grad += backward_batch(net, params, fp, g2);
    adam_update(params, adam, grad, config.lr);

    StepReport out;
    out.loss.total = -iic.mi;
    out.loss.joint_term = iic.entropy_y;
    out.loss.marginal_term = iic.cond_entropy;
    out.loss.per_position_mean = iic.mi;
    out.entropy_y = iic.entropy_y;
    out.has_entropy = true;
    return out;
}

}  // namespace

StepReport train_step(const std::vector<Image<float>>& batch, const Network<float>& net,
                      VecX<float>& params, AdamState& adam, const TrainConfig& config,
                      std::int64_t step_index) {
    if (batch.size() < 2) throw StructuralError("train_step: batch must contain >= 2 images");
    if (config.objective == Objective::kIicMi)
        return iic_step(batch, net, params, adam, config, step_index);
    return infoseg_step(batch, net, params, adam, config, step_index);
}

FitResult fit(const std::vector<LoadedImage>& train_images, const TrainConfig& config,
              const fs::path& run_dir, const std::optional<fs::path>& resume_from) {
    config.validate();
    if (train_images.empty()) throw DataError("fit: empty training set");
    if (int(train_images.size()) < config.batch_size)
        throw ConfigError("fit: fewer images than batch_size");
    fs::create_directories(run_dir);

    Network<float> net(config.network);
    VecX<float> params;
    AdamState adam;
    std::int64_t start_step = 0;
    if (resume_from) {
        Checkpoint ckpt = load_checkpoint(*resume_from);
        // Resuming may extend the run; everything else must match so the
        // continued trajectory equals the uninterrupted one.
        TrainConfig a = ckpt.config, b = config;
        a.max_steps = b.max_steps = 0;
        a.checkpoint_every = b.checkpoint_every = 1;
        if (train_config_to_json(a) != train_config_to_json(b))
            throw ConfigError("fit: resume checkpoint config differs from requested config");
        params = ckpt.params;
        adam.m = ckpt.adam_m;
        adam.v = ckpt.adam_v;
        adam.t = ckpt.step;
        start_step = ckpt.step;
    } else {
        params = net.init_params();
        adam = AdamState::zeros(net.param_count());
    }

    auto save_at = [&](std::int64_t step) {
        Checkpoint ckpt{config, step, params, adam.m, adam.v};
        fs::path path = run_dir / ("step-" + std::to_string(step) + ".ckpt");
        save_checkpoint(path, ckpt);
        return path;
    };

    std::ofstream metrics(run_dir / "metrics.jsonl", std::ios::app);
    if (!metrics) throw DataError("fit: cannot open metrics log in " + run_dir.string());

    const std::int64_t steps_per_epoch =
        std::int64_t(train_images.size()) / config.batch_size;
    if (steps_per_epoch < 1) throw ConfigError("fit: batch_size larger than dataset");

    FitResult result;
    fs::path last_path = save_at(start_step);
    using clock = std::chrono::steady_clock;
    for (std::int64_t step = start_step; step < config.max_steps; ++step) {
        // Stateless epoch derivation keeps resumed runs on the identical
        // batch sequence.
        std::int64_t epoch = step / steps_per_epoch;
        std::int64_t offset = step % steps_per_epoch;
        auto batches = make_batches(train_images, config.batch_size,
                                    hash_seed(config.seed, kEpochStream + epoch), Split::kTrain);
        auto t0 = clock::now();
        StepReport report =
            train_step(batches[offset].images, net, params, adam, config, step);
        double wall_ms =
            std::chrono::duration<double, std::milli>(clock::now() - t0).count();

        json line{{"step", step + 1},
                  {"loss", report.loss.total},
                  {"joint_term", report.loss.joint_term},
                  {"marginal_term", report.loss.marginal_term},
                  {"estimate", report.loss.per_position_mean},
                  {"wall_ms", wall_ms}};
        if (report.has_entropy) line["entropy_y"] = report.entropy_y;
        metrics << line.dump() << "\n";
        metrics.flush();
        result.loss_trace.push_back(report.loss.total);

        if ((step + 1) % config.checkpoint_every == 0 || step + 1 == config.max_steps)
            last_path = save_at(step + 1);
    }
    result.final_checkpoint = last_path;
    return result;
}

}  // namespace infoseg
