#pragma once

#include "infoseg/segmenter.hpp"
#include "infoseg/types.hpp"

#include <cmath>
#include <vector>

namespace infoseg {

enum class AssignmentMode { kSoft, kHard };
enum class EstimatorKind { kJsd, kDv };

/// Scalar loss decomposition for one MI-estimation step. The minimized
/// loss is `total`; the underlying lower-bound estimate is
/// joint_term - marginal_term, so total = -(joint_term - marginal_term).
struct MiLossReport {
    double total = 0.0;
    double joint_term = 0.0;
    double marginal_term = 0.0;
    double per_position_mean = 0.0;
};

/// Overflow-safe softplus log(1 + e^x).
template <class Scalar>
Scalar softplus(Scalar x) {
    return std::max(x, Scalar(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <class Scalar>
Scalar logistic(Scalar x) {
    if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
    Scalar e = std::exp(x);
    return e / (Scalar(1) + e);
}

namespace detail {
template <class Scalar>
void check_scores(const VecX<Scalar>& joint, const VecX<Scalar>& marginal, const char* who) {
    if (joint.size() == 0 || marginal.size() == 0)
        throw StructuralError(std::string(who) + ": empty score collection");
    if (!joint.allFinite() || !marginal.allFinite())
        throw NumericalError(std::string(who) + ": non-finite scores");
}
}  // namespace detail

/// Jensen-Shannon MI lower bound on discriminator scores:
/// I_hat = E_joint[-sp(-t)] - E_marginal[sp(t)].
template <class Scalar>
MiLossReport jsd_mi(const VecX<Scalar>& joint, const VecX<Scalar>& marginal) {
    detail::check_scores(joint, marginal, "jsd_mi");
    double jt = 0.0, mt = 0.0;
    for (Eigen::Index i = 0; i < joint.size(); ++i) jt -= double(softplus(-joint[i]));
    for (Eigen::Index i = 0; i < marginal.size(); ++i) mt += double(softplus(marginal[i]));
    jt /= double(joint.size());
    mt /= double(marginal.size());
    MiLossReport r;
    r.joint_term = jt;
    r.marginal_term = mt;
    r.per_position_mean = jt - mt;
    r.total = -(jt - mt);
    return r;
}

/// Donsker-Varadhan bound: I_hat = E_joint[t] - log E_marginal[e^t].
template <class Scalar>
MiLossReport dv_mi(const VecX<Scalar>& joint, const VecX<Scalar>& marginal) {
    detail::check_scores(joint, marginal, "dv_mi");
    double jt = double(joint.template cast<double>().mean());
    double mx = double(marginal.maxCoeff());
    double acc = 0.0;
    for (Eigen::Index i = 0; i < marginal.size(); ++i)
        acc += std::exp(double(marginal[i]) - mx);
    double mt = mx + std::log(acc / double(marginal.size()));
    MiLossReport r;
    r.joint_term = jt;
    r.marginal_term = mt;
    r.per_position_mean = jt - mt;
    r.total = -(jt - mt);
    return r;
}

/// S_{i,j} = sum_k V_{i,j,k} H_k : probability-weighted mixture of global
/// features at every grid position.
template <class Scalar>
MatX<Scalar> soft_assign(const ClassProbVolume<Scalar>& vol, const GlobalFeatureSet<Scalar>& global) {
    if (vol.num_classes() != global.rows())
        throw StructuralError("soft_assign: class count mismatch between V and H");
    return vol.values * global;
}

/// S_{i,j} = H_{k_{i,j}} : plain table lookup, no gradient path through
/// the argmax.
template <class Scalar>
MatX<Scalar> hard_assign(const MatXi& labels, const GlobalFeatureSet<Scalar>& global) {
    MatX<Scalar> out(labels.size(), global.cols());
    const int v = static_cast<int>(labels.cols());
    for (int i = 0; i < labels.rows(); ++i)
        for (int j = 0; j < v; ++j) {
            int k = labels(i, j);
            if (k < 0 || k >= global.rows())
                throw StructuralError("hard_assign: label out of range");
            out.row(i * v + j) = global.row(k);
        }
    return out;
}

template <class Scalar>
struct MiStepGrads {
    std::vector<MatX<Scalar>> d_local;   // per image, (u*v) x P
    std::vector<MatX<Scalar>> d_global;  // per image, K x P
};

/// One Mutual Information Maximization step over a batch: joint scores
/// pair each local feature with its own image's assignment, marginal
/// scores pair it with the assignment of the deranged partner image at
/// the same grid position. Optionally fills analytic gradients w.r.t.
/// every L^(b) and H^(b).
template <class Scalar>
MiLossReport mi_step_loss(const std::vector<LocalFeatureMap<Scalar>>& local,
                          const std::vector<ClassProbVolume<Scalar>>& vol,
                          const std::vector<GlobalFeatureSet<Scalar>>& global,
                          const std::vector<int>& pairing, AssignmentMode mode,
                          EstimatorKind kind, MiStepGrads<Scalar>* grads = nullptr) {
    const int batch = static_cast<int>(local.size());
    if (batch < 2) throw StructuralError("mi_step_loss: batch must contain >= 2 images");
    if (static_cast<int>(pairing.size()) != batch ||
        static_cast<int>(vol.size()) != batch || static_cast<int>(global.size()) != batch)
        throw StructuralError("mi_step_loss: batch size mismatch");
    for (int b = 0; b < batch; ++b)
        if (pairing[b] == b || pairing[b] < 0 || pairing[b] >= batch)
            throw StructuralError("mi_step_loss: pairing must be fixed-point-free");

    const Eigen::Index n_pos = local[0].values.rows();
    std::vector<MatX<Scalar>> assigned(batch);
    for (int b = 0; b < batch; ++b) {
        if (mode == AssignmentMode::kSoft) {
            assigned[b] = soft_assign(vol[b], global[b]);
        } else {
            assigned[b] = hard_assign(argmax_segmentation(vol[b]), global[b]);
        }
    }

    VecX<Scalar> t_joint(batch * n_pos), t_marginal(batch * n_pos);
    for (int b = 0; b < batch; ++b) {
        t_joint.segment(b * n_pos, n_pos) =
            (local[b].values.array() * assigned[b].array()).rowwise().sum();
        t_marginal.segment(b * n_pos, n_pos) =
            (local[b].values.array() * assigned[pairing[b]].array()).rowwise().sum();
    }

    MiLossReport report = (kind == EstimatorKind::kJsd) ? jsd_mi(t_joint, t_marginal)
                                                        : dv_mi(t_joint, t_marginal);
    if (!grads) return report;

    // d total / d t for every joint and marginal score.
    const Scalar n = Scalar(t_joint.size());
    VecX<Scalar> g_joint(t_joint.size()), g_marginal(t_marginal.size());
    if (kind == EstimatorKind::kJsd) {
        for (Eigen::Index i = 0; i < t_joint.size(); ++i)
            g_joint[i] = -logistic(-t_joint[i]) / n;
        for (Eigen::Index i = 0; i < t_marginal.size(); ++i)
            g_marginal[i] = logistic(t_marginal[i]) / n;
    } else {
        g_joint.setConstant(Scalar(-1) / n);
        Scalar mx = t_marginal.maxCoeff();
        g_marginal = (t_marginal.array() - mx).exp();
        g_marginal /= g_marginal.sum();
    }

    grads->d_local.assign(batch, MatX<Scalar>::Zero(n_pos, local[0].values.cols()));
    grads->d_global.assign(batch, MatX<Scalar>::Zero(global[0].rows(), global[0].cols()));
    std::vector<MatX<Scalar>> d_assigned(batch,
                                         MatX<Scalar>::Zero(n_pos, local[0].values.cols()));
    for (int b = 0; b < batch; ++b) {
        auto gj = g_joint.segment(b * n_pos, n_pos);
        auto gm = g_marginal.segment(b * n_pos, n_pos);
        grads->d_local[b] += (assigned[b].array().colwise() * gj.array()).matrix();
        grads->d_local[b] += (assigned[pairing[b]].array().colwise() * gm.array()).matrix();
        d_assigned[b] += (local[b].values.array().colwise() * gj.array()).matrix();
        d_assigned[pairing[b]] += (local[b].values.array().colwise() * gm.array()).matrix();
    }
    for (int b = 0; b < batch; ++b) {
        if (mode == AssignmentMode::kSoft) {
            // S = V H; then back through the scaled softmax into scores,
            // and through scores = L H^T into L and H.
            MatX<Scalar> d_vol = d_assigned[b] * global[b].transpose();
            grads->d_global[b] += vol[b].values.transpose() * d_assigned[b];
            VecX<Scalar> dot = (d_vol.array() * vol[b].values.array()).rowwise().sum();
            MatX<Scalar> d_scores =
                vol[b].tau * (vol[b].values.array() * (d_vol.colwise() - dot).array()).matrix();
            grads->d_local[b] += d_scores * global[b];
            grads->d_global[b] += d_scores.transpose() * local[b].values;
        } else {
            MatXi labels = argmax_segmentation(vol[b]);
            const int v = vol[b].v;
            for (int i = 0; i < labels.rows(); ++i)
                for (int j = 0; j < v; ++j)
                    grads->d_global[b].row(labels(i, j)) += d_assigned[b].row(i * v + j);
        }
    }
    return report;
}

/// IIC-style discrete MI of paired class distributions, with the
/// marginal entropy H(y) reported separately so class collapse is
/// observable.
struct IicMiReport {
    double mi = 0.0;
    double entropy_y = 0.0;
    double cond_entropy = 0.0;
};

namespace detail {
inline double xlogx(double x) { return x > 0.0 ? x * std::log(x) : 0.0; }
}  // namespace detail

/// Core on paired rows: y(r) and y_prime(r) are class distributions of
/// the same spatial position under two views. Builds the symmetrized
/// K x K joint and returns its exact discrete MI.
template <class Scalar>
IicMiReport iic_mi_core(const MatX<Scalar>& y, const MatX<Scalar>& y_prime,
                        MatX<Scalar>* d_y = nullptr, MatX<Scalar>* d_y_prime = nullptr) {
    if (y.rows() != y_prime.rows() || y.cols() != y_prime.cols())
        throw StructuralError("iic_mi: paired volumes must have identical shape");
    if (y.rows() == 0) throw StructuralError("iic_mi: no paired positions");
    const Eigen::Index n = y.rows();
    const Eigen::Index k = y.cols();
    MatX<double> joint = (y.template cast<double>().transpose() *
                          y_prime.template cast<double>()) /
                         double(n);
    joint = ((joint + joint.transpose()) / 2.0).eval();

    VecX<double> p = joint.rowwise().sum();
    VecX<double> q = joint.colwise().sum();
    double h_joint = 0.0, h_p = 0.0, h_q = 0.0;
    for (Eigen::Index a = 0; a < k; ++a) {
        h_p -= detail::xlogx(p[a]);
        h_q -= detail::xlogx(q[a]);
        for (Eigen::Index b = 0; b < k; ++b) h_joint -= detail::xlogx(joint(a, b));
    }
    IicMiReport r;
    r.entropy_y = h_p;
    r.cond_entropy = h_joint - h_q;
    r.mi = h_p - r.cond_entropy;

    if (d_y && d_y_prime) {
        const double eps = 1e-12;
        MatX<double> g(k, k);
        for (Eigen::Index a = 0; a < k; ++a)
            for (Eigen::Index b = 0; b < k; ++b)
                g(a, b) = std::log(std::max(joint(a, b), eps)) -
                          std::log(std::max(p[a], eps)) - std::log(std::max(q[b], eps)) - 1.0;
        MatX<double> gsym = (g + g.transpose()) / 2.0;
        *d_y = ((y_prime.template cast<double>() * gsym.transpose()) / double(n))
                   .template cast<Scalar>();
        *d_y_prime =
            ((y.template cast<double>() * gsym) / double(n)).template cast<Scalar>();
    }
    return r;
}

template <class Scalar>
IicMiReport iic_mi_loss(const ClassProbVolume<Scalar>& vol,
                        const ClassProbVolume<Scalar>& vol_prime,
                        MatX<Scalar>* d_vol = nullptr, MatX<Scalar>* d_vol_prime = nullptr) {
    if (vol.u != vol_prime.u || vol.v != vol_prime.v ||
        vol.num_classes() != vol_prime.num_classes())
        throw StructuralError("iic_mi_loss: volume shape mismatch");
    return iic_mi_core(vol.values, vol_prime.values, d_vol, d_vol_prime);
}

}  // namespace infoseg
