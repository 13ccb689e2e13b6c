#pragma once

#include "infoseg/types.hpp"

#include <cmath>

namespace infoseg {

/// scores(i*v+j, k) = <L_{i,j}, H_k>
template <class Scalar>
MatX<Scalar> class_scores(const LocalFeatureMap<Scalar>& local,
                          const GlobalFeatureSet<Scalar>& global) {
    if (local.values.cols() != global.cols())
        throw StructuralError("class_scores: feature dimension mismatch between L and H");
    return local.values * global.transpose();
}

/// Pixel-wise scaled softmax over class scores, stabilized by per-row max
/// subtraction.
template <class Scalar>
ClassProbVolume<Scalar> prob_volume(const MatX<Scalar>& scores, int u, int v, Scalar tau) {
    if (tau <= Scalar(0)) throw ConfigError("prob_volume: tau must be positive");
    if (!scores.allFinite())
        throw NumericalError("prob_volume: non-finite class scores");
    ClassProbVolume<Scalar> vol;
    vol.u = u;
    vol.v = v;
    vol.tau = tau;
    MatX<Scalar> z = tau * scores;
    VecX<Scalar> rowmax = z.rowwise().maxCoeff();
    z.colwise() -= rowmax;
    vol.values = z.array().exp();
    VecX<Scalar> rowsum = vol.values.rowwise().sum();
    vol.values.array().colwise() /= rowsum.array();
    return vol;
}

/// Per-pixel argmax; ties resolve to the lowest class index.
template <class Scalar>
MatXi argmax_segmentation(const ClassProbVolume<Scalar>& vol) {
    MatXi seg(vol.u, vol.v);
    for (int i = 0; i < vol.u; ++i)
        for (int j = 0; j < vol.v; ++j) {
            int best = 0;
            Scalar best_p = vol.values(i * vol.v + j, 0);
            for (int k = 1; k < vol.num_classes(); ++k) {
                Scalar p = vol.values(i * vol.v + j, k);
                if (p > best_p) {
                    best_p = p;
                    best = k;
                }
            }
            seg(i, j) = best;
        }
    return seg;
}

/// Nearest-neighbor label upsampling: each cell becomes a d x d block.
inline MatXi upsample_labels(const MatXi& low_res, int factor) {
    if (factor < 1) throw ConfigError("upsample_labels: factor must be >= 1");
    MatXi out(low_res.rows() * factor, low_res.cols() * factor);
    for (int y = 0; y < out.rows(); ++y)
        for (int x = 0; x < out.cols(); ++x) out(y, x) = low_res(y / factor, x / factor);
    return out;
}

template <class Scalar>
SegmentationMap segment(const ClassProbVolume<Scalar>& vol, int factor) {
    SegmentationMap map;
    map.low_res = argmax_segmentation(vol);
    map.full_res = upsample_labels(map.low_res, factor);
    return map;
}

}  // namespace infoseg
