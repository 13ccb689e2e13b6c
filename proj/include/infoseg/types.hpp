#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace infoseg {

template <class Scalar>
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using VecX = Eigen::Vector<Scalar, Eigen::Dynamic>;
using MatXi = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>;

// Error taxonomy shared across modules; the CLI maps these to exit codes.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct StructuralError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Multi-channel image stored as one row per pixel (row-major spatial
/// order, index = y*width + x) and one column per channel.
template <class Scalar>
struct Image {
    MatX<Scalar> values;  // (height*width) x channels
    int height = 0;
    int width = 0;

    int channels() const { return static_cast<int>(values.cols()); }
    Scalar& at(int y, int x, int c) { return values(y * width + x, c); }
    Scalar at(int y, int x, int c) const { return values(y * width + x, c); }
};

struct ImageSpec {
    int height = 0;
    int width = 0;
    int channels = 0;
    double range_lo = 0.0;
    double range_hi = 1.0;

    void validate() const {
        if (height < 1 || width < 1 || channels < 1)
            throw ConfigError("ImageSpec: dimensions must be >= 1");
        if (!(range_lo < range_hi))
            throw ConfigError("ImageSpec: empty value range");
    }
};

constexpr int kIgnoreLabel = 255;

struct AnnotatedImage {
    Image<float> image;
    MatXi labels;  // height x width, values in {0..K'-1} or kIgnoreLabel
    std::string id;
};

/// Label-free view of a batch. Training code consumes only this type, so
/// annotations cannot leak into the objective.
struct ImageBatch {
    std::vector<Image<float>> images;
    std::vector<std::string> ids;

    int size() const { return static_cast<int>(images.size()); }
};

/// U x V grid of P-dimensional patch features, flattened row-major:
/// row i*v + j holds the feature at grid position (i, j).
template <class Scalar>
struct LocalFeatureMap {
    MatX<Scalar> values;  // (u*v) x P
    int u = 0;
    int v = 0;
    int downsampling = 1;

    int feature_dim() const { return static_cast<int>(values.cols()); }
};

/// One P-dimensional image-level feature per class, row k = class k.
template <class Scalar>
using GlobalFeatureSet = MatX<Scalar>;  // K x P

template <class Scalar>
struct ClassProbVolume {
    MatX<Scalar> values;  // (u*v) x K, rows sum to 1
    int u = 0;
    int v = 0;
    Scalar tau = Scalar(1);

    int num_classes() const { return static_cast<int>(values.cols()); }
};

struct SegmentationMap {
    MatXi low_res;   // u x v
    MatXi full_res;  // m x n, nearest-neighbor upsampling of low_res
};

}  // namespace infoseg
