#include "infoseg/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <array>

namespace infoseg {

namespace {

// Fixed qualitative palette (RGB), cycled for high class counts.
constexpr std::array<std::array<int, 3>, 10> kPalette{{{230, 25, 75},
                                                       {60, 180, 75},
                                                       {0, 130, 200},
                                                       {255, 225, 25},
                                                       {145, 30, 180},
                                                       {70, 240, 240},
                                                       {245, 130, 48},
                                                       {240, 50, 230},
                                                       {128, 128, 0},
                                                       {0, 0, 128}}};

}  // namespace

Image<float> read_image(const std::filesystem::path& path) {
    cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (raw.empty()) throw DataError("read_image: missing or corrupt file: " + path.string());
    cv::Mat mat;
    raw.convertTo(mat, CV_32F, raw.depth() == CV_16U ? 1.0 / 65535.0 : 1.0 / 255.0);

    Image<float> img;
    img.height = mat.rows;
    img.width = mat.cols;
    const int c = mat.channels();
    img.values.resize(Eigen::Index(mat.rows) * mat.cols, c);
    for (int y = 0; y < mat.rows; ++y) {
        const float* row = mat.ptr<float>(y);
        for (int x = 0; x < mat.cols; ++x)
            for (int ch = 0; ch < c; ++ch) {
                // OpenCV stores BGR(A); expose RGB(A).
                int src = (c >= 3 && ch < 3) ? 2 - ch : ch;
                img.values(Eigen::Index(y) * mat.cols + x, ch) = row[x * c + src];
            }
    }
    return img;
}

void write_image_u8(const std::filesystem::path& path, const Image<float>& img) {
    const int c = img.channels();
    if (c != 1 && c != 3 && c != 4)
        throw DataError("write_image_u8: unsupported channel count " + std::to_string(c));
    cv::Mat mat(img.height, img.width, CV_8UC(c));
    for (int y = 0; y < img.height; ++y) {
        unsigned char* row = mat.ptr<unsigned char>(y);
        for (int x = 0; x < img.width; ++x)
            for (int ch = 0; ch < c; ++ch) {
                int dst = (c >= 3 && ch < 3) ? 2 - ch : ch;
                float v = std::clamp(img.at(y, x, ch), 0.0f, 1.0f);
                row[x * c + dst] = static_cast<unsigned char>(std::lround(v * 255.0f));
            }
    }
    if (!cv::imwrite(path.string(), mat))
        throw DataError("write_image_u8: cannot write " + path.string());
}

MatXi read_label_map(const std::filesystem::path& path) {
    cv::Mat mat = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (mat.empty())
        throw DataError("read_label_map: missing or corrupt file: " + path.string());
    if (mat.channels() != 1)
        throw DataError("read_label_map: label map must be single-channel: " + path.string());
    MatXi labels(mat.rows, mat.cols);
    for (int y = 0; y < mat.rows; ++y)
        for (int x = 0; x < mat.cols; ++x)
            labels(y, x) = mat.depth() == CV_16U ? int(mat.at<std::uint16_t>(y, x))
                                                 : int(mat.at<std::uint8_t>(y, x));
    return labels;
}

void write_label_map(const std::filesystem::path& path, const MatXi& labels) {
    cv::Mat mat(int(labels.rows()), int(labels.cols()), CV_8UC1);
    for (int y = 0; y < labels.rows(); ++y)
        for (int x = 0; x < labels.cols(); ++x) {
            int v = labels(y, x);
            if (v < 0 || v > 255) throw DataError("write_label_map: label out of 8-bit range");
            mat.at<std::uint8_t>(y, x) = static_cast<std::uint8_t>(v);
        }
    if (!cv::imwrite(path.string(), mat))
        throw DataError("write_label_map: cannot write " + path.string());
}

void write_overlay(const std::filesystem::path& path, const Image<float>& img,
                   const MatXi& labels, float alpha) {
    Image<float> out;
    out.height = img.height;
    out.width = img.width;
    out.values.resize(Eigen::Index(img.height) * img.width, 3);
    // Rescale the (possibly standardized) image to [0,1] for display.
    float lo = img.values.minCoeff(), hi = img.values.maxCoeff();
    float span = std::max(hi - lo, 1e-6f);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const auto& color = kPalette[labels(y, x) % kPalette.size()];
            for (int ch = 0; ch < 3; ++ch) {
                float base = (img.at(y, x, std::min(ch, img.channels() - 1)) - lo) / span;
                out.at(y, x, ch) =
                    (1.0f - alpha) * base + alpha * float(color[ch]) / 255.0f;
            }
        }
    write_image_u8(path, out);
}

}  // namespace infoseg
