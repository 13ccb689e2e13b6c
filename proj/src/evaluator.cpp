#include "infoseg/evaluator.hpp"

#include "infoseg/datasets.hpp"
#include "infoseg/image_io.hpp"
#include "infoseg/network.hpp"
#include "infoseg/segmenter.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <limits>
#include <vector>

namespace infoseg {

namespace fs = std::filesystem;
using nlohmann::json;

void accumulate(ConfusionMatrix& cm, const MatXi& pred, const MatXi& truth, int ignore_value) {
    if (pred.rows() != truth.rows() || pred.cols() != truth.cols())
        throw StructuralError("accumulate: prediction/annotation shape mismatch");
    for (Eigen::Index i = 0; i < pred.rows(); ++i)
        for (Eigen::Index j = 0; j < pred.cols(); ++j) {
            int t = truth(i, j);
            if (t == ignore_value) {
                ++cm.ignore_count;
                continue;
            }
            int p = pred(i, j);
            if (p < 0 || p >= cm.counts.rows())
                throw DataError("accumulate: predicted label out of range");
            if (t < 0 || t >= cm.counts.cols())
                throw DataError("accumulate: annotated label out of range");
            ++cm.counts(p, t);
        }
}

namespace {

// Hungarian method with potentials, O(n^3). Maximizes by negating the
// count matrix; rows are padded with zeros when K < K'.
std::vector<int> assign_max(const Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>&
                                counts) {
    const int n = int(counts.cols());
    // cost(i, j) for padded square problem, 1-based vectors as usual.
    auto cost = [&](int i, int j) -> double {
        if (i < counts.rows()) return -double(counts(i, j));
        return 0.0;
    };
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, std::numeric_limits<double>::infinity());
        std::vector<char> used(n + 1, false);
        do {
            used[j0] = true;
            int i0 = p[j0], j1 = 0;
            double delta = std::numeric_limits<double>::infinity();
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    std::vector<int> row_to_col(counts.rows(), -1);
    for (int j = 1; j <= n; ++j)
        if (p[j] >= 1 && p[j] <= counts.rows()) row_to_col[p[j] - 1] = j - 1;
    return row_to_col;
}

}  // namespace

ClassMapping hungarian_match(const ConfusionMatrix& cm) {
    if (cm.counts.rows() == 0 || cm.counts.cols() == 0)
        throw StructuralError("hungarian_match: empty confusion matrix");
    if (cm.counts.rows() > cm.counts.cols())
        throw ConfigError("hungarian_match: more predicted classes than annotated classes");
    ClassMapping mapping;
    mapping.assignment = assign_max(cm.counts);
    std::int64_t matched = 0;
    for (int k = 0; k < int(cm.counts.rows()); ++k)
        matched += cm.counts(k, mapping.assignment[k]);
    std::int64_t total = cm.total();
    mapping.matched_pa = total > 0 ? double(matched) / double(total) : 0.0;
    return mapping;
}

MetricsReport metrics(const ConfusionMatrix& cm, const ClassMapping& mapping) {
    if (int(mapping.assignment.size()) != cm.counts.rows())
        throw StructuralError("metrics: mapping size does not match confusion matrix");
    MetricsReport report;
    report.mapping = mapping.assignment;
    const std::int64_t total = cm.total();
    std::int64_t matched = 0;
    double iou_sum = 0.0;
    int iou_defined = 0;
    for (int k = 0; k < int(cm.counts.rows()); ++k) {
        const int a = mapping.assignment[k];
        PerClassMetrics pc;
        pc.pred_idx = k;
        pc.matched_label = a;
        std::int64_t tp = cm.counts(k, a);
        std::int64_t pred_total = cm.counts.row(k).sum();
        std::int64_t true_total = cm.counts.col(a).sum();
        std::int64_t uni = pred_total + true_total - tp;
        matched += tp;
        if (uni > 0) {
            pc.iou = double(tp) / double(uni);
            pc.iou_defined = true;
            iou_sum += pc.iou;
            ++iou_defined;
        } else {
            // Class absent from both prediction and annotation; excluded
            // from the mean rather than counted as 0 or 1.
            pc.iou = 0.0;
            pc.iou_defined = false;
        }
        pc.pixel_freq = total > 0 ? double(true_total) / double(total) : 0.0;
        report.per_class.push_back(pc);
    }
    report.pa = total > 0 ? double(matched) / double(total) : 0.0;
    report.miou = iou_defined > 0 ? iou_sum / iou_defined : 0.0;
    std::int64_t grand = total + cm.ignore_count;
    report.ignore_fraction = grand > 0 ? double(cm.ignore_count) / double(grand) : 0.0;
    return report;
}

std::string metrics_to_json(const MetricsReport& report,
                            const std::vector<std::string>& class_names) {
    json per_class = json::array();
    for (const auto& pc : report.per_class) {
        json entry{{"pred_idx", pc.pred_idx},
                   {"matched_label", pc.matched_label},
                   {"pixel_freq", pc.pixel_freq}};
        if (pc.matched_label >= 0 && pc.matched_label < int(class_names.size()))
            entry["matched_name"] = class_names[pc.matched_label];
        if (pc.iou_defined)
            entry["iou"] = pc.iou;
        else
            entry["iou"] = nullptr;
        per_class.push_back(entry);
    }
    json doc{{"pixel_accuracy", report.pa},
             {"mean_iou", report.miou},
             {"ignore_fraction", report.ignore_fraction},
             {"mapping", report.mapping},
             {"per_class", per_class}};
    return doc.dump(2) + "\n";
}

void write_confusion_csv(const fs::path& path, const ConfusionMatrix& cm) {
    std::ofstream out(path);
    if (!out) throw DataError("write_confusion_csv: cannot open " + path.string());
    out << "pred\\true";
    for (Eigen::Index j = 0; j < cm.counts.cols(); ++j) out << "," << j;
    out << "\n";
    for (Eigen::Index i = 0; i < cm.counts.rows(); ++i) {
        out << i;
        for (Eigen::Index j = 0; j < cm.counts.cols(); ++j) out << "," << cm.counts(i, j);
        out << "\n";
    }
    out << "ignored," << cm.ignore_count << "\n";
}

MetricsReport evaluate_run(const fs::path& checkpoint_path, const fs::path& data_root,
                           const fs::path& out_dir, bool export_images) {
    Checkpoint ckpt = load_checkpoint(checkpoint_path);
    const NetworkConfig& ncfg = ckpt.config.network;
    DatasetMeta meta = read_meta(data_root);
    ImageSpec spec = infer_image_spec(data_root);
    auto data = load_dataset(data_root, spec, Split::kEval);
    if (data.empty()) throw DataError("evaluate_run: evaluation split is empty");

    Network<float> net(ncfg);
    if (net.param_count() != ckpt.params.size())
        throw StructuralError("evaluate_run: checkpoint parameter count mismatch");

    fs::create_directories(out_dir);
    fs::path seg_dir = out_dir / "segmentations";
    if (export_images) fs::create_directories(seg_dir);

    // Pass 1: predict everything and pool counts so the class mapping is
    // solved once, globally, on the evaluation split.
    struct Pred {
        SegmentationMap seg;
        std::string id;
    };
    std::vector<Pred> preds(data.size());
    ConfusionMatrix cm(ncfg.num_classes, meta.num_classes);
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < int(data.size()); ++i) {
        LocalFeatureMap<float> local;
        GlobalFeatureSet<float> global;
        net.forward(data[i].image, ckpt.params, local, global);
        auto vol = prob_volume(class_scores(local, global), local.u, local.v,
                               float(ckpt.config.tau));
        preds[i].seg = segment(vol, ncfg.downsampling);
        preds[i].id = data[i].id;
    }
    for (int i = 0; i < int(data.size()); ++i)
        accumulate(cm, preds[i].seg.full_res, data[i].labels, meta.ignore_value);

    ClassMapping mapping = hungarian_match(cm);
    MetricsReport report = metrics(cm, mapping);

    std::ofstream mj(out_dir / "metrics.json");
    if (!mj) throw DataError("evaluate_run: cannot write metrics.json");
    mj << metrics_to_json(report, meta.class_names);
    write_confusion_csv(out_dir / "confusion.csv", cm);

    if (export_images) {
        for (int i = 0; i < int(data.size()); ++i) {
            MatXi remapped = preds[i].seg.full_res;
            for (Eigen::Index r = 0; r < remapped.rows(); ++r)
                for (Eigen::Index c = 0; c < remapped.cols(); ++c)
                    remapped(r, c) = mapping.assignment[remapped(r, c)];
            write_label_map(seg_dir / (preds[i].id + ".png"), remapped);
            write_overlay(seg_dir / (preds[i].id + "_overlay.png"), data[i].image, remapped);
            json side{{"id", preds[i].id},
                      {"mapping", mapping.assignment},
                      {"checkpoint", checkpoint_path.string()}};
            std::ofstream sj(seg_dir / (preds[i].id + ".json"));
            sj << side.dump(2) << "\n";
        }
    }
    return report;
}

}  // namespace infoseg
