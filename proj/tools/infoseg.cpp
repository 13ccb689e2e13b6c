// infoseg: unsupervised segmentation toolbox.
//
//   infoseg synth    generate a synthetic textured dataset
//   infoseg train    fit a model on a dataset root
//   infoseg eval     compute metrics for a checkpoint on the eval split
//   infoseg ablate   train + eval the full objective grid
//   infoseg segment  segment a single image with a checkpoint
//
// Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numerical
// error, 1 anything else.

#include "infoseg/datasets.hpp"
#include "infoseg/evaluator.hpp"
#include "infoseg/image_io.hpp"
#include "infoseg/manifest.hpp"
#include "infoseg/segmenter.hpp"
#include "infoseg/synthetic.hpp"
#include "infoseg/trainer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace infoseg;

namespace {

struct TrainArgs {
    std::string data_root;
    std::string run_dir;
    std::string resume;
    std::string estimator = "jsd";
    std::string assignment = "soft";
    std::string objective = "infoseg";
    double lr = 1e-4;
    int batch_size = 64;
    double tau = 0.8;
    std::int64_t max_steps = 1000;
    std::int64_t checkpoint_every = 1000;
    std::uint64_t seed = 0;
    int feature_dim = 1024;
    int num_classes = 0;
    std::vector<int> block_a = {64, 128, 128, 256};
    std::vector<int> block_b = {512, 512};
};

TrainConfig make_train_config(const TrainArgs& a, const fs::path& root) {
    DatasetMeta meta = read_meta(root);
    TrainConfig cfg;
    cfg.network.input_channels = meta.channels;
    cfg.network.feature_dim = a.feature_dim;
    cfg.network.num_classes = a.num_classes > 0 ? a.num_classes : meta.num_classes;
    if (int(a.block_a.size()) != 4)
        throw ConfigError("--block-a needs exactly 4 widths");
    if (int(a.block_b.size()) != 2)
        throw ConfigError("--block-b needs exactly 2 widths");
    std::copy(a.block_a.begin(), a.block_a.end(), cfg.network.block_a_widths.begin());
    std::copy(a.block_b.begin(), a.block_b.end(), cfg.network.block_b_widths.begin());
    cfg.network.init_seed = hash_seed(a.seed, 0xF17ULL);
    cfg.lr = a.lr;
    cfg.batch_size = a.batch_size;
    cfg.tau = a.tau;
    cfg.estimator = estimator_from_string(a.estimator);
    cfg.assignment = assignment_from_string(a.assignment);
    cfg.objective = objective_from_string(a.objective);
    cfg.max_steps = a.max_steps;
    cfg.checkpoint_every = a.checkpoint_every;
    cfg.seed = a.seed;
    cfg.validate();
    return cfg;
}

fs::path run_train(const TrainConfig& cfg, const fs::path& root, const fs::path& run_dir,
                   const std::optional<fs::path>& resume) {
    RunLock lock(run_dir);
    RunManifest manifest;
    manifest.run_name = run_dir.filename().string();
    manifest.config = cfg;
    manifest.dataset_fingerprint = dataset_fingerprint(root);
    manifest.data_root = fs::absolute(root).string();
    write_manifest(run_dir, manifest);

    ImageSpec spec = infer_image_spec(root);
    auto train_images = load_images(root, spec, Split::kTrain);
    std::cerr << "training on " << train_images.size() << " images, "
              << cfg.max_steps << " steps\n";
    FitResult result = fit(train_images, cfg, run_dir, resume);
    std::cout << "final checkpoint: " << result.final_checkpoint.string() << "\n";
    if (!result.loss_trace.empty())
        std::cout << "final loss: " << result.loss_trace.back() << "\n";
    return result.final_checkpoint;
}

int cmd_synth(int n_train, int n_eval, int num_classes, int size, std::uint64_t seed,
              const std::string& out, bool force) {
    SyntheticSceneConfig cfg;
    cfg.num_classes = num_classes;
    cfg.height = size;
    cfg.width = size;
    cfg.seed = seed;
    cfg.validate();
    materialize_synthetic(cfg, n_train, n_eval, out, force);
    std::cout << "wrote " << (n_train + n_eval) << " images to " << out << "\n";
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& root, const std::string& out,
             bool no_images) {
    MetricsReport report = evaluate_run(checkpoint, root, out, !no_images);
    std::cout << std::fixed << std::setprecision(4) << "pixel_accuracy " << report.pa
              << "\nmean_iou " << report.miou << "\n";
    return 0;
}

int cmd_segment(const std::string& checkpoint, const std::string& image_path,
                const std::string& out) {
    Checkpoint ckpt = load_checkpoint(checkpoint);
    Network<float> net(ckpt.config.network);
    Image<float> img = read_image(image_path);
    LocalFeatureMap<float> local;
    GlobalFeatureSet<float> global;
    net.forward(img, ckpt.params, local, global);
    auto vol = prob_volume(class_scores(local, global), local.u, local.v,
                           float(ckpt.config.tau));
    SegmentationMap seg = segment(vol, ckpt.config.network.downsampling);
    write_label_map(out, seg.full_res);
    fs::path overlay = fs::path(out).replace_extension("") .string() + "_overlay.png";
    if (img.channels() >= 3) write_overlay(overlay, img, seg.full_res);
    std::cout << "wrote " << out << "\n";
    return 0;
}

// Objective grid in one command: both estimators x both assignment modes
// plus the clustering (IIC) baseline, each trained and evaluated under
// identical settings, written as one comparison table.
int cmd_ablate(TrainArgs args, const std::string& out_dir) {
    struct Cell {
        std::string name;
        std::string objective;
        std::string estimator;
        std::string assignment;
    };
    const std::vector<Cell> grid = {
        {"jsd_soft", "infoseg", "jsd", "soft"}, {"jsd_hard", "infoseg", "jsd", "hard"},
        {"dv_soft", "infoseg", "dv", "soft"},   {"dv_hard", "infoseg", "dv", "hard"},
        {"iicmi", "iicmi", "jsd", "soft"},
    };
    fs::create_directories(out_dir);
    json table = json::array();
    for (const auto& cell : grid) {
        TrainArgs a = args;
        a.objective = cell.objective;
        a.estimator = cell.estimator;
        a.assignment = cell.assignment;
        TrainConfig cfg = make_train_config(a, args.data_root);
        fs::path run_dir = fs::path(out_dir) / cell.name;
        std::cerr << "== " << cell.name << " ==\n";
        fs::path ckpt = run_train(cfg, args.data_root, run_dir, std::nullopt);
        MetricsReport report =
            evaluate_run(ckpt, args.data_root, run_dir / "eval", /*export_images=*/false);
        table.push_back({{"variant", cell.name},
                         {"objective", cell.objective},
                         {"estimator", cell.estimator},
                         {"assignment", cell.assignment},
                         {"pixel_accuracy", report.pa},
                         {"mean_iou", report.miou}});
        std::cout << cell.name << " pa=" << report.pa << " miou=" << report.miou << "\n";
    }
    std::ofstream out(fs::path(out_dir) / "comparison.json");
    out << table.dump(2) << "\n";
    std::ofstream tsv(fs::path(out_dir) / "comparison.tsv");
    tsv << "variant\tobjective\testimator\tassignment\tpixel_accuracy\tmean_iou\n";
    for (const auto& row : table)
        tsv << row["variant"].get<std::string>() << "\t" << row["objective"].get<std::string>()
            << "\t" << row["estimator"].get<std::string>() << "\t"
            << row["assignment"].get<std::string>() << "\t"
            << row["pixel_accuracy"].get<double>() << "\t" << row["mean_iou"].get<double>()
            << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"unsupervised semantic segmentation toolbox"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic textured dataset");
    int s_train = 2048, s_eval = 256, s_classes = 3, s_size = 32;
    std::uint64_t s_seed = 0;
    std::string s_out;
    bool s_force = false;
    synth->add_option("--out", s_out, "dataset root to create")->required();
    synth->add_option("--train", s_train, "training image count");
    synth->add_option("--eval", s_eval, "evaluation image count");
    synth->add_option("--classes", s_classes, "class count incl. background");
    synth->add_option("--size", s_size, "square image side");
    synth->add_option("--seed", s_seed, "generator seed");
    synth->add_flag("--force", s_force, "overwrite an existing dataset");

    // shared train options
    TrainArgs t;
    auto add_train_opts = [&](CLI::App* cmd, bool with_variant) {
        cmd->add_option("--data", t.data_root, "dataset root")->required();
        cmd->add_option("--lr", t.lr, "Adam learning rate");
        cmd->add_option("--batch-size", t.batch_size, "images per step");
        cmd->add_option("--tau", t.tau, "softmax temperature");
        cmd->add_option("--steps", t.max_steps, "number of optimizer steps");
        cmd->add_option("--checkpoint-every", t.checkpoint_every, "checkpoint interval");
        cmd->add_option("--seed", t.seed, "run seed");
        cmd->add_option("--feature-dim", t.feature_dim, "feature dimension P");
        cmd->add_option("--classes", t.num_classes, "class count K (default: dataset K')");
        cmd->add_option("--block-a", t.block_a, "4 widths of the local feature block");
        cmd->add_option("--block-b", t.block_b, "2 widths of the global feature block");
        if (with_variant) {
            cmd->add_option("--estimator", t.estimator, "jsd|dv");
            cmd->add_option("--assignment", t.assignment, "soft|hard");
            cmd->add_option("--objective", t.objective, "infoseg|iicmi");
        }
    };

    auto* train = app.add_subcommand("train", "fit a model");
    add_train_opts(train, true);
    train->add_option("--run-dir", t.run_dir, "output run directory")->required();
    train->add_option("--resume", t.resume, "checkpoint to resume from");

    auto* evalc = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string e_ckpt, e_root, e_out;
    bool e_no_images = false;
    evalc->add_option("--checkpoint", e_ckpt, "checkpoint file")->required();
    evalc->add_option("--data", e_root, "dataset root")->required();
    evalc->add_option("--out", e_out, "output directory")->required();
    evalc->add_flag("--no-images", e_no_images, "skip per-image exports");

    auto* ablate = app.add_subcommand("ablate", "train + eval the objective grid");
    add_train_opts(ablate, false);
    std::string a_out;
    ablate->add_option("--out", a_out, "grid output directory")->required();

    auto* segc = app.add_subcommand("segment", "segment one image");
    std::string g_ckpt, g_img, g_out;
    segc->add_option("--checkpoint", g_ckpt, "checkpoint file")->required();
    segc->add_option("--image", g_img, "input image")->required();
    segc->add_option("--out", g_out, "output label PNG")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed())
            return cmd_synth(s_train, s_eval, s_classes, s_size, s_seed, s_out, s_force);
        if (train->parsed()) {
            TrainConfig cfg = make_train_config(t, t.data_root);
            std::optional<fs::path> resume;
            if (!t.resume.empty()) resume = t.resume;
            run_train(cfg, t.data_root, t.run_dir, resume);
            return 0;
        }
        if (evalc->parsed()) return cmd_eval(e_ckpt, e_root, e_out, e_no_images);
        if (ablate->parsed()) return cmd_ablate(t, a_out);
        if (segc->parsed()) return cmd_segment(g_ckpt, g_img, g_out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
