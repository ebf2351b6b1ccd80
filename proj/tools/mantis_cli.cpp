// mantis command-line interface: chipping, training, inference, evaluation,
// gradient verification and loss-landscape emission.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mantis/gradcheck_suite.hpp"
#include "mantis/image_io.hpp"
#include "mantis/inference.hpp"
#include "mantis/mantis.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

json default_config() {
    return json{
        {"model",
         {{"depth", 4},
          {"nf", 8},
          {"variant", "fractal_resnet"},
          {"ft_depth", 5},
          {"num_classes", 2},
          {"in_channels", 3},
          {"smooth", 1e-5},
          {"seed", 42}}},
        {"data",
         {{"root", nullptr},
          {"out_dir", "runs/latest"},
          {"synth_n", 32},
          {"synth_val_n", 8},
          {"synth_size", 64},
          {"synth_seed", 1234}}},
        {"schedule",
         {{"stages", json::array({json::array({1e-3, 0}), json::array({1e-4, 10}), json::array({1e-5, 20})})},
          {"patience", 10},
          {"max_epochs", 200},
          {"batch_size", 4},
          {"seed", 42},
          {"keep_pareto_only", true},
          {"stop_train_f1", -1.0},
          {"val_ft_depth", nullptr}}},
        {"augment",
         {{"enabled", true},
          {"p_time_reversal", 0.5},
          {"p_random_identity", 0.5},
          {"rot_min_deg", 0.0},
          {"rot_max_deg", 360.0},
          {"zoom_min", 0.8},
          {"zoom_max", 1.2},
          {"brightness_min", 0.8},
          {"brightness_max", 1.2},
          {"shadow_min", 1},
          {"shadow_max", 3},
          {"shadow_factor", 0.5}}},
        {"inference", {{"window", 256}, {"stride", 64}, {"threshold", 0.5}}}};
}

void merge_into(json& base, const json& overlay) {
    for (auto it = overlay.begin(); it != overlay.end(); ++it) {
        if (it->is_object() && base.contains(it.key()) && base[it.key()].is_object())
            merge_into(base[it.key()], *it);
        else
            base[it.key()] = *it;
    }
}

json load_config(const std::string& path) {
    json cfg = default_config();
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open config file " + path);
        json user;
        in >> user;
        merge_into(cfg, user);
    }
    return cfg;
}

mantis::MantisConfig model_config(const json& cfg) {
    return mantis::model_config_from_json(cfg.at("model"));
}

mantis::AugmentConfig augment_config(const json& cfg) {
    const json& a = cfg.at("augment");
    mantis::AugmentConfig out;
    out.p_time_reversal = a.at("p_time_reversal").get<double>();
    out.p_random_identity = a.at("p_random_identity").get<double>();
    out.rot_min_deg = a.at("rot_min_deg").get<double>();
    out.rot_max_deg = a.at("rot_max_deg").get<double>();
    out.zoom_min = a.at("zoom_min").get<double>();
    out.zoom_max = a.at("zoom_max").get<double>();
    out.brightness_min = a.at("brightness_min").get<double>();
    out.brightness_max = a.at("brightness_max").get<double>();
    out.shadow_min = a.at("shadow_min").get<int>();
    out.shadow_max = a.at("shadow_max").get<int>();
    out.shadow_factor = a.at("shadow_factor").get<double>();
    return out;
}

mantis::InferenceConfig inference_config(const json& cfg) {
    const json& i = cfg.at("inference");
    mantis::InferenceConfig out;
    out.window = i.at("window").get<long long>();
    out.stride = i.at("stride").get<long long>();
    out.threshold = i.at("threshold").get<double>();
    return out;
}

std::vector<std::string> list_stems(const fs::path& dir) {
    std::vector<std::string> stems;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".png") stems.push_back(e.path().stem().string());
    std::sort(stems.begin(), stems.end());
    return stems;
}

int cmd_chip(const std::string& in_dir, const std::string& out_dir, long long size, long long stride,
             bool split) {
    fs::path a_dir = fs::path(in_dir) / "A", b_dir = fs::path(in_dir) / "B",
             l_dir = fs::path(in_dir) / "label";
    if (!fs::is_directory(a_dir) || !fs::is_directory(b_dir) || !fs::is_directory(l_dir))
        throw std::runtime_error("chip: expected A/, B/, label/ under " + in_dir);
    auto stems = list_stems(a_dir);
    if (stems.empty()) throw std::runtime_error("chip: no PNG tiles under " + a_dir.string());
    long long written = 0;
    for (const auto& stem : stems) {
        mantis::Tensor a = mantis::read_png((a_dir / (stem + ".png")).string());
        mantis::Tensor b = mantis::read_png((b_dir / (stem + ".png")).string());
        mantis::Tensor label = mantis::read_png((l_dir / (stem + ".png")).string(), true);
        long long H = a.dim(1), W = a.dim(2);
        if (b.dim(1) != H || b.dim(2) != W || label.dim(1) != H || label.dim(2) != W)
            throw std::runtime_error("chip: size mismatch for tile " + stem);

        struct Region {
            std::string split;
            mantis::Rect rect;
        };
        std::vector<Region> regions;
        if (split) {
            auto s = mantis::split_train_val(W, H, size);
            regions.push_back({"train", s.train});
            for (const auto& r : s.val) regions.push_back({"val", r});
        } else {
            regions.push_back({"train", {0, 0, W, H}});
        }
        for (const auto& region : regions) {
            if (region.rect.w < size || region.rect.h < size) continue;
            for (auto [x, y] : mantis::extract_chips(region.rect.w, region.rect.h, size, stride)) {
                long long ox = region.rect.x + x, oy = region.rect.y + y;
                mantis::ChipPair chip;
                chip.name = stem + "_y" + std::to_string(oy) + "_x" + std::to_string(ox);
                chip.t1 = mantis::Tensor(mantis::Shape{3, size, size});
                chip.t2 = mantis::Tensor(mantis::Shape{3, size, size});
                chip.mask = mantis::Tensor(mantis::Shape{size, size});
                for (long long yy = 0; yy < size; ++yy)
                    for (long long xx = 0; xx < size; ++xx) {
                        for (long long c = 0; c < 3; ++c) {
                            chip.t1.at3(c, yy, xx) = a.at3(c, oy + yy, ox + xx);
                            chip.t2.at3(c, yy, xx) = b.at3(c, oy + yy, ox + xx);
                        }
                        chip.mask.at2(yy, xx) = label.at3(0, oy + yy, ox + xx) > 0.5 ? 1.0 : 0.0;
                    }
                mantis::save_chip_png(out_dir, region.split, chip);
                ++written;
            }
        }
    }
    std::cout << "wrote " << written << " chips to " << out_dir << "\n";
    return kExitOk;
}

int cmd_train(const json& cfg) {
    mantis::MantisConfig mc = model_config(cfg);
    const json& data = cfg.at("data");
    const json& sched = cfg.at("schedule");

    std::vector<mantis::ChipPair> train_chips, val_chips;
    if (!data.at("root").is_null()) {
        std::string root = data.at("root").get<std::string>();
        train_chips = mantis::load_dataset_dir(root, "train");
        val_chips = mantis::load_dataset_dir(root, "val");
    } else {
        int n = data.at("synth_n").get<int>();
        int vn = data.at("synth_val_n").get<int>();
        long long size = data.at("synth_size").get<long long>();
        uint64_t seed = data.at("synth_seed").get<uint64_t>();
        train_chips = mantis::synth_dataset(n, size, seed);
        val_chips = mantis::synth_dataset(vn, size, seed + 1);
    }
    if (train_chips.empty()) throw std::runtime_error("train: empty training set");
    std::cout << "train chips: " << train_chips.size() << ", val chips: " << val_chips.size() << "\n";

    mantis::EvolveSchedule schedule;
    schedule.stages.clear();
    for (const auto& s : sched.at("stages"))
        schedule.stages.push_back({s.at(0).get<double>(), s.at(1).get<int>()});
    schedule.patience = sched.at("patience").get<int>();

    mantis::TrainOptions opts;
    opts.max_epochs = sched.at("max_epochs").get<int>();
    opts.batch_size = sched.at("batch_size").get<int>();
    opts.seed = sched.at("seed").get<uint64_t>();
    opts.augment = cfg.at("augment").at("enabled").get<bool>();
    opts.augment_cfg = augment_config(cfg);
    opts.out_dir = data.at("out_dir").get<std::string>();
    opts.keep_pareto_only = sched.at("keep_pareto_only").get<bool>();
    opts.stop_train_f1 = sched.at("stop_train_f1").get<double>();
    if (!sched.at("val_ft_depth").is_null()) opts.val_ft_depth = sched.at("val_ft_depth").get<int>();
    opts.epoch_callback = [](const mantis::EpochStats& st) {
        std::cout << "epoch " << st.epoch << " lr " << st.lr << " d " << st.ft_depth << " train "
                  << st.train_loss << " (F1 " << st.train_f1 << ") val " << st.val_loss << " mcc "
                  << st.val_mcc << " ft " << st.val_ft << (st.stage_switched ? "  [stage++]" : "")
                  << "\n";
        return true;
    };

    mantis::MantisNet net(mc);
    auto records = mantis::train(net, train_chips, val_chips, schedule, opts);

    auto front = mantis::pareto_front(records);
    json out;
    out["records"] = json::array();
    for (const auto& r : records)
        out["records"].push_back({{"epoch", r.epoch}, {"mcc", r.mcc}, {"ftnmt", r.ftnmt}, {"path", r.path}});
    out["pareto_front_epochs"] = json::array();
    for (size_t i : front) out["pareto_front_epochs"].push_back(records[i].epoch);
    std::ofstream rec_out(fs::path(opts.out_dir) / "records.json");
    rec_out << out.dump(2) << "\n";
    std::cout << "pareto front:";
    for (size_t i : front) std::cout << " epoch " << records[i].epoch;
    std::cout << "\nlog: " << (fs::path(opts.out_dir) / "train_log.csv").string() << "\n";
    return kExitOk;
}

int cmd_infer(const std::vector<std::string>& checkpoints, const std::string& a_path,
              const std::string& b_path, const std::string& label_path, const std::string& out_prefix,
              const mantis::InferenceConfig& icfg) {
    mantis::Tensor a = mantis::read_png(a_path);
    mantis::Tensor b = mantis::read_png(b_path);
    std::vector<mantis::MantisNet> nets;
    nets.reserve(checkpoints.size());
    for (const auto& dir : checkpoints) nets.push_back(mantis::load_checkpoint(dir));
    for (size_t i = 1; i < nets.size(); ++i) {
        const auto& c0 = nets[0].config();
        const auto& ci = nets[i].config();
        if (ci.depth != c0.depth || ci.nf != c0.nf || ci.num_classes != c0.num_classes ||
            ci.in_channels != c0.in_channels)
            throw std::runtime_error("infer: incompatible model configs across checkpoints");
    }
    std::vector<mantis::WindowFn> fns;
    for (const auto& net : nets) fns.push_back(mantis::model_window_fn(net));
    mantis::Tensor prob = mantis::ensemble_inference(fns, a, b, icfg);
    mantis::Tensor mask = mantis::threshold_mask(prob, icfg.threshold);

    mantis::write_png_gray(out_prefix + "_prob.png", prob);
    mantis::write_png_gray(out_prefix + "_heat.png", prob);
    mantis::write_png_gray(out_prefix + "_mask.png", mask);
    mantis::write_raw_f32(out_prefix + "_prob.f32", prob);
    json meta = {{"width", prob.dim(1)}, {"height", prob.dim(0)}, {"dtype", "float32"},
                 {"layout", "row-major"}};
    std::ofstream(out_prefix + "_prob.json") << meta.dump(2) << "\n";
    if (!label_path.empty()) {
        mantis::Tensor label = mantis::read_png(label_path, true);
        mantis::Tensor gt(mantis::Shape{label.dim(1), label.dim(2)});
        for (long long i = 0; i < gt.size(); ++i) gt[i] = label[i] > 0.5 ? 1.0 : 0.0;
        mantis::write_png_rgb(out_prefix + "_confusion.png", mantis::confusion_map(mask, gt));
        mantis::Metrics m = mantis::metrics(mask, gt);
        std::cout << "precision " << m.precision << " recall " << m.recall << " f1 " << m.f1
                  << " mcc " << m.mcc << " iou " << m.iou << "\n";
    }
    std::cout << "wrote " << out_prefix << "_{prob,heat,mask}.png, _prob.f32\n";
    return kExitOk;
}

int cmd_eval(const std::string& pred_dir, const std::string& label_dir, double threshold,
             bool per_file) {
    auto stems = list_stems(pred_dir);
    if (stems.empty()) throw std::runtime_error("eval: no PNG predictions under " + pred_dir);
    mantis::Confusion total;
    std::printf("%-24s %9s %9s %9s %9s %9s\n", "name", "precision", "recall", "f1", "mcc", "iou");
    for (const auto& stem : stems) {
        fs::path lp = fs::path(label_dir) / (stem + ".png");
        if (!fs::exists(lp)) throw std::runtime_error("eval: missing label for " + stem);
        mantis::Tensor pred = mantis::read_png((fs::path(pred_dir) / (stem + ".png")).string(), true);
        mantis::Tensor label = mantis::read_png(lp.string(), true);
        if (!mantis::shapes_equal(pred.shape, label.shape))
            throw std::runtime_error("eval: size mismatch for " + stem);
        mantis::Tensor pm(mantis::Shape{pred.dim(1), pred.dim(2)});
        mantis::Tensor lm(pm.shape);
        for (long long i = 0; i < pm.size(); ++i) {
            pm[i] = pred[i] > threshold ? 1.0 : 0.0;
            lm[i] = label[i] > 0.5 ? 1.0 : 0.0;
        }
        mantis::Confusion c = mantis::confusion_counts(pm, lm);
        total += c;
        if (per_file) {
            mantis::Metrics m = mantis::metrics_from(c);
            std::printf("%-24s %9.4f %9.4f %9.4f %9.4f %9.4f\n", stem.c_str(), m.precision, m.recall,
                        m.f1, m.mcc, m.iou);
        }
    }
    mantis::Metrics m = mantis::metrics_from(total);
    std::printf("%-24s %9.4f %9.4f %9.4f %9.4f %9.4f\n", "TOTAL", m.precision, m.recall, m.f1, m.mcc,
                m.iou);
    return kExitOk;
}

int cmd_gradcheck(bool full) {
    auto results = mantis::run_gradcheck_suite(full);
    bool all_pass = true;
    std::printf("%-36s %12s %10s %8s %6s\n", "check", "max_rel_err", "tol", "coords", "pass");
    for (const auto& r : results) {
        all_pass = all_pass && r.pass();
        std::printf("%-36s %12.3e %10.0e %8lld %6s\n", r.name.c_str(), r.max_rel_err, r.tol, r.coords,
                    r.pass() ? "ok" : "FAIL");
    }
    if (!all_pass) {
        std::cerr << "gradient check failed\n";
        return kExitNumeric;
    }
    return kExitOk;
}

int cmd_landscape(double lx, double ly, const std::string& depths_csv, int grid,
                  const std::string& out_path) {
    std::vector<int> depths;
    std::stringstream ss(depths_csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) depths.push_back(std::stoi(tok));
    if (depths.empty()) throw std::invalid_argument("landscape: no depths given");
    std::string csv = mantis::landscape_emit(lx, ly, depths, grid);
    if (out_path.empty()) {
        std::cout << csv;
    } else {
        std::ofstream out(out_path);
        out << csv;
        if (!out) throw std::runtime_error("landscape: cannot write " + out_path);
        std::cout << "wrote " << out_path << "\n";
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mantis: fractal Tanimoto attention networks for change detection"};
    app.require_subcommand(1);

    std::string config_path;
    app.add_option("--config", config_path, "JSON config file; every field has a default");

    // chip
    auto* chip = app.add_subcommand("chip", "cut tile pairs into training chips");
    std::string chip_in, chip_out;
    long long chip_size = 256, chip_stride = 128;
    bool chip_no_split = false;
    chip->add_option("--in", chip_in, "directory with A/, B/, label/ tile PNGs")->required();
    chip->add_option("--out", chip_out, "output dataset root")->required();
    chip->add_option("--size", chip_size, "chip side length");
    chip->add_option("--stride", chip_stride, "sliding-window stride");
    chip->add_flag("--no-split", chip_no_split, "skip the geometric train/val split");

    // train
    auto* train = app.add_subcommand("train", "train a model from a config file");
    std::string tr_out, tr_root, tr_variant;
    int tr_epochs = -1, tr_batch = -1, tr_depth = -1, tr_nf = -1, tr_ft_depth = -1;
    long long tr_seed = -1;
    double tr_stop_f1 = -2.0;
    bool tr_no_augment = false;
    train->add_option("--out", tr_out, "output directory for log and checkpoints");
    train->add_option("--data-root", tr_root, "dataset root (layout root/{train,val}/{A,B,label})");
    train->add_option("--epochs", tr_epochs, "maximum epochs");
    train->add_option("--batch", tr_batch, "batch size");
    train->add_option("--variant", tr_variant, "fractal_resnet | ceecnet_v1 | ceecnet_v2");
    train->add_option("--depth", tr_depth, "encoder depth D");
    train->add_option("--nf", tr_nf, "initial filters");
    train->add_option("--ft-depth", tr_ft_depth, "fractal Tanimoto depth inside attention");
    train->add_option("--seed", tr_seed, "training seed");
    train->add_option("--stop-f1", tr_stop_f1, "early stop when train F1 reaches this value");
    train->add_flag("--no-augment", tr_no_augment, "disable augmentation");

    // infer
    auto* infer = app.add_subcommand("infer", "sliding-window inference on an image pair");
    std::vector<std::string> inf_checkpoints;
    std::string inf_a, inf_b, inf_label, inf_out = "inference";
    long long inf_window = -1, inf_stride = -1;
    double inf_threshold = -1.0;
    infer->add_option("--checkpoint", inf_checkpoints, "checkpoint directory (repeat to ensemble)")
        ->required();
    infer->add_option("--a", inf_a, "image at date 1 (PNG)")->required();
    infer->add_option("--b", inf_b, "image at date 2 (PNG)")->required();
    infer->add_option("--label", inf_label, "optional ground-truth mask for the confusion map");
    infer->add_option("--out", inf_out, "output prefix");
    infer->add_option("--window", inf_window, "inference window");
    infer->add_option("--stride", inf_stride, "inference stride");
    infer->add_option("--threshold", inf_threshold, "mask threshold");

    // eval
    auto* eval = app.add_subcommand("eval", "metrics of predicted masks vs labels");
    std::string ev_pred, ev_label;
    double ev_threshold = 0.5;
    bool ev_per_file = false;
    eval->add_option("--pred", ev_pred, "directory of predicted masks")->required();
    eval->add_option("--label", ev_label, "directory of ground-truth masks")->required();
    eval->add_option("--threshold", ev_threshold, "binarization threshold");
    eval->add_flag("--per-file", ev_per_file, "print one row per file");

    // gradcheck
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    bool gc_quick = false;
    gradcheck->add_flag("--quick", gc_quick, "skip the full-network check");

    // landscape
    auto* landscape = app.add_subcommand("landscape", "similarity landscape CSV over the unit square");
    double ls_lx = 0.4, ls_ly = 0.6;
    std::string ls_depths = "0,3,5", ls_out;
    int ls_grid = 101;
    landscape->add_option("--lx", ls_lx, "ground truth x");
    landscape->add_option("--ly", ls_ly, "ground truth y");
    landscape->add_option("--depths", ls_depths, "comma-separated depths");
    landscape->add_option("--grid", ls_grid, "grid resolution per axis");
    landscape->add_option("--out", ls_out, "output CSV path (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        json cfg = load_config(config_path);
        if (*chip) return cmd_chip(chip_in, chip_out, chip_size, chip_stride, !chip_no_split);
        if (*train) {
            if (!tr_out.empty()) cfg["data"]["out_dir"] = tr_out;
            if (!tr_root.empty()) cfg["data"]["root"] = tr_root;
            if (tr_epochs > 0) cfg["schedule"]["max_epochs"] = tr_epochs;
            if (tr_batch > 0) cfg["schedule"]["batch_size"] = tr_batch;
            if (!tr_variant.empty()) cfg["model"]["variant"] = tr_variant;
            if (tr_depth > 0) cfg["model"]["depth"] = tr_depth;
            if (tr_nf > 0) cfg["model"]["nf"] = tr_nf;
            if (tr_ft_depth >= 0) cfg["model"]["ft_depth"] = tr_ft_depth;
            if (tr_seed >= 0) {
                cfg["model"]["seed"] = tr_seed;
                cfg["schedule"]["seed"] = tr_seed;
            }
            if (tr_stop_f1 > -2.0) cfg["schedule"]["stop_train_f1"] = tr_stop_f1;
            if (tr_no_augment) cfg["augment"]["enabled"] = false;
            return cmd_train(cfg);
        }
        if (*infer) {
            mantis::InferenceConfig icfg = inference_config(cfg);
            if (inf_window > 0) icfg.window = inf_window;
            if (inf_stride > 0) icfg.stride = inf_stride;
            if (inf_threshold > 0.0) icfg.threshold = inf_threshold;
            return cmd_infer(inf_checkpoints, inf_a, inf_b, inf_label, inf_out, icfg);
        }
        if (*eval) return cmd_eval(ev_pred, ev_label, ev_threshold, ev_per_file);
        if (*gradcheck) return cmd_gradcheck(!gc_quick);
        if (*landscape) return cmd_landscape(ls_lx, ls_ly, ls_depths, ls_grid, ls_out);
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::domain_error& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}
