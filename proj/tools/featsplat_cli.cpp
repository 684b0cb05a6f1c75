// Copyright Contributors to the featsplat project
// SPDX-License-Identifier: Apache-2.0

// featsplat: train, render, evaluate and serve feature-splatting scenes.

#include "featsplat/dataset.hpp"
#include "featsplat/image_io.hpp"
#include "featsplat/losses.hpp"
#include "featsplat/scene_io.hpp"
#include "featsplat/service.hpp"
#include "featsplat/trainer.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace featsplat;

namespace {

std::vector<double> parse_list(const std::string& text, std::size_t n, const char* what) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw InvalidInput(fmt::format("{}: '{}' is not a number", what, item));
        }
    }
    if (out.size() != n) throw InvalidInput(fmt::format("{} needs {} comma-separated values", what, n));
    return out;
}

EmbeddingConfig parse_embeddings(const std::string& text) {
    EmbeddingConfig cfg = EmbeddingConfig::none();
    if (text == "none" || text.empty()) return cfg;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item == "pixel") cfg.use_pixel = true;
        else if (item == "campos") cfg.use_campos = true;
        else if (item == "camrot") cfg.use_camrot = true;
        else throw InvalidInput("unknown embedding '" + item + "' (expected pixel, campos, camrot or none)");
    }
    return cfg;
}

Eigen::Vector3d parse_vec3(const std::string& text, const char* what) {
    const auto v = parse_list(text, 3, what);
    return {v[0], v[1], v[2]};
}

struct TrainArgs {
    std::string data, out, embed = "pixel,campos", background = "0,0,0";
    int feature_dim = 16, classes = -1, iters = 30000, threads = 1, checkpoint_every = 0, probe_every = 1;
    std::uint64_t seed = 0;
    double lambda_ssim = 0.2, lambda_sem = 0.001;
    bool no_densify = false;
};

int cmd_train(const TrainArgs& a) {
    Dataset ds = load_dataset(a.data);
    if (a.classes >= 0) {
        const bool labelled = std::any_of(ds.views.begin(), ds.views.end(), [](const View& v) { return v.labels.has_value(); });
        if (labelled && a.classes != ds.class_count)
            throw InvalidInput(fmt::format("--classes {} disagrees with the dataset's class_count {}", a.classes,
                                           ds.class_count));
        ds.class_count = a.classes;
    }
    TrainConfig cfg;
    cfg.iterations = a.iters;
    cfg.feature_dim = a.feature_dim;
    cfg.seed = a.seed;
    cfg.threads = a.threads;
    cfg.loss.lambda_ssim = a.lambda_ssim;
    cfg.loss.lambda_sem = a.lambda_sem;
    cfg.embeddings = parse_embeddings(a.embed);
    cfg.background = parse_vec3(a.background, "--background");
    cfg.densify = !a.no_densify;
    cfg.checkpoint_interval = a.checkpoint_every;
    cfg.probe_interval = a.probe_every;
    cfg.checkpoint_dir = a.out;
    std::cout << "iter\tloss\tpsnr\tn_gaussians\n";
    const TrainResult r = train(ds, cfg, &std::cout);
    std::cerr << fmt::format("wrote {}\n", (fs::path(a.out) / "final.fspl").string());
    (void)r;
    return 0;
}

struct RenderArgs {
    std::string scene, data, out, split = "test", layer = "rgb", background = "0,0,0";
    std::string override_campos, override_pixel, override_camrot;
    int threads = 1;
};

EmbeddingOverrides overrides_from(const RenderArgs& a) {
    EmbeddingOverrides ov;
    if (!a.override_campos.empty()) ov.campos = parse_vec3(a.override_campos, "--override-campos");
    if (!a.override_pixel.empty()) {
        const auto v = parse_list(a.override_pixel, 2, "--override-pixel");
        ov.pixel = Eigen::Vector2d(v[0], v[1]);
    }
    if (!a.override_camrot.empty()) ov.camrot = parse_vec3(a.override_camrot, "--override-camrot");
    return ov;
}

int cmd_render(const RenderArgs& a) {
    const LoadedScene loaded = load_scene(a.scene);
    const Dataset ds = load_dataset(a.data, false);
    const EmbeddingOverrides ov = overrides_from(a);
    ov.check_against(loaded.decoder.config);
    if (a.layer == "semantic" && loaded.decoder.class_count == 0) throw InvalidInput("scene has no semantic head");
    const Eigen::Vector3d bg = parse_vec3(a.background, "--background");
    fs::create_directories(a.out);
    int written = 0;
    for (std::size_t i = 0; i < ds.views.size(); ++i) {
        const View& v = ds.views[i];
        if (a.split != "all" && (a.split == "test") != v.is_test) continue;
        const DecodedImage img = render_view(loaded.scene, loaded.decoder, v.camera, bg, ov, a.threads);
        const fs::path file = fs::path(a.out) / fmt::format("render_{:04d}.png", i);
        std::ofstream out(file, std::ios::binary);
        const auto png = a.layer == "semantic" ? encode_png_palette(argmax_labels(img.probs)) : encode_png_rgb(img.rgb);
        out.write(reinterpret_cast<const char*>(png.data()), static_cast<std::streamsize>(png.size()));
        std::cout << file.string() << '\n';
        ++written;
    }
    std::cerr << fmt::format("rendered {} view(s)\n", written);
    return 0;
}

struct EvalArgs {
    std::string scene, data, background = "0,0,0";
    int threads = 1;
};

int cmd_eval(const EvalArgs& a) {
    const LoadedScene loaded = load_scene(a.scene);
    const Dataset ds = load_dataset(a.data);
    const EvalReport rep = evaluate(loaded.scene, loaded.decoder, ds, parse_vec3(a.background, "--background"), a.threads);
    const bool sem = rep.mean_miou.has_value();
    std::cout << (sem ? "view\tpsnr\tssim\tmiou\n" : "view\tpsnr\tssim\n");
    for (const auto& v : rep.views) {
        std::cout << fmt::format("{}\t{:.4f}\t{:.6f}", v.name, v.psnr, v.ssim);
        if (sem) std::cout << fmt::format("\t{:.6f}", v.miou.value_or(0.0));
        std::cout << '\n';
    }
    std::cout << fmt::format("mean\t{:.4f}\t{:.6f}", rep.mean_psnr, rep.mean_ssim);
    if (sem) std::cout << fmt::format("\t{:.6f}", *rep.mean_miou);
    std::cout << fmt::format("\tfps={:.2f}\n", rep.fps);
    return 0;
}

struct ServeArgs {
    std::string scene, addr = "127.0.0.1:8080", static_dir;
    std::size_t max_pixels = 4'000'000;
    int threads = 1;
};

int cmd_serve(const ServeArgs& a) {
    const auto colon = a.addr.rfind(':');
    if (colon == std::string::npos) throw InvalidInput("--addr must be host:port");
    const std::string host = a.addr.substr(0, colon);
    const int port = std::stoi(a.addr.substr(colon + 1));
    ServiceConfig cfg;
    cfg.max_pixels = a.max_pixels;
    cfg.threads = a.threads;
    cfg.static_dir = a.static_dir;
    auto svc = std::make_shared<const RenderService>(load_scene(a.scene), cfg);
    ServiceHost host_(svc);
    std::cerr << fmt::format("serving {} on {}\n", a.scene, a.addr);
    host_.run(host, port);
    return 0;
}

struct ToyArgs {
    std::string out, kind = "rgb";
    std::uint64_t seed = 0;
    int feature_dim = 16;
};

int cmd_make_toy(const ToyArgs& a) {
    ToySpec spec;
    if (a.kind == "rgb") spec = three_gaussian_toy(a.seed, a.feature_dim);
    else if (a.kind == "semantic") spec = semantic_toy(a.seed, a.feature_dim);
    else if (a.kind == "brightness") {
        spec = three_gaussian_toy(a.seed, a.feature_dim);
        spec.brightness_amplitude = 0.3;
    } else throw InvalidInput("--kind must be rgb, semantic or brightness");
    const ToyDataset toy = make_toy_dataset(spec, a.seed);
    save_dataset(toy.dataset, a.out);
    save_scene(toy.scene, toy.decoder, fs::path(a.out) / "ground_truth.fspl");
    std::cerr << fmt::format("wrote {} views to {}\n", toy.dataset.views.size(), a.out);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"feature splatting: train, render, evaluate and serve"};
    app.require_subcommand(1);

    TrainArgs ta;
    auto* train_cmd = app.add_subcommand("train", "optimize a scene on a posed-image dataset");
    train_cmd->add_option("--data", ta.data, "dataset root with cameras.json")->required()->envname("FEATSPLAT_DATA");
    train_cmd->add_option("--out", ta.out, "output directory for checkpoints")->required()->envname("FEATSPLAT_OUT");
    train_cmd->add_option("--feature-dim", ta.feature_dim, "feature vector length")
        ->check(CLI::IsMember({16, 32}))
        ->envname("FEATSPLAT_FEATURE_DIM");
    train_cmd->add_option("--classes", ta.classes, "semantic class count (default: from dataset)")
        ->check(CLI::Range(0, 255))
        ->envname("FEATSPLAT_CLASSES");
    train_cmd->add_option("--iters", ta.iters, "iterations")->check(CLI::NonNegativeNumber)->envname("FEATSPLAT_ITERS");
    train_cmd->add_option("--seed", ta.seed, "random seed")->envname("FEATSPLAT_SEED");
    train_cmd->add_option("--lambda-ssim", ta.lambda_ssim, "D-SSIM weight")->envname("FEATSPLAT_LAMBDA_SSIM");
    train_cmd->add_option("--lambda-sem", ta.lambda_sem, "semantic loss weight")->envname("FEATSPLAT_LAMBDA_SEM");
    train_cmd->add_option("--embed", ta.embed, "decoder embeddings: comma list of pixel,campos,camrot or none")
        ->envname("FEATSPLAT_EMBED");
    train_cmd->add_option("--background", ta.background, "background colour r,g,b")->envname("FEATSPLAT_BACKGROUND");
    train_cmd->add_option("--threads", ta.threads, "worker threads")->envname("FEATSPLAT_THREADS");
    train_cmd->add_option("--checkpoint-every", ta.checkpoint_every, "checkpoint interval (0 = final only)");
    train_cmd->add_option("--probe-every", ta.probe_every, "held-out probe interval for the log")->check(CLI::PositiveNumber);
    train_cmd->add_flag("--no-densify", ta.no_densify, "disable densification and pruning");

    RenderArgs ra;
    auto* render_cmd = app.add_subcommand("render", "render dataset cameras to PNG");
    render_cmd->add_option("--scene", ra.scene, "scene file")->required()->envname("FEATSPLAT_SCENE");
    render_cmd->add_option("--data", ra.data, "dataset root with cameras.json")->required()->envname("FEATSPLAT_DATA");
    render_cmd->add_option("--out", ra.out, "output directory")->required();
    render_cmd->add_option("--split", ra.split, "test, train or all")->check(CLI::IsMember({"test", "train", "all"}));
    render_cmd->add_option("--layer", ra.layer, "rgb or semantic")->check(CLI::IsMember({"rgb", "semantic"}));
    render_cmd->add_option("--background", ra.background, "background colour r,g,b")->envname("FEATSPLAT_BACKGROUND");
    render_cmd->add_option("--override-campos", ra.override_campos, "replace the camera-position input x,y,z");
    render_cmd->add_option("--override-pixel", ra.override_pixel, "replace the pixel embedding u,v");
    render_cmd->add_option("--override-camrot", ra.override_camrot, "replace the camera-rotation input a,b,c");
    render_cmd->add_option("--threads", ra.threads, "worker threads")->envname("FEATSPLAT_THREADS");

    EvalArgs ea;
    auto* eval_cmd = app.add_subcommand("eval", "score test views (PSNR, SSIM, weighted mIoU, FPS)");
    eval_cmd->add_option("--scene", ea.scene, "scene file")->required()->envname("FEATSPLAT_SCENE");
    eval_cmd->add_option("--data", ea.data, "dataset root")->required()->envname("FEATSPLAT_DATA");
    eval_cmd->add_option("--background", ea.background, "background colour r,g,b")->envname("FEATSPLAT_BACKGROUND");
    eval_cmd->add_option("--threads", ea.threads, "worker threads")->envname("FEATSPLAT_THREADS");

    ServeArgs sa;
    auto* serve_cmd = app.add_subcommand("serve", "HTTP render service");
    serve_cmd->add_option("--scene", sa.scene, "scene file")->required()->envname("FEATSPLAT_SCENE");
    serve_cmd->add_option("--addr", sa.addr, "host:port")->envname("FEATSPLAT_ADDR");
    serve_cmd->add_option("--max-pixels", sa.max_pixels, "largest accepted width*height")->envname("FEATSPLAT_MAX_PIXELS");
    serve_cmd->add_option("--threads", sa.threads, "render threads per request")->envname("FEATSPLAT_THREADS");
    serve_cmd->add_option("--static-dir", sa.static_dir, "directory served under /")->envname("FEATSPLAT_STATIC_DIR");

    ToyArgs ya;
    auto* toy_cmd = app.add_subcommand("make-toy", "write a synthetic toy dataset");
    toy_cmd->add_option("--out", ya.out, "output dataset root")->required();
    toy_cmd->add_option("--kind", ya.kind, "rgb, semantic or brightness");
    toy_cmd->add_option("--seed", ya.seed, "random seed");
    toy_cmd->add_option("--feature-dim", ya.feature_dim, "ground-truth feature length");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*train_cmd) return cmd_train(ta);
        if (*render_cmd) return cmd_render(ra);
        if (*eval_cmd) return cmd_eval(ea);
        if (*serve_cmd) return cmd_serve(sa);
        if (*toy_cmd) return cmd_make_toy(ya);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
