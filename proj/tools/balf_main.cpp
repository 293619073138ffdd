// Command-line front end: training, detection, evaluation, blur synthesis,
// ground-truth rendering, gradient checking and match visualization.

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <random>
#include <string>

#include <CLI11.hpp>

#include "balf/checks.hpp"
#include "balf/io.hpp"
#include "balf/supervision.hpp"
#include "balf/viz.hpp"

namespace {

balf::ev::ImageDims parse_dims(const std::string& s) {
    const auto x = s.find('x');
    if (x == std::string::npos || x == 0 || x + 1 >= s.size())
        throw balf::Error("dimensions must be HxW, got '" + s + "'");
    balf::ev::ImageDims d;
    d.h = std::stoi(s.substr(0, x));
    d.w = std::stoi(s.substr(x + 1));
    if (d.h <= 0 || d.w <= 0) throw balf::Error("dimensions must be positive, got '" + s + "'");
    return d;
}

int cmd_train(const std::string& manifest, const std::string& out, int epochs, int batch,
              double lr, int crop, std::uint64_t seed, double mix_sharp, bool use_rmab) {
    auto dataset = balf::io::load_dataset(manifest);

    balf::ModelConfig cfg;
    cfg.use_rmab = use_rmab;
    balf::Model model = balf::build_model(cfg, seed);

    balf::sup::TrainConfig tc;
    tc.epochs = epochs;
    tc.batch = batch;
    tc.lr_initial = lr;
    tc.seed = seed;
    tc.mix_sharp = mix_sharp;
    if (tc.decay_start >= epochs) tc.decay_start = epochs - 1;

    balf::sup::AugmentConfig ac;
    ac.crop = crop;

    const balf::sup::TrainLog log = balf::sup::train(dataset, tc, ac, model);
    for (std::size_t e = 0; e < log.epoch_loss.size(); ++e)
        std::printf("epoch %zu loss %.6g lr %.3g\n", e + 1, log.epoch_loss[e],
                    balf::sup::lr_schedule(static_cast<int>(e) + 1, tc));
    balf::io::save_model(out, model);
    std::printf("saved %s (%zu parameters)\n", out.c_str(), balf::param_count(model));
    return 0;
}

int cmd_eval(const std::string& ref_kpts, const std::string& tgt_kpts, const std::string& hom,
             const std::string& ref_dims, const std::string& tgt_dims, int top, double eps,
             double rho) {
    const auto result = balf::ev::repeatability(
        balf::io::read_keypoints(ref_kpts), balf::io::read_keypoints(tgt_kpts),
        balf::io::read_homography(hom), parse_dims(ref_dims), parse_dims(tgt_dims), top, eps, rho);
    std::printf("repeatability=%.2f\n", 100.0 * result.repeatability);
    std::printf("matches=%zu filtered_ref=%zu filtered_tgt=%zu\n", result.matches.size(),
                result.filtered_ref.size(), result.filtered_tgt.size());
    return 0;
}

int cmd_gradcheck() {
    const auto suite = balf::checks::run_gradient_suite();
    bool ok = true;
    for (const auto& c : suite) {
        std::printf("%-20s %.3e\n", c.name.c_str(), c.worst);
        ok = ok && c.worst < 1e-4;
    }
    std::printf("%s\n", ok ? "all gradients verified" : "FAILED");
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MLP-based blur-robust keypoint detector"};
    app.require_subcommand(1);

    // train
    std::string manifest, model_out;
    int epochs = 50, batch = 4, crop = 256;
    double lr = 1e-4, mix_sharp = 0.5;
    std::uint64_t seed = 0;
    std::string rmab = "on";
    auto* train = app.add_subcommand("train", "fit a detector on a manifest of image pairs");
    train->add_option("--manifest", manifest, "dataset index file")->required();
    train->add_option("--out", model_out, "output model path")->required();
    train->add_option("--epochs", epochs);
    train->add_option("--batch", batch);
    train->add_option("--lr", lr, "initial learning rate");
    train->add_option("--crop", crop, "training crop side");
    train->add_option("--seed", seed);
    train->add_option("--mix-sharp", mix_sharp, "probability of training on the sharp image");
    train->add_option("--rmab", rmab, "on|off: include the channel-attention blocks")
        ->check(CLI::IsMember({"on", "off"}));

    // detect
    std::string model_path, image_path, kpts_out;
    int max_kpts = 1000;
    double threshold = 0.02;
    auto* detect = app.add_subcommand("detect", "write detected keypoints as CSV");
    detect->add_option("--model", model_path)->required();
    detect->add_option("--image", image_path)->required();
    detect->add_option("--max-kpts", max_kpts);
    detect->add_option("--threshold", threshold);
    detect->add_option("--out", kpts_out)->required();

    // score-map
    std::string sm_model, sm_image, sm_out;
    auto* smap = app.add_subcommand("score-map", "write the response map as 16-bit PGM");
    smap->add_option("--model", sm_model)->required();
    smap->add_option("--image", sm_image)->required();
    smap->add_option("--out", sm_out)->required();

    // eval
    std::string ref_kpts, tgt_kpts, hom, ref_dims, tgt_dims;
    int top = 1000;
    double eps = 0.4, rho = 4.0;
    auto* eval = app.add_subcommand("eval", "repeatability of two keypoint files under a homography");
    eval->add_option("--ref-kpts", ref_kpts)->required();
    eval->add_option("--tgt-kpts", tgt_kpts)->required();
    eval->add_option("--homography", hom)->required();
    eval->add_option("--ref-dims", ref_dims, "HxW of the reference image")->required();
    eval->add_option("--tgt-dims", tgt_dims, "HxW of the target image")->required();
    eval->add_option("--top", top, "keypoints kept per side before filtering");
    eval->add_option("--eps", eps, "overlap-error threshold");
    eval->add_option("--rho", rho, "keypoint region half-side (px)");

    // synth-blur
    std::string sb_in, sb_out, sb_level = "easy", sb_kernel;
    std::uint64_t sb_seed = 0;
    auto* synth = app.add_subcommand("synth-blur", "apply a random motion-blur kernel");
    synth->add_option("--in", sb_in)->required();
    synth->add_option("--level", sb_level)->check(CLI::IsMember({"easy", "hard", "tough"}));
    synth->add_option("--seed", sb_seed);
    synth->add_option("--out", sb_out)->required();
    synth->add_option("--kernel-out", sb_kernel, "also export the kernel as a text matrix");

    // gt-heatmap
    std::string gh_image, gh_kpts, gh_out;
    double gh_sigma = 2.0;
    auto* gth = app.add_subcommand("gt-heatmap", "render the training target as 16-bit PGM");
    gth->add_option("--image", gh_image)->required();
    gth->add_option("--kpts", gh_kpts, "keypoint CSV; omitted = built-in corner detector");
    gth->add_option("--sigma", gh_sigma);
    gth->add_option("--out", gh_out)->required();

    // gradcheck
    app.add_subcommand("gradcheck", "finite-difference verification of every block");

    // draw-matches
    std::string dm_ref, dm_tgt, dm_rk, dm_tk, dm_hom, dm_out;
    int dm_top = 1000;
    double dm_eps = 0.4, dm_rho = 4.0;
    auto* dm = app.add_subcommand("draw-matches", "side-by-side match visualization (PPM)");
    dm->add_option("--ref", dm_ref)->required();
    dm->add_option("--tgt", dm_tgt)->required();
    dm->add_option("--ref-kpts", dm_rk)->required();
    dm->add_option("--tgt-kpts", dm_tk)->required();
    dm->add_option("--homography", dm_hom)->required();
    dm->add_option("--out", dm_out)->required();
    dm->add_option("--top", dm_top);
    dm->add_option("--eps", dm_eps);
    dm->add_option("--rho", dm_rho);

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed())
            return cmd_train(manifest, model_out, epochs, batch, lr, crop, seed, mix_sharp,
                             rmab == "on");
        if (detect->parsed()) {
            const balf::Model m = balf::io::load_model(model_path);
            balf::io::write_keypoints(
                kpts_out, balf::detect(m, balf::io::read_image(image_path), max_kpts, threshold));
            return 0;
        }
        if (smap->parsed()) {
            const balf::Model m = balf::io::load_model(sm_model);
            balf::Graph g;
            balf::io::write_image_pgm(sm_out, balf::score_map(&g, m, balf::io::read_image(sm_image)),
                                      /*sixteen_bit=*/true);
            return 0;
        }
        if (eval->parsed())
            return cmd_eval(ref_kpts, tgt_kpts, hom, ref_dims, tgt_dims, top, eps, rho);
        if (synth->parsed()) {
            std::mt19937_64 rng(sb_seed);
            const auto [blurred, kern] =
                balf::blur::synth_pair(balf::io::read_image(sb_in),
                                       balf::blur::level_by_name(sb_level), rng);
            balf::io::write_image_pgm(sb_out, blurred);
            if (!sb_kernel.empty()) balf::io::write_kernel(sb_kernel, kern);
            return 0;
        }
        if (gth->parsed()) {
            const balf::Tensor img = balf::io::read_image(gh_image);
            const balf::Keypoints kpts = gh_kpts.empty()
                                             ? balf::sup::detect_reference_keypoints(img, 1000)
                                             : balf::io::read_keypoints(gh_kpts);
            balf::io::write_image_pgm(
                gh_out, balf::sup::render_heatmap(kpts, img.dim(0), img.dim(1), gh_sigma),
                /*sixteen_bit=*/true);
            return 0;
        }
        if (app.get_subcommand("gradcheck")->parsed()) return cmd_gradcheck();
        if (dm->parsed()) {
            const balf::Tensor ref_img = balf::io::read_image(dm_ref);
            const balf::Tensor tgt_img = balf::io::read_image(dm_tgt);
            const auto result = balf::ev::repeatability(
                balf::io::read_keypoints(dm_rk), balf::io::read_keypoints(dm_tk),
                balf::io::read_homography(dm_hom), {ref_img.dim(0), ref_img.dim(1)},
                {tgt_img.dim(0), tgt_img.dim(1)}, dm_top, dm_eps, dm_rho);
            balf::viz::draw_matches(dm_out, ref_img, tgt_img, result);
            std::printf("repeatability=%.2f\n", 100.0 * result.repeatability);
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
