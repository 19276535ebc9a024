// artshape: skeleton discovery, ensemble optimization and evaluation.

#include "artshape/pipeline.hpp"
#include "artshape/synthetic.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <sstream>

namespace {

using namespace artshape;

std::vector<std::string> split_list(const std::string& s)
{
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) {
            out.push_back(item);
        }
    }
    return out;
}

struct Flags {
    std::string config;
    std::uint64_t seed = 0;
    int reference = -1;
    std::string stages;
    int threads = default_threads();
    std::string out = "run";
};

void add_common(CLI::App* cmd, Flags& f)
{
    cmd->add_option("--config", f.config, "JSON run configuration");
    cmd->add_option("--seed", f.seed, "Seed for every random draw");
    cmd->add_option("--reference-index", f.reference, "Reference instance (default: most part clusters)");
    cmd->add_option("--threads", f.threads, "Worker threads")->check(CLI::PositiveNumber);
    cmd->add_option("--out", f.out, "Output directory");
}

RunOptions to_options(const Flags& f, const CLI::App* cmd)
{
    RunOptions o;
    if (!f.config.empty()) {
        o.config_path = f.config;
    }
    if (cmd->count("--seed") > 0) {
        o.seed = f.seed;
    }
    if (f.reference >= 0) {
        o.reference_index = f.reference;
    }
    o.stages = split_list(f.stages);
    o.threads = f.threads;
    o.out = f.out;
    return o;
}

void write_synthetic(const fs::path& out, int size, std::uint64_t seed)
{
    SyntheticOptions so;
    so.size = size;
    so.seed = seed;
    const SyntheticEnsemble ens = make_synthetic_ensemble(so);
    write_ensemble(out, ens.records);
    EnsembleConfig c = fixture_config(size, so.n_instances);
    c.reference_index = 0;
    write_atomic(out / "config.json", to_json(c).dump(2) + "\n");
    write_atomic(out / "keypoints.json", keypoints_to_json(ens.keypoints).dump(2) + "\n");
    save_skeleton3d(out / "skeleton_gt.json", ens.skeleton);
    nlohmann::json views = nlohmann::json::array();
    for (std::size_t j = 0; j < ens.cameras.size(); ++j) {
        views.push_back({{"azimuth_deg", ens.azimuths_deg[j]}, {"elevation_deg", ens.elevations_deg[j]}});
    }
    write_atomic(out / "views_gt.json", views.dump(2) + "\n");
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Articulated 3D part shapes from a sparse image ensemble"};
    app.require_subcommand(1);

    Flags fd, fo, fe;
    std::string ensemble_d, ensemble_o, skeleton, run_dir, keypoints;
    auto* discover = app.add_subcommand("discover", "Discover a 3D skeleton from the reference instance");
    discover->add_option("ensemble", ensemble_d, "Ensemble directory")->required();
    add_common(discover, fd);

    auto* optimize = app.add_subcommand("optimize", "Optimize cameras, poses and part shapes");
    optimize->add_option("ensemble", ensemble_o, "Ensemble directory")->required();
    optimize->add_option("--skeleton", skeleton, "skeleton3d.json (default: <out>/skeleton3d.json)");
    optimize->add_option("--stages", fo.stages, "Comma-separated subset of camera,shared,instance");
    add_common(optimize, fo);

    auto* eval = app.add_subcommand("eval", "Compute IOU and keypoint-transfer PCK for a run");
    eval->add_option("run", run_dir, "Run directory written by optimize")->required();
    eval->add_option("--keypoints", keypoints, "Keypoint JSON (omit for IOU only)");
    eval->add_option("--threads", fe.threads, "Worker threads")->check(CLI::PositiveNumber);

    int synth_size = 64;
    std::uint64_t synth_seed = 1;
    std::string synth_out = "synthetic";
    auto* synth = app.add_subcommand("synth", "Write the procedural quadruped ensemble");
    synth->add_option("--out", synth_out, "Output directory");
    synth->add_option("--size", synth_size, "Image side in pixels")->check(CLI::Range(32, 1024));
    synth->add_option("--seed", synth_seed, "Pose seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitValidation;
    }

    try {
        if (*discover) {
            cmd_discover(ensemble_d, to_options(fd, discover));
        } else if (*optimize) {
            const RunOptions o = to_options(fo, optimize);
            const fs::path sk = skeleton.empty() ? o.out / "skeleton3d.json" : fs::path(skeleton);
            cmd_optimize(ensemble_o, sk, o);
        } else if (*eval) {
            std::optional<fs::path> kp;
            if (!keypoints.empty()) {
                kp = keypoints;
            }
            const nlohmann::json m = cmd_eval(run_dir, kp, fe.threads);
            std::cout << m.dump(2) << '\n';
        } else if (*synth) {
            write_synthetic(synth_out, synth_size, synth_seed);
        }
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const DivergenceError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitDivergence;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitIo;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitOk;
}
