// usnav command line: calibration, compounding, registration, simulation and
// evaluation subcommands over the file formats in usnav/io.hpp.

#include <chrono>
#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "usnav/compound.hpp"
#include "usnav/demons.hpp"
#include "usnav/eval.hpp"
#include "usnav/io.hpp"
#include "usnav/lc2.hpp"
#include "usnav/parallel.hpp"
#include "usnav/phantom.hpp"
#include "usnav/pointreg.hpp"

namespace {

using namespace usnav;

// Runs a subcommand body, times it, and writes the report even on failure.
// The body returns the exit code (0, or 3 for non-convergence).
int execute(const std::string& command, const std::string& report_path,
            std::optional<std::uint64_t> seed, const std::function<int(RunReport&)>& body) {
    RunReport rep;
    rep.command = command;
    rep.seed = seed;
    const auto t0 = std::chrono::steady_clock::now();
    int code = 0;
    try {
        code = body(rep);
    } catch (const GeometryError& e) {
        rep.error = e.what();
        code = 3;
    } catch (const FormatError& e) {
        rep.error = e.what();
        code = 2;
    } catch (const DataError& e) {
        rep.error = e.what();
        code = 2;
    } catch (const std::exception& e) {
        rep.error = e.what();
        code = 2;
    }
    rep.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!report_path.empty()) {
        try {
            rep.write(report_path);
        } catch (const std::exception& e) {
            std::cerr << "error: cannot write report: " << e.what() << "\n";
            if (code == 0) code = 2;
        }
    }
    if (code != 0 && rep.error) std::cerr << "error: " << *rep.error << "\n";
    return code;
}

Vec3 parse_vec3_arg(const std::vector<double>& v, const char* what) {
    if (v.size() != 3) throw DataError(std::string(what) + ": expected 3 values");
    return {v[0], v[1], v[2]};
}

nlohmann::json mean_std_json(const MeanStd& m) {
    return {{"mean", m.mean}, {"std", m.stddev}};
}

ErrorBudget budget_from_json(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(io_detail::read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": invalid JSON: " + e.what());
    }
    ErrorBudget b;
    b.tracker_noise_sigma = j.value("tracker_noise_sigma", b.tracker_noise_sigma);
    b.us_calib_error = j.value("us_calib_error", b.us_calib_error);
    b.robot_calib_error = j.value("robot_calib_error", b.robot_calib_error);
    b.camera_calib_error = j.value("camera_calib_error", b.camera_calib_error);
    b.label_noise_sigma = j.value("label_noise_sigma", b.label_noise_sigma);
    b.seed = j.value("seed", b.seed);
    b.validate();
    return b;
}

std::string join_args(int argc, char** argv) {
    std::string s;
    for (int i = 0; i < argc; ++i) {
        if (i) s += ' ';
        s += argv[i];
    }
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"usnav: surgical navigation numerics toolkit"};
    app.require_subcommand(1);
    app.fallthrough();
    int threads = 0;
    app.add_option("--threads", threads, "worker threads, 0 = auto");

    const std::string command_line = join_args(argc, argv);
    std::function<int()> pending;

    // --- calibrate-rigid ---
    {
        auto* sub = app.add_subcommand("calibrate-rigid",
                                       "least-squares rigid fit of point correspondences");
        auto pairs_path = std::make_shared<std::string>();
        auto out_path = std::make_shared<std::string>();
        auto report_path = std::make_shared<std::string>();
        sub->add_option("--pairs", *pairs_path, "correspondence CSV")->required();
        sub->add_option("--out", *out_path, "output transform file")->required();
        sub->add_option("--report", *report_path, "run report JSON");
        sub->callback([=, &pending] {
            pending = [=] { return execute(command_line, *report_path, std::nullopt, [&](RunReport& rep) {
                rep.add_input(*pairs_path);
                const auto pairs = read_correspondences(*pairs_path);
                FitReport fit;
                const RigidTransform t = fit_rigid(pairs, &fit);
                write_transform(t, *out_path);
                rep.metrics["rms_residual_mm"] = fit.rms_residual;
                rep.metrics["n_points"] = pairs.size();
                rep.metrics["reflection_corrected"] = fit.reflection_corrected;
                return 0;
            }); };
        });
    }

    // --- calibrate-similarity ---
    {
        auto* sub = app.add_subcommand("calibrate-similarity",
                                       "least-squares similarity fit (stylus-based)");
        auto pairs_path = std::make_shared<std::string>();
        auto out_path = std::make_shared<std::string>();
        auto report_path = std::make_shared<std::string>();
        auto isotropic = std::make_shared<bool>(false);
        sub->add_option("--pairs", *pairs_path, "correspondence CSV")->required();
        sub->add_option("--out", *out_path, "output transform file")->required();
        sub->add_flag("--isotropic", *isotropic, "constrain to a single scale factor");
        sub->add_option("--report", *report_path, "run report JSON");
        sub->callback([=, &pending] {
            pending = [=] { return execute(command_line, *report_path, std::nullopt, [&](RunReport& rep) {
                rep.add_input(*pairs_path);
                const auto pairs = read_correspondences(*pairs_path);
                FitReport fit;
                const SimilarityTransform t = fit_similarity(pairs, *isotropic, &fit);
                write_transform(t, *out_path);
                rep.metrics["rms_residual_mm"] = fit.rms_residual;
                rep.metrics["scale"] = {t.scale.x(), t.scale.y(), t.scale.z()};
                rep.metrics["iterations"] = fit.iterations;
                rep.converged = fit.converged;
                return fit.converged ? 0 : 3;
            }); };
        });
    }

    // --- calibrate-pivot ---
    {
        auto* sub = app.add_subcommand("calibrate-pivot", "stylus tip pivot calibration");
        auto poses_path = std::make_shared<std::string>();
        auto out_path = std::make_shared<std::string>();
        auto report_path = std::make_shared<std::string>();
        sub->add_option("--poses", *poses_path, "pose list file")->required();
        sub->add_option("--out", *out_path, "output tip transform (StylusTip -> Stylus)");
        sub->add_option("--report", *report_path, "run report JSON");
        sub->callback([=, &pending] {
            pending = [=] { return execute(command_line, *report_path, std::nullopt, [&](RunReport& rep) {
                rep.add_input(*poses_path);
                auto poses = read_pose_list(*poses_path);
                for (auto& p : poses) {
                    p.source = FrameId::Stylus;
                    p.target = FrameId::OpticalTracker;
                }
                const auto result = pivot_calibrate(PivotPoses::make(std::move(poses)));
                if (!out_path->empty()) {
                    write_transform(RigidTransform{Mat3::Identity(), result.tip_offset,
                                                   FrameId::StylusTip, FrameId::Stylus},
                                    *out_path);
                }
                rep.metrics["rms_mm"] = result.rms;
                rep.metrics["tip_offset_mm"] = {result.tip_offset.x(), result.tip_offset.y(),
                                                result.tip_offset.z()};
                rep.metrics["pivot_point_mm"] = {result.pivot_point.x(),
                                                 result.pivot_point.y(),
                                                 result.pivot_point.z()};
                return 0;
            }); };
        });
    }

    // --- temporal-align ---
    {
        auto* sub = app.add_subcommand("temporal-align",
                                       "time offset between two motion signals");
        auto a_path = std::make_shared<std::string>();
        auto b_path = std::make_shared<std::string>();
        auto report_path = std::make_shared<std::string>();
        auto max_lag = std::make_shared<double>(1.0);
        sub->add_option("--a", *a_path, "first series CSV (t,value)")->required();
        sub->add_option("--b", *b_path, "second series CSV (t,value)")->required();
        sub->add_option("--max-lag", *max_lag, "search range, seconds");
        sub->add_option("--report", *report_path, "run report JSON");
        sub->callback([=, &pending] {
            pending = [=] { return execute(command_line, *report_path, std::nullopt, [&](RunReport& rep) {
                rep.add_input(*a_path);
                rep.add_input(*b_path);
                const auto a = read_timeseries(*a_path);
                const auto b = read_timeseries(*b_path);
                const auto result = temporal_align(a, b, *max_lag);
                rep.metrics["lag_s"] = result.lag;
                rep.metrics["peak_ncc"] = result.peak_ncc;
                return 0;
            }); };
        });
    }

    // --- compound ---
    {
        auto* sub = app.add_subcommand("compound", "freehand 3D US reconstruction");
        auto seq_path = std::make_shared<std::string>();
        auto calib_path = std::make_shared<std::string>();
        auto out_path = std::make_shared<std::string>();
        auto report_path = std::make_shared<std::string>();
        auto spacing = std::make_shared<double>(0.5);
        auto bounds = std::make_shared<std::vector<double>>();
        sub->add_option("--seq", *seq_path, "tracked sequence file")->required();
        sub->add_option("--calib", *calib_path, "probe_T_us similarity file")->required();
        sub->add_option("--spacing", *spacing, "voxel spacing, mm")->required();
        sub->add_option("--out", *out_path, "output volume file")->required();
        sub->add_option("--bounds", *bounds, "explicit bounds x0 y0 z0 x1 y1 z1, mm")
            ->expected(6);
        sub->add_option("--report", *report_path, "run report JSON");
        sub->callback([=, &pending] {
            pending = [=] { return execute(command_line, *report_path, std::nullopt, [&](RunReport& rep) {
                rep.add_input(*seq_path);
                rep.add_input(*calib_path);
                const auto frames = read_sequence(*seq_path);
                const auto calib = read_similarity(*calib_path);
                std::optional<CompoundBounds> cb;
                if (!bounds->empty()) {
                    cb = CompoundBounds{Vec3((*bounds)[0], (*bounds)[1], (*bounds)[2]),
                                        Vec3((*bounds)[3], (*bounds)[4], (*bounds)[5])};
                }
                CompoundReport creport;
                const Volume vol = compound(frames, calib, *spacing, cb, Mat3::Identity(),
                                            &creport);
                write_volume(vol, *out_path);
                rep.metrics["frames_used"] = creport.frames_used;
                rep.metrics["frames_skipped"] = creport.frames_skipped;
                rep.metrics["dims"] = {vol.dims.x(), vol.dims.y(), vol.dims.z()};
                return 0;
            }); };
        });
    }

    // --- fill-holes ---
    {
        auto* sub = app.add_subcommand("fill-holes", "stick hole-filling of a volume");
        auto in_path = std::make_shared<std::string>();
        auto out_path = std::make_shared<std::string>();
        auto report_path = std::make_shared<std::string>();
        auto stick = std::make_shared<int>(9);
        sub->add_option("--in", *in_path, "input volume")->required();
        sub->add_option("--out", *out_path, "output volume")->required();
        sub->add_option("--stick-length", *stick, "stick reach, voxels");
        sub->add_option("--report", *report_path, "run report JSON");
        sub->callback([=, &pending] {
            pending = [=] { return execute(command_line, *report_path, std::nullopt, [&](RunReport& rep) {
                rep.add_input(*in_path);
                const Volume in = read_volume(*in_path);
                const Volume out = stick_hole_fill(in, *stick);
                write_volume(out, *out_path);
                std::size_t before = 0, after = 0;
                for (auto f : in.filled) before += f ? 1 : 0;
                for (auto f : out.filled) after += f ? 1 : 0;
                rep.metrics["filled_before"] = before;
                rep.metrics["filled_after"] = after;
                return 0;
            }); };
        });
    }

    // --- project ---
    {
        auto* sub = app.add_subcommand(
            "project", "project 3D points (or reconstructed wires) to camera pixels");
        auto proj_path = std::make_shared<std::string>();
        auto rig_path = std::make_shared<std::string>();
        auto points_path = std::make_shared<std::string>();
        auto seq_path = std::make_shared<std::string>();
        auto us_points_path = std::make_shared<std::string>();
        auto calib_path = std::make_shared<std::string>();
        auto dv_t_ot_path = std::make_shared<std::string>();
        auto dv_t_ecm_path = std::make_shared<std::string>();
        auto pre_paths = std::make_shared<std::vector<std::string>>();
        auto out_path = std::make_shared<std::string>();
        auto out_left = std::make_shared<std::string>();
        auto out_right = std::make_shared<std::string>();
        auto report_path = std::make_shared<std::string>();
        sub->add_option("--proj", *proj_path, "single projection matrix file");
        sub->add_option("--rig", *rig_path, "stereo rig file");
        sub->add_option("--points", *points_path, "3D points CSV (id,x,y,z)");
        sub->add_option("--seq", *seq_path, "tracked sequence (with --us-points and --calib)");
        sub->add_option("--us-points", *us_points_path, "in-sweep wire CSV (id,frame,u,v)");
        sub->add_option("--calib", *calib_path, "probe_T_us similarity file");
        sub->add_option("--dv-t-ot", *dv_t_ot_path, "tracker -> robot transform");
        sub->add_option("--dv-t-ecm", *dv_t_ecm_path, "endoscope -> robot transform");
        sub->add_option("--pre", *pre_paths, "extra transforms applied to points, in order");
        sub->add_option("--out", *out_path, "pixel CSV (with --proj)");
        sub->add_option("--out-left", *out_left, "left pixel CSV (with --rig)");
        sub->add_option("--out-right", *out_right, "right pixel CSV (with --rig)");
        sub->add_option("--report", *report_path, "run report JSON");
        sub->callback([=, &pending] {
            pending = [=] { return execute(command_line, *report_path, std::nullopt, [&](RunReport& rep) {
                std::vector<Vec3> points;
                if (!points_path->empty()) {
                    rep.add_input(*points_path);
                    points = read_points3(*points_path);
                } else if (!seq_path->empty() && !us_points_path->empty() &&
                           !calib_path->empty()) {
                    rep.add_input(*seq_path);
                    rep.add_input(*us_points_path);
                    rep.add_input(*calib_path);
                    const auto frames = read_sequence(*seq_path);
                    const auto calib = read_similarity(*calib_path);
                    const std::string data = io_detail::read_file(*us_points_path);
                    const auto rows = io_detail::parse_csv(data, *us_points_path,
                                                           "id,frame,u,v");
                    std::vector<UsObservation> obs;
                    for (const auto& r : rows) {
                        obs.push_back({static_cast<int>(parse_long(r[0], *us_points_path)),
                                       parse_double(r[1], *us_points_path),
                                       parse_double(r[2], *us_points_path),
                                       parse_double(r[3], *us_points_path)});
                    }
                    points = reconstruct_us_points(frames, obs, calib);
                } else {
                    throw DataError("project: need --points or --seq/--us-points/--calib");
                }

                if (!dv_t_ot_path->empty() || !dv_t_ecm_path->empty()) {
                    if (dv_t_ot_path->empty() || dv_t_ecm_path->empty()) {
                        throw DataError("project: --dv-t-ot and --dv-t-ecm go together");
                    }
                    rep.add_input(*dv_t_ot_path);
                    rep.add_input(*dv_t_ecm_path);
                    const RigidTransform dv_T_ot = read_rigid(*dv_t_ot_path);
                    const RigidTransform dv_T_ecm = read_rigid(*dv_t_ecm_path);
                    const RigidTransform ecm_T_ot = compose(dv_T_ecm.inverse(), dv_T_ot);
                    points = apply(ecm_T_ot, points);
                }
                for (const auto& pre : *pre_paths) {
                    rep.add_input(pre);
                    points = apply(read_affine(pre), points);
                }

                int behind = 0;
                if (!proj_path->empty()) {
                    if (out_path->empty()) throw DataError("project: --proj needs --out");
                    rep.add_input(*proj_path);
                    const auto proj = read_projection(*proj_path);
                    const auto result = project(proj, points);
                    for (bool ok : result.in_front) behind += ok ? 0 : 1;
                    write_pixels(result.pixels, *out_path);
                } else if (!rig_path->empty()) {
                    if (out_left->empty() || out_right->empty()) {
                        throw DataError("project: --rig needs --out-left and --out-right");
                    }
                    rep.add_input(*rig_path);
                    const auto rig = read_rig(*rig_path);
                    const auto left = project(rig.left, points);
                    const auto right = project(rig.right, points);
                    for (bool ok : left.in_front) behind += ok ? 0 : 1;
                    for (bool ok : right.in_front) behind += ok ? 0 : 1;
                    write_pixels(left.pixels, *out_left);
                    write_pixels(right.pixels, *out_right);
                } else {
                    throw DataError("project: need --proj or --rig");
                }
                rep.metrics["n_points"] = points.size();
                rep.metrics["behind_camera"] = behind;
                return 0;
            }); };
        });
    }

    // --- triangulate ---
    {
        auto* sub = app.add_subcommand("triangulate", "DLT triangulation of stereo pixels");
        auto rig_path = std::make_shared<std::string>();
        auto left_path = std::make_shared<std::string>();
        auto right_path = std::make_shared<std::string>();
        auto out_path = std::make_shared<std::string>();
        auto report_path = std::make_shared<std::string>();
        sub->add_option("--rig", *rig_path, "stereo rig file")->required();
        sub->add_option("--left", *left_path, "left pixel CSV")->required();
        sub->add_option("--right", *right_path, "right pixel CSV")->required();
        sub->add_option("--out", *out_path, "output 3D points CSV")->required();
        sub->add_option("--report", *report_path, "run report JSON");
        sub->callback([=, &pending] {
            pending = [=] { return execute(command_line, *report_path, std::nullopt, [&](RunReport& rep) {
                rep.add_input(*rig_path);
                rep.add_input(*left_path);
                rep.add_input(*right_path);
                const auto rig = read_rig(*rig_path);
                const auto left = read_pixels(*left_path);
                const auto right = read_pixels(*right_path);
                if (left.size() != right.size()) {
                    throw DataError("triangulate: pixel lists differ in length");
                }
                std::vector<Vec3> pts;
                double rms_acc = 0.0;
                for (std::size_t i = 0; i < left.size(); ++i) {
                    const auto t = triangulate(rig, left[i], right[i]);
                    pts.push_back(t.point);
                    rms_acc += t.reprojection_rms;
                }
                write_points3(pts, *out_path);
                rep.metrics["n_points"] = pts.size();
                rep.metrics["mean_reprojection_rms_px"] =
                    pts.empty() ? 0.0 : rms_acc / static_cast<double>(pts.size());
                return 0;
            }); };
        });
    }

    // --- register-lc2 ---
    {
        auto* sub = app.add_subcommand("register-lc2",
                                       "multimodal affine registration (LC2 metric)");
        auto fixed_path = std::make_shared<std::string>();
        auto moving_path = std::make_shared<std::string>();
        auto init_path = std::make_shared<std::string>();
        auto out_path = std::make_shared<std::string>();
        auto report_path = std::make_shared<std::string>();
        auto cfg = std::make_shared<LC2Config>();
        auto opt = std::make_shared<LC2RegOptions>();
        sub->add_option("--fixed", *fixed_path, "fixed (US) volume")->required();
        sub->add_option("--moving", *moving_path, "moving (MRI) volume")->required();
        sub->add_option("--init", *init_path, "initial transform (fixed -> moving)")
            ->required();
        sub->add_option("--out", *out_path, "refined transform file")->required();
        sub->add_option("--patch-radius", cfg->patch_radius, "LC2 patch radius, voxels");
        sub->add_option("--stride", cfg->stride, "patch stride at the finest level");
        sub->add_option("--min-variance", cfg->min_variance, "patch variance floor");
        sub->add_option("--ridge", cfg->ridge, "normal-equation regularization");
        sub->add_option("--levels", opt->levels, "pyramid levels");
        sub->add_option("--max-iter", opt->max_iter, "simplex iterations per level");
        sub->add_option("--tol", opt->tol, "metric improvement tolerance");
        sub->add_option("--seed", opt->seed, "restart seed");
        sub->add_option("--report", *report_path, "run report JSON");
        sub->callback([=, &pending] {
            pending = [=] { return execute(command_line, *report_path, opt->seed, [&](RunReport& rep) {
                rep.add_input(*fixed_path);
                rep.add_input(*moving_path);
                rep.add_input(*init_path);
                const Volume us = read_volume(*fixed_path);
                const Volume mri = read_volume(*moving_path);
                const AffineTransform init = read_affine(*init_path);
                const auto result = register_affine_lc2(us, mri, init, *cfg, *opt);
                write_transform(result.transform, *out_path);
                rep.metrics["metric"] = result.metric;
                rep.metrics["iterations_per_level"] = result.iterations_per_level;
                rep.converged = result.converged;
                return result.converged ? 0 : 3;
            }); };
        });
    }

    // --- register-deform ---
    {
        auto* sub = app.add_subcommand("register-deform",
                                       "deformable registration (demons, MSE)");
        auto fixed_path = std::make_shared<std::string>();
        auto moving_path = std::make_shared<std::string>();
        auto out_path = std::make_shared<std::string>();
        auto report_path = std::make_shared<std::string>();
        auto cfg = std::make_shared<DemonsConfig>();
        auto direction = std::make_shared<std::string>("forward");
        auto no_init = std::make_shared<bool>(false);
        sub->add_option("--fixed", *fixed_path, "fixed volume")->required();
        sub->add_option("--moving", *moving_path, "moving volume")->required();
        sub->add_option("--out", *out_path, "output displacement field")->required();
        sub->add_option("--direction", *direction, "forward | swap (exchanges fixed/moving)")
            ->check(CLI::IsMember({"forward", "swap"}));
        sub->add_flag("--no-init-translation", *no_init,
                      "skip the centroid translation initialization");
        sub->add_option("--levels", cfg->levels, "pyramid levels");
        sub->add_option("--sigma-fluid", cfg->sigma_fluid, "update smoothing, mm");
        sub->add_option("--sigma-diffusion", cfg->sigma_diffusion, "field smoothing, mm");
        sub->add_option("--kappa", cfg->kappa, "normalization, 0 = mean voxel spacing");
        sub->add_option("--report", *report_path, "run report JSON");
        sub->callback([=, &pending] {
            pending = [=] { return execute(command_line, *report_path, std::nullopt, [&](RunReport& rep) {
                rep.add_input(*fixed_path);
                rep.add_input(*moving_path);
                Volume fixed = read_volume(*fixed_path);
                Volume moving = read_volume(*moving_path);
                if (*direction == "swap") std::swap(fixed, moving);
                const RigidTransform init =
                    *no_init ? RigidTransform::identity(FrameId::Volume, FrameId::Volume)
                             : init_translation(fixed, moving);
                const auto result = register_demons(fixed, moving, init, *cfg);
                write_field(result.field, *out_path);
                const auto stats = field_stats(result.field);
                rep.metrics["initial_mse"] = result.mse_trace.back().front();
                rep.metrics["final_mse"] = result.mse_trace.front().back();
                rep.metrics["max_deformation_mm"] = stats.max_deformation;
                rep.metrics["mean_deformation_mm"] = stats.mean_deformation;
                rep.metrics["jacobian_min"] = stats.jacobian_min;
                rep.metrics["init_translation_mm"] = {init.translation.x(),
                                                      init.translation.y(),
                                                      init.translation.z()};
                rep.converged = result.converged;
                return result.converged ? 0 : 3;
            }); };
        });
    }

    // --- eval-tre ---
    {
        auto* sub = app.add_subcommand("eval-tre",
                                       "target registration error with axial split");
        auto landmarks_path = std::make_shared<std::string>();
        auto transform_path = std::make_shared<std::string>();
        auto report_path = std::make_shared<std::string>();
        auto axis = std::make_shared<std::vector<double>>(std::vector<double>{0, 0, 1});
        sub->add_option("--landmarks", *landmarks_path, "landmark CSV")->required();
        sub->add_option("--transform", *transform_path,
                        "transform applied to the moving side (default identity)");
        sub->add_option("--axis", *axis, "axial direction")->expected(3);
        sub->add_option("--report", *report_path, "run report JSON");
        sub->callback([=, &pending] {
            pending = [=] { return execute(command_line, *report_path, std::nullopt, [&](RunReport& rep) {
                rep.add_input(*landmarks_path);
                const auto landmarks = read_landmarks(*landmarks_path);
                AffineTransform t = AffineTransform::identity(FrameId::Volume, FrameId::Volume);
                if (!transform_path->empty()) {
                    rep.add_input(*transform_path);
                    t = read_affine(*transform_path);
                }
                const auto result =
                    compute_tre(landmarks, t, parse_vec3_arg(*axis, "--axis"));
                rep.metrics["total"] = mean_std_json(result.total);
                rep.metrics["transverse"] = mean_std_json(result.transverse);
                rep.metrics["axial"] = mean_std_json(result.axial);
                auto table = nlohmann::json::array();
                for (const auto& e : result.per_landmark) {
                    table.push_back({{"label", e.label},
                                     {"total", e.total},
                                     {"transverse", e.transverse},
                                     {"axial", e.axial}});
                }
                rep.metrics["per_landmark"] = table;
                return 0;
            }); };
        });
    }

    // --- eval-centerline ---
    {
        auto* sub = app.add_subcommand("eval-centerline",
                                       "mean distance between two centerlines");
        auto a_path = std::make_shared<std::string>();
        auto b_path = std::make_shared<std::string>();
        auto transform_path = std::make_shared<std::string>();
        auto report_path = std::make_shared<std::string>();
        auto n_points = std::make_shared<int>(1000);
        sub->add_option("--a", *a_path, "first polyline CSV")->required();
        sub->add_option("--b", *b_path, "second polyline CSV")->required();
        sub->add_option("--transform", *transform_path, "transform applied to b");
        sub->add_option("--points", *n_points, "resampling count");
        sub->add_option("--report", *report_path, "run report JSON");
        sub->callback([=, &pending] {
            pending = [=] { return execute(command_line, *report_path, std::nullopt, [&](RunReport& rep) {
                rep.add_input(*a_path);
                rep.add_input(*b_path);
                const Polyline a = read_polyline(*a_path);
                Polyline b = read_polyline(*b_path);
                if (!transform_path->empty()) {
                    rep.add_input(*transform_path);
                    const AffineTransform t = read_affine(*transform_path);
                    b = Polyline::make(apply(t, b.vertices));
                }
                const auto result = centerline_distance(a, b, *n_points);
                rep.metrics["mean_distance_mm"] = result.mean;
                rep.metrics["reversed_pairing"] = result.reversed;
                return 0;
            }); };
        });
    }

    // --- simulate-waterbath ---
    {
        auto* sub = app.add_subcommand("simulate-waterbath",
                                       "synthetic wire-grid water-bath experiment");
        auto budget_path = std::make_shared<std::string>();
        auto out_dir = std::make_shared<std::string>();
        auto report_path = std::make_shared<std::string>();
        auto seed_flag = std::make_shared<std::int64_t>(-1);
        sub->add_option("--budget", *budget_path, "error budget JSON")->required();
        sub->add_option("--out", *out_dir, "output directory")->required();
        sub->add_option("--seed", *seed_flag, "override the budget seed");
        sub->add_option("--report", *report_path, "run report JSON");
        sub->callback([=, &pending] {
            std::optional<std::uint64_t> seed;
            pending = [=] { return execute(command_line, *report_path, seed, [&](RunReport& rep) {
                rep.add_input(*budget_path);
                ErrorBudget budget = budget_from_json(*budget_path);
                if (*seed_flag >= 0) budget.seed = static_cast<std::uint64_t>(*seed_flag);
                rep.seed = budget.seed;

                const auto scene = WireGridScene::standard();
                const auto sweep = SweepSpec::standard();
                const auto rig = standard_rig();
                const WireGridRun run = gen_wire_grid_run(scene, budget, rig, sweep);

                namespace fs = std::filesystem;
                fs::create_directories(*out_dir);
                fs::create_directories(*out_dir + "/truth");
                const std::string d = *out_dir + "/";

                write_sequence(run.frames, d + "sequence.seq");
                const WireGridTruth& t = run.truth;
                write_transform(t.probe_T_us_cal, d + "probe_T_us_cal.txt");
                write_transform(t.dv_T_ot_cal, d + "dv_T_ot_cal.txt");
                write_transform(t.dv_T_ecm, d + "dv_T_ecm.txt");
                write_rig(t.rig_cal, d + "rig_cal.txt");
                write_transform(t.probe_T_us_true, d + "truth/probe_T_us_true.txt");
                write_transform(t.dv_T_ot_true, d + "truth/dv_T_ot_true.txt");
                write_rig(t.rig_true, d + "truth/rig_true.txt");
                write_points3(t.grid_tracker, d + "truth/grid_tracker.csv");
                write_points3(t.grid_camera, d + "truth/grid_camera.csv");
                write_pixels(t.true_left_px, d + "truth/true_left.csv");
                write_pixels(t.true_right_px, d + "truth/true_right.csv");
                write_pixels(t.labeled_left_px, d + "labeled_left.csv");
                write_pixels(t.labeled_right_px, d + "labeled_right.csv");
                {
                    std::string csv = "id,frame,u,v\n";
                    for (const auto& o : t.us_points) {
                        csv += std::to_string(o.point_id) + "," + format_double(o.frame) +
                               "," + format_double(o.u) + "," + format_double(o.v) + "\n";
                    }
                    io_detail::write_file(d + "us_points.csv", csv);
                }
                {
                    // Correspondences for exercising calibrate-rigid downstream.
                    Rng rng(budget.seed + 1);
                    std::vector<Vec3> moving = random_points_in_box(
                        Vec3(-150, -150, 50), Vec3(150, 150, 400), 100, rng);
                    std::vector<Vec3> fixed;
                    for (const auto& p : moving) {
                        fixed.push_back(t.dv_T_ot_true(p) +
                                        rng.normal_vec3(budget.robot_calib_error * 0.5));
                    }
                    write_correspondences(
                        CorrespondencePairs::make(std::move(fixed), std::move(moving)),
                        d + "robot_corr.csv");
                }
                rep.metrics["n_frames"] = run.frames.size();
                rep.metrics["n_points"] = t.grid_tracker.size();
                return 0;
            }); };
        });
    }

    // --- simulate-volumes ---
    {
        auto* sub = app.add_subcommand("simulate-volumes",
                                       "synthetic multimodal volume pair with ground truth");
        auto out_dir = std::make_shared<std::string>();
        auto truth_path = std::make_shared<std::string>();
        auto report_path = std::make_shared<std::string>();
        auto size = std::make_shared<int>(64);
        auto seed = std::make_shared<std::uint64_t>(7);
        auto spacing = std::make_shared<double>(1.0);
        auto speckle = std::make_shared<double>(0.25);
        auto deform_max = std::make_shared<double>(0.0);
        sub->add_option("--size", *size, "cubic volume size, voxels");
        sub->add_option("--truth", *truth_path, "ground-truth US->MRI transform file");
        sub->add_option("--seed", *seed, "generator seed");
        sub->add_option("--spacing", *spacing, "voxel spacing, mm");
        sub->add_option("--speckle", *speckle, "US speckle amplitude in [0,1]");
        sub->add_option("--deform-max", *deform_max,
                        "also emit a deformed US volume with this peak displacement, mm");
        sub->add_option("--out", *out_dir, "output directory")->required();
        sub->add_option("--report", *report_path, "run report JSON");
        sub->callback([=, &pending] {
            pending = [=] { return execute(command_line, *report_path, *seed, [&](RunReport& rep) {
                AffineTransform truth =
                    AffineTransform::identity(FrameId::USImage, FrameId::MRI);
                if (!truth_path->empty()) {
                    rep.add_input(*truth_path);
                    truth = read_affine(*truth_path);
                }
                const MultimodalPair pair =
                    gen_multimodal_pair(*size, truth, *seed, *spacing, *speckle);

                namespace fs = std::filesystem;
                fs::create_directories(*out_dir);
                const std::string d = *out_dir + "/";
                write_volume(pair.us, d + "us.vol");
                write_volume(pair.mri, d + "mri.vol");
                write_landmarks(pair.landmarks, d + "landmarks.csv");
                write_polyline(pair.centerline_us, d + "centerline_us.csv");
                write_polyline(pair.centerline_mri, d + "centerline_mri.csv");
                rep.metrics["size"] = *size;
                rep.metrics["n_landmarks"] = pair.landmarks.pairs.size();

                if (*deform_max > 0.0) {
                    const DisplacementField field = gen_smooth_deformation(
                        pair.us.dims, pair.us.spacing, pair.us.origin, *deform_max, *seed);
                    write_field(field, d + "true_field.fld");
                    write_volume(apply_displacement(pair.us, field), d + "warped.vol");
                    rep.metrics["deform_max_mm"] = field_stats(field).max_deformation;
                }
                return 0;
            }); };
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help() << std::flush;
        return 1;
    }
    usnav::set_max_threads(threads);
    return pending ? pending() : 1;
}
