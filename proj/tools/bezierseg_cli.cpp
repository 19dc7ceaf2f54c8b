// bezierseg command-line tool: data generation, gradient checks, segmentation
// and refitting, evaluation, and PLY export.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "bezierseg/bezierseg.hpp"

namespace fs = std::filesystem;
using namespace bezierseg;
using ojson = nlohmann::ordered_json;

namespace {

// Bad input (unreadable files, invalid values, shape mismatch): exit 2.
// Everything failing after the inputs were accepted: exit 1.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigFlags {
    std::string file;
    std::map<std::string, std::string> values;

    void attach(CLI::App& cmd, std::initializer_list<const char*> names) {
        cmd.add_option("--config", file, "key = value config file (flags override it)");
        for (const char* n : names) {
            const auto& keys = RunConfig::keys();
            const auto it = std::find_if(keys.begin(), keys.end(), [&](const auto& k) { return std::string(k.name) == n; });
            std::string flag = "--" + std::string(n);
            std::replace(flag.begin(), flag.end(), '_', '-');
            cmd.add_option(flag, values[n], it->help);
        }
    }

    [[nodiscard]] RunConfig resolve() const {
        RunConfig cfg;
        try {
            if (!file.empty()) apply_config_file(cfg, file);
            for (const auto& [k, v] : values)
                if (!v.empty()) cfg.set(k, v);
            cfg.validate();
        } catch (const Error& e) {
            throw UsageError(e.what());
        }
        return cfg;
    }
};

AnnotatedCloud load_input(const std::string& path) {
    try {
        return load_cloud(path);
    } catch (const IoError& e) {
        throw UsageError(e.what());
    }
}

void write_json(const fs::path& path, const ojson& j) {
    detail::atomic_write(path, j.dump(2) + "\n");
}

unsigned worker_count(int requested, int jobs) {
    unsigned t = requested > 0 ? static_cast<unsigned>(requested) : std::max(1u, std::thread::hardware_concurrency());
    return std::max(1u, std::min(t, static_cast<unsigned>(std::max(jobs, 1))));
}

// Runs job(i) for i in [0, n) on a small pool; the first exception is rethrown.
template <class F>
void parallel_for(int n, int threads, F job) {
    std::atomic<int> next{0};
    std::exception_ptr failure;
    std::mutex m;
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < worker_count(threads, n); ++t)
        pool.emplace_back([&] {
            for (int i; (i = next++) < n;) {
                try {
                    job(i);
                } catch (...) {
                    std::lock_guard lock(m);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
}

std::string model_name(int i, const std::string& ext) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "model_%05d%s", i, ext.c_str());
    return buf;
}

ojson config_json(const RunConfig& c) {
    return {{"seed", c.seed},
            {"models", c.models},
            {"points", c.points},
            {"patches", c.patches},
            {"max_u", c.max_u},
            {"max_v", c.max_v},
            {"rational", c.rational},
            {"min_normal_angle", c.min_normal_angle},
            {"noise", c.noise}};
}

// ---------------------------------------------------------------------------

int cmd_gen(const RunConfig& cfg, const fs::path& out, bool json) {
    fs::create_directories(out);
    const std::string ext = json ? ".json" : ".bzc";
    std::vector<ojson> entries(static_cast<std::size_t>(cfg.models));
    parallel_for(cfg.models, cfg.threads, [&](int i) {
        const ModelSpec spec = cfg.model_spec(i);
        AnnotatedCloud cloud = gen_model(spec);
        if (cfg.noise > 0.0) cloud = add_noise(cloud, cfg.noise, cfg.noise_seed(i));
        const std::string name = model_name(i, ext);
        save_cloud(cloud, out / name);
        entries[static_cast<std::size_t>(i)] = {{"file", name},
                                                {"seed", spec.seed},
                                                {"noise_seed", cfg.noise_seed(i)},
                                                {"points", cloud.num_points()},
                                                {"patches", cloud.num_patches()}};
    });
    ojson manifest;
    manifest["format"] = "bezierseg-dataset";
    manifest["version"] = kCloudFormatVersion;
    manifest["config"] = config_json(cfg);
    manifest["models"] = entries;
    write_json(out / "manifest.json", manifest);
    std::cout << "wrote " << cfg.models << " models to " << out.string() << "\n";
    return 0;
}

int cmd_gradcheck(const RunConfig& cfg, int seeds, bool tamper, const std::string& report_path) {
    GradCheckOptions opt;
    if (tamper) opt.tamper = 1e-2;
    GradCheckSizes sizes;
    sizes.layout = cfg.layout();
    std::map<std::string, double> worst;
    ojson results = ojson::array();
    std::vector<std::string> failures;
    for (int s = 0; s < seeds; ++s) {
        const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(s);
        for (const auto& r : check_all(seed, sizes, opt)) {
            worst[r.input_name] = std::max(worst[r.input_name], r.max_rel_err);
            results.push_back({{"seed", seed},
                               {"input", r.input_name},
                               {"max_rel_err", r.max_rel_err},
                               {"max_abs_err", r.max_abs_err},
                               {"pass", r.pass}});
            if (!r.pass) failures.push_back(r.input_name + " (seed " + std::to_string(seed) + ")");
        }
    }
    ojson rep;
    rep["pass"] = failures.empty();
    rep["seeds"] = seeds;
    ojson per = ojson::object();
    for (const auto& [k, v] : worst) per[k] = {{"max_rel_err", v}};
    rep["per_input"] = per;
    rep["results"] = results;
    if (!report_path.empty()) write_json(report_path, rep);
    for (const auto& [k, v] : worst) std::printf("%-48s max_rel_err %.3e\n", k.c_str(), v);
    for (const auto& f : failures) std::cerr << "FAIL " << f << "\n";
    std::cout << (failures.empty() ? "all gradients pass\n" : "gradient check failed\n");
    return failures.empty() ? 0 : 1;
}

ojson fit_json(const PatchRefit& r, DegreeLayout layout) {
    ojson j;
    j["label"] = r.label;
    j["status"] = r.status;
    j["n_points"] = static_cast<int>(r.indices.size());
    if (r.fit) {
        j["degree"] = {r.fit->patch.degree.m, r.fit->patch.degree.n};
        j["degree_class"] = layout.class_index(r.fit->patch.degree);
        j["rms"] = r.fit->rms;
        j["max_err"] = r.fit->max_err;
        j["condition_hint"] = std::isfinite(r.fit->condition_hint) ? ojson(r.fit->condition_hint) : ojson(nullptr);
        j["rank_deficient"] = r.fit->rank_deficient;
        j["met_tolerance"] = r.met_tolerance;
    }
    return j;
}

PipelineOptions make_pipeline_options(const RunConfig& cfg) {
    PipelineOptions o;
    o.region = cfg.region_grow();
    o.refit.layout = cfg.layout();
    o.refit.tol = cfg.fit_tol;
    o.refit.reparam_iterations = cfg.reparam;
    return o;
}

// Refit patches and per-point fit normals as an annotated cloud. Points of
// labels without a fit are left out.
AnnotatedCloud refit_cloud(const AnnotatedCloud& in, const PipelineResult& res, DegreeLayout layout) {
    std::vector<int> new_id(res.refits.size(), -1);
    AnnotatedCloud out;
    out.layout = layout;
    for (const auto& r : res.refits)
        if (r.fit) {
            new_id[static_cast<std::size_t>(r.label)] = out.num_patches();
            out.patches.push_back(r.fit->patch);
        }
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < in.coords.rows(); ++i)
        if (new_id[static_cast<std::size_t>(res.labels[static_cast<std::size_t>(i)])] >= 0) keep.push_back(i);
    const auto n = static_cast<Eigen::Index>(keep.size());
    out.coords.resize(n, 3);
    out.normals.resize(n, 3);
    out.uv.resize(n, 2);
    for (Eigen::Index j = 0; j < n; ++j) {
        const Eigen::Index i = keep[static_cast<std::size_t>(j)];
        out.coords.row(j) = in.coords.row(i);
        out.normals.row(j) = res.normals.row(i).normalized();
        out.uv.row(j) = res.uv.row(i);
        out.patch_id.push_back(new_id[static_cast<std::size_t>(res.labels[static_cast<std::size_t>(i)])]);
    }
    return out;
}

int cmd_segment_refit(const RunConfig& cfg, const std::string& input, bool gt_labels, bool gt_uv,
                      const std::string& out_path, const std::string& report_path) {
    const AnnotatedCloud cloud = load_input(input);
    PipelineOptions opt = make_pipeline_options(cfg);
    if (cloud.layout != cfg.layout()) opt.refit.layout = cloud.layout;
    if (gt_uv) opt.refit.uv = cloud.uv;
    std::optional<std::vector<int>> labels;
    if (gt_labels) labels = cloud.patch_id;

    const PipelineResult res = segment_and_refit(cloud.coords, opt, labels);
    ojson rep;
    rep["format"] = "bezierseg-fit-report";
    rep["input"] = input;
    rep["labels_source"] = gt_labels ? "ground_truth" : "region_grow";
    rep["num_labels"] = static_cast<int>(res.refits.size());
    rep["fitted"] = res.fitted_count();
    ojson fits = ojson::array();
    for (const auto& r : res.refits) {
        fits.push_back(fit_json(r, opt.refit.layout));
        if (!r.fit) std::cerr << "label " << r.label << ": " << r.status << "\n";
    }
    rep["patches"] = fits;
    if (!report_path.empty()) write_json(report_path, rep);
    if (!out_path.empty() && res.fitted_count() > 0) save_cloud(refit_cloud(cloud, res, opt.refit.layout), out_path);
    std::cout << res.fitted_count() << " of " << res.refits.size() << " patches fit\n";
    return res.fitted_count() >= 1 ? 0 : 1;
}

Segmentation as_segmentation(const AnnotatedCloud& c) {
    Segmentation s{c.patch_id, {}, c.normals};
    for (const auto& p : c.patches) s.types.push_back(c.layout.class_index(p.degree));
    return s;
}

int cmd_eval(const std::string& pred_path, const std::string& gt_path, const std::string& out_path) {
    const Stopwatch timer;
    const AnnotatedCloud pred = load_input(pred_path);
    const AnnotatedCloud gt = load_input(gt_path);
    if (pred.num_points() != gt.num_points())
        throw UsageError("prediction has " + std::to_string(pred.num_points()) + " points, ground truth " +
                         std::to_string(gt.num_points()));
    if (pred.layout != gt.layout) throw UsageError("prediction and ground truth use different degree layouts");
    const EvalSummary s = eval_run(as_segmentation(pred), as_segmentation(gt), timer);
    const std::string text = s.to_json().dump(2) + "\n";
    if (!out_path.empty()) detail::atomic_write(out_path, text);
    std::cout << text;
    return 0;
}

int cmd_export_ply(const std::string& input, const std::string& out, bool no_labels, bool ascii) {
    const AnnotatedCloud cloud = load_input(input);
    std::optional<std::vector<int>> labels;
    if (!no_labels) labels = cloud.patch_id;
    write_ply(out, cloud.coords, cloud.normals, labels, ascii ? PlyFormat::Ascii : PlyFormat::BinaryLittleEndian);
    std::cout << "wrote " << cloud.num_points() << " vertices to " << out << "\n";
    return 0;
}

struct SweepRow {
    double sigma = 0.0;
    double rand_index = 0.0;
    double normal_err = 0.0;
    double acc = 0.0;
    double num_primitives = 0.0;
};

int cmd_noise_sweep(const RunConfig& cfg, const std::vector<double>& sigmas, const std::string& out_path) {
    for (double s : sigmas)
        if (s < 0.0) throw UsageError("noise sigma must be non-negative");
    const PipelineOptions opt = make_pipeline_options(cfg);
    std::vector<AnnotatedCloud> clean(static_cast<std::size_t>(cfg.models));
    parallel_for(cfg.models, cfg.threads, [&](int i) { clean[static_cast<std::size_t>(i)] = gen_model(cfg.model_spec(i)); });

    std::vector<SweepRow> rows;
    for (double sigma : sigmas) {
        std::vector<EvalSummary> per(clean.size());
        parallel_for(cfg.models, cfg.threads, [&](int i) {
            const Stopwatch timer;
            const auto& gt = clean[static_cast<std::size_t>(i)];
            const AnnotatedCloud noisy = add_noise(gt, sigma, cfg.noise_seed(i));
            const PipelineResult res = segment_and_refit(noisy.coords, opt);
            per[static_cast<std::size_t>(i)] = eval_run(res.segmentation(), as_segmentation(gt), timer);
        });
        SweepRow r{sigma, 0, 0, 0, 0};
        for (const auto& s : per) {
            r.rand_index += s.rand_index / static_cast<double>(per.size());
            r.normal_err += s.normal_err / static_cast<double>(per.size());
            r.acc += s.acc / static_cast<double>(per.size());
            r.num_primitives += s.num_primitives / static_cast<double>(per.size());
        }
        rows.push_back(r);
    }
    bool monotone = true;
    for (std::size_t i = 1; i < rows.size(); ++i)
        monotone = monotone && rows[i].rand_index <= rows[i - 1].rand_index && rows[i].normal_err >= rows[i - 1].normal_err;

    std::printf("%8s %10s %12s %8s %8s\n", "sigma", "RI", "normal_err", "acc", "num");
    ojson table = ojson::array();
    for (const auto& r : rows) {
        std::printf("%8.3f %10.4f %12.4f %8.3f %8.2f\n", r.sigma, r.rand_index, r.normal_err, r.acc, r.num_primitives);
        table.push_back({{"sigma", r.sigma},
                         {"rand_index", r.rand_index},
                         {"normal_err", r.normal_err},
                         {"acc", r.acc},
                         {"num_primitives", r.num_primitives}});
    }
    std::cout << (monotone ? "trend monotone\n" : "trend NOT monotone\n");
    if (!out_path.empty()) write_json(out_path, {{"models", cfg.models}, {"monotone", monotone}, {"rows", table}});
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bezier primitive segmentation toolkit"};
    app.require_subcommand(1);

    ConfigFlags gen_flags, grad_flags, seg_flags, sweep_flags;
    std::string gen_out;
    bool gen_json = false;
    auto* gen = app.add_subcommand("gen", "generate annotated synthetic point clouds");
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_flag("--json", gen_json, "write JSON fixtures instead of the binary format");
    gen_flags.attach(*gen, {"seed", "models", "points", "patches", "max_u", "max_v", "rational", "min_normal_angle",
                            "noise", "threads"});

    int grad_seeds = 10;
    bool tamper = false;
    std::string grad_report;
    auto* grad = app.add_subcommand("gradcheck", "compare analytic loss gradients with finite differences");
    grad->add_option("--seeds", grad_seeds, "number of random instances")->check(CLI::PositiveNumber);
    grad->add_flag("--tamper", tamper, "perturb analytic gradients (the check must then fail)");
    grad->add_option("--report", grad_report, "JSON report path");
    grad_flags.attach(*grad, {"seed", "max_u", "max_v"});

    std::string seg_in, seg_out, seg_report;
    bool seg_gt_labels = false, seg_gt_uv = false;
    auto* seg = app.add_subcommand("segment-refit", "segment a cloud and refit one patch per region");
    seg->add_option("--input", seg_in, "annotated cloud")->required();
    seg->add_option("--out", seg_out, "refit patch set, in the annotation format");
    seg->add_option("--report", seg_report, "per-patch fit report (JSON)");
    seg->add_flag("--gt-labels", seg_gt_labels, "use the cloud's patch ids instead of region growing");
    seg->add_flag("--gt-uv", seg_gt_uv, "use the cloud's uv instead of parameterizing");
    seg_flags.attach(*seg, {"max_u", "max_v", "rg_neighbors", "rg_angle", "rg_distance_factor", "rg_min_cluster",
                            "fit_tol", "reparam"});

    std::string eval_pred, eval_gt, eval_out;
    auto* ev = app.add_subcommand("eval", "evaluate a segmentation against ground truth");
    ev->add_option("--pred", eval_pred, "predicted annotated cloud")->required();
    ev->add_option("--gt", eval_gt, "ground-truth annotated cloud")->required();
    ev->add_option("--out", eval_out, "summary JSON path");

    std::string ply_in, ply_out;
    bool ply_no_labels = false, ply_ascii = false;
    auto* ply = app.add_subcommand("export-ply", "write a cloud as colored PLY");
    ply->add_option("--input", ply_in, "annotated cloud")->required();
    ply->add_option("--out", ply_out, "PLY path")->required();
    ply->add_flag("--no-labels", ply_no_labels, "color every vertex gray");
    ply->add_flag("--ascii", ply_ascii, "ASCII instead of binary little endian");

    std::vector<double> sigmas = {0.0, 0.01, 0.02, 0.03, 0.04, 0.05};
    std::string sweep_out;
    auto* sweep = app.add_subcommand("noise-sweep", "segmentation quality as coordinate noise grows");
    sweep->add_option("--sigmas", sigmas, "noise levels")->delimiter(',');
    sweep->add_option("--out", sweep_out, "table JSON path");
    sweep_flags.attach(*sweep, {"seed", "models", "points", "patches", "max_u", "max_v", "rational",
                                "min_normal_angle", "rg_neighbors", "rg_angle", "rg_distance_factor",
                                "rg_min_cluster", "fit_tol", "threads"});

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_exit_code() == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return cmd_gen(gen_flags.resolve(), gen_out, gen_json);
        if (grad->parsed()) return cmd_gradcheck(grad_flags.resolve(), grad_seeds, tamper, grad_report);
        if (seg->parsed())
            return cmd_segment_refit(seg_flags.resolve(), seg_in, seg_gt_labels, seg_gt_uv, seg_out, seg_report);
        if (ev->parsed()) return cmd_eval(eval_pred, eval_gt, eval_out);
        if (ply->parsed()) return cmd_export_ply(ply_in, ply_out, ply_no_labels, ply_ascii);
        if (sweep->parsed()) return cmd_noise_sweep(sweep_flags.resolve(), sigmas, sweep_out);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\nRun with --help for usage.\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
