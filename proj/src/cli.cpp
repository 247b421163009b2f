#include "nrsc/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "nrsc/meshio.hpp"
#include "nrsc/metrics.hpp"
#include "nrsc/pipeline.hpp"
#include "nrsc/train.hpp"

namespace nrsc::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string pad_int(int v, int width) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%0*d", width, v);
    return buf;
}

fs::path template_path(const fs::path& dir, int subject) {
    return dir / "templates" / ("subject_" + pad_int(subject, 3) + ".ply");
}
fs::path posed_path(const fs::path& dir, int subject, int pose) {
    return dir / "posed" / ("subject_" + pad_int(subject, 3) + "_pose_" + pad_int(pose, 3) + ".ply");
}
fs::path proj_path(const fs::path& dir, int subject, int pose, int view) {
    return dir / "proj"
           / ("subject_" + pad_int(subject, 3) + "_pose_" + pad_int(pose, 3) + "_view_"
              + pad_int(view, 2) + ".ply");
}

Vec3 parse_vec3(const std::string& s) {
    Vec3 v;
    char extra;
    if (std::sscanf(s.c_str(), "%lf,%lf,%lf%c", &v.x(), &v.y(), &v.z(), &extra) != 3)
        throw CLI::ValidationError("expected 'x,y,z', got '" + s + "'");
    return v;
}

// --- gen-data ---------------------------------------------------------------

struct GenDataArgs {
    std::string out;
    int subjects = 12;
    int poses = 40;
    std::uint64_t seed = 0;
    std::string split_spec = "8,2,2";
    int views = 10;
};

int cmd_gen_data(const GenDataArgs& a) {
    int tr = 0, va = 0, te = 0;
    {
        char extra;
        if (std::sscanf(a.split_spec.c_str(), "%d,%d,%d%c", &tr, &va, &te, &extra) != 3
            || tr < 0 || va < 0 || te < 0) {
            std::cerr << "gen-data: --split-spec must be 'train,val,test' counts\n";
            return 2;
        }
    }
    if (tr + va + te != a.subjects) {
        std::cerr << "gen-data: split counts " << tr << "+" << va << "+" << te
                  << " must sum to --subjects " << a.subjects << "\n";
        return 2;
    }

    DatasetSpec spec;
    spec.train_subjects = tr;
    spec.val_subjects = va;
    spec.test_subjects = te;
    spec.poses_per_subject = a.poses;
    spec.eval_views = a.views;

    const fs::path out(a.out);
    std::error_code ec;
    fs::create_directories(out / "templates", ec);
    fs::create_directories(out / "posed", ec);
    fs::create_directories(out / "proj", ec);
    if (ec || !fs::is_directory(out / "proj")) {
        std::cerr << "gen-data: cannot create output directory " << out << "\n";
        return 2;
    }

    TemplateCache cache;
    std::vector<ViewSpec> views = equally_spaced_views(spec.eval_views);
    for (int s = 0; s < spec.total_subjects(); ++s) {
        const SkinnedTemplate& tmpl = cache.get(s);
        TriMesh template_mesh = tmpl.mesh;
        template_mesh.vertices.normals = vertex_normals(template_mesh);
        write_ply(template_path(out, s), template_mesh);
        for (int p = 0; p < spec.poses_per_subject; ++p) {
            TriMesh posed = pose_shape(tmpl, PoseParams::from_id(p));
            posed.vertices.normals = vertex_normals(posed);
            write_ply(posed_path(out, s, p), posed);
            for (int v = 0; v < spec.eval_views; ++v) {
                ViewSpec view = make_view_for(posed, views[v].azimuth);
                Projection proj = project_visible(posed, view);
                write_ply(proj_path(out, s, p, v), proj.cloud);
            }
        }
    }

    json manifest;
    manifest["format"] = "nrsc-dataset";
    manifest["version"] = 1;
    manifest["dataset_seed"] = a.seed;
    manifest["poses_per_subject"] = spec.poses_per_subject;
    manifest["eval_views"] = spec.eval_views;
    manifest["split"] = {{"train", spec.subjects_for(Split::train)},
                         {"val", spec.subjects_for(Split::val)},
                         {"test", spec.subjects_for(Split::test)}};
    json triplets = json::array();
    for (Split split : {Split::train, Split::val, Split::test})
        for (const EvalSampleId& id : enumerate_eval_samples(spec, a.seed, split))
            triplets.push_back({{"subject", id.subject},
                                {"pose_q", id.pose_q},
                                {"pose_r", id.pose_r},
                                {"view", id.view}});
    manifest["triplets"] = std::move(triplets);
    atomic_write_text(out / "manifest.json", manifest.dump(2) + "\n");

    std::cout << "wrote " << spec.total_subjects() << " subjects x " << spec.poses_per_subject
              << " poses x " << spec.eval_views << " views under " << out << "\n";
    return 0;
}

}  // namespace

Manifest read_manifest(const fs::path& data_dir) {
    const fs::path path = data_dir / "manifest.json";
    std::ifstream in(path);
    if (!in) throw DataError(path.string() + ": cannot open manifest");
    json j;
    try {
        in >> j;
        if (j.at("format").get<std::string>() != "nrsc-dataset")
            throw DataError(path.string() + ": not a dataset manifest");
        if (j.at("version").get<int>() != 1)
            throw DataError(path.string() + ": unsupported manifest version");
        Manifest m;
        m.dataset_seed = j.at("dataset_seed").get<std::uint64_t>();
        m.spec.poses_per_subject = j.at("poses_per_subject").get<int>();
        m.spec.eval_views = j.at("eval_views").get<int>();
        auto split = j.at("split");
        m.spec.train_subjects = static_cast<int>(split.at("train").size());
        m.spec.val_subjects = static_cast<int>(split.at("val").size());
        m.spec.test_subjects = static_cast<int>(split.at("test").size());
        // ids must be the contiguous layout the generators assume
        std::vector<int> want;
        for (Split s : {Split::train, Split::val, Split::test})
            for (int id : m.spec.subjects_for(s)) want.push_back(id);
        std::vector<int> got;
        for (const char* key : {"train", "val", "test"})
            for (const auto& id : split.at(key)) got.push_back(id.get<int>());
        if (want != got) throw DataError(path.string() + ": non-contiguous subject id layout");
        return m;
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": corrupt manifest: " + e.what());
    }
}

namespace {

// --- train ------------------------------------------------------------------

struct TrainArgs {
    std::string data, out, config, log, resume;
    bool fixed_template = false;
    int epochs = -1;  // override when >= 0
    long long seed = -1;
};

int cmd_train(const TrainArgs& a) {
    Manifest manifest = read_manifest(a.data);

    TrainConfig cfg;
    if (!a.config.empty()) cfg = read_train_config(a.config);
    if (a.fixed_template) {
        cfg.mode = TrainMode::fixed_template;
        if (cfg.template_subject_id == 0 && manifest.spec.train_subjects > 0)
            cfg.template_subject_id = manifest.spec.subjects_for(Split::train).front();
    }
    if (a.epochs >= 0) cfg.epochs = a.epochs;
    if (a.seed >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed);
    cfg.validate();

    TrainPaths paths;
    paths.checkpoint = a.out;
    paths.log_csv = a.log.empty() ? fs::path(a.out).concat(".log.csv") : fs::path(a.log);

    Checkpoint resume;
    const Checkpoint* resume_ptr = nullptr;
    if (!a.resume.empty()) {
        resume = load_checkpoint(a.resume);
        cfg = resume.config;  // a resumed run keeps its original config
        resume_ptr = &resume;
    }

    Checkpoint ck = train_loop(cfg, manifest.spec, paths, resume_ptr);
    std::cout << "trained " << ck.epoch << " epoch(s)";
    if (!ck.train_loss_history.empty())
        std::cout << ", final train loss " << ck.train_loss_history.back() << ", val loss "
                  << ck.val_loss_history.back();
    std::cout << "; checkpoint: " << paths.checkpoint << "\n";
    return 0;
}

// --- complete ---------------------------------------------------------------

struct CompleteArgs {
    std::string part, full, ckpt, out, correspondence;
    bool fixed_template = false;
    std::string viewpoint = "10,0,0";
    int normals_k = 16;
    int icp_iters = 50;
    double trim = 0.1;
};

int cmd_complete(const CompleteArgs& a) {
    Checkpoint ck = load_checkpoint(a.ckpt);

    TriMesh part = read_mesh(a.part);
    PointCloud P = part.vertices;
    if (!P.has_normals()) {
        if (part.faces.empty()) {
            P.normals = estimate_normals(P, a.normals_k, parse_vec3(a.viewpoint));
        } else {
            P.normals = vertex_normals(part);
        }
    }

    TriMesh Q;
    if (a.fixed_template) {
        Q = build_subject(SubjectParams::from_id(ck.config.template_subject_id)).mesh;
    } else {
        Q = read_mesh(a.full);
        if (Q.faces.empty())
            throw DataError(a.full + ": the full shape must be a triangle mesh");
    }
    Q.vertices.normals = vertex_normals(Q);

    auto [p_centered, p_off] = center_at_origin(P);
    auto [q_centered, q_off] = center_at_origin(Q);

    TriMesh rec = complete(p_centered, q_centered, ck,
                           a.fixed_template ? TrainMode::fixed_template : TrainMode::normal);
    RigidTransform align = icp_align(rec.vertices, p_centered, a.icp_iters, a.trim);
    TriMesh aligned = apply_transform(rec, align);

    if (!a.correspondence.empty()) {
        Correspondence corr = recover_correspondence(p_centered, aligned.vertices, q_centered);
        write_correspondence_csv(a.correspondence, corr);
    }

    // back into the scan's original frame
    for (Vec3& v : aligned.vertices.positions) v += p_off;
    write_ply(a.out, aligned);
    std::cout << "wrote reconstruction (" << aligned.vertex_count() << " vertices) to " << a.out
              << "\n";
    return 0;
}

// --- eval -------------------------------------------------------------------

struct EvalArgs {
    std::string data, ckpt, out, robustness, geodesic_out;
    int limit = -1;
    bool oracle = false;
};

int cmd_eval(const EvalArgs& a) {
    Manifest manifest = read_manifest(a.data);
    Checkpoint ck = load_checkpoint(a.ckpt);

    if (!a.robustness.empty()) {
        std::string csv = run_robustness_suite(ck, manifest.spec, manifest.dataset_seed,
                                               robustness_suite_from_string(a.robustness), a.limit);
        atomic_write_text(a.out, csv);
        std::cout << "wrote robustness sweep to " << a.out << "\n";
        return 0;
    }

    EvalOptions opt;
    opt.oracle_reconstruction = a.oracle;
    opt.with_geodesic = !a.geodesic_out.empty();
    std::vector<MetricsRecord> records =
        evaluate_split(ck, manifest.spec, manifest.dataset_seed, Split::test, opt, a.limit);
    if (records.empty()) throw DataError("eval: the test split is empty");

    std::string csv = "sample_id,euclidean,chamfer_gt2rec,chamfer_rec2gt,chamfer_full,vol_err\n";
    char buf[256];
    for (const auto& r : records) {
        std::snprintf(buf, sizeof(buf), "%s,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.sample_id.c_str(),
                      r.mean_euclidean, r.chamfer_gt_to_rec, r.chamfer_rec_to_gt, r.chamfer_full,
                      r.volumetric_error);
        csv += buf;
    }
    atomic_write_text(a.out, csv);

    auto column = [&](auto getter) {
        std::vector<double> v;
        for (const auto& r : records) v.push_back(getter(r));
        return aggregate(v);
    };
    auto print = [](const char* name, const Aggregate& g) {
        std::printf("%-16s %.6g ± %.6g\n", name, g.mean, g.stddev);
    };
    std::printf("test split, %zu samples (mean ± std):\n", records.size());
    print("euclidean", column([](const MetricsRecord& r) { return r.mean_euclidean; }));
    print("sq_euclidean", column([](const MetricsRecord& r) { return r.mean_sq_euclidean; }));
    print("chamfer_gt2rec", column([](const MetricsRecord& r) { return r.chamfer_gt_to_rec; }));
    print("chamfer_rec2gt", column([](const MetricsRecord& r) { return r.chamfer_rec_to_gt; }));
    print("chamfer_full", column([](const MetricsRecord& r) { return r.chamfer_full; }));
    print("vol_err", column([](const MetricsRecord& r) { return r.volumetric_error; }));

    if (!a.geodesic_out.empty()) {
        const auto& thresholds = records.front().geodesic.thresholds;
        std::string gcsv = "threshold,fraction_correct\n";
        for (std::size_t t = 0; t < thresholds.size(); ++t) {
            double mean = 0;
            for (const auto& r : records) mean += r.geodesic.fraction_correct[t];
            mean /= static_cast<double>(records.size());
            std::snprintf(buf, sizeof(buf), "%.9g,%.9g\n", thresholds[t], mean);
            gcsv += buf;
        }
        atomic_write_text(a.geodesic_out, gcsv);
    }
    return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"alignment-based nonrigid shape completion and partial correspondence"};
    app.require_subcommand(1);

    GenDataArgs gen;
    auto* cgen = app.add_subcommand("gen-data", "generate the synthetic articulated dataset");
    cgen->add_option("--out", gen.out, "output directory")->required();
    cgen->add_option("--subjects", gen.subjects, "number of subjects")->check(CLI::PositiveNumber);
    cgen->add_option("--poses", gen.poses, "poses per subject")->check(CLI::Range(2, 1000000));
    cgen->add_option("--seed", gen.seed, "dataset seed");
    cgen->add_option("--split-spec", gen.split_spec, "train,val,test subject counts");
    cgen->add_option("--views", gen.views, "evaluation views per pose")->check(CLI::PositiveNumber);

    TrainArgs tr;
    auto* ctrain = app.add_subcommand("train", "train the completion network");
    ctrain->add_option("--data", tr.data, "dataset directory")->required();
    ctrain->add_option("--out", tr.out, "checkpoint output path")->required();
    ctrain->add_option("--config", tr.config, "key = value config file");
    ctrain->add_option("--log", tr.log, "training log CSV (default <out>.log.csv)");
    ctrain->add_option("--resume", tr.resume, "resume from an existing checkpoint");
    ctrain->add_option("--epochs", tr.epochs, "override the config epoch count");
    ctrain->add_option("--seed", tr.seed, "override the config seed");
    ctrain->add_flag("--fixed-template", tr.fixed_template,
                     "train against a constant full template");

    CompleteArgs co;
    auto* ccomp = app.add_subcommand("complete", "complete a partial scan");
    ccomp->add_option("--part", co.part, "partial scan (.ply/.off)")->required();
    auto* full_opt = ccomp->add_option("--full", co.full, "full reference shape (.ply/.off)");
    ccomp->add_option("--ckpt", co.ckpt, "trained checkpoint")->required();
    ccomp->add_option("--out", co.out, "reconstruction output (.ply)")->required();
    ccomp->add_option("--correspondence", co.correspondence, "part-to-full index CSV");
    auto* fixed_flag = ccomp->add_flag("--fixed-template", co.fixed_template,
                                       "use the checkpoint's constant template instead of --full");
    full_opt->excludes(fixed_flag);
    ccomp->add_option("--viewpoint", co.viewpoint, "scanner viewpoint for normal estimation");
    ccomp->add_option("--normals-k", co.normals_k, "k for normal estimation")
        ->check(CLI::Range(3, 1000));
    ccomp->add_option("--icp-iters", co.icp_iters, "partial ICP iterations")
        ->check(CLI::NonNegativeNumber);
    ccomp->add_option("--trim", co.trim, "ICP trim fraction")->check(CLI::Range(0.0, 0.95));

    EvalArgs ev;
    auto* ceval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    ceval->add_option("--data", ev.data, "dataset directory")->required();
    ceval->add_option("--ckpt", ev.ckpt, "trained checkpoint")->required();
    ceval->add_option("--out", ev.out, "metrics CSV output")->required();
    ceval->add_option("--robustness", ev.robustness, "sweep: noise|downsample|angle");
    ceval->add_option("--limit", ev.limit, "max eval samples (per view for angle sweeps)");
    ceval->add_option("--geodesic-out", ev.geodesic_out, "mean geodesic-error curve CSV");
    ceval->add_flag("--oracle", ev.oracle, "score the ground truth against itself (testing aid)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (cgen->parsed()) return cmd_gen_data(gen);
        if (ctrain->parsed()) return cmd_train(tr);
        if (ccomp->parsed()) {
            if (!co.fixed_template && co.full.empty()) {
                std::cerr << "complete: --full is required unless --fixed-template is given\n";
                return 2;
            }
            return cmd_complete(co);
        }
        if (ceval->parsed()) return cmd_eval(ev);
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const FileFormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 4;
    } catch (const CorruptCheckpoint& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 4;
    } catch (const UnsupportedVersion& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 4;
    } catch (const InvalidInput& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 5;
    }
}

int run(const std::vector<std::string>& args) {
    std::vector<std::string> full;
    full.push_back("nrsc");
    full.insert(full.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& s : full) argv.push_back(s.c_str());
    return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace nrsc::cli
