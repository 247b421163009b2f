#include "nrsc/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <thread>

#include "nrsc/partiality.hpp"
#include "nrsc/pipeline.hpp"
#include "nrsc/rng.hpp"

namespace nrsc {

double mean_euclidean_error(const TriMesh& reconstruction, const TriMesh& R) {
    if (reconstruction.vertex_count() != R.vertex_count())
        throw InvalidInput("mean_euclidean_error: vertex count mismatch");
    if (reconstruction.vertex_count() == 0) throw InvalidInput("mean_euclidean_error: empty mesh");
    double sum = 0.0;
    for (std::size_t i = 0; i < R.vertex_count(); ++i)
        sum += (reconstruction.vertices.positions[i] - R.vertices.positions[i]).norm();
    return sum / static_cast<double>(R.vertex_count());
}

double mean_squared_euclidean_error(const TriMesh& reconstruction, const TriMesh& R) {
    if (reconstruction.vertex_count() != R.vertex_count())
        throw InvalidInput("mean_squared_euclidean_error: vertex count mismatch");
    if (reconstruction.vertex_count() == 0)
        throw InvalidInput("mean_squared_euclidean_error: empty mesh");
    double sum = 0.0;
    for (std::size_t i = 0; i < R.vertex_count(); ++i)
        sum += (reconstruction.vertices.positions[i] - R.vertices.positions[i]).squaredNorm();
    return sum / static_cast<double>(R.vertex_count());
}

double directional_chamfer(const PointCloud& A, const PointCloud& B) {
    if (A.empty() || B.empty()) throw InvalidInput("directional_chamfer: empty cloud");
    KdTree tree(B.positions);
    double sum = 0.0;
    for (const Vec3& a : A.positions) {
        double d2 = 0.0;
        tree.nearest(a, &d2);
        sum += std::sqrt(d2);
    }
    return sum / static_cast<double>(A.size());
}

double volumetric_error(const TriMesh& reconstruction, const TriMesh& R) {
    const double v_gt = std::abs(mesh_volume(R));
    if (v_gt < 1e-12) throw InvalidInput("volumetric_error: ground-truth volume is zero");
    const double v_rec = std::abs(mesh_volume(reconstruction));
    return std::abs(v_rec - v_gt) / v_gt;
}

GeodesicCurve geodesic_error_curve(const Correspondence& pred, const Correspondence& gt,
                                   const TriMesh& Q, const std::vector<double>& thresholds) {
    if (pred.target_indices.size() != gt.target_indices.size())
        throw InvalidInput("geodesic_error_curve: pred/gt length mismatch");
    if (pred.target_indices.empty()) throw InvalidInput("geodesic_error_curve: empty maps");
    for (std::size_t i = 1; i < thresholds.size(); ++i)
        if (!(thresholds[i] >= thresholds[i - 1]))
            throw InvalidInput("geodesic_error_curve: thresholds must be ascending");
    if (!edge_graph_connected(Q)) throw InvalidInput("geodesic_error_curve: Q is disconnected");

    const double norm = std::sqrt(surface_area(Q));
    if (!(norm > 0)) throw InvalidInput("geodesic_error_curve: Q has zero surface area");

    // one Dijkstra per distinct ground-truth target
    std::map<int, std::vector<double>> dist_from;
    std::vector<double> errors(pred.target_indices.size());
    for (std::size_t i = 0; i < pred.target_indices.size(); ++i) {
        const int src = gt.target_indices[i];
        auto it = dist_from.find(src);
        if (it == dist_from.end()) it = dist_from.emplace(src, geodesic_distances(Q, src)).first;
        errors[i] = it->second[pred.target_indices[i]] / norm;
    }

    GeodesicCurve curve;
    curve.thresholds = thresholds;
    curve.fraction_correct.resize(thresholds.size());
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
        std::size_t ok = 0;
        for (double e : errors)
            if (e <= thresholds[t]) ++ok;
        curve.fraction_correct[t] = static_cast<double>(ok) / static_cast<double>(errors.size());
    }
    return curve;
}

std::vector<double> default_geodesic_thresholds() {
    std::vector<double> t;
    for (int i = 0; i <= 25; ++i) t.push_back(0.01 * i);
    return t;
}

Aggregate aggregate(const std::vector<double>& values) {
    Aggregate a;
    if (values.empty()) return a;
    double sum = 0.0;
    for (double v : values) sum += v;
    a.mean = sum / static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - a.mean) * (v - a.mean);
        a.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return a;
}

// ---------------------------------------------------------------------------
// Evaluation driver

namespace {

void run_parallel(int jobs, const std::function<void(int)>& fn) {
    unsigned hw = std::thread::hardware_concurrency();
    const int nt = std::max(1, std::min<int>(jobs, hw == 0 ? 2 : static_cast<int>(hw)));
    if (nt <= 1) {
        for (int i = 0; i < jobs; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < nt; ++t)
        pool.emplace_back([&] {
            for (;;) {
                int i = next.fetch_add(1);
                if (i >= jobs) return;
                fn(i);
            }
        });
    for (auto& th : pool) th.join();
}

}  // namespace

MetricsRecord evaluate_triplet(const Checkpoint& ck, const Triplet& t, const EvalOptions& opt,
                               TemplateCache* cache) {
    Triplet work = t;
    if (ck.config.mode == TrainMode::fixed_template) {
        TemplateCache local;
        work = substitute_template(std::move(work),
                                   (cache ? *cache : local).get(ck.config.template_subject_id));
    }
    if (opt.keep_fraction < 1.0) {
        auto [cloud, kept] = downsample_random(work.P, opt.keep_fraction, opt.downsample_seed);
        work.P = std::move(cloud);
        // compose the part->R map through the kept subset
        Correspondence remapped;
        remapped.source_size = kept.source_size;
        for (int idx : kept.target_indices)
            remapped.target_indices.push_back(work.part_to_R.target_indices[idx]);
        work.part_to_R = std::move(remapped);
    }
    if (opt.noise_sigma > 0.0) work.P = add_gaussian_noise(work.P, opt.noise_sigma, opt.noise_seed);

    auto [p_centered, p_off] = center_at_origin(work.P);
    auto [q_centered, q_off] = center_at_origin(work.Q);
    auto [r_centered, r_off] = center_at_origin(work.R);

    TriMesh rec;
    if (opt.oracle_reconstruction) {
        rec = r_centered;
    } else {
        rec = complete(p_centered, q_centered, ck.weights, 1);
    }

    MetricsRecord m;
    m.subject_id = work.subject_id;
    m.pose_id_q = work.pose_id_q;
    m.pose_id_r = work.pose_id_r;
    m.azimuth = work.azimuth;
    m.mean_euclidean = mean_euclidean_error(rec, r_centered);
    m.mean_sq_euclidean = mean_squared_euclidean_error(rec, r_centered);
    m.chamfer_gt_to_rec = directional_chamfer(r_centered.vertices, rec.vertices);
    m.chamfer_rec_to_gt = directional_chamfer(rec.vertices, r_centered.vertices);
    m.chamfer_full = m.chamfer_gt_to_rec + m.chamfer_rec_to_gt;
    m.volumetric_error = volumetric_error(rec, r_centered);

    if (opt.with_geodesic) {
        RigidTransform align = icp_align(rec.vertices, p_centered, opt.icp_max_iters, opt.icp_trim);
        PointCloud aligned = apply_transform(rec.vertices, align);
        Correspondence pred = recover_correspondence(p_centered, aligned, q_centered);
        // pi* is the identity on the shared template, so part_to_R doubles
        // as the ground-truth map P -> Q
        m.geodesic =
            geodesic_error_curve(pred, work.part_to_R, q_centered, default_geodesic_thresholds());
    }
    return m;
}

std::vector<MetricsRecord> evaluate_triplets(const Checkpoint& ck,
                                             const std::vector<Triplet>& triplets,
                                             const EvalOptions& opt, TemplateCache* cache) {
    TemplateCache local;
    TemplateCache& cc = cache ? *cache : local;
    if (ck.config.mode == TrainMode::fixed_template)
        cc.get(ck.config.template_subject_id);  // build once before going parallel
    std::vector<MetricsRecord> out(triplets.size());
    run_parallel(static_cast<int>(triplets.size()), [&](int i) {
        EvalOptions o = opt;
        o.noise_seed = mix_seed(opt.noise_seed, static_cast<std::uint64_t>(i));
        o.downsample_seed = mix_seed(opt.downsample_seed, static_cast<std::uint64_t>(i));
        out[i] = evaluate_triplet(ck, triplets[i], o, &cc);
    });
    return out;
}

std::vector<EvalSampleId> enumerate_eval_samples(const DatasetSpec& spec,
                                                 std::uint64_t dataset_seed, Split split) {
    std::vector<EvalSampleId> ids;
    for (int subject : spec.subjects_for(split))
        for (int pose_r = 0; pose_r < spec.poses_per_subject; ++pose_r)
            for (int view = 0; view < spec.eval_views; ++view) {
                EvalSampleId id;
                id.subject = subject;
                id.pose_r = pose_r;
                id.view = view;
                // deterministic Q pose, distinct from pose_r
                std::uint64_t h = mix_seed(dataset_seed, subject, pose_r, view);
                id.pose_q = static_cast<int>(h % static_cast<std::uint64_t>(spec.poses_per_subject));
                if (id.pose_q == pose_r) id.pose_q = (id.pose_q + 1) % spec.poses_per_subject;
                ids.push_back(id);
            }
    return ids;
}

Triplet realize_eval_sample(const DatasetSpec& spec, const EvalSampleId& id,
                            TemplateCache* cache) {
    return make_eval_triplet(spec, id.subject, id.pose_q, id.pose_r, id.view, cache);
}

std::vector<MetricsRecord> evaluate_split(const Checkpoint& ck, const DatasetSpec& spec,
                                          std::uint64_t dataset_seed, Split split,
                                          const EvalOptions& opt, int limit) {
    std::vector<EvalSampleId> ids = enumerate_eval_samples(spec, dataset_seed, split);
    if (limit >= 0 && static_cast<int>(ids.size()) > limit) ids.resize(limit);

    TemplateCache cache;
    std::vector<Triplet> triplets(ids.size());
    run_parallel(static_cast<int>(ids.size()),
                 [&](int i) { triplets[i] = realize_eval_sample(spec, ids[i], &cache); });

    std::vector<MetricsRecord> records = evaluate_triplets(ck, triplets, opt, &cache);
    for (std::size_t i = 0; i < records.size(); ++i) {
        records[i].view_index = ids[i].view;
        char buf[64];
        std::snprintf(buf, sizeof(buf), "s%d_q%d_r%d_v%d", ids[i].subject, ids[i].pose_q,
                      ids[i].pose_r, ids[i].view);
        records[i].sample_id = buf;
    }
    return records;
}

// ---------------------------------------------------------------------------
// Robustness sweeps

RobustnessSuite robustness_suite_from_string(const std::string& s) {
    if (s == "noise") return RobustnessSuite::noise;
    if (s == "downsample") return RobustnessSuite::downsample;
    if (s == "angle") return RobustnessSuite::angle;
    throw InvalidInput("unknown robustness suite '" + s + "'");
}

double template_height(const SkinnedTemplate& tmpl) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const Vec3& p : tmpl.mesh.vertices.positions) {
        lo = std::min(lo, p.z());
        hi = std::max(hi, p.z());
    }
    return hi - lo;
}

MetricsRecord mean_record(const std::vector<MetricsRecord>& records) {
    MetricsRecord m;
    if (records.empty()) return m;
    for (const auto& r : records) {
        m.mean_euclidean += r.mean_euclidean;
        m.mean_sq_euclidean += r.mean_sq_euclidean;
        m.chamfer_gt_to_rec += r.chamfer_gt_to_rec;
        m.chamfer_rec_to_gt += r.chamfer_rec_to_gt;
        m.chamfer_full += r.chamfer_full;
        m.volumetric_error += r.volumetric_error;
    }
    const double n = static_cast<double>(records.size());
    m.mean_euclidean /= n;
    m.mean_sq_euclidean /= n;
    m.chamfer_gt_to_rec /= n;
    m.chamfer_rec_to_gt /= n;
    m.chamfer_full /= n;
    m.volumetric_error /= n;
    return m;
}

namespace {

std::string metrics_row(const std::string& label, const MetricsRecord& m) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%s,%.9g,%.9g,%.9g,%.9g,%.9g\n", label.c_str(),
                  m.mean_euclidean, m.chamfer_gt_to_rec, m.chamfer_rec_to_gt, m.chamfer_full,
                  m.volumetric_error);
    return buf;
}

}  // namespace

std::string run_robustness_suite(const Checkpoint& ck, const DatasetSpec& spec,
                                 std::uint64_t dataset_seed, RobustnessSuite suite, int limit) {
    std::vector<EvalSampleId> ids = enumerate_eval_samples(spec, dataset_seed, Split::test);
    if (suite == RobustnessSuite::angle) {
        if (limit >= 0) {  // per-view limit so every row stays populated
            std::vector<EvalSampleId> kept;
            std::vector<int> per_view(spec.eval_views, 0);
            for (const auto& id : ids)
                if (per_view[id.view] < limit) {
                    kept.push_back(id);
                    ++per_view[id.view];
                }
            ids = std::move(kept);
        }
    } else if (limit >= 0 && static_cast<int>(ids.size()) > limit) {
        ids.resize(limit);
    }
    if (ids.empty()) throw InvalidInput("run_robustness_suite: empty test enumeration");

    TemplateCache cache;
    const int n = static_cast<int>(ids.size());
    std::vector<Triplet> triplets(n);
    run_parallel(n, [&](int i) { triplets[i] = realize_eval_sample(spec, ids[i], &cache); });

    std::map<int, double> height;  // per-subject "1 cm" basis
    for (const auto& id : ids)
        if (!height.count(id.subject))
            height[id.subject] = 0.01 * template_height(cache.get(id.subject));

    auto eval_all = [&](const std::function<EvalOptions(int)>& opts_for) {
        std::vector<MetricsRecord> recs(n);
        run_parallel(n, [&](int i) { recs[i] = evaluate_triplet(ck, triplets[i], opts_for(i), &cache); });
        return recs;
    };

    const std::string header = "euclidean,chamfer_gt2rec,chamfer_rec2gt,chamfer_full,vol_err\n";
    std::string csv;
    switch (suite) {
        case RobustnessSuite::noise: {
            csv = "sigma_cm," + header;
            for (int level = 0; level <= 4; ++level) {
                auto recs = eval_all([&](int i) {
                    EvalOptions o;
                    o.noise_sigma = level * height[ids[i].subject];
                    o.noise_seed = mix_seed(dataset_seed, 0x6e6f697365ULL, level, i);
                    return o;
                });
                csv += metrics_row(std::to_string(level), mean_record(recs));
            }
            break;
        }
        case RobustnessSuite::downsample: {
            csv = "keep_fraction," + header;
            const std::array<double, 5> keeps = {1.0, 0.75, 0.5, 0.25, 0.1};
            for (std::size_t level = 0; level < keeps.size(); ++level) {
                auto recs = eval_all([&](int i) {
                    EvalOptions o;
                    o.keep_fraction = keeps[level];
                    o.downsample_seed = mix_seed(dataset_seed, 0x646f776eULL, level, i);
                    return o;
                });
                char label[16];
                std::snprintf(label, sizeof(label), "%.2f", keeps[level]);
                csv += metrics_row(label, mean_record(recs));
            }
            break;
        }
        case RobustnessSuite::angle: {
            csv = "azimuth_deg," + header;
            auto recs = eval_all([&](int) { return EvalOptions{}; });
            for (int v = 0; v < spec.eval_views; ++v) {
                std::vector<MetricsRecord> of_view;
                for (int i = 0; i < n; ++i)
                    if (ids[i].view == v) of_view.push_back(recs[i]);
                char label[16];
                std::snprintf(label, sizeof(label), "%.1f", 360.0 * v / spec.eval_views);
                csv += metrics_row(label, mean_record(of_view));
            }
            break;
        }
    }
    return csv;
}

}  // namespace nrsc
