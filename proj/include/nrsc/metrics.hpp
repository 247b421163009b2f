#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nrsc/geometry.hpp"
#include "nrsc/synthdata.hpp"
#include "nrsc/train.hpp"

namespace nrsc {

/// Cumulative correspondence-accuracy curve over normalized geodesic
/// error thresholds. fraction_correct is nondecreasing and ends <= 1.
struct GeodesicCurve {
    std::vector<double> thresholds;
    std::vector<double> fraction_correct;
};

/// Per-sample completion quality. chamfer_full is exactly the sum of the
/// two directional terms.
struct MetricsRecord {
    double mean_euclidean = 0.0;
    double mean_sq_euclidean = 0.0;  // squared variant, logged alongside
    double chamfer_gt_to_rec = 0.0;
    double chamfer_rec_to_gt = 0.0;
    double chamfer_full = 0.0;
    double volumetric_error = 0.0;
    GeodesicCurve geodesic;  // filled only when requested

    int subject_id = -1, pose_id_q = -1, pose_id_r = -1, view_index = -1;
    double azimuth = 0.0;
    std::string sample_id;
};

/// Mean distance between index-matched vertices (shared pi* indexing).
double mean_euclidean_error(const TriMesh& reconstruction, const TriMesh& R);
double mean_squared_euclidean_error(const TriMesh& reconstruction, const TriMesh& R);

/// Mean nearest-neighbor distance from every point of A into B
/// (first-power distances).
double directional_chamfer(const PointCloud& A, const PointCloud& B);

/// | |V(rec)| - |V(R)| | / |V(R)| for watertight meshes.
double volumetric_error(const TriMesh& reconstruction, const TriMesh& R);

/// Per point: geodesic distance on Q between predicted and true targets,
/// normalized by sqrt(surface area of Q). Curve value at tau = fraction
/// of points with error <= tau. Thresholds must be ascending.
GeodesicCurve geodesic_error_curve(const Correspondence& pred, const Correspondence& gt,
                                   const TriMesh& Q, const std::vector<double>& thresholds);

/// 0 to 0.25 in steps of 0.01.
std::vector<double> default_geodesic_thresholds();

struct Aggregate {
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation
};
Aggregate aggregate(const std::vector<double>& values);

// ---------------------------------------------------------------------------
// Evaluation driver

struct EvalOptions {
    double noise_sigma = 0.0;  // model units, applied to P before centering
    std::uint64_t noise_seed = 0;
    double keep_fraction = 1.0;  // random decimation of P
    std::uint64_t downsample_seed = 0;
    bool with_geodesic = false;
    bool oracle_reconstruction = false;  // bypass the network, use R (testing aid)
    int icp_max_iters = 50;
    double icp_trim = 0.1;
};

/// Full per-sample pipeline: corrupt P if asked, center everything, run
/// the network (or the oracle), compare against R, and optionally recover
/// correspondence through trimmed ICP for the geodesic curve.
MetricsRecord evaluate_triplet(const Checkpoint& ck, const Triplet& t, const EvalOptions& opt,
                               TemplateCache* cache = nullptr);

/// evaluate_triplet over a set, parallelized across samples.
std::vector<MetricsRecord> evaluate_triplets(const Checkpoint& ck,
                                             const std::vector<Triplet>& triplets,
                                             const EvalOptions& opt,
                                             TemplateCache* cache = nullptr);

/// The fixed eval enumeration of a split: (subject, pose_r, view) for all
/// poses and views, with pose_q assigned deterministically from
/// dataset_seed.
struct EvalSampleId {
    int subject = 0, pose_q = 0, pose_r = 0, view = 0;
};
std::vector<EvalSampleId> enumerate_eval_samples(const DatasetSpec& spec,
                                                 std::uint64_t dataset_seed, Split split);

Triplet realize_eval_sample(const DatasetSpec& spec, const EvalSampleId& id,
                            TemplateCache* cache = nullptr);

/// Evaluate (a prefix of) the split's enumeration. limit < 0 = all.
std::vector<MetricsRecord> evaluate_split(const Checkpoint& ck, const DatasetSpec& spec,
                                          std::uint64_t dataset_seed, Split split,
                                          const EvalOptions& opt, int limit = -1);

// ---------------------------------------------------------------------------
// Robustness sweeps

enum class RobustnessSuite { noise, downsample, angle };
RobustnessSuite robustness_suite_from_string(const std::string& s);

/// Height of a subject's rest template; the sweep's "1 cm" equals
/// 0.01 * this.
double template_height(const SkinnedTemplate& tmpl);

/// Sweep CSV over the split's eval samples (prefix-limited like
/// evaluate_split; the angle suite applies the limit per view).
/// noise: sigma_cm in {0..4}; downsample: keep in {1,.75,.5,.25,.1};
/// angle: one row per eval view. Every row reports metric means.
std::string run_robustness_suite(const Checkpoint& ck, const DatasetSpec& spec,
                                 std::uint64_t dataset_seed, RobustnessSuite suite,
                                 int limit = -1);

/// One row of means for a prepared triplet set (building block of the
/// sweeps; exposed for the robustness analysis on other models).
MetricsRecord mean_record(const std::vector<MetricsRecord>& records);

}  // namespace nrsc
