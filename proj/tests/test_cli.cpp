#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "nrsc/cli.hpp"
#include "nrsc/meshio.hpp"
#include "nrsc/metrics.hpp"
#include "nrsc/train.hpp"

using namespace nrsc;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    static int counter = 0;
    fs::path dir = fs::temp_directory_path() / ("nrsc_cli_" + std::to_string(counter++));
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// a tiny dataset every CLI test shares (2/1/1 subjects, 3 poses, 2 views)
const fs::path& shared_data_dir() {
    static fs::path dir = [] {
        fs::path d = temp_dir() / "data";
        REQUIRE(cli::run({"gen-data", "--out", d.string(), "--subjects", "4", "--poses", "3",
                          "--split-spec", "2,1,1", "--views", "2", "--seed", "5"})
                == 0);
        return d;
    }();
    return dir;
}

// a checkpoint of untrained weights over the shared dataset
const fs::path& shared_ckpt() {
    static fs::path p = [] {
        fs::path ck = temp_dir() / "w.ckpt";
        REQUIRE(cli::run({"train", "--data", shared_data_dir().string(), "--out", ck.string(),
                          "--epochs", "0"})
                == 0);
        return ck;
    }();
    return p;
}

std::map<std::string, int> count_files(const fs::path& dir) {
    std::map<std::string, int> counts;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) counts[e.path().parent_path().filename().string()]++;
    return counts;
}

}  // namespace

TEST_CASE("gen-data writes the full tree and a consistent manifest") {
    const fs::path& dir = shared_data_dir();
    auto counts = count_files(dir);
    CHECK(counts["templates"] == 4);
    CHECK(counts["posed"] == 4 * 3);
    CHECK(counts["proj"] == 4 * 3 * 2);

    cli::Manifest m = cli::read_manifest(dir);
    CHECK(m.spec.train_subjects == 2);
    CHECK(m.spec.val_subjects == 1);
    CHECK(m.spec.test_subjects == 1);
    CHECK(m.spec.poses_per_subject == 3);
    CHECK(m.spec.eval_views == 2);
    CHECK(m.dataset_seed == 5);

    // manifest triplet count contract: subjects x poses x views
    std::string manifest = slurp(dir / "manifest.json");
    CHECK(std::count(manifest.begin(), manifest.end(), '{') >= 4 * 3 * 2);

    // a projection is loadable and a subset of its posed mesh
    TriMesh posed = read_ply(dir / "posed" / "subject_003_pose_002.ply");
    TriMesh proj = read_ply(dir / "proj" / "subject_003_pose_002_view_01.ply");
    CHECK(proj.faces.empty());
    CHECK(proj.vertex_count() > 0);
    CHECK(proj.vertex_count() < posed.vertex_count());
}

TEST_CASE("gen-data is byte-identical for the same seed") {
    fs::path a = temp_dir() / "a", b = temp_dir() / "b";
    for (const fs::path& d : {a, b})
        REQUIRE(cli::run({"gen-data", "--out", d.string(), "--subjects", "2", "--poses", "2",
                          "--split-spec", "1,0,1", "--views", "2", "--seed", "9"})
                == 0);
    std::vector<fs::path> rel;
    for (const auto& e : fs::recursive_directory_iterator(a))
        if (e.is_regular_file()) rel.push_back(fs::relative(e.path(), a));
    REQUIRE(!rel.empty());
    for (const auto& r : rel) CHECK(slurp(a / r) == slurp(b / r));
}

TEST_CASE("gen-data usage errors exit 2") {
    CHECK(cli::run({"gen-data", "--out", (temp_dir() / "x").string(), "--subjects", "0"}) == 2);
    CHECK(cli::run({"gen-data", "--out", (temp_dir() / "y").string(), "--subjects", "5",
                    "--split-spec", "1,1,1"})
          == 2);
    CHECK(cli::run({"gen-data"}) == 2);  // missing --out
}

TEST_CASE("train --epochs 0 writes an initial checkpoint, exit 0") {
    Checkpoint ck = load_checkpoint(shared_ckpt());
    CHECK(ck.epoch == 0);
    CHECK(ck.config.mode == TrainMode::normal);
}

TEST_CASE("train records fixed-template mode in the checkpoint") {
    fs::path ck_path = temp_dir() / "ft.ckpt";
    REQUIRE(cli::run({"train", "--data", shared_data_dir().string(), "--out", ck_path.string(),
                      "--epochs", "0", "--fixed-template"})
            == 0);
    Checkpoint ck = load_checkpoint(ck_path);
    CHECK(ck.config.mode == TrainMode::fixed_template);
}

TEST_CASE("train with corrupt manifest exits 3") {
    fs::path dir = temp_dir() / "bad";
    fs::create_directories(dir);
    std::ofstream(dir / "manifest.json") << "{ not json";
    CHECK(cli::run({"train", "--data", dir.string(), "--out", (dir / "o.ckpt").string()}) == 3);
    CHECK(cli::run({"train", "--data", (dir / "missing").string(), "--out",
                    (dir / "o.ckpt").string()})
          == 3);
}

TEST_CASE("complete round-trips the reconstruction and writes the csv") {
    fs::path dir = temp_dir();
    const fs::path part = shared_data_dir() / "proj" / "subject_003_pose_001_view_00.ply";
    const fs::path full = shared_data_dir() / "posed" / "subject_003_pose_000.ply";
    const fs::path rec = dir / "rec.ply";
    const fs::path corr = dir / "corr.csv";

    REQUIRE(cli::run({"complete", "--part", part.string(), "--full", full.string(), "--ckpt",
                      shared_ckpt().string(), "--out", rec.string(), "--correspondence",
                      corr.string()})
            == 0);

    TriMesh full_mesh = read_ply(full);
    TriMesh rec_mesh = read_ply(rec);
    CHECK(rec_mesh.vertex_count() == full_mesh.vertex_count());
    CHECK(rec_mesh.faces == full_mesh.faces);

    // writing and re-reading the reconstruction is lossless
    fs::path again = dir / "rec2.ply";
    write_ply(again, rec_mesh);
    TriMesh round = read_ply(again);
    for (std::size_t i = 0; i < rec_mesh.vertex_count(); ++i)
        CHECK(round.vertices.positions[i] == rec_mesh.vertices.positions[i]);

    // correspondence rows match |P| and index into Q
    Correspondence c = read_correspondence_csv(corr);
    TriMesh part_mesh = read_ply(part);
    CHECK(c.target_indices.size() == part_mesh.vertex_count());
    for (int idx : c.target_indices) {
        CHECK(idx >= 0);
        CHECK(idx < static_cast<int>(full_mesh.vertex_count()));
    }
}

TEST_CASE("complete estimates normals for a raw point cloud part") {
    fs::path dir = temp_dir();
    // strip the normals off a projection
    TriMesh part = read_ply(shared_data_dir() / "proj" / "subject_003_pose_001_view_00.ply");
    part.vertices.normals.clear();
    fs::path raw = dir / "raw.ply";
    write_ply(raw, part);
    const fs::path full = shared_data_dir() / "posed" / "subject_003_pose_000.ply";

    REQUIRE(cli::run({"complete", "--part", raw.string(), "--full", full.string(), "--ckpt",
                      shared_ckpt().string(), "--out", (dir / "rec.ply").string(), "--viewpoint",
                      "2,0,0"})
            == 0);
    CHECK(fs::exists(dir / "rec.ply"));
}

TEST_CASE("complete rejects malformed mesh files with exit 4") {
    fs::path dir = temp_dir();
    std::ofstream(dir / "junk.ply") << "not a ply\n";
    CHECK(cli::run({"complete", "--part", (dir / "junk.ply").string(), "--full",
                    (dir / "junk.ply").string(), "--ckpt", shared_ckpt().string(), "--out",
                    (dir / "o.ply").string()})
          == 4);
}

TEST_CASE("complete refuses a fixed-template checkpoint in normal mode") {
    fs::path dir = temp_dir();
    fs::path ft_ckpt = dir / "ft.ckpt";
    REQUIRE(cli::run({"train", "--data", shared_data_dir().string(), "--out", ft_ckpt.string(),
                      "--epochs", "0", "--fixed-template"})
            == 0);
    const fs::path part = shared_data_dir() / "proj" / "subject_003_pose_001_view_00.ply";
    const fs::path full = shared_data_dir() / "posed" / "subject_003_pose_000.ply";
    CHECK(cli::run({"complete", "--part", part.string(), "--full", full.string(), "--ckpt",
                    ft_ckpt.string(), "--out", (dir / "o.ply").string()})
          == 3);
    // and the matching invocation works, using the checkpoint's template
    CHECK(cli::run({"complete", "--part", part.string(), "--fixed-template", "--ckpt",
                    ft_ckpt.string(), "--out", (dir / "o.ply").string()})
          == 0);
}

TEST_CASE("eval oracle mode emits all-zero rows with the pinned header") {
    fs::path dir = temp_dir();
    fs::path out = dir / "metrics.csv";
    REQUIRE(cli::run({"eval", "--data", shared_data_dir().string(), "--ckpt",
                      shared_ckpt().string(), "--out", out.string(), "--oracle"})
            == 0);
    std::ifstream in(out);
    std::string header;
    std::getline(in, header);
    CHECK(header == "sample_id,euclidean,chamfer_gt2rec,chamfer_rec2gt,chamfer_full,vol_err");
    std::string line;
    int rows = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ++rows;
        auto first_comma = line.find(',');
        CHECK(line.substr(first_comma) == ",0,0,0,0,0");
    }
    CHECK(rows == 1 * 3 * 2);  // test subjects x poses x views
}

TEST_CASE("eval aggregate means equal the hand-average of the csv rows") {
    fs::path dir = temp_dir();
    fs::path out = dir / "metrics.csv";
    REQUIRE(cli::run({"eval", "--data", shared_data_dir().string(), "--ckpt",
                      shared_ckpt().string(), "--out", out.string(), "--limit", "4"})
            == 0);
    std::ifstream in(out);
    std::string line;
    std::getline(in, line);  // header
    std::vector<double> euclidean;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto c1 = line.find(',');
        auto c2 = line.find(',', c1 + 1);
        euclidean.push_back(std::stod(line.substr(c1 + 1, c2 - c1 - 1)));
    }
    REQUIRE(euclidean.size() == 4);
    double mean = 0;
    for (double v : euclidean) mean += v;
    mean /= static_cast<double>(euclidean.size());
    Aggregate agg = aggregate(euclidean);
    CHECK(agg.mean == doctest::Approx(mean).epsilon(1e-12));
}

TEST_CASE("eval robustness sweep writes the sweep csv") {
    fs::path dir = temp_dir();
    fs::path out = dir / "noise.csv";
    REQUIRE(cli::run({"eval", "--data", shared_data_dir().string(), "--ckpt",
                      shared_ckpt().string(), "--out", out.string(), "--robustness", "noise",
                      "--limit", "2"})
            == 0);
    std::string csv = slurp(out);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);
    CHECK(cli::run({"eval", "--data", shared_data_dir().string(), "--ckpt",
                    shared_ckpt().string(), "--out", out.string(), "--robustness", "bogus"})
          == 3);
}

TEST_CASE("corrupt checkpoint file exits 4") {
    fs::path dir = temp_dir();
    std::ofstream(dir / "bad.ckpt") << "XXXXGARBAGE";
    CHECK(cli::run({"eval", "--data", shared_data_dir().string(), "--ckpt",
                    (dir / "bad.ckpt").string(), "--out", (dir / "m.csv").string()})
          == 4);
}
