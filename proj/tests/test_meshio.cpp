#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "nrsc/meshio.hpp"
#include "nrsc/train.hpp"

using namespace nrsc;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    static int counter = 0;
    fs::path dir = fs::temp_directory_path() / ("nrsc_meshio_" + std::to_string(counter++));
    fs::create_directories(dir);
    return dir;
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

TriMesh random_mesh(int n, std::uint64_t seed, bool with_normals) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1, 1);
    TriMesh m;
    for (int i = 0; i < n; ++i) m.vertices.positions.emplace_back(u(rng), u(rng), u(rng));
    if (with_normals)
        for (int i = 0; i < n; ++i)
            m.vertices.normals.push_back(Vec3(u(rng), u(rng), u(rng)).normalized());
    for (int i = 0; i + 2 < n; i += 3) m.faces.push_back({i, i + 1, i + 2});
    return m;
}

}  // namespace

TEST_CASE("ply round trip is bit exact") {
    fs::path dir = temp_dir();
    TriMesh m = random_mesh(31, 5, true);
    write_ply(dir / "m.ply", m);
    TriMesh back = read_ply(dir / "m.ply");
    REQUIRE(back.vertex_count() == m.vertex_count());
    REQUIRE(back.faces == m.faces);
    for (std::size_t i = 0; i < m.vertex_count(); ++i) {
        CHECK(back.vertices.positions[i] == m.vertices.positions[i]);
        CHECK(back.vertices.normals[i] == m.vertices.normals[i]);
    }
}

TEST_CASE("off round trip preserves vertices") {
    fs::path dir = temp_dir();
    TriMesh m = random_mesh(12, 6, false);
    write_off(dir / "m.off", m);
    TriMesh back = read_off(dir / "m.off");
    REQUIRE(back.vertex_count() == m.vertex_count());
    CHECK(back.faces == m.faces);
    for (std::size_t i = 0; i < m.vertex_count(); ++i)
        CHECK(back.vertices.positions[i] == m.vertices.positions[i]);
}

TEST_CASE("read_mesh dispatches on extension") {
    fs::path dir = temp_dir();
    TriMesh m = random_mesh(9, 7, false);
    write_ply(dir / "a.ply", m);
    write_off(dir / "a.off", m);
    CHECK(read_mesh(dir / "a.ply").vertex_count() == 9);
    CHECK(read_mesh(dir / "a.off").vertex_count() == 9);
    CHECK_THROWS_AS(read_mesh(dir / "a.obj"), FileFormatError);
}

TEST_CASE("ply parser rejects NaN with line diagnostics") {
    fs::path dir = temp_dir();
    write_file(dir / "nan.ply",
               "ply\nformat ascii 1.0\nelement vertex 1\n"
               "property float x\nproperty float y\nproperty float z\n"
               "element face 0\nproperty list uchar int vertex_indices\nend_header\n"
               "0 nan 0\n");
    try {
        read_ply(dir / "nan.ply");
        FAIL("expected FileFormatError");
    } catch (const FileFormatError& e) {
        std::string msg = e.what();
        CHECK(msg.find("nan.ply:10") != std::string::npos);
        CHECK(msg.find("non-finite") != std::string::npos);
    }
}

TEST_CASE("ply parser rejects out-of-range face indices with diagnostics") {
    fs::path dir = temp_dir();
    write_file(dir / "idx.ply",
               "ply\nformat ascii 1.0\nelement vertex 3\n"
               "property float x\nproperty float y\nproperty float z\n"
               "element face 1\nproperty list uchar int vertex_indices\nend_header\n"
               "0 0 0\n1 0 0\n0 1 0\n3 0 1 7\n");
    try {
        read_ply(dir / "idx.ply");
        FAIL("expected FileFormatError");
    } catch (const FileFormatError& e) {
        std::string msg = e.what();
        CHECK(msg.find("idx.ply:13") != std::string::npos);
        CHECK(msg.find("out of range") != std::string::npos);
    }
}

TEST_CASE("ply parser rejects truncation and non-triangles") {
    fs::path dir = temp_dir();
    write_file(dir / "trunc.ply",
               "ply\nformat ascii 1.0\nelement vertex 2\n"
               "property float x\nproperty float y\nproperty float z\n"
               "element face 0\nproperty list uchar int vertex_indices\nend_header\n"
               "0 0 0\n");
    CHECK_THROWS_AS(read_ply(dir / "trunc.ply"), FileFormatError);

    write_file(dir / "quad.off", "OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n");
    CHECK_THROWS_AS(read_off(dir / "quad.off"), FileFormatError);
}

TEST_CASE("correspondence csv round trip") {
    fs::path dir = temp_dir();
    Correspondence c;
    c.source_size = 4;
    c.target_indices = {5, 0, 2, 9};
    write_correspondence_csv(dir / "c.csv", c);
    Correspondence back = read_correspondence_csv(dir / "c.csv");
    CHECK(back.source_size == 4);
    CHECK(back.target_indices == c.target_indices);

    std::ifstream in(dir / "c.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "part_index,full_index");
}

TEST_CASE("train config parsing") {
    TrainConfig cfg = parse_train_config(
        "batch_size = 4\nlr = 0.01\nepochs = 2\nalpha = 0\nmode = fixed_template\n"
        "template_subject_id = 3\nseed = 17\n# comment\n\ntriplets_per_epoch = 40\n");
    CHECK(cfg.batch_size == 4);
    CHECK(cfg.lr == doctest::Approx(0.01));
    CHECK(cfg.epochs == 2);
    CHECK(cfg.alpha == 0.0);
    CHECK(cfg.mode == TrainMode::fixed_template);
    CHECK(cfg.template_subject_id == 3);
    CHECK(cfg.seed == 17);
    CHECK(cfg.triplets_per_epoch == 40);

    CHECK_THROWS_AS(parse_train_config("unknown_key = 1\n"), FileFormatError);
    CHECK_THROWS_AS(parse_train_config("lr = banana\n"), FileFormatError);
    CHECK_THROWS_AS(parse_train_config("batch_size = 0\n"), InvalidInput);
}

TEST_CASE("atomic_write_text replaces content atomically") {
    fs::path dir = temp_dir();
    atomic_write_text(dir / "f.txt", "one");
    atomic_write_text(dir / "f.txt", "two");
    std::ifstream in(dir / "f.txt");
    std::string s;
    std::getline(in, s);
    CHECK(s == "two");
    CHECK(!fs::exists(dir / "f.txt.tmp"));
}
