#include "nrsc/meshio.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include "nrsc/errors.hpp"

namespace nrsc {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void fail(const fs::path& path, int line, const std::string& msg) {
    throw FileFormatError(path.string() + ":" + std::to_string(line) + ": " + msg);
}

struct LineReader {
    std::istream& in;
    const fs::path& path;
    int line = 0;

    // next non-empty line; false on EOF
    bool next(std::string& out) {
        while (std::getline(in, out)) {
            ++line;
            if (!out.empty() && out.back() == '\r') out.pop_back();
            if (out.find_first_not_of(" \t") != std::string::npos) return true;
        }
        return false;
    }

    std::string require(const std::string& what) {
        std::string s;
        if (!next(s)) fail(path, line, "unexpected end of file, expected " + what);
        return s;
    }
};

std::vector<std::string> tokens_of(const std::string& s) {
    std::vector<std::string> toks;
    std::istringstream iss(s);
    std::string t;
    while (iss >> t) toks.push_back(t);
    return toks;
}

double parse_coord(const fs::path& path, int line, const std::string& tok) {
    try {
        std::size_t used = 0;
        double v = std::stod(tok, &used);
        if (used != tok.size()) fail(path, line, "bad number '" + tok + "'");
        if (!std::isfinite(v)) fail(path, line, "non-finite coordinate '" + tok + "'");
        return v;
    } catch (const FileFormatError&) {
        throw;
    } catch (const std::exception&) {
        fail(path, line, "bad number '" + tok + "'");
    }
}

long parse_int(const fs::path& path, int line, const std::string& tok) {
    long v = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size())
        fail(path, line, "bad integer '" + tok + "'");
    return v;
}

void read_faces_block(LineReader& r, long face_count, long vertex_count, bool counted_rows,
                      std::vector<std::array<int, 3>>& faces) {
    for (long f = 0; f < face_count; ++f) {
        auto toks = tokens_of(r.require("face row"));
        std::size_t at = 0;
        long n = counted_rows ? parse_int(r.path, r.line, toks[at++]) : 3;
        if (n != 3) fail(r.path, r.line, "only triangular faces are supported");
        if (toks.size() != at + 3) fail(r.path, r.line, "expected 3 vertex indices");
        std::array<int, 3> face{};
        for (int i = 0; i < 3; ++i) {
            long idx = parse_int(r.path, r.line, toks[at + i]);
            if (idx < 0 || idx >= vertex_count)
                fail(r.path, r.line, "vertex index " + std::to_string(idx) + " out of range [0, "
                                         + std::to_string(vertex_count) + ")");
            face[i] = static_cast<int>(idx);
        }
        if (face[0] == face[1] || face[1] == face[2] || face[0] == face[2])
            fail(r.path, r.line, "face repeats a vertex index");
        faces.push_back(face);
    }
}

}  // namespace

TriMesh read_ply(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw FileFormatError(path.string() + ": cannot open");
    LineReader r{in, path};

    if (r.require("ply magic") != "ply") fail(path, r.line, "not a PLY file (missing 'ply')");
    if (tokens_of(r.require("format line")) != std::vector<std::string>{"format", "ascii", "1.0"})
        fail(path, r.line, "only 'format ascii 1.0' is supported");

    long vertex_count = -1, face_count = 0;
    bool has_normals = false;
    std::vector<std::string> vertex_props;
    std::string current_element;

    for (;;) {
        std::string line = r.require("header line");
        auto toks = tokens_of(line);
        if (toks[0] == "comment") continue;
        if (toks[0] == "end_header") break;
        if (toks[0] == "element") {
            if (toks.size() != 3) fail(path, r.line, "malformed element line");
            current_element = toks[1];
            long count = parse_int(path, r.line, toks[2]);
            if (count < 0) fail(path, r.line, "negative element count");
            if (toks[1] == "vertex") vertex_count = count;
            else if (toks[1] == "face") face_count = count;
            else fail(path, r.line, "unsupported element '" + toks[1] + "'");
            continue;
        }
        if (toks[0] == "property") {
            if (current_element == "vertex") {
                if (toks.size() != 3) fail(path, r.line, "malformed vertex property");
                static const std::vector<std::string> kFloatTypes = {"float", "float32", "double",
                                                                     "float64"};
                if (std::find(kFloatTypes.begin(), kFloatTypes.end(), toks[1]) == kFloatTypes.end())
                    fail(path, r.line, "vertex property type must be float/double");
                vertex_props.push_back(toks[2]);
            } else if (current_element == "face") {
                if (toks.size() != 5 || toks[1] != "list" || toks[4] != "vertex_indices")
                    fail(path, r.line, "face element needs 'property list <t> <t> vertex_indices'");
            } else {
                fail(path, r.line, "property outside an element");
            }
            continue;
        }
        fail(path, r.line, "unexpected header line '" + toks[0] + "'");
    }

    if (vertex_count < 0) fail(path, r.line, "missing 'element vertex'");
    if (vertex_props == std::vector<std::string>{"x", "y", "z"}) {
        has_normals = false;
    } else if (vertex_props == std::vector<std::string>{"x", "y", "z", "nx", "ny", "nz"}) {
        has_normals = true;
    } else {
        fail(path, r.line, "vertex properties must be x,y,z or x,y,z,nx,ny,nz");
    }

    TriMesh mesh;
    mesh.vertices.positions.reserve(vertex_count);
    for (long v = 0; v < vertex_count; ++v) {
        auto toks = tokens_of(r.require("vertex row"));
        const std::size_t want = has_normals ? 6 : 3;
        if (toks.size() != want) fail(path, r.line, "expected " + std::to_string(want) + " values");
        Vec3 p(parse_coord(path, r.line, toks[0]), parse_coord(path, r.line, toks[1]),
               parse_coord(path, r.line, toks[2]));
        mesh.vertices.positions.push_back(p);
        if (has_normals) {
            Vec3 n(parse_coord(path, r.line, toks[3]), parse_coord(path, r.line, toks[4]),
                   parse_coord(path, r.line, toks[5]));
            mesh.vertices.normals.push_back(n);
        }
    }
    read_faces_block(r, face_count, vertex_count, true, mesh.faces);
    return mesh;
}

TriMesh read_off(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw FileFormatError(path.string() + ": cannot open");
    LineReader r{in, path};

    if (r.require("OFF magic") != "OFF") fail(path, r.line, "not an OFF file (missing 'OFF')");
    auto counts = tokens_of(r.require("counts line"));
    if (counts.size() != 3) fail(path, r.line, "counts line must be 'V F E'");
    long vertex_count = parse_int(path, r.line, counts[0]);
    long face_count = parse_int(path, r.line, counts[1]);
    if (vertex_count < 0 || face_count < 0) fail(path, r.line, "negative counts");

    TriMesh mesh;
    mesh.vertices.positions.reserve(vertex_count);
    for (long v = 0; v < vertex_count; ++v) {
        auto toks = tokens_of(r.require("vertex row"));
        if (toks.size() != 3) fail(path, r.line, "expected 3 coordinates");
        mesh.vertices.positions.emplace_back(parse_coord(path, r.line, toks[0]),
                                             parse_coord(path, r.line, toks[1]),
                                             parse_coord(path, r.line, toks[2]));
    }
    read_faces_block(r, face_count, vertex_count, true, mesh.faces);
    return mesh;
}

TriMesh read_mesh(const fs::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    if (ext == ".ply") return read_ply(path);
    if (ext == ".off") return read_off(path);
    throw FileFormatError(path.string() + ": unknown mesh extension '" + ext + "'");
}

namespace {

// Shortest decimal form that parses back to the same double.
std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    double back = 0;
    std::sscanf(buf, "%lf", &back);
    if (back == v) {
        char trial[40];
        for (int prec = 1; prec < 17; ++prec) {
            std::snprintf(trial, sizeof(trial), "%.*g", prec, v);
            std::sscanf(trial, "%lf", &back);
            if (back == v) return trial;
        }
    }
    return buf;
}

std::string ply_text(const PointCloud& cloud, const std::vector<std::array<int, 3>>& faces) {
    std::string out;
    out.reserve(cloud.size() * 48 + faces.size() * 16 + 256);
    out += "ply\nformat ascii 1.0\nelement vertex " + std::to_string(cloud.size()) + "\n";
    out += "property double x\nproperty double y\nproperty double z\n";
    const bool normals = cloud.has_normals();
    if (normals) out += "property double nx\nproperty double ny\nproperty double nz\n";
    out += "element face " + std::to_string(faces.size()) + "\n";
    out += "property list uchar int vertex_indices\nend_header\n";
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Vec3& p = cloud.positions[i];
        out += format_double(p.x()) + " " + format_double(p.y()) + " " + format_double(p.z());
        if (normals) {
            const Vec3& n = cloud.normals[i];
            out += " " + format_double(n.x()) + " " + format_double(n.y()) + " "
                   + format_double(n.z());
        }
        out += "\n";
    }
    for (const auto& f : faces) {
        out += "3 " + std::to_string(f[0]) + " " + std::to_string(f[1]) + " "
               + std::to_string(f[2]) + "\n";
    }
    return out;
}

}  // namespace

void atomic_write_text(const fs::path& path, const std::string& content) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out << content;
        if (!out) throw std::runtime_error("short write to " + tmp.string());
    }
    fs::rename(tmp, path);
}

void write_ply(const fs::path& path, const TriMesh& mesh) {
    atomic_write_text(path, ply_text(mesh.vertices, mesh.faces));
}

void write_ply(const fs::path& path, const PointCloud& cloud) {
    atomic_write_text(path, ply_text(cloud, {}));
}

void write_off(const fs::path& path, const TriMesh& mesh) {
    std::string out = "OFF\n";
    out += std::to_string(mesh.vertex_count()) + " " + std::to_string(mesh.face_count()) + " 0\n";
    for (const Vec3& p : mesh.vertices.positions)
        out += format_double(p.x()) + " " + format_double(p.y()) + " " + format_double(p.z())
               + "\n";
    for (const auto& f : mesh.faces)
        out += "3 " + std::to_string(f[0]) + " " + std::to_string(f[1]) + " "
               + std::to_string(f[2]) + "\n";
    atomic_write_text(path, out);
}

void write_correspondence_csv(const fs::path& path, const Correspondence& corr) {
    std::string out = "part_index,full_index\n";
    for (std::size_t i = 0; i < corr.target_indices.size(); ++i)
        out += std::to_string(i) + "," + std::to_string(corr.target_indices[i]) + "\n";
    atomic_write_text(path, out);
}

Correspondence read_correspondence_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw FileFormatError(path.string() + ": cannot open");
    LineReader r{in, path};
    if (r.require("csv header") != "part_index,full_index")
        fail(path, r.line, "expected header 'part_index,full_index'");
    Correspondence corr;
    std::string line;
    while (r.next(line)) {
        auto comma = line.find(',');
        if (comma == std::string::npos) fail(path, r.line, "expected 'part,full'");
        long part = parse_int(path, r.line, line.substr(0, comma));
        long full = parse_int(path, r.line, line.substr(comma + 1));
        if (part != static_cast<long>(corr.target_indices.size()))
            fail(path, r.line, "part_index rows must be consecutive from 0");
        corr.target_indices.push_back(static_cast<int>(full));
    }
    corr.source_size = static_cast<int>(corr.target_indices.size());
    return corr;
}

}  // namespace nrsc
