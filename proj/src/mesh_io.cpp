#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "spherereg/mesh.hpp"

namespace spherereg::mesh {

void TriangleMesh::validate() const {
    const int n = static_cast<int>(vertices.size());
    for (const auto& v : vertices) {
        require(v.allFinite(), "mesh vertex is not finite");
    }
    for (const auto& t : triangles) {
        require(t[0] >= 0 && t[0] < n && t[1] >= 0 && t[1] < n && t[2] >= 0 && t[2] < n,
                "triangle index out of range");
        require(t[0] != t[1] && t[1] != t[2] && t[0] != t[2],
                "triangle with repeated vertices");
    }
}

double TriangleMesh::surface_area() const {
    double area = 0.0;
    for (const auto& t : triangles) {
        const Vec3 e1 = vertices[t[1]] - vertices[t[0]];
        const Vec3 e2 = vertices[t[2]] - vertices[t[0]];
        area += 0.5 * e1.cross(e2).norm();
    }
    return area;
}

namespace {

[[noreturn]] void parse_fail(const std::string& path, int line, const std::string& what) {
    raise(ErrorCode::ParseError, path + ":" + std::to_string(line) + ": " + what);
}

bool has_suffix(const std::string& s, const std::string& suffix) {
    if (s.size() < suffix.size()) return false;
    for (std::size_t i = 0; i < suffix.size(); ++i) {
        if (std::tolower(s[s.size() - suffix.size() + i]) != suffix[i]) return false;
    }
    return true;
}

TriangleMesh load_ply(std::istream& in, const std::string& path) {
    std::string line;
    int line_no = 0;
    auto next_line = [&]() -> bool {
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (!line.empty()) return true;
        }
        return false;
    };

    if (!next_line() || line != "ply") parse_fail(path, line_no, "missing 'ply' magic");

    long vertex_count = -1, face_count = -1;
    int vertex_props = 0;
    std::string element;
    bool in_header = true;
    std::array<int, 3> xyz_index = {-1, -1, -1};
    while (in_header) {
        if (!next_line()) parse_fail(path, line_no, "unterminated header");
        std::istringstream ls(line);
        std::string keyword;
        ls >> keyword;
        if (keyword == "comment") continue;
        if (keyword == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt != "ascii") {
                raise(ErrorCode::UnsupportedFormat, path + ": only ASCII PLY supported");
            }
        } else if (keyword == "element") {
            long count = 0;
            ls >> element >> count;
            if (element == "vertex") vertex_count = count;
            else if (element == "face") face_count = count;
        } else if (keyword == "property") {
            if (element == "vertex") {
                std::string type, name;
                ls >> type;
                if (type == "list") ls >> name >> name;  // skip list types
                ls >> name;
                if (name == "x") xyz_index[0] = vertex_props;
                if (name == "y") xyz_index[1] = vertex_props;
                if (name == "z") xyz_index[2] = vertex_props;
                ++vertex_props;
            }
        } else if (keyword == "end_header") {
            in_header = false;
        } else if (keyword != "obj_info") {
            parse_fail(path, line_no, "unknown header keyword '" + keyword + "'");
        }
    }
    if (vertex_count < 0) parse_fail(path, line_no, "no vertex element");
    if (xyz_index[0] < 0 || xyz_index[1] < 0 || xyz_index[2] < 0) {
        parse_fail(path, line_no, "vertex element lacks x/y/z properties");
    }

    TriangleMesh mesh;
    mesh.vertices.reserve(static_cast<std::size_t>(vertex_count));
    for (long i = 0; i < vertex_count; ++i) {
        if (!next_line()) parse_fail(path, line_no, "truncated vertex list");
        std::istringstream ls(line);
        std::vector<double> values;
        double v = 0.0;
        while (ls >> v) values.push_back(v);
        if (static_cast<int>(values.size()) < vertex_props) {
            parse_fail(path, line_no, "short vertex line");
        }
        mesh.vertices.emplace_back(values[xyz_index[0]], values[xyz_index[1]],
                                   values[xyz_index[2]]);
    }
    for (long i = 0; i < std::max(face_count, 0L); ++i) {
        if (!next_line()) parse_fail(path, line_no, "truncated face list");
        std::istringstream ls(line);
        int n = 0;
        if (!(ls >> n) || n < 3) parse_fail(path, line_no, "bad face arity");
        std::vector<int> idx(n);
        for (int k = 0; k < n; ++k) {
            if (!(ls >> idx[k])) parse_fail(path, line_no, "short face line");
        }
        for (int k = 2; k < n; ++k) {  // fan-triangulate polygons
            mesh.triangles.push_back({idx[0], idx[k - 1], idx[k]});
        }
    }
    mesh.validate();
    return mesh;
}

TriangleMesh load_obj(std::istream& in, const std::string& path) {
    TriangleMesh mesh;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string keyword;
        ls >> keyword;
        if (keyword == "v") {
            double x = 0, y = 0, z = 0;
            if (!(ls >> x >> y >> z)) parse_fail(path, line_no, "bad vertex line");
            mesh.vertices.emplace_back(x, y, z);
        } else if (keyword == "f") {
            std::vector<int> idx;
            std::string token;
            while (ls >> token) {
                // "i", "i/t", "i//n", "i/t/n" forms; we keep the position index.
                const std::size_t slash = token.find('/');
                const std::string head = token.substr(0, slash);
                int value = 0;
                const auto [ptr, ec] =
                    std::from_chars(head.data(), head.data() + head.size(), value);
                if (ec != std::errc() || ptr != head.data() + head.size() || value == 0) {
                    parse_fail(path, line_no, "bad face index '" + token + "'");
                }
                // OBJ indices are 1-based; negative indices count from the end.
                idx.push_back(value > 0 ? value - 1
                                        : static_cast<int>(mesh.vertices.size()) + value);
            }
            if (idx.size() < 3) parse_fail(path, line_no, "face with fewer than 3 vertices");
            for (std::size_t k = 2; k < idx.size(); ++k) {
                mesh.triangles.push_back({idx[0], idx[k - 1], idx[k]});
            }
        }
        // Other keywords (vn, vt, usemtl, ...) are ignored.
    }
    if (mesh.vertices.empty()) parse_fail(path, line_no, "no vertices found");
    mesh.validate();
    return mesh;
}

}  // namespace

TriangleMesh load_mesh(const std::string& path) {
    std::ifstream in(path);
    if (!in) raise(ErrorCode::Io, "cannot open " + path);
    if (has_suffix(path, ".ply")) return load_ply(in, path);
    if (has_suffix(path, ".obj")) return load_obj(in, path);
    // Sniff: PLY files start with 'ply'.
    std::string magic;
    in >> magic;
    in.seekg(0);
    if (magic == "ply") return load_ply(in, path);
    raise(ErrorCode::UnsupportedFormat, path + ": expected .ply or .obj");
}

void save_mesh(const TriangleMesh& mesh, const std::string& path) {
    std::ofstream out(path);
    if (!out) raise(ErrorCode::Io, "cannot write " + path);
    char buffer[96];
    if (has_suffix(path, ".obj")) {
        out << "# spherereg mesh\n";
        for (const auto& v : mesh.vertices) {
            std::snprintf(buffer, sizeof buffer, "v %.9g %.9g %.9g\n", v.x(), v.y(), v.z());
            out << buffer;
        }
        for (const auto& t : mesh.triangles) {
            out << "f " << t[0] + 1 << " " << t[1] + 1 << " " << t[2] + 1 << "\n";
        }
    } else {
        out << "ply\nformat ascii 1.0\n";
        out << "element vertex " << mesh.vertices.size() << "\n";
        out << "property double x\nproperty double y\nproperty double z\n";
        out << "element face " << mesh.triangles.size() << "\n";
        out << "property list uchar int vertex_indices\nend_header\n";
        for (const auto& v : mesh.vertices) {
            std::snprintf(buffer, sizeof buffer, "%.9g %.9g %.9g\n", v.x(), v.y(), v.z());
            out << buffer;
        }
        for (const auto& t : mesh.triangles) {
            out << "3 " << t[0] << " " << t[1] << " " << t[2] << "\n";
        }
    }
    if (!out) raise(ErrorCode::Io, "write failed for " + path);
}

}  // namespace spherereg::mesh
