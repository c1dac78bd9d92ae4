#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string_view>
#include <vector>

namespace shrinking {

using Vec3 = std::array<double, 3>;

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::size_t, 3>> faces;
};

/// Parses an ASCII OFF document. Polygons are fan-triangulated; triangles
/// with a repeated vertex index are dropped. Accepts counts on the OFF line
/// itself ("OFF 8 6 0" or "OFF8 6 0"), '#' comments and blank lines.
/// Errors are DataError messages starting with "line N:".
TriangleMesh parse_off(std::string_view text);

TriangleMesh read_off_file(const std::filesystem::path& path);

double triangle_area(const TriangleMesh& mesh, std::size_t face);

/// Unit normal (right-hand rule on vertex order). Throws DataError for a
/// degenerate face.
Vec3 face_normal(const TriangleMesh& mesh, std::size_t face);

}  // namespace shrinking
