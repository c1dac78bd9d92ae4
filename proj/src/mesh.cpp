#include "shrinking/mesh.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "shrinking/errors.hpp"

namespace shrinking {
namespace {

struct Line {
  std::size_t number = 0;
  std::vector<std::string_view> tokens;
};

// Splits into numbered, non-empty lines of whitespace-separated tokens with
// comments removed.
std::vector<Line> tokenize(std::string_view text) {
  std::vector<Line> lines;
  std::size_t number = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++number;
    std::string_view line = text.substr(start, end - start);
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    Line parsed{number, {}};
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
      std::size_t j = i;
      while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
      if (j > i) parsed.tokens.push_back(line.substr(i, j - i));
      i = j;
    }
    if (!parsed.tokens.empty()) lines.push_back(std::move(parsed));
    if (end == text.size()) break;
    start = end + 1;
  }
  return lines;
}

[[noreturn]] void fail(std::size_t line, const std::string& msg) {
  throw DataError("line " + std::to_string(line) + ": " + msg);
}

double to_double(std::string_view tok, std::size_t line) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size() || !std::isfinite(v)) {
    fail(line, "expected a number, got '" + std::string(tok) + "'");
  }
  return v;
}

std::size_t to_count(std::string_view tok, std::size_t line) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    fail(line, "expected a non-negative integer, got '" + std::string(tok) + "'");
  }
  return v;
}

Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }

Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

Vec3 face_cross(const TriangleMesh& mesh, std::size_t face) {
  const auto& f = mesh.faces.at(face);
  const Vec3& a = mesh.vertices[f[0]];
  return cross(sub(mesh.vertices[f[1]], a), sub(mesh.vertices[f[2]], a));
}

}  // namespace

TriangleMesh parse_off(std::string_view text) {
  const std::vector<Line> lines = tokenize(text);
  if (lines.empty()) throw DataError("line 1: empty OFF document");

  const Line& header = lines.front();
  std::string_view keyword = header.tokens.front();
  if (keyword.substr(0, 3) != "OFF") fail(header.number, "missing OFF keyword");

  // counts may follow the keyword on the same line, even without a separator
  std::vector<std::string_view> counts;
  if (keyword.size() > 3) counts.push_back(keyword.substr(3));
  counts.insert(counts.end(), header.tokens.begin() + 1, header.tokens.end());
  std::size_t next = 1;
  std::size_t counts_line = header.number;
  if (counts.empty()) {
    if (lines.size() < 2) fail(header.number + 1, "missing vertex/face counts");
    counts = lines[1].tokens;
    counts_line = lines[1].number;
    next = 2;
  }
  if (counts.size() < 2) fail(counts_line, "counts line needs vertex and face counts");
  const std::size_t nv = to_count(counts[0], counts_line);
  const std::size_t nf = to_count(counts[1], counts_line);

  const std::size_t last_line = lines.back().number;
  if (lines.size() < next + nv + nf) {
    fail(last_line + 1, "file truncated: header promises " + std::to_string(nv) + " vertices and " +
                            std::to_string(nf) + " faces, found " + std::to_string(lines.size() - next) +
                            " data lines");
  }

  TriangleMesh mesh;
  mesh.vertices.reserve(nv);
  for (std::size_t v = 0; v < nv; ++v) {
    const Line& l = lines[next + v];
    if (l.tokens.size() < 3) fail(l.number, "vertex needs 3 coordinates");
    mesh.vertices.push_back({to_double(l.tokens[0], l.number), to_double(l.tokens[1], l.number),
                             to_double(l.tokens[2], l.number)});
  }
  next += nv;
  for (std::size_t f = 0; f < nf; ++f) {
    const Line& l = lines[next + f];
    const std::size_t n = to_count(l.tokens[0], l.number);
    if (n < 3) fail(l.number, "face needs at least 3 vertices, has " + std::to_string(n));
    if (l.tokens.size() < n + 1) fail(l.number, "face declares " + std::to_string(n) + " vertices but lists fewer");
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) {
      idx[i] = to_count(l.tokens[i + 1], l.number);
      if (idx[i] >= nv) {
        fail(l.number, "face index " + std::to_string(idx[i]) + " out of range for " + std::to_string(nv) +
                           " vertices");
      }
    }
    for (std::size_t i = 1; i + 1 < n; ++i) {
      const std::array<std::size_t, 3> tri{idx[0], idx[i], idx[i + 1]};
      if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2]) continue;
      mesh.faces.push_back(tri);
    }
  }
  return mesh;
}

TriangleMesh read_off_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_off(buf.str());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

double triangle_area(const TriangleMesh& mesh, std::size_t face) {
  const Vec3 c = face_cross(mesh, face);
  return 0.5 * std::sqrt(c[0] * c[0] + c[1] * c[1] + c[2] * c[2]);
}

Vec3 face_normal(const TriangleMesh& mesh, std::size_t face) {
  const Vec3 c = face_cross(mesh, face);
  const double len = std::sqrt(c[0] * c[0] + c[1] * c[1] + c[2] * c[2]);
  if (!(len > 0.0) || !std::isfinite(len)) {
    throw DataError("face " + std::to_string(face) + " is degenerate, its normal is undefined");
  }
  return {c[0] / len, c[1] / len, c[2] / len};
}

}  // namespace shrinking
