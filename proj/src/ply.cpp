#include "gdistill/ply.hpp"

#include <fmt/format.h>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "gdistill/errors.hpp"

namespace gdistill {
namespace {

static_assert(std::endian::native == std::endian::little, "PLY writer assumes a little-endian host");

constexpr std::array<const char*, 14> kProperties = {"x",     "y",     "z",  "log_sx", "log_sy",
                                                     "log_sz", "qw",    "qx", "qy",     "qz",
                                                     "opacity_logit", "r", "g", "b"};
constexpr std::size_t kFloatsPerVertex = kProperties.size();

} // namespace

void export_ply(const GaussianScene& scene, const std::filesystem::path& path) {
    std::ostringstream header;
    header << "ply\n"
           << "format binary_little_endian 1.0\n"
           << "comment " << kPlyFormatTag << "\n"
           << "element vertex " << scene.size() << "\n";
    for (const char* name : kProperties) header << "property float " << name << "\n";
    header << "end_header\n";

    std::vector<float> body;
    body.reserve(scene.size() * kFloatsPerVertex);
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const auto& p = scene.positions[i];
        const auto& s = scene.log_scales[i];
        const auto& q = scene.rotations[i];
        const auto& c = scene.colors[i];
        body.insert(body.end(), {p.x(), p.y(), p.z(), s.x(), s.y(), s.z(), q[0], q[1], q[2], q[3],
                                 scene.opacity_logits[i], c.x(), c.y(), c.z()});
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
    const std::string h = header.str();
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    out.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size() * sizeof(float)));
    out.flush();
    if (!out) throw IoError(fmt::format("write to '{}' failed", path.string()));
}

GaussianScene import_ply(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot open '{}' for reading", path.string()));

    auto fail = [&](const std::string& why) {
        return IoError(fmt::format("malformed PLY '{}': {}", path.string(), why));
    };

    std::string line;
    if (!std::getline(in, line) || line != "ply") throw fail("missing 'ply' magic");
    if (!std::getline(in, line) || line != "format binary_little_endian 1.0") {
        throw fail("expected 'format binary_little_endian 1.0'");
    }

    bool have_count = false;
    std::size_t count = 0;
    std::size_t prop_index = 0;
    bool in_vertex = false;
    bool ended = false;
    int header_lines = 0;
    while (std::getline(in, line)) {
        if (++header_lines > 256) throw fail("header too long");
        if (line == "end_header") {
            ended = true;
            break;
        }
        std::istringstream ls(line);
        std::string keyword;
        ls >> keyword;
        if (keyword == "comment" || keyword == "obj_info") continue;
        if (keyword == "element") {
            std::string name;
            long long n = -1;
            ls >> name >> n;
            if (name != "vertex" || have_count) throw fail("unexpected element '" + name + "'");
            if (!ls || n < 0) throw fail("bad vertex count");
            count = static_cast<std::size_t>(n);
            have_count = true;
            in_vertex = true;
        } else if (keyword == "property") {
            std::string type, name;
            ls >> type >> name;
            if (!in_vertex) throw fail("property before element");
            if (prop_index >= kFloatsPerVertex) throw fail("too many vertex properties");
            if (type != "float" || name != kProperties[prop_index]) {
                throw fail(fmt::format("property {} must be 'float {}', got '{} {}'", prop_index,
                                       kProperties[prop_index], type, name));
            }
            ++prop_index;
        } else {
            throw fail("unknown header line '" + line + "'");
        }
    }
    if (!ended) throw fail("missing end_header");
    if (!have_count) throw fail("missing vertex element");
    if (prop_index != kFloatsPerVertex) throw fail("incomplete vertex property list");

    const auto body_start = in.tellg();
    in.seekg(0, std::ios::end);
    const auto body_bytes = static_cast<std::size_t>(in.tellg() - body_start);
    in.seekg(body_start);
    constexpr std::size_t vertex_bytes = kFloatsPerVertex * sizeof(float);
    if (count > body_bytes / vertex_bytes) {
        throw fail(fmt::format("truncated data at vertex {} of {}", body_bytes / vertex_bytes, count));
    }
    if (body_bytes != count * vertex_bytes) {
        throw fail(fmt::format("{} trailing bytes after vertex {}", body_bytes - count * vertex_bytes, count));
    }

    std::vector<float> body(count * kFloatsPerVertex);
    in.read(reinterpret_cast<char*>(body.data()), static_cast<std::streamsize>(body.size() * sizeof(float)));
    if (!in && count > 0) throw fail("short read");

    GaussianScene scene;
    scene.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        const float* v = body.data() + i * kFloatsPerVertex;
        for (std::size_t k = 0; k < kFloatsPerVertex; ++k) {
            if (!std::isfinite(v[k])) {
                throw fail(fmt::format("vertex {} property '{}' is not finite", i, kProperties[k]));
            }
        }
        scene.positions[i] = Vec3<float>(v[0], v[1], v[2]);
        scene.log_scales[i] = Vec3<float>(v[3], v[4], v[5]);
        scene.rotations[i] = Quat<float>(v[6], v[7], v[8], v[9]);
        scene.opacity_logits[i] = v[10];
        scene.colors[i] = Vec3<float>(v[11], v[12], v[13]);
    }
    return scene;
}

} // namespace gdistill
