#pragma once

#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "usnav/camera.hpp"
#include "usnav/compound.hpp"
#include "usnav/demons.hpp"
#include "usnav/eval.hpp"
#include "usnav/pointreg.hpp"
#include "usnav/sha256.hpp"

namespace usnav {

// Doubles are written with the shortest representation that parses back to
// the identical value, so text round trips are exact.
inline std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, const std::string& context) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        throw FormatError(context + ": cannot parse number '" + std::string(s) + "'");
    }
    return v;
}

inline long parse_long(std::string_view s, const std::string& context) {
    long v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        throw FormatError(context + ": cannot parse integer '" + std::string(s) + "'");
    }
    return v;
}

namespace io_detail {

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return std::move(ss).str();
}

inline void write_file(const std::string& path, const std::string& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open file for writing: " + path);
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw FormatError("write failed: " + path);
}

struct Cursor {
    const std::string& data;
    std::size_t pos = 0;
    std::string path;

    bool at_end() const { return pos >= data.size(); }

    std::string_view next_line() {
        if (at_end()) throw FormatError(path + ": unexpected end of file");
        const std::size_t start = pos;
        const std::size_t nl = data.find('\n', start);
        std::size_t end;
        if (nl == std::string::npos) {
            end = data.size();
            pos = end;
        } else {
            end = nl;
            pos = nl + 1;
        }
        std::string_view line(data.data() + start, end - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        return line;
    }

    std::string_view raw_bytes(std::size_t expected, const std::string& what) {
        const std::size_t available = data.size() - pos;
        if (available < expected) {
            throw FormatError(path + ": " + what + " length error: expected " +
                              std::to_string(expected) + " bytes, got " +
                              std::to_string(available));
        }
        std::string_view out(data.data() + pos, expected);
        pos += expected;
        return out;
    }
};

inline std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t p = s.find(sep, start);
        if (p == std::string_view::npos) {
            out.push_back(s.substr(start));
            break;
        }
        out.push_back(s.substr(start, p - start));
        start = p + 1;
    }
    return out;
}

inline void expect_line(Cursor& c, std::string_view expected) {
    const auto line = c.next_line();
    if (line != expected) {
        throw FormatError(c.path + ": expected '" + std::string(expected) + "', got '" +
                          std::string(line) + "'");
    }
}

// Parses "key a b c ..." with an exact key and count.
inline std::vector<double> keyed_numbers(Cursor& c, std::string_view key, std::size_t count) {
    const auto line = c.next_line();
    const auto parts = split(line, ' ');
    if (parts.empty() || parts[0] != key || parts.size() != count + 1) {
        throw FormatError(c.path + ": malformed '" + std::string(key) + "' line: '" +
                          std::string(line) + "'");
    }
    std::vector<double> out;
    for (std::size_t i = 1; i < parts.size(); ++i) {
        out.push_back(parse_double(parts[i], c.path));
    }
    return out;
}

inline void append_le_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    out.push_back(static_cast<char>(bits & 0xff));
    out.push_back(static_cast<char>((bits >> 8) & 0xff));
    out.push_back(static_cast<char>((bits >> 16) & 0xff));
    out.push_back(static_cast<char>((bits >> 24) & 0xff));
}

inline float read_le_f32(const char* p) {
    const auto b = [&](int i) {
        return static_cast<std::uint32_t>(static_cast<unsigned char>(p[i]));
    };
    const std::uint32_t bits = b(0) | (b(1) << 8) | (b(2) << 16) | (b(3) << 24);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

inline FrameId parse_frame(std::string_view s, const std::string& context) {
    const auto f = frame_from_string(std::string(s));
    if (!f) throw FormatError(context + ": unknown frame '" + std::string(s) + "'");
    return *f;
}

}  // namespace io_detail

// ---- transform files -------------------------------------------------
// TRANSFORM v1 <kind> <source> <target>, then the row-major matrix, four
// rows (three for PROJECTION) of four decimal floats.

using AnyTransform =
    std::variant<RigidTransform, SimilarityTransform, AffineTransform, ProjectionMatrix>;

namespace io_detail {

inline std::string matrix_rows(const Mat4& m, int rows) {
    std::string out;
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < 4; ++c) {
            if (c) out += ' ';
            out += format_double(m(r, c));
        }
        out += '\n';
    }
    return out;
}

}  // namespace io_detail

inline std::string transform_to_string(const AnyTransform& t) {
    std::string kind;
    Mat4 m = Mat4::Identity();
    FrameId src{}, dst{};
    int rows = 4;
    if (const auto* r = std::get_if<RigidTransform>(&t)) {
        kind = "RIGID";
        m = r->matrix4();
        src = r->source;
        dst = r->target;
    } else if (const auto* s = std::get_if<SimilarityTransform>(&t)) {
        kind = "SIMILARITY";
        m = s->matrix4();
        src = s->source;
        dst = s->target;
    } else if (const auto* a = std::get_if<AffineTransform>(&t)) {
        kind = "AFFINE";
        m = a->matrix4();
        src = a->source;
        dst = a->target;
    } else {
        const auto& p = std::get<ProjectionMatrix>(t);
        kind = "PROJECTION";
        m.topRows<3>() = p.matrix;
        src = p.source;
        dst = p.target;
        rows = 3;
    }
    std::string out = "TRANSFORM v1 " + kind + " " + to_string(src) + " " + to_string(dst) +
                      "\n";
    out += io_detail::matrix_rows(m, rows);
    return out;
}

namespace io_detail {

inline AnyTransform parse_transform(Cursor& c) {
    const auto header = c.next_line();
    const auto parts = split(header, ' ');
    if (parts.size() != 5 || parts[0] != "TRANSFORM" || parts[1] != "v1") {
        throw FormatError(c.path + ": bad transform header '" + std::string(header) + "'");
    }
    const std::string kind(parts[2]);
    const FrameId src = parse_frame(parts[3], c.path);
    const FrameId dst = parse_frame(parts[4], c.path);
    const int rows = kind == "PROJECTION" ? 3 : 4;

    Mat4 m = Mat4::Identity();
    for (int r = 0; r < rows; ++r) {
        const auto line = c.next_line();
        const auto nums = split(line, ' ');
        if (nums.size() != 4) {
            throw FormatError(c.path + ": matrix row must have 4 entries: '" +
                              std::string(line) + "'");
        }
        for (int col = 0; col < 4; ++col) m(r, col) = parse_double(nums[col], c.path);
    }

    if (kind == "RIGID") {
        if ((m.row(3) - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 1e-9) {
            throw FormatError(c.path + ": rigid transform last row must be 0 0 0 1");
        }
        return RigidTransform::make(m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>(), src,
                                    dst);
    }
    if (kind == "SIMILARITY") {
        if ((m.row(3) - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 1e-9) {
            throw FormatError(c.path + ": similarity transform last row must be 0 0 0 1");
        }
        const Mat3 lin = m.topLeftCorner<3, 3>();
        Vec3 scale;
        Mat3 rot;
        for (int col = 0; col < 3; ++col) {
            scale(col) = lin.col(col).norm();
            if (scale(col) <= 0.0) {
                throw FormatError(c.path + ": similarity transform has zero scale column");
            }
            rot.col(col) = lin.col(col) / scale(col);
        }
        return SimilarityTransform::make(scale, rot, m.topRightCorner<3, 1>(), src, dst);
    }
    if (kind == "AFFINE") {
        return AffineTransform::make(m, src, dst);
    }
    if (kind == "PROJECTION") {
        return ProjectionMatrix::make(m.topRows<3>(), src, dst);
    }
    throw FormatError(c.path + ": unknown transform kind '" + kind + "'");
}

}  // namespace io_detail

inline void write_transform(const AnyTransform& t, const std::string& path) {
    io_detail::write_file(path, transform_to_string(t));
}

inline AnyTransform read_transform(const std::string& path) {
    const std::string data = io_detail::read_file(path);
    io_detail::Cursor c{data, 0, path};
    return io_detail::parse_transform(c);
}

inline RigidTransform read_rigid(const std::string& path) {
    auto t = read_transform(path);
    if (auto* r = std::get_if<RigidTransform>(&t)) return *r;
    throw FormatError(path + ": expected a RIGID transform");
}

inline SimilarityTransform read_similarity(const std::string& path) {
    auto t = read_transform(path);
    if (auto* s = std::get_if<SimilarityTransform>(&t)) return *s;
    throw FormatError(path + ": expected a SIMILARITY transform");
}

// RIGID and SIMILARITY files are accepted wherever an affine map is needed.
inline AffineTransform read_affine(const std::string& path) {
    auto t = read_transform(path);
    if (auto* a = std::get_if<AffineTransform>(&t)) return *a;
    if (auto* r = std::get_if<RigidTransform>(&t)) return to_affine(*r);
    if (auto* s = std::get_if<SimilarityTransform>(&t)) return to_affine(*s);
    throw FormatError(path + ": expected an affine-compatible transform");
}

inline ProjectionMatrix read_projection(const std::string& path) {
    auto t = read_transform(path);
    if (auto* p = std::get_if<ProjectionMatrix>(&t)) return *p;
    throw FormatError(path + ": expected a PROJECTION transform");
}

// Stereo rig file: two PROJECTION blocks (left then right) and an
// image_size line.
inline std::string rig_to_string(const StereoRig& rig) {
    return transform_to_string(rig.left) + transform_to_string(rig.right) + "image_size " +
           std::to_string(rig.image_size.x()) + " " + std::to_string(rig.image_size.y()) +
           "\n";
}

inline void write_rig(const StereoRig& rig, const std::string& path) {
    io_detail::write_file(path, rig_to_string(rig));
}

inline StereoRig read_rig(const std::string& path) {
    const std::string data = io_detail::read_file(path);
    io_detail::Cursor c{data, 0, path};
    auto left = io_detail::parse_transform(c);
    auto right = io_detail::parse_transform(c);
    const auto* lp = std::get_if<ProjectionMatrix>(&left);
    const auto* rp = std::get_if<ProjectionMatrix>(&right);
    if (!lp || !rp) throw FormatError(path + ": rig file needs two PROJECTION blocks");
    const auto sz = io_detail::keyed_numbers(c, "image_size", 2);
    return StereoRig::make(*lp, *rp,
                           {static_cast<int>(sz[0]), static_cast<int>(sz[1])});
}

// Pose list: one TRANSFORM v1 block per pose, blank line separated.
inline void write_pose_list(const std::vector<RigidTransform>& poses, const std::string& path) {
    std::string out;
    for (std::size_t i = 0; i < poses.size(); ++i) {
        if (i) out += '\n';
        out += transform_to_string(poses[i]);
    }
    io_detail::write_file(path, out);
}

inline std::vector<RigidTransform> read_pose_list(const std::string& path) {
    const std::string data = io_detail::read_file(path);
    io_detail::Cursor c{data, 0, path};
    std::vector<RigidTransform> poses;
    while (!c.at_end()) {
        // Skip blank separators.
        const std::size_t save = c.pos;
        const auto line = c.next_line();
        if (line.empty()) continue;
        c.pos = save;
        auto t = io_detail::parse_transform(c);
        if (auto* r = std::get_if<RigidTransform>(&t)) {
            poses.push_back(*r);
        } else {
            throw FormatError(path + ": pose list must contain RIGID transforms");
        }
    }
    if (poses.empty()) throw FormatError(path + ": empty pose list");
    return poses;
}

// ---- volume files ------------------------------------------------------
// VOLUME v1 / dims / spacing / origin / dtype / data raw, one empty line,
// then the little-endian payload, x fastest. The filled mask travels as a
// sibling u8 volume at <path>.mask.

namespace io_detail {

inline std::string volume_header(const char* magic, const Eigen::Vector3i& dims,
                                 const Vec3& spacing, const Vec3& origin, const char* dtype) {
    std::string out(magic);
    out += "\ndims " + std::to_string(dims.x()) + " " + std::to_string(dims.y()) + " " +
           std::to_string(dims.z());
    out += "\nspacing " + format_double(spacing.x()) + " " + format_double(spacing.y()) + " " +
           format_double(spacing.z());
    out += "\norigin " + format_double(origin.x()) + " " + format_double(origin.y()) + " " +
           format_double(origin.z());
    out += "\ndtype ";
    out += dtype;
    out += "\ndata raw\n\n";
    return out;
}

struct VolumeHeader {
    Eigen::Vector3i dims;
    Vec3 spacing, origin;
    std::string dtype;
};

inline VolumeHeader parse_volume_header(Cursor& c, const char* magic) {
    expect_line(c, magic);
    VolumeHeader h;
    const auto d = keyed_numbers(c, "dims", 3);
    h.dims = Eigen::Vector3i(static_cast<int>(d[0]), static_cast<int>(d[1]),
                             static_cast<int>(d[2]));
    if ((h.dims.array() < 1).any()) throw FormatError(c.path + ": dims must be >= 1");
    const auto s = keyed_numbers(c, "spacing", 3);
    h.spacing = Vec3(s[0], s[1], s[2]);
    if (!(h.spacing.array() > 0.0).all()) {
        throw FormatError(c.path + ": spacing must be positive");
    }
    const auto o = keyed_numbers(c, "origin", 3);
    h.origin = Vec3(o[0], o[1], o[2]);
    const auto dtype_line = c.next_line();
    const auto dtype_parts = split(dtype_line, ' ');
    if (dtype_parts.size() != 2 || dtype_parts[0] != "dtype") {
        throw FormatError(c.path + ": malformed dtype line");
    }
    h.dtype = std::string(dtype_parts[1]);
    expect_line(c, "data raw");
    expect_line(c, "");
    return h;
}

}  // namespace io_detail

inline std::string volume_to_string(const Volume& v, bool as_mask = false) {
    std::string out = io_detail::volume_header("VOLUME v1", v.dims, v.spacing, v.origin,
                                               as_mask ? "u8" : "f32");
    if (as_mask) {
        out.reserve(out.size() + v.size());
        for (std::uint8_t f : v.filled) out.push_back(static_cast<char>(f ? 1 : 0));
    } else {
        out.reserve(out.size() + 4 * v.size());
        for (float x : v.voxels) io_detail::append_le_f32(out, x);
    }
    return out;
}

inline std::string mask_sibling_path(const std::string& path) { return path + ".mask"; }

inline void write_volume(const Volume& v, const std::string& path, bool with_mask = true) {
    io_detail::write_file(path, volume_to_string(v, false));
    if (with_mask) io_detail::write_file(mask_sibling_path(path), volume_to_string(v, true));
}

inline Volume read_volume(const std::string& path) {
    const std::string data = io_detail::read_file(path);
    io_detail::Cursor c{data, 0, path};
    const auto h = io_detail::parse_volume_header(c, "VOLUME v1");
    const std::size_t n = static_cast<std::size_t>(h.dims.x()) * h.dims.y() * h.dims.z();

    Volume v(h.dims, h.spacing, h.origin);
    if (h.dtype == "f32") {
        const auto payload = c.raw_bytes(4 * n, "volume payload");
        if (c.pos != data.size()) {
            throw FormatError(path + ": volume payload length error: expected " +
                              std::to_string(4 * n) + " bytes, got " +
                              std::to_string(data.size() - (c.pos - 4 * n)));
        }
        for (std::size_t i = 0; i < n; ++i) {
            v.voxels[i] = io_detail::read_le_f32(payload.data() + 4 * i);
        }
    } else if (h.dtype == "u8") {
        const auto payload = c.raw_bytes(n, "volume payload");
        if (c.pos != data.size()) {
            throw FormatError(path + ": volume payload length error: expected " +
                              std::to_string(n) + " bytes, got " +
                              std::to_string(data.size() - (c.pos - n)));
        }
        for (std::size_t i = 0; i < n; ++i) {
            v.voxels[i] = static_cast<float>(static_cast<unsigned char>(payload[i]));
        }
    } else {
        throw FormatError(path + ": unsupported dtype '" + h.dtype + "'");
    }

    std::ifstream mask_probe(mask_sibling_path(path), std::ios::binary);
    if (mask_probe) {
        mask_probe.close();
        const Volume mask = read_volume(mask_sibling_path(path));
        if (mask.dims != v.dims) {
            throw FormatError(path + ": mask sibling has mismatched dims");
        }
        for (std::size_t i = 0; i < n; ++i) {
            v.filled[i] = mask.voxels[i] != 0.0f ? 1 : 0;
        }
    }
    return v;
}

// ---- displacement field files -------------------------------------------

inline std::string field_to_string(const DisplacementField& f) {
    std::string out =
        io_detail::volume_header("FIELD v1", f.dims, f.spacing, f.origin, "f32x3");
    out.reserve(out.size() + 4 * f.data.size());
    for (float x : f.data) io_detail::append_le_f32(out, x);
    return out;
}

inline void write_field(const DisplacementField& f, const std::string& path) {
    io_detail::write_file(path, field_to_string(f));
}

inline DisplacementField read_field(const std::string& path) {
    const std::string data = io_detail::read_file(path);
    io_detail::Cursor c{data, 0, path};
    const auto h = io_detail::parse_volume_header(c, "FIELD v1");
    if (h.dtype != "f32x3") {
        throw FormatError(path + ": field dtype must be f32x3, got '" + h.dtype + "'");
    }
    DisplacementField f(h.dims, h.spacing, h.origin);
    const std::size_t count = f.data.size();
    const auto payload = c.raw_bytes(4 * count, "field payload");
    if (c.pos != data.size()) {
        throw FormatError(path + ": field payload length error");
    }
    for (std::size_t i = 0; i < count; ++i) {
        f.data[i] = io_detail::read_le_f32(payload.data() + 4 * i);
    }
    return f;
}

// ---- tracked sequence files ----------------------------------------------
// SEQ v1 / frames N / size W H / pixel_spacing px py / dtype u8, then per
// frame a timestamp line, four pose rows, an empty line, and W*H raw bytes.

inline std::string sequence_to_string(const std::vector<TrackedFrame>& frames) {
    if (frames.empty()) throw DataError("write_sequence: empty sequence");
    const int w = frames.front().width, h = frames.front().height;
    const Eigen::Vector2d sp = frames.front().pixel_spacing;
    for (const auto& f : frames) {
        if (f.width != w || f.height != h) {
            throw DataError("write_sequence: frames must share a common size");
        }
        if ((f.pixel_spacing - sp).cwiseAbs().maxCoeff() != 0.0) {
            throw DataError("write_sequence: frames must share a common pixel spacing");
        }
    }
    std::string out = "SEQ v1\nframes " + std::to_string(frames.size());
    out += "\nsize " + std::to_string(w) + " " + std::to_string(h);
    out += "\npixel_spacing " + format_double(sp.x()) + " " + format_double(sp.y());
    out += "\ndtype u8\n";
    for (const auto& f : frames) {
        out += "t " + format_double(f.timestamp) + " valid " + (f.valid ? "1" : "0") + "\n";
        out += io_detail::matrix_rows(f.pose.matrix4(), 4);
        out += '\n';
        for (float p : f.pixels) {
            const float clamped = std::clamp(p, 0.0f, 1.0f);
            out.push_back(static_cast<char>(
                static_cast<unsigned char>(std::lround(clamped * 255.0f))));
        }
    }
    return out;
}

inline void write_sequence(const std::vector<TrackedFrame>& frames, const std::string& path) {
    io_detail::write_file(path, sequence_to_string(frames));
}

inline std::vector<TrackedFrame> read_sequence(const std::string& path) {
    const std::string data = io_detail::read_file(path);
    io_detail::Cursor c{data, 0, path};
    io_detail::expect_line(c, "SEQ v1");
    const auto nf = io_detail::keyed_numbers(c, "frames", 1);
    const long n_frames = static_cast<long>(nf[0]);
    if (n_frames < 1) throw FormatError(path + ": frames must be >= 1");
    const auto sz = io_detail::keyed_numbers(c, "size", 2);
    const int w = static_cast<int>(sz[0]), h = static_cast<int>(sz[1]);
    if (w < 1 || h < 1) throw FormatError(path + ": frame size must be >= 1");
    const auto ps = io_detail::keyed_numbers(c, "pixel_spacing", 2);
    io_detail::expect_line(c, "dtype u8");

    std::vector<TrackedFrame> frames;
    frames.reserve(static_cast<std::size_t>(n_frames));
    for (long k = 0; k < n_frames; ++k) {
        TrackedFrame f;
        f.width = w;
        f.height = h;
        f.pixel_spacing = {ps[0], ps[1]};

        const auto tline = c.next_line();
        const auto tparts = io_detail::split(tline, ' ');
        if (tparts.size() != 4 || tparts[0] != "t" || tparts[2] != "valid") {
            throw FormatError(path + ": malformed frame header at frame " + std::to_string(k));
        }
        f.timestamp = parse_double(tparts[1], path);
        const long valid = parse_long(tparts[3], path);
        if (valid != 0 && valid != 1) {
            throw FormatError(path + ": valid flag must be 0 or 1 at frame " +
                              std::to_string(k));
        }
        f.valid = valid == 1;

        Mat4 m = Mat4::Identity();
        for (int r = 0; r < 4; ++r) {
            const auto line = c.next_line();
            const auto nums = io_detail::split(line, ' ');
            if (nums.size() != 4) {
                throw FormatError(path + ": pose row must have 4 entries at frame " +
                                  std::to_string(k));
            }
            for (int col = 0; col < 4; ++col) m(r, col) = parse_double(nums[col], path);
        }
        if ((m.row(3) - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 1e-9) {
            throw FormatError(path + ": pose error at frame " + std::to_string(k) +
                              ": last row must be 0 0 0 1");
        }
        const Mat3 r = m.topLeftCorner<3, 3>();
        if (orthonormality_drift(r) > 1e-6 || r.determinant() < 0.0) {
            throw FormatError(path + ": pose error at frame " + std::to_string(k) +
                              ": rotation not orthonormal");
        }
        f.pose = RigidTransform{renormalized_if_drifted(r), m.topRightCorner<3, 1>(),
                                FrameId::ProbeMarker, FrameId::OpticalTracker};

        io_detail::expect_line(c, "");
        const auto payload = c.raw_bytes(static_cast<std::size_t>(w) * h,
                                         "frame " + std::to_string(k) + " pixels");
        f.pixels.resize(static_cast<std::size_t>(w) * h);
        for (std::size_t i = 0; i < f.pixels.size(); ++i) {
            f.pixels[i] = static_cast<float>(static_cast<unsigned char>(payload[i])) / 255.0f;
        }
        frames.push_back(std::move(f));
    }
    if (!c.at_end()) throw FormatError(path + ": trailing bytes after last frame");
    return frames;
}

// ---- CSV files -------------------------------------------------------

namespace io_detail {

inline std::vector<std::vector<std::string_view>> parse_csv(const std::string& data,
                                                            const std::string& path,
                                                            std::string_view header) {
    Cursor c{data, 0, path};
    const auto first = c.next_line();
    if (first != header) {
        throw FormatError(path + ": expected header '" + std::string(header) + "', got '" +
                          std::string(first) + "'");
    }
    std::vector<std::vector<std::string_view>> rows;
    const std::size_t cols = split(header, ',').size();
    while (!c.at_end()) {
        const auto line = c.next_line();
        if (line.empty()) continue;
        auto fields = split(line, ',');
        if (fields.size() != cols) {
            throw FormatError(path + ": row has " + std::to_string(fields.size()) +
                              " fields, expected " + std::to_string(cols));
        }
        rows.push_back(std::move(fields));
    }
    return rows;
}

}  // namespace io_detail

inline void write_correspondences(const CorrespondencePairs& pairs, const std::string& path) {
    std::string out = "id,fx,fy,fz,mx,my,mz\n";
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        out += std::to_string(i);
        for (int a = 0; a < 3; ++a) out += "," + format_double(pairs.fixed[i][a]);
        for (int a = 0; a < 3; ++a) out += "," + format_double(pairs.moving[i][a]);
        out += '\n';
    }
    io_detail::write_file(path, out);
}

inline CorrespondencePairs read_correspondences(const std::string& path) {
    const std::string data = io_detail::read_file(path);
    const auto rows = io_detail::parse_csv(data, path, "id,fx,fy,fz,mx,my,mz");
    std::vector<Vec3> fixed, moving;
    for (const auto& r : rows) {
        fixed.emplace_back(parse_double(r[1], path), parse_double(r[2], path),
                           parse_double(r[3], path));
        moving.emplace_back(parse_double(r[4], path), parse_double(r[5], path),
                            parse_double(r[6], path));
    }
    return CorrespondencePairs::make(std::move(fixed), std::move(moving));
}

inline void write_landmarks(const LandmarkSet& set, const std::string& path) {
    std::string out = "label,fx,fy,fz,mx,my,mz\n";
    for (const auto& l : set.pairs) {
        out += l.label;
        for (int a = 0; a < 3; ++a) out += "," + format_double(l.fixed[a]);
        for (int a = 0; a < 3; ++a) out += "," + format_double(l.moving[a]);
        out += '\n';
    }
    io_detail::write_file(path, out);
}

inline LandmarkSet read_landmarks(const std::string& path) {
    const std::string data = io_detail::read_file(path);
    const auto rows = io_detail::parse_csv(data, path, "label,fx,fy,fz,mx,my,mz");
    std::vector<Landmark> pairs;
    for (const auto& r : rows) {
        Landmark l;
        l.label = std::string(r[0]);
        l.fixed = Vec3(parse_double(r[1], path), parse_double(r[2], path),
                       parse_double(r[3], path));
        l.moving = Vec3(parse_double(r[4], path), parse_double(r[5], path),
                        parse_double(r[6], path));
        pairs.push_back(std::move(l));
    }
    return LandmarkSet::make(std::move(pairs));
}

inline void write_pixels(const std::vector<Vec2>& px, const std::string& path) {
    std::string out = "id,u,v\n";
    for (std::size_t i = 0; i < px.size(); ++i) {
        out += std::to_string(i) + "," + format_double(px[i].x()) + "," +
               format_double(px[i].y()) + '\n';
    }
    io_detail::write_file(path, out);
}

inline std::vector<Vec2> read_pixels(const std::string& path) {
    const std::string data = io_detail::read_file(path);
    const auto rows = io_detail::parse_csv(data, path, "id,u,v");
    std::vector<Vec2> out;
    for (const auto& r : rows) {
        out.emplace_back(parse_double(r[1], path), parse_double(r[2], path));
    }
    return out;
}

inline void write_points3(const std::vector<Vec3>& pts, const std::string& path) {
    std::string out = "id,x,y,z\n";
    for (std::size_t i = 0; i < pts.size(); ++i) {
        out += std::to_string(i) + "," + format_double(pts[i].x()) + "," +
               format_double(pts[i].y()) + "," + format_double(pts[i].z()) + '\n';
    }
    io_detail::write_file(path, out);
}

inline std::vector<Vec3> read_points3(const std::string& path) {
    const std::string data = io_detail::read_file(path);
    const auto rows = io_detail::parse_csv(data, path, "id,x,y,z");
    std::vector<Vec3> out;
    for (const auto& r : rows) {
        out.emplace_back(parse_double(r[1], path), parse_double(r[2], path),
                         parse_double(r[3], path));
    }
    return out;
}

inline void write_polyline(const Polyline& line, const std::string& path) {
    std::string out = "x,y,z\n";
    for (const auto& v : line.vertices) {
        out += format_double(v.x()) + "," + format_double(v.y()) + "," +
               format_double(v.z()) + '\n';
    }
    io_detail::write_file(path, out);
}

inline Polyline read_polyline(const std::string& path) {
    const std::string data = io_detail::read_file(path);
    const auto rows = io_detail::parse_csv(data, path, "x,y,z");
    std::vector<Vec3> vertices;
    for (const auto& r : rows) {
        vertices.emplace_back(parse_double(r[0], path), parse_double(r[1], path),
                              parse_double(r[2], path));
    }
    return Polyline::make(std::move(vertices));
}

inline void write_timeseries(const TimeSeries& s, const std::string& path) {
    std::string out = "t,value\n";
    for (std::size_t i = 0; i < s.timestamps.size(); ++i) {
        out += format_double(s.timestamps[i]) + "," + format_double(s.values[i]) + '\n';
    }
    io_detail::write_file(path, out);
}

inline TimeSeries read_timeseries(const std::string& path) {
    const std::string data = io_detail::read_file(path);
    const auto rows = io_detail::parse_csv(data, path, "t,value");
    std::vector<double> ts, vs;
    for (const auto& r : rows) {
        ts.push_back(parse_double(r[0], path));
        vs.push_back(parse_double(r[1], path));
    }
    return TimeSeries::make(std::move(ts), std::move(vs));
}

// ---- run reports -------------------------------------------------------

struct RunReport {
    std::string command;
    std::vector<std::pair<std::string, std::string>> inputs;  // path, sha256
    nlohmann::json metrics = nlohmann::json::object();
    double wall_time = 0.0;  // seconds
    std::optional<std::uint64_t> seed;
    std::optional<bool> converged;
    std::optional<std::string> error;

    void add_input(const std::string& path) {
        const std::string data = io_detail::read_file(path);
        inputs.emplace_back(path, Sha256::hash_hex(data));
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["command"] = command;
        j["inputs"] = nlohmann::json::array();
        for (const auto& [path, checksum] : inputs) {
            j["inputs"].push_back({{"path", path}, {"sha256", checksum}});
        }
        j["metrics"] = metrics;
        j["wall_time"] = wall_time;
        if (seed) j["seed"] = *seed;
        if (converged) j["converged"] = *converged;
        if (error) j["error"] = *error;
        return j;
    }

    void write(const std::string& path) const {
        io_detail::write_file(path, to_json().dump(2) + "\n");
    }
};

}  // namespace usnav
