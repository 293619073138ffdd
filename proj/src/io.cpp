#include "balf/io.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace balf {
namespace io {

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) {
    throw Error(path + ": " + what);
}

std::ifstream open_in(const std::string& path, std::ios::openmode mode = std::ios::in) {
    std::ifstream f(path, mode);
    if (!f) fail(path, "cannot open for reading");
    return f;
}

std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::out) {
    std::ofstream f(path, mode);
    if (!f) fail(path, "cannot open for writing");
    return f;
}

// Netpbm header token: skips whitespace and '#' comments up to end of line.
std::string next_token(std::istream& in) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {
            }
        } else if (!std::isspace(c)) {
            tok.push_back(static_cast<char>(c));
            while ((c = in.get()) != EOF && !std::isspace(c) && c != '#') tok.push_back(static_cast<char>(c));
            if (c == '#') in.unget();
            return tok;
        }
    }
    return tok;
}

int token_int(std::istream& in, const std::string& path, const char* what) {
    const std::string tok = next_token(in);
    try {
        std::size_t used = 0;
        const int v = std::stoi(tok, &used);
        if (used != tok.size() || v < 0) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        fail(path, std::string("malformed ") + what + " in header");
    }
}

void put_u32(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) fail(path, "truncated file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

Tensor read_image(const std::string& path) {
    std::ifstream f = open_in(path, std::ios::binary);
    const std::string magic = next_token(f);
    if (magic != "P5" && magic != "P6") fail(path, "not a binary PGM/PPM (magic '" + magic + "')");
    const int w = token_int(f, path, "width");
    const int h = token_int(f, path, "height");
    const int maxval = token_int(f, path, "maxval");
    if (w <= 0 || h <= 0) fail(path, "non-positive dimensions");
    if (maxval != 255 && maxval != 65535) fail(path, "unsupported maxval (need 255 or 65535)");
    // The header ends with exactly one whitespace byte before the payload;
    // token_int already consumed it.

    const int samples_per_px = magic == "P6" ? 3 : 1;
    const int bytes_per_sample = maxval == 255 ? 1 : 2;
    std::vector<unsigned char> raw(static_cast<std::size_t>(h) * w * samples_per_px *
                                   bytes_per_sample);
    if (!f.read(reinterpret_cast<char*>(raw.data()), raw.size())) fail(path, "truncated payload");

    Tensor img = Tensor::zeros(Shape(h, w, 1));
    auto out = img.data();
    const unsigned char* p = raw.data();
    auto sample = [&]() {
        double v;
        if (bytes_per_sample == 1) {
            v = *p / 255.0;
            p += 1;
        } else {
            v = ((p[0] << 8) | p[1]) / 65535.0;  // big-endian per the format
            p += 2;
        }
        return v;
    };
    for (std::size_t i = 0; i < static_cast<std::size_t>(h) * w; ++i) {
        if (samples_per_px == 1) {
            out[i] = static_cast<float>(sample());
        } else {
            const double r = sample(), g = sample(), b = sample();
            out[i] = static_cast<float>(0.299 * r + 0.587 * g + 0.114 * b);
        }
    }
    return img;
}

void write_image_pgm(const std::string& path, const Tensor& image, bool sixteen_bit) {
    if (image.rank() != 3 || image.dim(2) != 1)
        throw ShapeError("image writer expects [H,W,1], got " + image.shape().str());
    const int h = image.dim(0), w = image.dim(1);
    std::ofstream f = open_out(path, std::ios::binary);
    f << "P5\n" << w << " " << h << "\n" << (sixteen_bit ? 65535 : 255) << "\n";
    const auto d = image.data();
    std::vector<unsigned char> raw;
    raw.reserve(d.size() * (sixteen_bit ? 2 : 1));
    for (float v : d) {
        const double x = std::clamp(static_cast<double>(v), 0.0, 1.0);
        if (sixteen_bit) {
            const auto q = static_cast<unsigned>(std::lround(x * 65535.0));
            raw.push_back(static_cast<unsigned char>(q >> 8));
            raw.push_back(static_cast<unsigned char>(q & 0xff));
        } else {
            raw.push_back(static_cast<unsigned char>(std::lround(x * 255.0)));
        }
    }
    f.write(reinterpret_cast<const char*>(raw.data()), raw.size());
    if (!f) fail(path, "write failed");
}

void write_image_ppm(const std::string& path, int h, int w,
                     const std::vector<unsigned char>& rgb) {
    if (rgb.size() != static_cast<std::size_t>(h) * w * 3)
        throw Error("RGB buffer size does not match dimensions");
    std::ofstream f = open_out(path, std::ios::binary);
    f << "P6\n" << w << " " << h << "\n255\n";
    f.write(reinterpret_cast<const char*>(rgb.data()), rgb.size());
    if (!f) fail(path, "write failed");
}

Keypoints read_keypoints(const std::string& path) {
    std::ifstream f = open_in(path);
    Keypoints kpts;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::string_view sv(line);
        while (!sv.empty() && std::isspace(static_cast<unsigned char>(sv.front()))) sv.remove_prefix(1);
        if (sv.empty() || sv.front() == '#') continue;

        std::vector<double> vals;
        std::stringstream ss{std::string(sv)};
        std::string field;
        bool ok = true;
        while (std::getline(ss, field, ',')) {
            try {
                std::size_t used = 0;
                vals.push_back(std::stod(field, &used));
                while (used < field.size() && std::isspace(static_cast<unsigned char>(field[used])))
                    ++used;
                if (used != field.size()) ok = false;
            } catch (const std::exception&) {
                ok = false;
            }
        }
        if (!ok || vals.size() < 2 || vals.size() > 3)
            fail(path, "malformed keypoint at line " + std::to_string(lineno) + ": '" + line + "'");
        kpts.push_back({vals[0], vals[1], vals.size() == 3 ? vals[2] : 1.0});
    }
    return kpts;
}

void write_keypoints(const std::string& path, const Keypoints& kpts) {
    std::ofstream f = open_out(path);
    f << "# x,y,score\n";
    char buf[128];
    for (const auto& kp : kpts) {
        std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f\n", kp.x, kp.y, kp.score);
        f << buf;
    }
    if (!f) fail(path, "write failed");
}

ev::Homography read_homography(const std::string& path) {
    std::ifstream f = open_in(path);
    ev::Homography hm;
    for (double& v : hm.m)
        if (!(f >> v)) fail(path, "expected 9 numbers");
    double extra;
    if (f >> extra) fail(path, "trailing data after 9 numbers");
    hm.normalize();
    if (std::abs(hm.det()) <= 1e-12) fail(path, "singular homography");
    return hm;
}

void save_model(const std::string& path, const Model& m) {
    std::ofstream f = open_out(path, std::ios::binary);
    f.write("BALF", 4);
    put_u32(f, 1);  // format version
    const ModelConfig& c = m.config;
    put_u32(f, static_cast<std::uint32_t>(c.n));
    put_u32(f, static_cast<std::uint32_t>(c.stage_channels.size()));
    for (int w : c.stage_channels) put_u32(f, static_cast<std::uint32_t>(w));
    put_u32(f, static_cast<std::uint32_t>(c.block_size));
    put_u32(f, static_cast<std::uint32_t>(c.grid_size));
    put_u32(f, static_cast<std::uint32_t>(c.head_hidden));
    put_u32(f, static_cast<std::uint32_t>(c.se_reduction));
    put_u32(f, static_cast<std::uint32_t>(c.expansion));
    put_u32(f, c.use_rmab ? 1 : 0);
    put_u32(f, static_cast<std::uint32_t>(c.in_channels));

    const auto& entries = m.params.items;
    put_u32(f, static_cast<std::uint32_t>(entries.size()));
    for (const auto& [name, t] : entries) {
        put_u32(f, static_cast<std::uint32_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(f, static_cast<std::uint32_t>(t.rank()));
        for (int d = 0; d < t.rank(); ++d) put_u32(f, static_cast<std::uint32_t>(t.dim(d)));
        for (float v : t.data()) put_u32(f, std::bit_cast<std::uint32_t>(v));
    }
    if (!f) fail(path, "write failed");
}

Model load_model(const std::string& path) {
    std::ifstream f = open_in(path, std::ios::binary);
    char magic[4];
    if (!f.read(magic, 4) || std::memcmp(magic, "BALF", 4) != 0)
        fail(path, "not a model file (bad magic)");
    const std::uint32_t version = get_u32(f, path);
    if (version != 1) fail(path, "unsupported format version " + std::to_string(version));

    ModelConfig c;
    c.n = static_cast<int>(get_u32(f, path));
    c.stage_channels.resize(get_u32(f, path));
    for (int& w : c.stage_channels) w = static_cast<int>(get_u32(f, path));
    c.block_size = static_cast<int>(get_u32(f, path));
    c.grid_size = static_cast<int>(get_u32(f, path));
    c.head_hidden = static_cast<int>(get_u32(f, path));
    c.se_reduction = static_cast<int>(get_u32(f, path));
    c.expansion = static_cast<int>(get_u32(f, path));
    c.use_rmab = get_u32(f, path) != 0;
    c.in_channels = static_cast<int>(get_u32(f, path));
    c.validate();

    Model m = build_model(c, 0);
    const std::uint32_t count = get_u32(f, path);
    if (count != m.params.items.size()) fail(path, "parameter directory count mismatch");
    for (auto& [name, t] : m.params.items) {
        std::string fname(get_u32(f, path), '\0');
        if (!f.read(fname.data(), static_cast<std::streamsize>(fname.size())))
            fail(path, "truncated file");
        if (fname != name) fail(path, "parameter order mismatch: '" + fname + "' vs '" + name + "'");
        const int rank = static_cast<int>(get_u32(f, path));
        if (rank != t.rank()) fail(path, "rank mismatch for " + name);
        for (int d = 0; d < rank; ++d)
            if (static_cast<int>(get_u32(f, path)) != t.dim(d))
                fail(path, "shape mismatch for " + name);
        for (float& v : t.data()) v = std::bit_cast<float>(get_u32(f, path));
    }
    return m;
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
    std::ifstream f = open_in(path);
    const std::filesystem::path root = std::filesystem::path(path).parent_path();
    auto resolve = [&](const std::string& p) {
        std::filesystem::path fp(p);
        return (fp.is_absolute() ? fp : root / fp).string();
    };

    std::vector<ManifestEntry> entries;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ss(line);
        std::vector<std::string> toks;
        std::string tok;
        while (ss >> tok) toks.push_back(tok);
        if (toks.empty() || toks[0][0] == '#') continue;
        if (toks.size() < 2 || toks.size() > 3)
            fail(path, "line " + std::to_string(lineno) +
                           ": expected `sharp blurred [keypoints]`, got " + line);
        entries.push_back({resolve(toks[0]), resolve(toks[1]),
                           toks.size() == 3 ? resolve(toks[2]) : std::string()});
    }
    return entries;
}

std::vector<sup::TrainingSample> load_dataset(const std::string& manifest_path, int gt_max_k) {
    std::vector<sup::TrainingSample> out;
    for (const auto& e : read_manifest(manifest_path)) {
        sup::TrainingSample s;
        s.sharp = read_image(e.sharp);
        s.blurred = read_image(e.blurred);
        if (s.sharp.shape() != s.blurred.shape())
            throw Error(e.sharp + " and " + e.blurred + " differ in size");
        s.gt = e.keypoints.empty() ? sup::detect_reference_keypoints(s.sharp, gt_max_k)
                                   : read_keypoints(e.keypoints);
        const int h = s.sharp.dim(0), w = s.sharp.dim(1);
        for (const auto& kp : s.gt)
            if (kp.x < 0 || kp.x > w - 1 || kp.y < 0 || kp.y > h - 1)
                throw Error(e.sharp + ": ground-truth keypoint out of bounds");
        out.push_back(std::move(s));
    }
    if (out.empty()) throw Error(manifest_path + ": manifest lists no samples");
    return out;
}

void write_kernel(const std::string& path, const blur::BlurKernel& kern) {
    std::ofstream f = open_out(path);
    char buf[64];
    for (int i = 0; i < kern.k; ++i) {
        for (int j = 0; j < kern.k; ++j) {
            std::snprintf(buf, sizeof buf, "%.10g", kern.at(i, j));
            f << (j ? " " : "") << buf;
        }
        f << "\n";
    }
    if (!f) fail(path, "write failed");
}

}  // namespace io
}  // namespace balf
