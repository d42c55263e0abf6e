#include "vtm/chipgen.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "vtm/seeding.hpp"

namespace vtm {

namespace {

constexpr int kSuper = 4;  // supersamples per pixel axis

enum class Region { none, body, glass };

struct Vehicle {
    bool truck = false;
    double cx = 0, cy = 0, cos_t = 1, sin_t = 0;
    double length = 0, width = 0;

    // Rounded rectangle centered at (u0, 0) in vehicle coordinates.
    static bool in_rounded(double u, double v, double u0, double half_l, double half_w, double r)
    {
        const double du = std::abs(u - u0), dv = std::abs(v);
        if (du > half_l || dv > half_w) return false;
        const double ku = half_l - r, kv = half_w - r;
        if (du <= ku || dv <= kv) return true;
        return (du - ku) * (du - ku) + (dv - kv) * (dv - kv) <= r * r;
    }

    Region region(double x, double y) const
    {
        const double dx = x - cx, dy = y - cy;
        const double u = dx * cos_t + dy * sin_t;
        const double v = -dx * sin_t + dy * cos_t;
        const double half_l = length / 2, half_w = width / 2;
        if (!truck) {
            if (!in_rounded(u, v, 0.0, half_l, half_w, 0.3 * width)) return Region::none;
            const bool in_glass_band = (u >= half_l - 0.34 * length && u <= half_l - 0.2 * length) ||
                                       (u >= -half_l + 0.1 * length && u <= -half_l + 0.17 * length);
            return in_glass_band && std::abs(v) <= half_w - 0.12 * width ? Region::glass : Region::body;
        }
        const double cab = 0.2 * length, gap = 0.035 * length;
        const double cab_half_w = 0.46 * width;
        if (in_rounded(u, v, half_l - cab / 2, cab / 2, cab_half_w, 0.15 * width)) {
            const bool glass = u >= half_l - 0.45 * cab && u <= half_l - 0.2 * cab &&
                               std::abs(v) <= cab_half_w - 0.1 * width;
            return glass ? Region::glass : Region::body;
        }
        const double trailer = length - cab - gap;
        if (in_rounded(u, v, -half_l + trailer / 2, trailer / 2, half_w, 0.06 * width)) return Region::body;
        return Region::none;
    }
};

struct ValueNoise {
    std::size_t cells;
    double spacing;
    std::vector<double> lattice;

    ValueNoise(std::size_t size, double spacing_px, std::mt19937_64& rng)
        : cells(static_cast<std::size_t>(std::ceil(static_cast<double>(size) / spacing_px)) + 2), spacing(spacing_px)
    {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        lattice.resize(cells * cells);
        for (auto& v : lattice) v = u(rng);
    }

    double at(double x, double y) const
    {
        const double gx = x / spacing, gy = y / spacing;
        const auto ix = static_cast<std::size_t>(gx), iy = static_cast<std::size_t>(gy);
        auto smooth = [](double t) { return t * t * (3 - 2 * t); };
        const double fx = smooth(gx - static_cast<double>(ix)), fy = smooth(gy - static_cast<double>(iy));
        auto l = [&](std::size_t a, std::size_t b) { return lattice[b * cells + a]; };
        const double top = l(ix, iy) * (1 - fx) + l(ix + 1, iy) * fx;
        const double bot = l(ix, iy + 1) * (1 - fx) + l(ix + 1, iy + 1) * fx;
        return top * (1 - fy) + bot * fy;
    }
};

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

}  // namespace

Rgb color_palette(Color c)
{
    switch (c) {
    case Color::black: return {25, 25, 25};
    case Color::white: return {235, 235, 235};
    case Color::gray: return {128, 128, 128};
    case Color::yellow: return {230, 200, 30};
    case Color::green: return {30, 160, 60};
    case Color::blue: return {30, 70, 200};
    case Color::red: return {200, 40, 40};
    }
    throw std::invalid_argument("color_palette: unknown color");
}

Rgb Chip::pixel(std::size_t x, std::size_t y) const
{
    const auto i = (y * spec.size + x) * 3;
    return {pixels.at(i), pixels.at(i + 1), pixels.at(i + 2)};
}

std::vector<Rgb> Chip::body_pixels() const
{
    std::vector<Rgb> out;
    for (std::size_t y = 0; y < spec.size; ++y)
        for (std::size_t x = 0; x < spec.size; ++x)
            if (body_mask[y * spec.size + x]) out.push_back(pixel(x, y));
    return out;
}

std::size_t Chip::vehicle_pixel_count() const
{
    return static_cast<std::size_t>(std::count_if(coverage.begin(), coverage.end(), [](float c) { return c >= 0.5f; }));
}

Chip render_chip(const ChipSpec& spec)
{
    if (spec.size < 32) throw std::invalid_argument("render_chip: size must be at least 32");
    const auto size = spec.size;
    const auto s = static_cast<double>(size);
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

    Vehicle veh;
    veh.truck = spec.description.type == VehicleType::truck;
    veh.width = s * uniform(0.23, 0.27);
    veh.length = veh.width * (veh.truck ? uniform(2.6, 3.4) : uniform(1.8, 2.4));
    const double angle = uniform(0.0, 2.0 * std::numbers::pi);
    veh.cos_t = std::cos(angle);
    veh.sin_t = std::sin(angle);
    veh.cx = s / 2 + uniform(-1.0, 1.0);
    veh.cy = s / 2 + uniform(-1.0, 1.0);

    const double road_offset = uniform(-0.3, 0.3) * veh.width;
    const double road_half = uniform(0.8, 1.2) * veh.width;
    const double road_gray = uniform(84.0, 104.0);
    const double gain = uniform(kMinGain, kMaxGain);
    const double glass_gain = uniform(0.3, 0.45);
    ValueNoise coarse(size, 8.0, rng), fine(size, 3.0, rng);

    const auto base = color_palette(spec.description.color);
    std::array<double, 3> body{}, glass{};
    for (int c = 0; c < 3; ++c) {
        body[c] = base[c] * gain;
        glass[c] = base[c] * gain * glass_gain;
    }
    constexpr std::array<double, 3> grass_dark{72, 84, 64}, grass_light{132, 140, 116};

    Chip chip;
    chip.spec = spec;
    chip.pixels.resize(size * size * 3);
    chip.body_mask.assign(size * size, 0);
    chip.coverage.assign(size * size, 0.f);

    constexpr int samples = kSuper * kSuper;
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
            int n_body = 0, n_glass = 0, n_road = 0;
            for (int sy = 0; sy < kSuper; ++sy)
                for (int sx = 0; sx < kSuper; ++sx) {
                    const double px = static_cast<double>(x) + (sx + 0.5) / kSuper;
                    const double py = static_cast<double>(y) + (sy + 0.5) / kSuper;
                    switch (veh.region(px, py)) {
                    case Region::body: ++n_body; break;
                    case Region::glass: ++n_glass; break;
                    case Region::none: {
                        const double lateral = -(px - veh.cx) * veh.sin_t + (py - veh.cy) * veh.cos_t;
                        if (std::abs(lateral - road_offset) <= road_half) ++n_road;
                        break;
                    }
                    }
                }
            const double cx = static_cast<double>(x) + 0.5, cy = static_cast<double>(y) + 0.5;
            const double n = 0.7 * coarse.at(cx, cy) + 0.3 * fine.at(cx, cy);
            const double fb = static_cast<double>(n_body) / samples;
            const double fg = static_cast<double>(n_glass) / samples;
            const double fr = static_cast<double>(n_road) / samples;
            const double fgrass = 1.0 - fb - fg - fr;
            const double road_tex = road_gray + 10.0 * (n - 0.5);
            const auto idx = y * size + x;
            for (int c = 0; c < 3; ++c) {
                const double grass = grass_dark[c] + (grass_light[c] - grass_dark[c]) * n + uniform(-6.0, 6.0);
                const double paint = body[c] + uniform(-kColorJitter, kColorJitter);
                const double window = glass[c] + uniform(-4.0, 4.0);
                chip.pixels[idx * 3 + c] = to_byte(fgrass * grass + fr * road_tex + fb * paint + fg * window);
            }
            chip.coverage[idx] = static_cast<float>(fb + fg);
            chip.body_mask[idx] = n_body == samples;
        }
    return chip;
}

Color classify_color(std::span<const Rgb> pixels)
{
    if (pixels.empty()) throw std::invalid_argument("classify_color: no pixels");
    std::array<double, 3> mean{};
    for (const auto& p : pixels)
        for (int c = 0; c < 3; ++c) mean[c] += p[c];
    for (auto& m : mean) m /= static_cast<double>(pixels.size());

    Color best = Color::black;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < kNumColors; ++k) {
        const auto color = static_cast<Color>(k);
        const auto p = color_palette(color);
        double dot = 0, pp = 0;
        for (int c = 0; c < 3; ++c) {
            dot += mean[c] * p[c];
            pp += static_cast<double>(p[c]) * p[c];
        }
        const double g = std::clamp(dot / pp, kMinGain, kMaxGain);
        double d = 0;
        for (int c = 0; c < 3; ++c) d += (mean[c] - g * p[c]) * (mean[c] - g * p[c]);
        if (d < best_d) {
            best_d = d;
            best = color;
        }
    }
    return best;
}

double silhouette_aspect(const Chip& chip)
{
    const auto size = chip.spec.size;
    double w = 0, mx = 0, my = 0;
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
            const double c = chip.coverage[y * size + x];
            w += c;
            mx += c * (static_cast<double>(x) + 0.5);
            my += c * (static_cast<double>(y) + 0.5);
        }
    if (w <= 0) throw std::invalid_argument("silhouette_aspect: empty silhouette");
    mx /= w;
    my /= w;
    double sxx = 0, syy = 0, sxy = 0;
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
            const double c = chip.coverage[y * size + x];
            const double dx = static_cast<double>(x) + 0.5 - mx, dy = static_cast<double>(y) + 0.5 - my;
            sxx += c * dx * dx;
            syy += c * dy * dy;
            sxy += c * dx * dy;
        }
    const double tr = sxx + syy;
    const double disc = std::sqrt((sxx - syy) * (sxx - syy) + 4 * sxy * sxy);
    const double l1 = (tr + disc) / 2, l2 = (tr - disc) / 2;
    return std::sqrt(l1 / l2);
}

void write_ppm(const std::filesystem::path& path, const Image& img)
{
    if (img.rgb.size() != img.width * img.height * 3) throw std::invalid_argument("write_ppm: pixel count mismatch");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("write_ppm: cannot open " + path.string());
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
    if (!out) throw std::runtime_error("write_ppm: write failed for " + path.string());
}

Image read_ppm(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_ppm: cannot open " + path.string());
    auto token = [&] {
        std::string t;
        char ch;
        while (in.get(ch)) {
            if (ch == '#') {
                std::string skip;
                std::getline(in, skip);
                continue;
            }
            if (std::isspace(static_cast<unsigned char>(ch))) {
                if (!t.empty()) break;
                continue;
            }
            t += ch;
        }
        return t;
    };
    if (token() != "P6") throw std::runtime_error("read_ppm: " + path.string() + " is not a binary P6 file");
    Image img;
    try {
        img.width = std::stoul(token());
        img.height = std::stoul(token());
        if (std::stoul(token()) != 255) throw std::runtime_error("maxval");
    } catch (const std::exception&) {
        throw std::runtime_error("read_ppm: bad header in " + path.string());
    }
    img.rgb.resize(img.width * img.height * 3);
    if (!in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size())))
        throw std::runtime_error("read_ppm: truncated pixel data in " + path.string());
    return img;
}

std::string_view to_string(Split s) { return s == Split::train ? "train" : "test"; }

void write_manifest(const std::filesystem::path& path, const Manifest& m)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("manifest: cannot open " + path.string() + " for writing");
    for (const auto& r : m.records) {
        nlohmann::ordered_json j;
        j["path"] = r.path;
        j["class"] = r.description.str();
        j["split"] = to_string(r.split);
        j["seed"] = r.seed;
        out << j.dump() << "\n";
    }
    if (!out) throw std::runtime_error("manifest: write failed for " + path.string());
}

Manifest read_manifest(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw std::runtime_error("manifest: cannot open " + path.string());
    Manifest m;
    std::set<std::string> paths;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            auto j = nlohmann::json::parse(line);
            ManifestRecord r;
            r.path = j.at("path").get<std::string>();
            r.description = ClassDescription::parse(j.at("class").get<std::string>());
            const auto split = j.at("split").get<std::string>();
            if (split != "train" && split != "test") throw std::invalid_argument("split must be train or test");
            r.split = split == "train" ? Split::train : Split::test;
            r.seed = j.at("seed").get<std::uint64_t>();
            if (!paths.insert(r.path).second) throw std::invalid_argument("duplicate path " + r.path);
            m.records.push_back(std::move(r));
        } catch (const std::exception& e) {
            throw std::runtime_error("manifest: " + path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return m;
}

Manifest generate_dataset(std::size_t n_per_class, std::uint64_t seed, double train_fraction,
                          const std::filesystem::path& out_dir, std::size_t chip_size)
{
    if (n_per_class < 4) throw std::invalid_argument("generate_dataset: need at least 4 chips per class");
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw std::invalid_argument("generate_dataset: train fraction must be in (0, 1)");
    const auto manifest_path = out_dir / kManifestName;
    if (std::filesystem::exists(manifest_path))
        throw std::runtime_error("generate_dataset: " + manifest_path.string() + " already exists");
    std::error_code ec;
    std::filesystem::create_directories(out_dir / "chips", ec);
    if (ec) throw std::runtime_error("generate_dataset: cannot create " + (out_dir / "chips").string() + ": " + ec.message());

    const auto n_train = static_cast<std::size_t>(std::ceil(train_fraction * static_cast<double>(n_per_class) - 1e-9));
    Manifest m;
    std::set<std::uint64_t> seeds;
    for (const auto& cls : all_classes()) {
        for (std::size_t i = 0; i < n_per_class; ++i) {
            const auto chip_seed = derive_seed(seed, {cls.index(), i});
            if (!seeds.insert(chip_seed).second) throw std::logic_error("generate_dataset: chip seed collision");
            auto chip = render_chip({cls, chip_seed, chip_size});
            std::ostringstream name;
            name << "chips/" << to_string(cls.color) << "_" << to_string(cls.type) << "_";
            name.width(4);
            name.fill('0');
            name << i << ".ppm";
            write_ppm(out_dir / name.str(), {chip_size, chip_size, std::move(chip.pixels)});
            m.records.push_back({name.str(), cls, i < n_train ? Split::train : Split::test, chip_seed});
        }
    }
    write_manifest(manifest_path, m);
    return m;
}

}  // namespace vtm
