#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vtm/text.hpp"

namespace vtm {

using Rgb = std::array<std::uint8_t, 3>;

/// Base body color of each vehicle color.
Rgb color_palette(Color c);

/// Body-color gain range applied by the renderer; classify_color searches it.
inline constexpr double kMinGain = 0.85;
inline constexpr double kMaxGain = 1.1;
inline constexpr int kColorJitter = 12;
/// Body aspect ratio separating cars (below) from trucks (above).
inline constexpr double kAspectThreshold = 2.5;

struct ChipSpec {
    ClassDescription description;
    std::uint64_t seed = 0;
    std::size_t size = 64;
};

/// A rendered top-down vehicle patch, RGB row-major.
struct Chip {
    ChipSpec spec;
    std::vector<std::uint8_t> pixels;    ///< size*size*3
    std::vector<std::uint8_t> body_mask; ///< 1 where the pixel is entirely painted body (no glass, no edge)
    std::vector<float> coverage;         ///< fraction of each pixel covered by the vehicle silhouette

    Rgb pixel(std::size_t x, std::size_t y) const;
    std::vector<Rgb> body_pixels() const;
    /// Pixels whose silhouette coverage is at least one half.
    std::size_t vehicle_pixel_count() const;
};

/// Deterministic in spec.seed. Throws std::invalid_argument if size < 32.
Chip render_chip(const ChipSpec& spec);

/// Nearest palette color to the mean, letting each palette entry scale by
/// any gain in [kMinGain, kMaxGain]. Throws on an empty input.
Color classify_color(std::span<const Rgb> pixels);

/// Length/width ratio of the vehicle silhouette, from the coverage-weighted
/// second moments (exact L/W for a solid rectangle).
double silhouette_aspect(const Chip& chip);

struct Image {
    std::size_t width = 0, height = 0;
    std::vector<std::uint8_t> rgb;
};

/// Binary P6, maxval 255.
void write_ppm(const std::filesystem::path& path, const Image& img);
Image read_ppm(const std::filesystem::path& path);

enum class Split { train, test };
std::string_view to_string(Split s);

struct ManifestRecord {
    std::string path;  ///< relative to the dataset directory
    ClassDescription description;
    Split split = Split::train;
    std::uint64_t seed = 0;
};

struct Manifest {
    std::vector<ManifestRecord> records;
};

inline constexpr const char* kManifestName = "manifest.jsonl";

/// JSON lines: {"path": ..., "class": "color type", "split": "train"|"test", "seed": n}
void write_manifest(const std::filesystem::path& path, const Manifest& m);
Manifest read_manifest(const std::filesystem::path& path);

/// Renders n_per_class chips for each of the 14 classes into out_dir, the
/// first ceil(train_fraction * n) of each class going to the train split.
Manifest generate_dataset(std::size_t n_per_class, std::uint64_t seed, double train_fraction,
                          const std::filesystem::path& out_dir, std::size_t chip_size = 64);

}  // namespace vtm
