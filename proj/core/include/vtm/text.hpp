#pragma once

#include <compare>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace vtm {

enum class VehicleType { car, truck };
enum class Color { black, white, gray, yellow, green, blue, red };

inline constexpr std::size_t kNumTypes = 2;
inline constexpr std::size_t kNumColors = 7;
inline constexpr std::size_t kNumClasses = kNumTypes * kNumColors;

std::string_view to_string(VehicleType t);
std::string_view to_string(Color c);
std::optional<VehicleType> parse_vehicle_type(std::string_view s);
std::optional<Color> parse_color(std::string_view s);

/// A desired class: one vehicle type plus one color.
struct ClassDescription {
    VehicleType type = VehicleType::car;
    Color color = Color::black;

    /// "color type", e.g. "yellow car".
    std::string str() const;
    /// Inverse of str(); throws std::invalid_argument on anything else.
    static ClassDescription parse(std::string_view text);
    /// Position in all_classes().
    std::size_t index() const;

    friend auto operator<=>(const ClassDescription&, const ClassDescription&) = default;
};

/// Types x colors, both in declaration order: {car, black} first.
std::vector<ClassDescription> all_classes();

/// Sorted, duplicate-free list of lowercase tokens.
class Vocabulary {
public:
    Vocabulary() = default;
    explicit Vocabulary(std::vector<std::string> words);

    const std::vector<std::string>& words() const { return words_; }
    std::size_t size() const { return words_.size(); }
    std::optional<std::size_t> index_of(std::string_view word) const;

    friend bool operator==(const Vocabulary&, const Vocabulary&) = default;

private:
    std::vector<std::string> words_;
};

/// Binary presence vector over a vocabulary.
struct BowVector {
    std::vector<double> values;
};

Vocabulary build_vocabulary(std::span<const ClassDescription> descriptions);
/// Vocabulary over every word of all_classes().
const Vocabulary& full_vocabulary();

BowVector encode_bow(const ClassDescription& d, const Vocabulary& v);

}  // namespace vtm
