#include "vtm/text.hpp"

#include <algorithm>
#include <array>
#include <stdexcept>

namespace vtm {

namespace {

constexpr std::array<std::string_view, kNumTypes> kTypeNames{"car", "truck"};
constexpr std::array<std::string_view, kNumColors> kColorNames{"black", "white", "gray", "yellow",
                                                               "green", "blue", "red"};

}  // namespace

std::string_view to_string(VehicleType t) { return kTypeNames.at(static_cast<std::size_t>(t)); }
std::string_view to_string(Color c) { return kColorNames.at(static_cast<std::size_t>(c)); }

std::optional<VehicleType> parse_vehicle_type(std::string_view s)
{
    for (std::size_t i = 0; i < kTypeNames.size(); ++i)
        if (kTypeNames[i] == s) return static_cast<VehicleType>(i);
    return std::nullopt;
}

std::optional<Color> parse_color(std::string_view s)
{
    for (std::size_t i = 0; i < kColorNames.size(); ++i)
        if (kColorNames[i] == s) return static_cast<Color>(i);
    return std::nullopt;
}

std::string ClassDescription::str() const
{
    return std::string(to_string(color)) + " " + std::string(to_string(type));
}

ClassDescription ClassDescription::parse(std::string_view text)
{
    const auto space = text.find(' ');
    if (space == std::string_view::npos || text.find(' ', space + 1) != std::string_view::npos)
        throw std::invalid_argument("class description must be \"color type\", got \"" + std::string(text) + "\"");
    auto color = parse_color(text.substr(0, space));
    auto type = parse_vehicle_type(text.substr(space + 1));
    if (!color || !type)
        throw std::invalid_argument("unknown class description \"" + std::string(text) + "\"");
    return {*type, *color};
}

std::size_t ClassDescription::index() const
{
    return static_cast<std::size_t>(type) * kNumColors + static_cast<std::size_t>(color);
}

std::vector<ClassDescription> all_classes()
{
    std::vector<ClassDescription> out;
    out.reserve(kNumClasses);
    for (std::size_t t = 0; t < kNumTypes; ++t)
        for (std::size_t c = 0; c < kNumColors; ++c)
            out.push_back({static_cast<VehicleType>(t), static_cast<Color>(c)});
    return out;
}

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words))
{
    std::sort(words_.begin(), words_.end());
    words_.erase(std::unique(words_.begin(), words_.end()), words_.end());
}

std::optional<std::size_t> Vocabulary::index_of(std::string_view word) const
{
    auto it = std::lower_bound(words_.begin(), words_.end(), word);
    if (it == words_.end() || *it != word) return std::nullopt;
    return static_cast<std::size_t>(it - words_.begin());
}

Vocabulary build_vocabulary(std::span<const ClassDescription> descriptions)
{
    if (descriptions.empty()) throw std::invalid_argument("build_vocabulary: no descriptions");
    std::vector<std::string> words;
    for (const auto& d : descriptions) {
        words.emplace_back(to_string(d.type));
        words.emplace_back(to_string(d.color));
    }
    return Vocabulary(std::move(words));
}

const Vocabulary& full_vocabulary()
{
    static const Vocabulary vocab = [] {
        auto classes = all_classes();
        return build_vocabulary(classes);
    }();
    return vocab;
}

BowVector encode_bow(const ClassDescription& d, const Vocabulary& v)
{
    BowVector bow{std::vector<double>(v.size(), 0.0)};
    for (auto word : {to_string(d.type), to_string(d.color)}) {
        auto idx = v.index_of(word);
        if (!idx) throw std::invalid_argument("encode_bow: \"" + std::string(word) + "\" is not in the vocabulary");
        bow.values[*idx] = 1.0;
    }
    return bow;
}

}  // namespace vtm
