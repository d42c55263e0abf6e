#include "vtm/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace vtm {

namespace {

constexpr std::array<char, 4> kMagic{'V', 'T', 'M', '1'};
// Guards against absurd allocations from corrupt files.
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;

template <typename U>
void put_le(std::ostream& out, U v)
{
    std::array<char, sizeof(U)> buf{};
    for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(buf.data(), buf.size());
}

template <typename U>
U get_le(std::istream& in)
{
    std::array<unsigned char, sizeof(U)> buf{};
    if (!in.read(reinterpret_cast<char*>(buf.data()), buf.size()))
        throw std::runtime_error("checkpoint: unexpected end of file");
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
    return v;
}

}  // namespace

void write_tensors(std::ostream& out, std::span<const NamedTensor> tensors)
{
    out.write(kMagic.data(), kMagic.size());
    put_le<std::uint32_t>(out, kCheckpointVersion);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) put_le<std::uint64_t>(out, d);
        for (double v : t.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
    if (!out) throw std::runtime_error("checkpoint: write failed");
}

std::vector<NamedTensor> read_tensors(std::istream& in)
{
    std::array<char, 4> magic{};
    if (!in.read(magic.data(), magic.size()) || magic != kMagic)
        throw std::runtime_error("checkpoint: bad magic, not a VTM1 container");
    const auto version = get_le<std::uint32_t>(in);
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    const auto count = get_le<std::uint32_t>(in);
    std::vector<NamedTensor> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = get_le<std::uint32_t>(in);
        if (name_len > 4096) throw std::runtime_error("checkpoint: implausible name length");
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len)) throw std::runtime_error("checkpoint: unexpected end of file");
        const auto rank = get_le<std::uint32_t>(in);
        if (rank == 0 || rank > 8) throw std::runtime_error("checkpoint: implausible rank for " + name);
        Shape shape(rank);
        std::uint64_t n = 1;
        for (auto& d : shape) {
            d = get_le<std::uint64_t>(in);
            if (d == 0 || d > kMaxElements || (n *= d) > kMaxElements)
                throw std::runtime_error("checkpoint: implausible shape for " + name);
        }
        std::vector<double> values(n);
        for (auto& v : values) v = std::bit_cast<double>(get_le<std::uint64_t>(in));
        out.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
    }
    return out;
}

void save_tensors(const std::filesystem::path& path, std::span<const NamedTensor> tensors)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
    write_tensors(out, tensors);
}

std::vector<NamedTensor> load_tensors(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
    return read_tensors(in);
}

}  // namespace vtm
