#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "vtm/tensor.hpp"

namespace vtm {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

/// Binary tensor container, all integers little-endian:
///
///   "VTM1" | u32 version | u32 count
///   count x ( u32 name_len | name bytes | u32 rank | rank x u64 dim | f64 payload )
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_tensors(std::ostream& out, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> read_tensors(std::istream& in);

void save_tensors(const std::filesystem::path& path, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> load_tensors(const std::filesystem::path& path);

}  // namespace vtm
