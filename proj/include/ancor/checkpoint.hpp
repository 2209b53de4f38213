#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ancor/matrix.hpp"
#include "ancor/model.hpp"

namespace ancor {

// Binary archive of named matrices:
//   "ANCR" | u32 version | u32 count |
//   count x ( u16 name_len | name | u32 ndim | u32 dims[ndim] | f64 values[] )
// All integers and doubles little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  Matrix value;
};

using ArrayList = std::vector<NamedArray>;

std::vector<std::uint8_t> encode_arrays(const ArrayList& arrays);
ArrayList decode_arrays(const std::vector<std::uint8_t>& bytes);

void write_arrays(const std::filesystem::path& path, const ArrayList& arrays);
ArrayList read_arrays(const std::filesystem::path& path);

const Matrix* find_array(const ArrayList& arrays, const std::string& name);
const Matrix& require_array(const ArrayList& arrays, const std::string& name);

// Model <-> arrays. Names: encoder.<i>.w, encoder.<i>.b, embedder.<i>.{w,b},
// classifier.W, momentum.encoder.<i>.{w,b}, momentum.embedder.<i>.{w,b},
// meta.model.
ArrayList model_arrays(const AncorModel& model);
AncorModel model_from_arrays(const ArrayList& arrays);

void save_checkpoint(const AncorModel& model, const std::filesystem::path& path);
AncorModel load_checkpoint(const std::filesystem::path& path);

// FNV-1a over a file's bytes; used for run manifests and regression hashes.
std::uint64_t hash_file(const std::filesystem::path& path);
std::uint64_t hash_bytes(const std::vector<std::uint8_t>& bytes);

}  // namespace ancor
