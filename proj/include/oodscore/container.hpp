#pragma once

// Directory container: manifest.json plus one headerless little-endian
// binary file per tensor. Reals are IEEE-754 f32, integers are i32, both
// row-major.

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace oodscore {

enum class DType { f32, i32 };

const char* dtype_name(DType dtype);
std::size_t dtype_size(DType dtype);

struct Tensor {
  DType dtype = DType::f32;
  std::vector<std::int64_t> shape;
  std::vector<double> reals;       // populated when dtype == f32
  std::vector<std::int32_t> ints;  // populated when dtype == i32

  std::size_t element_count() const;

  static Tensor real(std::vector<std::int64_t> shape, std::vector<double> values);
  static Tensor integer(std::vector<std::int64_t> shape, std::vector<std::int32_t> values);
};

struct NamedTensor {
  std::string name;
  std::string file;
  Tensor tensor;
};

inline constexpr int kManifestVersion = 1;
inline constexpr const char* kManifestFile = "manifest.json";

/// Serialized manifest text for the given entries, in the given order.
std::string render_manifest(const std::vector<NamedTensor>& entries);

/// Writes the container atomically: everything is staged in a sibling
/// temporary directory which replaces `dir` only once complete. Extra files
/// (sidecars) are written verbatim next to the manifest.
/// Throws ValidationError for non-finite reals or reals outside f32 range,
/// IoError on filesystem failure.
void write_container(const std::filesystem::path& dir, const std::vector<NamedTensor>& entries,
                     const std::map<std::string, std::string>& extra_files = {});

/// Reads and validates a container. Entry names outside `allowed` are
/// rejected. Every referenced file must exist with the exact byte length its
/// shape implies, and every real must be finite.
std::map<std::string, Tensor> read_container(const std::filesystem::path& dir,
                                             const std::set<std::string>& allowed);

/// Writes `contents` to `path` through a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

std::string read_text_file(const std::filesystem::path& path);

}  // namespace oodscore
