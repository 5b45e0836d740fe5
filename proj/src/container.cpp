#include "oodscore/container.hpp"

#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <system_error>

#include <unistd.h>

#include "json.hpp"
#include "oodscore/error.hpp"

namespace oodscore {
namespace fs = std::filesystem;

namespace {

using ordered_json = nlohmann::ordered_json;

template <typename T>
T to_little_endian(T value) {
  if constexpr (std::endian::native == std::endian::little) {
    return value;
  } else {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    std::memcpy(&value, bytes, sizeof(T));
    return value;
  }
}

std::string encode(const Tensor& t, const std::string& name) {
  std::string out;
  out.resize(t.element_count() * dtype_size(t.dtype));
  char* dst = out.data();
  if (t.dtype == DType::f32) {
    for (double v : t.reals) {
      if (!std::isfinite(v)) {
        throw ValidationError("tensor '" + name + "' contains a non-finite value");
      }
      const float f = static_cast<float>(v);
      if (!std::isfinite(f)) {
        throw ValidationError("tensor '" + name + "' has a value outside the f32 range");
      }
      const std::uint32_t bits = to_little_endian(std::bit_cast<std::uint32_t>(f));
      std::memcpy(dst, &bits, 4);
      dst += 4;
    }
  } else {
    for (std::int32_t v : t.ints) {
      const std::int32_t le = to_little_endian(v);
      std::memcpy(dst, &le, 4);
      dst += 4;
    }
  }
  return out;
}

void write_bytes(const fs::path& path, const std::string& bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  os.flush();
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

std::string read_bytes(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  if (is.bad()) throw IoError("read failed for '" + path.string() + "'");
  return std::move(ss).str();
}

fs::path staging_path(const fs::path& target) {
  static std::atomic<unsigned> counter{0};
  fs::path name = target.filename();
  if (name.empty()) name = target.parent_path().filename();
  return target.parent_path() /
         (name.string() + ".tmp-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
}

// A target path ending in a separator has an empty filename.
fs::path normalize_target(const fs::path& p) {
  fs::path out = p.lexically_normal();
  if (out.filename().empty()) out = out.parent_path();
  return out;
}

void replace_with(const fs::path& staged, const fs::path& target) {
  std::error_code ec;
  if (fs::exists(target, ec)) {
    const fs::path old = staging_path(target).concat(".old");
    fs::rename(target, old, ec);
    if (ec) throw IoError("cannot replace '" + target.string() + "': " + ec.message());
    fs::rename(staged, target, ec);
    if (ec) {
      fs::rename(old, target);
      throw IoError("cannot move output into '" + target.string() + "': " + ec.message());
    }
    fs::remove_all(old, ec);
    return;
  }
  fs::rename(staged, target, ec);
  if (ec) throw IoError("cannot move output into '" + target.string() + "': " + ec.message());
}

[[noreturn]] void bad_manifest(const fs::path& dir, const std::string& what) {
  throw ValidationError("invalid manifest in '" + dir.string() + "': " + what);
}

void check_keys(const nlohmann::json& obj, const std::set<std::string>& expected,
                const fs::path& dir, const std::string& where) {
  for (const auto& [key, _] : obj.items()) {
    if (!expected.contains(key)) bad_manifest(dir, "unknown key '" + key + "' in " + where);
  }
  for (const auto& key : expected) {
    if (!obj.contains(key)) bad_manifest(dir, "missing key '" + key + "' in " + where);
  }
}

bool is_plain_filename(const std::string& s) {
  if (s.empty() || s == "." || s == "..") return false;
  return s.find('/') == std::string::npos && s.find('\\') == std::string::npos &&
         s != kManifestFile;
}

}  // namespace

const char* dtype_name(DType dtype) { return dtype == DType::f32 ? "f32" : "i32"; }

std::size_t dtype_size(DType) { return 4; }

std::size_t Tensor::element_count() const {
  std::size_t n = 1;
  for (auto s : shape) n *= static_cast<std::size_t>(s);
  return n;
}

Tensor Tensor::real(std::vector<std::int64_t> shape, std::vector<double> values) {
  Tensor t;
  t.dtype = DType::f32;
  t.shape = std::move(shape);
  t.reals = std::move(values);
  return t;
}

Tensor Tensor::integer(std::vector<std::int64_t> shape, std::vector<std::int32_t> values) {
  Tensor t;
  t.dtype = DType::i32;
  t.shape = std::move(shape);
  t.ints = std::move(values);
  return t;
}

std::string render_manifest(const std::vector<NamedTensor>& entries) {
  ordered_json manifest;
  manifest["version"] = kManifestVersion;
  ordered_json table = ordered_json::object();
  for (const auto& e : entries) {
    ordered_json entry;
    entry["file"] = e.file;
    entry["dtype"] = dtype_name(e.tensor.dtype);
    entry["shape"] = e.tensor.shape;
    table[e.name] = std::move(entry);
  }
  manifest["entries"] = std::move(table);
  return manifest.dump() + "\n";
}

void write_container(const fs::path& dir_in, const std::vector<NamedTensor>& entries,
                     const std::map<std::string, std::string>& extra_files) {
  const fs::path dir = normalize_target(dir_in);
  // Encode first so that validation failures leave the filesystem untouched.
  std::vector<std::string> payloads;
  std::set<std::string> names;
  std::set<std::string> files;
  payloads.reserve(entries.size());
  for (const auto& e : entries) {
    if (!names.insert(e.name).second) throw ValidationError("duplicate tensor name '" + e.name + "'");
    if (!is_plain_filename(e.file) || !files.insert(e.file).second) {
      throw ValidationError("bad or duplicate file name '" + e.file + "' for tensor '" + e.name + "'");
    }
    if (e.tensor.shape.empty()) throw ValidationError("tensor '" + e.name + "' has an empty shape");
    for (auto s : e.tensor.shape) {
      if (s <= 0) throw ValidationError("tensor '" + e.name + "' has a non-positive dimension");
    }
    const std::size_t stored =
        e.tensor.dtype == DType::f32 ? e.tensor.reals.size() : e.tensor.ints.size();
    if (stored != e.tensor.element_count()) {
      throw ValidationError("tensor '" + e.name + "' holds " + std::to_string(stored) +
                            " values but its shape implies " +
                            std::to_string(e.tensor.element_count()));
    }
    payloads.push_back(encode(e.tensor, e.name));
  }
  for (const auto& [file, _] : extra_files) {
    if (!is_plain_filename(file) || files.contains(file)) {
      throw ValidationError("bad sidecar file name '" + file + "'");
    }
  }
  const std::string manifest = render_manifest(entries);

  std::error_code ec;
  if (!dir.parent_path().empty() && !fs::is_directory(dir.parent_path(), ec)) {
    throw IoError("parent directory of '" + dir.string() + "' does not exist");
  }
  const fs::path staged = staging_path(dir);
  if (!fs::create_directory(staged, ec) || ec) {
    throw IoError("cannot create '" + staged.string() + "': " + ec.message());
  }
  try {
    for (std::size_t i = 0; i < entries.size(); ++i) write_bytes(staged / entries[i].file, payloads[i]);
    for (const auto& [file, contents] : extra_files) write_bytes(staged / file, contents);
    write_bytes(staged / kManifestFile, manifest);
    replace_with(staged, dir);
  } catch (...) {
    fs::remove_all(staged, ec);
    throw;
  }
}

std::map<std::string, Tensor> read_container(const fs::path& dir,
                                             const std::set<std::string>& allowed) {
  const fs::path manifest_path = dir / kManifestFile;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("container directory '" + dir.string() + "' not found");
  if (!fs::exists(manifest_path, ec)) throw IoError("'" + manifest_path.string() + "' not found");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_bytes(manifest_path));
  } catch (const nlohmann::json::parse_error& e) {
    bad_manifest(dir, std::string("parse failure: ") + e.what());
  }
  if (!manifest.is_object()) bad_manifest(dir, "top level is not an object");
  check_keys(manifest, {"version", "entries"}, dir, "manifest");
  const auto& version = manifest["version"];
  if (!version.is_number_integer() || version.get<long long>() != kManifestVersion) {
    bad_manifest(dir, "unsupported version " + version.dump());
  }
  const auto& table = manifest["entries"];
  if (!table.is_object()) bad_manifest(dir, "'entries' is not an object");

  std::map<std::string, Tensor> out;
  std::set<std::string> files;
  for (const auto& [name, entry] : table.items()) {
    if (!allowed.contains(name)) bad_manifest(dir, "unexpected tensor name '" + name + "'");
    if (!entry.is_object()) bad_manifest(dir, "entry '" + name + "' is not an object");
    check_keys(entry, {"file", "dtype", "shape"}, dir, "entry '" + name + "'");

    const auto& file = entry["file"];
    if (!file.is_string() || !is_plain_filename(file.get<std::string>())) {
      bad_manifest(dir, "entry '" + name + "' has an invalid file reference");
    }
    const std::string filename = file.get<std::string>();
    if (!files.insert(filename).second) {
      bad_manifest(dir, "file '" + filename + "' is referenced twice");
    }

    Tensor t;
    const auto& dtype = entry["dtype"];
    if (dtype == "f32") {
      t.dtype = DType::f32;
    } else if (dtype == "i32") {
      t.dtype = DType::i32;
    } else {
      bad_manifest(dir, "entry '" + name + "' has unknown dtype " + dtype.dump());
    }

    const auto& shape = entry["shape"];
    if (!shape.is_array() || shape.empty()) bad_manifest(dir, "entry '" + name + "' has an invalid shape");
    for (const auto& s : shape) {
      if (!s.is_number_integer() || s.get<long long>() <= 0) {
        bad_manifest(dir, "entry '" + name + "' has a non-positive or non-integer dimension");
      }
      t.shape.push_back(s.get<std::int64_t>());
    }

    const fs::path data_path = dir / filename;
    if (!fs::is_regular_file(data_path, ec)) {
      throw ValidationError("tensor '" + name + "': file '" + filename + "' does not exist");
    }
    const std::string bytes = read_bytes(data_path);
    const std::size_t count = t.element_count();
    if (bytes.size() != count * dtype_size(t.dtype)) {
      throw ValidationError("tensor '" + name + "': byte-length mismatch (file has " +
                            std::to_string(bytes.size()) + " bytes, shape requires " +
                            std::to_string(count * dtype_size(t.dtype)) + ")");
    }
    const char* src = bytes.data();
    if (t.dtype == DType::f32) {
      t.reals.resize(count);
      for (std::size_t i = 0; i < count; ++i, src += 4) {
        std::uint32_t bits;
        std::memcpy(&bits, src, 4);
        const float f = std::bit_cast<float>(to_little_endian(bits));
        if (!std::isfinite(f)) {
          throw ValidationError("tensor '" + name + "' contains a non-finite value at index " +
                                std::to_string(i));
        }
        t.reals[i] = f;
      }
    } else {
      t.ints.resize(count);
      for (std::size_t i = 0; i < count; ++i, src += 4) {
        std::int32_t v;
        std::memcpy(&v, src, 4);
        t.ints[i] = to_little_endian(v);
      }
    }
    out.emplace(name, std::move(t));
  }
  return out;
}

void write_file_atomic(const fs::path& path, const std::string& contents) {
  const fs::path target = normalize_target(path);
  const fs::path staged = staging_path(target);
  try {
    write_bytes(staged, contents);
  } catch (...) {
    std::error_code ec;
    fs::remove(staged, ec);
    throw;
  }
  std::error_code ec;
  fs::rename(staged, target, ec);
  if (ec) {
    fs::remove(staged, ec);
    throw IoError("cannot write '" + target.string() + "'");
  }
}

std::string read_text_file(const fs::path& path) { return read_bytes(path); }

}  // namespace oodscore
