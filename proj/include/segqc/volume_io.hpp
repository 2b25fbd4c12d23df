#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "segqc/binary_io.hpp"
#include "segqc/error.hpp"
#include "segqc/volume.hpp"

namespace segqc {

namespace fs = std::filesystem;

enum class VolumeFormat { raw_json, nifti1 };

inline VolumeFormat parse_volume_format(const std::string& s) {
  if (s == "raw_json" || s == "raw") return VolumeFormat::raw_json;
  if (s == "nifti1" || s == "nifti") return VolumeFormat::nifti1;
  throw ArgumentError("unknown volume format '" + s + "'");
}

// ---------------------------------------------------------------------------
// NIfTI-1 (single file, uncompressed)

enum class NiftiDatatype : std::int16_t { uint8 = 2, int16 = 4, float32 = 16, uint16 = 512 };

struct NiftiImage {
  std::array<std::size_t, 3> dims{};
  std::array<double, 3> pixdim{};
  NiftiDatatype datatype = NiftiDatatype::int16;
  double scl_slope = 0.0;
  double scl_inter = 0.0;
  std::vector<double> values;  // x fastest
};

namespace detail {

inline std::size_t nifti_bytes_per_voxel(NiftiDatatype t) {
  switch (t) {
    case NiftiDatatype::uint8: return 1;
    case NiftiDatatype::int16:
    case NiftiDatatype::uint16: return 2;
    case NiftiDatatype::float32: return 4;
  }
  return 0;
}

}  // namespace detail

inline NiftiImage read_nifti1(const fs::path& path) {
  const auto bytes = io::read_bytes(path);
  const std::string where = "NIfTI '" + path.string() + "': ";
  if (bytes.size() < 352) throw DataError(where + "file shorter than the 348-byte header");

  bool le = true;
  if (io::load<std::int32_t>(bytes.data(), true) != 348) {
    if (io::load<std::int32_t>(bytes.data(), false) != 348) throw DataError(where + "sizeof_hdr is not 348");
    le = false;
  }
  if (std::memcmp(bytes.data() + 344, "n+1", 4) != 0) {
    throw DataError(where + "magic is not 'n+1' (only single-file NIfTI-1 is supported)");
  }

  NiftiImage img;
  const auto ndim = io::load<std::int16_t>(bytes.data() + 40, le);
  if (ndim < 1 || ndim > 7) throw DataError(where + "dim[0] out of range");
  for (int a = 0; a < 3; ++a) {
    const std::int16_t d = a < ndim ? io::load<std::int16_t>(bytes.data() + 42 + 2 * a, le) : 1;
    if (d < 1) throw DataError(where + "non-positive dimension");
    img.dims[a] = static_cast<std::size_t>(d);
  }
  for (int a = 3; a < ndim; ++a) {
    if (io::load<std::int16_t>(bytes.data() + 42 + 2 * a, le) > 1) {
      throw DataError(where + "only 3D volumes are supported");
    }
  }

  const auto dt = io::load<std::int16_t>(bytes.data() + 70, le);
  switch (dt) {
    case 2:
    case 4:
    case 16:
    case 512: img.datatype = static_cast<NiftiDatatype>(dt); break;
    default: throw DataError(where + "unsupported datatype code " + std::to_string(dt));
  }
  for (int a = 0; a < 3; ++a) {
    img.pixdim[a] = std::fabs(static_cast<double>(io::load<float>(bytes.data() + 80 + 4 * a, le)));
  }
  const auto vox_offset = static_cast<std::size_t>(io::load<float>(bytes.data() + 108, le));
  img.scl_slope = io::load<float>(bytes.data() + 112, le);
  img.scl_inter = io::load<float>(bytes.data() + 116, le);

  const std::size_t n = img.dims[0] * img.dims[1] * img.dims[2];
  const std::size_t bpv = detail::nifti_bytes_per_voxel(img.datatype);
  const std::size_t offset = std::max<std::size_t>(vox_offset, 352);
  if (bytes.size() < offset || bytes.size() - offset != n * bpv) {
    throw DataError(where + "payload holds " + std::to_string(bytes.size() - std::min(bytes.size(), offset)) +
                    " bytes, header requires " + std::to_string(n * bpv));
  }
  img.values.resize(n);
  const std::uint8_t* p = bytes.data() + offset;
  for (std::size_t i = 0; i < n; ++i, p += bpv) {
    switch (img.datatype) {
      case NiftiDatatype::uint8: img.values[i] = *p; break;
      case NiftiDatatype::int16: img.values[i] = io::load<std::int16_t>(p, le); break;
      case NiftiDatatype::uint16: img.values[i] = io::load<std::uint16_t>(p, le); break;
      case NiftiDatatype::float32: img.values[i] = io::load<float>(p, le); break;
    }
  }
  return img;
}

namespace detail {

inline bool has_scaling(const NiftiImage& img) {
  return img.scl_slope != 0.0 && (img.scl_slope != 1.0 || img.scl_inter != 0.0);
}

inline ImageGrid nifti_to_image(const NiftiImage& img) {
  std::vector<std::int16_t> out(img.values.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = img.values[i];
    if (has_scaling(img)) v = v * img.scl_slope + img.scl_inter;
    v = std::round(v);
    if (!(v >= std::numeric_limits<std::int16_t>::min() && v <= std::numeric_limits<std::int16_t>::max())) {
      throw DataError("image intensity outside the int16 range");
    }
    out[i] = static_cast<std::int16_t>(v);
  }
  return ImageGrid(img.dims, std::move(out));
}

inline LabelGrid nifti_to_labels(const NiftiImage& img) {
  std::vector<std::uint16_t> out(img.values.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = img.values[i];
    if (v < 0 || v > 65535 || v != std::floor(v)) throw DataError("label values must be integers in [0, 65535]");
    out[i] = static_cast<std::uint16_t>(v);
  }
  return LabelGrid(img.dims, std::move(out));
}

}  // namespace detail

inline ClassTable parse_class_table(const nlohmann::json& j) {
  ClassTable table;
  if (j.is_null()) return table;
  if (!j.is_object()) throw DataError("'classes' must be an object mapping id to name");
  for (const auto& [key, name] : j.items()) {
    std::size_t pos = 0;
    unsigned long id = 0;
    try {
      id = std::stoul(key, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != key.size() || id == 0 || id > 65535) throw DataError("invalid class id '" + key + "'");
    table.emplace(static_cast<ClassId>(id), name.get<std::string>());
  }
  return table;
}

inline nlohmann::json class_table_json(const ClassTable& table) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [id, name] : table) j[std::to_string(id)] = name;
  return j;
}

namespace detail {

template <typename T, std::size_t N>
std::array<T, N> json_array(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_array() || j[key].size() != N) {
    throw DataError(std::string("sidecar key '") + key + "' must be an array of " + std::to_string(N));
  }
  std::array<T, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = j[key][i].get<T>();
  return out;
}

template <typename T>
Grid3<T> read_raw_grid(const fs::path& path, const std::array<std::size_t, 3>& dims) {
  const auto bytes = io::read_bytes(path);
  const std::size_t expected = Grid3<T>::count(dims) * sizeof(T);
  if (bytes.size() != expected) {
    throw DataError("payload '" + path.string() + "' holds " + std::to_string(bytes.size() / sizeof(T)) +
                    " voxels, header declares " + std::to_string(Grid3<T>::count(dims)));
  }
  return Grid3<T>(dims, io::decode_le<T>(bytes));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Volumes

// raw_json: `path` is the JSON sidecar. nifti1: `path` is a sidecar of the same
// schema whose files are .nii images; dims and spacing come from the NIfTI
// headers (sidecar values, when given, must agree).
inline LabeledVolume load_volume(const fs::path& path, VolumeFormat format = VolumeFormat::raw_json) {
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(io::read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("sidecar '" + path.string() + "': " + e.what());
  }
  if (!side.is_object() || !side.contains("files") || !side["files"].is_object()) {
    throw DataError("sidecar '" + path.string() + "' lacks a 'files' object");
  }
  const auto& files = side["files"];
  for (const char* key : {"image", "ground_truth"}) {
    if (!files.contains(key)) throw DataError(std::string("sidecar 'files' lacks '") + key + "'");
  }
  const fs::path dir = path.parent_path();
  auto file = [&](const char* key) { return dir / files[key].get<std::string>(); };

  LabeledVolume v;
  v.id = side.value("id", path.stem().string());
  v.classes = parse_class_table(side.value("classes", nlohmann::json()));
  v.axial_axis = side.value("axial_axis", std::size_t{2});

  try {
    if (format == VolumeFormat::raw_json) {
      for (const char* key : {"dims", "spacing_mm", "dtype", "classes"}) {
        if (!side.contains(key)) throw DataError(std::string("sidecar lacks required key '") + key + "'");
      }
      const auto dims = detail::json_array<std::size_t, 3>(side, "dims");
      v.spacing_mm = detail::json_array<double, 3>(side, "spacing_mm");
      if (side["dtype"].get<std::string>() != "int16") {
        throw DataError("raw_json image dtype must be 'int16'");
      }
      v.image = detail::read_raw_grid<std::int16_t>(file("image"), dims);
      v.ground_truth = detail::read_raw_grid<std::uint16_t>(file("ground_truth"), dims);
      if (files.contains("candidate")) v.candidate = detail::read_raw_grid<std::uint16_t>(file("candidate"), dims);
    } else {
      const auto img = read_nifti1(file("image"));
      v.image = detail::nifti_to_image(img);
      v.spacing_mm = img.pixdim;
      v.ground_truth = detail::nifti_to_labels(read_nifti1(file("ground_truth")));
      if (files.contains("candidate")) v.candidate = detail::nifti_to_labels(read_nifti1(file("candidate")));
      if (side.contains("dims") && detail::json_array<std::size_t, 3>(side, "dims") != img.dims) {
        throw DataError("sidecar dims disagree with the NIfTI header");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("sidecar '" + path.string() + "': " + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  }
  validate(v);
  return v;
}

// Builds a volume straight from NIfTI files.
inline LabeledVolume load_nifti_volume(const fs::path& image, const fs::path& ground_truth,
                                       const std::optional<fs::path>& candidate = std::nullopt,
                                       ClassTable classes = {}, std::string id = {}) {
  const auto img = read_nifti1(image);
  LabeledVolume v;
  v.id = id.empty() ? image.stem().string() : std::move(id);
  v.image = detail::nifti_to_image(img);
  v.spacing_mm = img.pixdim;
  v.ground_truth = detail::nifti_to_labels(read_nifti1(ground_truth));
  if (candidate) v.candidate = detail::nifti_to_labels(read_nifti1(*candidate));
  v.classes = std::move(classes);
  validate(v);
  return v;
}

// Writes `<stem>_image.raw`, `<stem>_gt.raw` and optionally `<stem>_cand.raw`
// next to the sidecar.
inline void write_volume(const LabeledVolume& v, const fs::path& sidecar) {
  const std::string stem = sidecar.stem().string();
  const fs::path dir = sidecar.parent_path();
  nlohmann::json files = {{"image", stem + "_image.raw"}, {"ground_truth", stem + "_gt.raw"}};
  io::write_bytes(dir / (stem + "_image.raw"), io::encode_le<std::int16_t>(v.image.values()));
  io::write_bytes(dir / (stem + "_gt.raw"), io::encode_le<std::uint16_t>(v.ground_truth.values()));
  if (v.candidate) {
    files["candidate"] = stem + "_cand.raw";
    io::write_bytes(dir / (stem + "_cand.raw"), io::encode_le<std::uint16_t>(v.candidate->values()));
  }
  nlohmann::json side = {
      {"id", v.id},
      {"dims", v.image.dims()},
      {"spacing_mm", v.spacing_mm},
      {"dtype", "int16"},
      {"axial_axis", v.axial_axis},
      {"classes", class_table_json(v.classes)},
      {"files", files},
  };
  io::write_text(sidecar, side.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Dataset manifests

struct ManifestEntry {
  fs::path path;
  VolumeFormat format = VolumeFormat::raw_json;
};

struct DatasetManifest {
  std::string name;
  std::vector<ManifestEntry> volumes;
};

// Accepts either a JSON list of entries or {"name": ..., "volumes": [...]}.
// An entry is a sidecar path string or {"path": ..., "format": ...}; relative
// paths resolve against the manifest's directory.
inline DatasetManifest load_manifest(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest '" + path.string() + "': " + e.what());
  }
  DatasetManifest m;
  m.name = path.stem().string();
  const nlohmann::json* list = &j;
  if (j.is_object()) {
    m.name = j.value("name", m.name);
    if (!j.contains("volumes")) throw DataError("manifest object lacks 'volumes'");
    list = &j["volumes"];
  }
  if (!list->is_array()) throw DataError("manifest volumes must be a list");
  for (const auto& e : *list) {
    ManifestEntry entry;
    if (e.is_string()) {
      entry.path = e.get<std::string>();
    } else if (e.is_object() && e.contains("path")) {
      entry.path = e["path"].get<std::string>();
      if (e.contains("format")) entry.format = parse_volume_format(e["format"].get<std::string>());
    } else {
      throw DataError("manifest entry must be a path or an object with 'path'");
    }
    if (entry.path.is_relative()) entry.path = path.parent_path() / entry.path;
    m.volumes.push_back(std::move(entry));
  }
  return m;
}

inline void write_manifest(const DatasetManifest& m, const fs::path& path) {
  nlohmann::json vols = nlohmann::json::array();
  for (const auto& e : m.volumes) {
    vols.push_back({{"path", fs::relative(e.path, path.parent_path()).generic_string()},
                    {"format", e.format == VolumeFormat::raw_json ? "raw_json" : "nifti1"}});
  }
  io::write_text(path, nlohmann::json{{"name", m.name}, {"volumes", vols}}.dump(2) + "\n");
}

}  // namespace segqc
