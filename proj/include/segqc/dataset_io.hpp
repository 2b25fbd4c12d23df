#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "segqc/binary_io.hpp"
#include "segqc/error.hpp"
#include "segqc/sample.hpp"

namespace segqc {

// On-disk layout of a synthesized dataset:
//   records.bin  concatenated records, each kSliceSize^2 little-endian f32
//                pixels followed by kSliceSize^2 u8 mask values
//   index.json   {"version", "slice_size", "record_bytes", "records": [...],
//                 "config": {...}} with one metadata object per record
inline constexpr std::size_t kRecordBytes = kSliceSize * kSliceSize * (sizeof(float) + 1);
inline constexpr const char* kRecordsFile = "records.bin";
inline constexpr const char* kIndexFile = "index.json";

inline nlohmann::json degradation_json(const DegradationSpec& d) {
  return {{"kind", std::string(to_string(d.kind))}, {"severity", d.severity}, {"seed", d.seed}};
}

inline DegradationSpec degradation_from_json(const nlohmann::json& j) {
  return {parse_degradation_kind(j.at("kind").get<std::string>()), j.at("severity").get<double>(),
          j.at("seed").get<std::uint64_t>()};
}

inline nlohmann::json pair_metadata(const SlicePair& p) {
  nlohmann::json j = {{"class_id", p.class_id},
                      {"volume_id", p.volume_id},
                      {"slice_index", p.slice_index},
                      {"empty_mask", p.empty_mask}};
  j["true_dsc"] = p.true_dsc ? nlohmann::json(*p.true_dsc) : nlohmann::json(nullptr);
  if (p.degradation) j["degradation"] = degradation_json(*p.degradation);
  return j;
}

// Streams records to disk; the index is written by finish(). Both files go
// through `.partial` temporaries and only appear once finish() succeeds.
class DatasetWriter {
 public:
  explicit DatasetWriter(std::filesystem::path dir)
      : dir_(std::move(dir)), records_(dir_ / kRecordsFile), index_(dir_ / kIndexFile) {
    std::filesystem::create_directories(dir_);
    out_.open(records_.temp_path(), std::ios::binary | std::ios::trunc);
    if (!out_) throw DataError("cannot write '" + records_.temp_path().string() + "'");
    buffer_.reserve(kRecordBytes);
  }

  void add(const SlicePair& p) {
    if (p.pixels.dims() != Grid2<float>::Dims{kSliceSize, kSliceSize} ||
        p.mask.dims() != Mask2::Dims{kSliceSize, kSliceSize}) {
      throw ArgumentError("slice pairs must be " + std::to_string(kSliceSize) + "x" + std::to_string(kSliceSize));
    }
    buffer_.clear();
    for (float v : p.pixels) io::append_le(buffer_, v);
    buffer_.insert(buffer_.end(), p.mask.begin(), p.mask.end());
    out_.write(reinterpret_cast<const char*>(buffer_.data()), static_cast<std::streamsize>(buffer_.size()));
    records_json_.push_back(pair_metadata(p));
  }

  std::size_t size() const { return records_json_.size(); }

  void finish(const nlohmann::json& config = nlohmann::json::object()) {
    out_.close();
    if (!out_) throw DataError("write failed for '" + records_.temp_path().string() + "'");
    nlohmann::json index = {{"version", 1},
                            {"slice_size", kSliceSize},
                            {"record_bytes", kRecordBytes},
                            {"records", std::move(records_json_)},
                            {"config", config}};
    io::write_text(index_.temp_path(), index.dump(1) + "\n");
    records_.commit();
    index_.commit();
  }

 private:
  std::filesystem::path dir_;
  io::AtomicFile records_;
  io::AtomicFile index_;
  std::ofstream out_;
  std::vector<std::uint8_t> buffer_;
  nlohmann::json records_json_ = nlohmann::json::array();
};

inline void write_dataset(const std::filesystem::path& dir, std::span<const SlicePair> pairs,
                          const nlohmann::json& config = nlohmann::json::object()) {
  DatasetWriter w(dir);
  for (const auto& p : pairs) w.add(p);
  w.finish(config);
}

inline nlohmann::json read_dataset_index(const std::filesystem::path& dir) {
  try {
    auto j = nlohmann::json::parse(io::read_text(dir / kIndexFile));
    if (j.value("slice_size", std::size_t{0}) != kSliceSize) throw DataError("dataset slice_size mismatch");
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("dataset index '" + (dir / kIndexFile).string() + "': " + e.what());
  }
}

// Reads records one at a time so large datasets never sit in memory whole.
template <typename Sink>
void read_dataset(const std::filesystem::path& dir, Sink&& sink) {
  const auto index = read_dataset_index(dir);
  const auto& records = index.at("records");
  std::ifstream in(dir / kRecordsFile, std::ios::binary);
  if (!in) throw DataError("cannot open '" + (dir / kRecordsFile).string() + "'");
  in.seekg(0, std::ios::end);
  if (static_cast<std::size_t>(in.tellg()) != records.size() * kRecordBytes) {
    throw DataError("records.bin size does not match the index record count");
  }
  in.seekg(0);
  std::vector<std::uint8_t> buf(kRecordBytes);
  constexpr std::size_t npix = kSliceSize * kSliceSize;
  for (const auto& meta : records) {
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!in) throw DataError("short read from records.bin");
    SlicePair p;
    p.pixels = Grid2<float>({kSliceSize, kSliceSize},
                            io::decode_le<float>(std::span<const std::uint8_t>(buf.data(), npix * sizeof(float))));
    p.mask = Mask2({kSliceSize, kSliceSize},
                   std::vector<std::uint8_t>(buf.begin() + npix * sizeof(float), buf.end()));
    p.class_id = meta.at("class_id").get<ClassId>();
    p.volume_id = meta.at("volume_id").get<std::string>();
    p.slice_index = meta.at("slice_index").get<std::int64_t>();
    p.empty_mask = meta.value("empty_mask", false);
    if (!meta.at("true_dsc").is_null()) p.true_dsc = meta["true_dsc"].get<double>();
    if (meta.contains("degradation")) p.degradation = degradation_from_json(meta["degradation"]);
    sink(std::move(p));
  }
}

inline std::vector<SlicePair> read_dataset(const std::filesystem::path& dir) {
  std::vector<SlicePair> out;
  read_dataset(dir, [&](SlicePair&& p) { out.push_back(std::move(p)); });
  return out;
}

}  // namespace segqc
