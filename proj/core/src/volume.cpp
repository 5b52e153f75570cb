#include "stprog/volume.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "stprog/errors.hpp"

namespace stprog {

namespace {

static_assert(std::endian::native == std::endian::little,
              "volume payload assumes a little-endian host");

std::string format_double(double v) { return nlohmann::json(v).dump(); }

}  // namespace

void write_volume(const std::filesystem::path& path, const Volume& v) {
  if (v.voxels.size() != v.depth * v.height * v.width) {
    throw IoError("write_volume: voxel buffer does not match extents");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("write_volume: cannot open " + path.string());

  // Header keys are emitted in a fixed documented order.
  out << "{\"shape\":[" << v.depth << ',' << v.height << ',' << v.width
      << "],\"spacing_mm\":[" << format_double(v.spacing_z) << ','
      << format_double(v.spacing_y) << ',' << format_double(v.spacing_x)
      << "],\"dtype\":\"f32le\"}\n";

  std::vector<float> payload(v.voxels.size());
  for (std::size_t i = 0; i < v.voxels.size(); ++i)
    payload[i] = static_cast<float>(v.voxels[i]);
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!out) throw IoError("write_volume: short write to " + path.string());
}

Volume read_volume(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_volume: cannot open " + path.string());
  std::string header;
  if (!std::getline(in, header)) {
    throw IoError("read_volume: missing header line in " + path.string());
  }

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("read_volume: bad header in " + path.string() + ": " + e.what());
  }
  if (!j.contains("shape") || !j.contains("spacing_mm") || !j.contains("dtype") ||
      j["dtype"] != "f32le" || j["shape"].size() != 3 ||
      j["spacing_mm"].size() != 3) {
    throw IoError("read_volume: malformed header in " + path.string());
  }

  Volume v;
  v.depth = j["shape"][0].get<std::size_t>();
  v.height = j["shape"][1].get<std::size_t>();
  v.width = j["shape"][2].get<std::size_t>();
  v.spacing_z = j["spacing_mm"][0].get<double>();
  v.spacing_y = j["spacing_mm"][1].get<double>();
  v.spacing_x = j["spacing_mm"][2].get<double>();
  if (v.depth == 0 || v.height == 0 || v.width == 0 || v.spacing_z <= 0 ||
      v.spacing_y <= 0 || v.spacing_x <= 0) {
    throw IoError("read_volume: invalid extents or spacing in " + path.string());
  }

  const std::size_t count = v.depth * v.height * v.width;
  std::vector<float> payload(count);
  in.read(reinterpret_cast<char*>(payload.data()),
          static_cast<std::streamsize>(count * sizeof(float)));
  if (static_cast<std::size_t>(in.gcount()) != count * sizeof(float)) {
    throw IoError("read_volume: payload shorter than header shape in " +
                  path.string());
  }
  char extra;
  if (in.read(&extra, 1)) {
    throw IoError("read_volume: payload longer than header shape in " +
                  path.string());
  }
  v.voxels.resize(count);
  for (std::size_t i = 0; i < count; ++i)
    v.voxels[i] = static_cast<double>(payload[i]);
  return v;
}

}  // namespace stprog
