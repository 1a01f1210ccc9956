#pragma once

// Weight persistence: a JSON descriptor plus a sidecar file of little-endian
// 64-bit floats in declared parameter order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <boost/crc.hpp>
#include <json.hpp>

#include "pdon/diffcore/dense.hpp"
#include "pdon/error.hpp"

namespace pdon::diffcore {

using Json = nlohmann::ordered_json;

/// CRC-64/XZ (ECMA-182 polynomial, reflected, all-ones init and xor-out).
inline std::uint64_t crc64(std::span<const unsigned char> bytes) {
  boost::crc_optimal<64, 0x42F0E1EBA9EA3693ULL, 0xFFFFFFFFFFFFFFFFULL, 0xFFFFFFFFFFFFFFFFULL, true, true> crc;
  crc.process_bytes(bytes.data(), bytes.size());
  return crc.checksum();
}

inline std::string crc64_hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

inline std::vector<unsigned char> encode_f64_le(std::span<const double> values) {
  std::vector<unsigned char> bytes(values.size() * 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(values[i]);
    for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<unsigned char>(bits >> (8 * b));
  }
  return bytes;
}

inline std::vector<double> decode_f64_le(std::span<const unsigned char> bytes) {
  if (bytes.size() % 8 != 0) throw FormatError("binary payload length is not a multiple of 8 bytes");
  std::vector<double> values(bytes.size() / 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[i * 8 + b]) << (8 * b);
    values[i] = std::bit_cast<double>(bits);
  }
  return values;
}

inline void write_bytes(const std::filesystem::path& path, std::span<const unsigned char> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UserError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw UserError("failed writing '" + path.string() + "'");
}

inline std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UserError("cannot open '" + path.string() + "'");
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UserError("cannot open '" + path.string() + "'");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed JSON in '" + path.string() + "': " + e.what());
  }
}

inline void write_json(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw UserError("cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << '\n';
}

/// Descriptor of one network; `offset` locates it inside a shared weights file.
inline Json describe(const DenseNetwork& net, std::size_t offset = 0) {
  Json j;
  j["layer_dims"] = net.dims();
  j["activation"] = std::string(to_string(net.activation()));
  j["seed"] = net.seed();
  j["parameter_count"] = net.parameter_count();
  j["offset"] = offset;
  return j;
}

/// Rebuilds a network from its descriptor and the decoded weights file.
inline DenseNetwork restore(const Json& j, std::span<const double> all_weights) {
  try {
    auto dims = j.at("layer_dims").get<std::vector<std::size_t>>();
    auto act = activation_from_string(j.at("activation").get<std::string>());
    auto seed = j.at("seed").get<std::uint64_t>();
    auto count = j.at("parameter_count").get<std::size_t>();
    auto offset = j.value("offset", std::size_t{0});
    if (count != DenseNetwork::count_parameters(dims)) {
      throw FormatError("checkpoint: parameter_count does not match layer_dims");
    }
    if (offset + count > all_weights.size()) throw FormatError("checkpoint: weights file is truncated");
    std::vector<double> w(all_weights.begin() + static_cast<std::ptrdiff_t>(offset),
                          all_weights.begin() + static_cast<std::ptrdiff_t>(offset + count));
    return DenseNetwork(std::move(dims), act, std::move(w), seed);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad network descriptor: ") + e.what());
  }
}

/// Writes `<stem>.json` and `<stem>.bin` for a standalone network.
inline void save_network(const DenseNetwork& net, const std::filesystem::path& json_path) {
  auto bin_path = std::filesystem::path(json_path).replace_extension(".bin");
  auto bytes = encode_f64_le(net.weights());
  write_bytes(bin_path, bytes);
  Json j = describe(net);
  j["weights_file"] = bin_path.filename().string();
  j["crc64"] = crc64_hex(crc64(bytes));
  write_json(json_path, j);
}

/// Reads the sidecar named in a descriptor and verifies its checksum.
inline std::vector<double> load_weights_file(const std::filesystem::path& json_path, const Json& j) {
  std::string file;
  std::string crc;
  try {
    file = j.at("weights_file").get<std::string>();
    crc = j.at("crc64").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  auto bytes = read_bytes(json_path.parent_path() / file);
  if (crc64_hex(crc64(bytes)) != crc) throw FormatError("checkpoint: checksum mismatch in '" + file + "'");
  return decode_f64_le(bytes);
}

inline DenseNetwork load_network(const std::filesystem::path& json_path) {
  Json j = read_json(json_path);
  auto weights = load_weights_file(json_path, j);
  DenseNetwork net = restore(j, weights);
  if (weights.size() != net.parameter_count()) throw FormatError("checkpoint: weights file has trailing data");
  return net;
}

}  // namespace pdon::diffcore
