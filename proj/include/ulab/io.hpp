#pragma once

// File formats:
//   CSV   header "label,f0,...,f{d-1}", one sample per row.
//   UDS1  dataset container: "UDS1", u32le header length, JSON {"n","d","k"},
//         n*d f32le features (row-major), n u8 labels.
//   UCK1  checkpoint container: "UCK1", u32le header length, JSON
//         {"layer_sizes","param_count"}, param_count f64le values.

#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ulab/data.hpp"
#include "ulab/error.hpp"
#include "ulab/model.hpp"

namespace ulab {

namespace detail {

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for '" + path + "'");
}

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename U>
U get_le(std::span<const std::uint8_t> in, std::size_t offset) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(in[offset + i]) << (8 * i);
  return v;
}

/// Cursor over a byte buffer that reports the failing offset.
class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::string what)
      : bytes_(bytes), what_(std::move(what)) {}

  void need(std::size_t n, const char* field) const {
    if (bytes_.size() - pos_ < n) {
      throw ParseError(what_ + ": truncated " + field + " at byte offset " + std::to_string(pos_) +
                       " (need " + std::to_string(n) + " bytes, have " +
                       std::to_string(bytes_.size() - pos_) + ")");
    }
  }
  template <typename U>
  U read(const char* field) {
    need(sizeof(U), field);
    U v = get_le<U>(bytes_, pos_);
    pos_ += sizeof(U);
    return v;
  }
  std::string_view read_string(std::size_t n, const char* field) {
    need(n, field);
    std::string_view s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline void write_container_prefix(std::vector<std::uint8_t>& out, std::string_view magic,
                                   const std::string& header) {
  out.insert(out.end(), magic.begin(), magic.end());
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(header.size()));
  out.insert(out.end(), header.begin(), header.end());
}

inline nlohmann::json read_container_prefix(ByteReader& r, std::string_view magic,
                                            const std::string& what) {
  if (r.read_string(4, "magic") != magic) throw ParseError(what + ": bad magic, expected " + std::string(magic));
  const auto len = r.read<std::uint32_t>("header length");
  const std::size_t header_at = r.pos();
  const auto text = r.read_string(len, "header");
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(what + ": malformed JSON header at byte offset " + std::to_string(header_at) +
                     ": " + e.what());
  }
}

template <typename T>
T header_uint(const nlohmann::json& h, const char* key, const std::string& what) {
  if (!h.contains(key) || !h[key].is_number_unsigned())
    throw ParseError(what + ": header field '" + key + "' missing or not a nonnegative integer");
  return h[key].get<T>();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// CSV

inline Dataset parse_csv(std::string_view text, const std::string& source = "<csv>") {
  std::vector<std::string_view> lines;
  for (std::size_t start = 0; start <= text.size();) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = end + 1;
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw ParseError(source + ":1: missing header");

  auto split = [](std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    return out;
  };

  std::string_view header = lines[0];
  if (header.size() >= 3 && header.substr(0, 3) == "\xEF\xBB\xBF") header.remove_prefix(3);
  const auto cols = split(header);
  if (cols.size() < 2 || cols[0] != "label")
    throw ParseError(source + ":1: header must be 'label,f0,...'");
  for (std::size_t j = 1; j < cols.size(); ++j) {
    if (cols[j] != "f" + std::to_string(j - 1))
      throw ParseError(source + ":1: expected column 'f" + std::to_string(j - 1) + "', got '" +
                       std::string(cols[j]) + "'");
  }
  const std::size_t d = cols.size() - 1;

  Dataset ds;
  std::vector<double> values;
  int max_label = -1;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    const std::string where = source + ":" + std::to_string(ln + 1) + ": ";
    const auto fields = split(lines[ln]);
    if (fields.size() != d + 1) {
      throw ParseError(where + "expected " + std::to_string(d + 1) + " fields, got " +
                       std::to_string(fields.size()));
    }
    long long label = 0;
    {
      auto f = fields[0];
      auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), label);
      if (ec != std::errc() || p != f.data() + f.size() || f.empty())
        throw ParseError(where + "label '" + std::string(f) + "' is not an integer");
      if (label < 0) throw ParseError(where + "negative label " + std::to_string(label));
      if (label > 255) throw ParseError(where + "label " + std::to_string(label) + " exceeds 255");
    }
    for (std::size_t j = 1; j <= d; ++j) {
      auto f = fields[j];
      double v = 0.0;
      auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || p != f.data() + f.size() || f.empty())
        throw ParseError(where + "field f" + std::to_string(j - 1) + " '" + std::string(f) +
                         "' is not a number");
      values.push_back(v);
    }
    ds.labels.push_back(static_cast<int>(label));
    max_label = std::max(max_label, static_cast<int>(label));
  }
  if (ds.labels.empty()) throw ParseError(source + ": no samples");
  ds.features = Tensor({ds.labels.size(), d}, std::move(values));
  ds.num_classes = max_label + 1;
  return ds;
}

inline Dataset load_csv(const std::string& path) {
  const auto bytes = detail::read_file_bytes(path);
  return parse_csv(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()), path);
}

inline std::string to_csv(const Dataset& ds) {
  std::string out = "label";
  for (std::size_t j = 0; j < ds.dim(); ++j) out += ",f" + std::to_string(j);
  out += "\n";
  std::array<char, 32> buf{};
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out += std::to_string(ds.labels[i]);
    for (double v : ds.features.row(i)) {
      auto [p, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
      out += ',';
      out.append(buf.data(), p);
    }
    out += "\n";
  }
  return out;
}

inline void save_csv(const Dataset& ds, const std::string& path) {
  const std::string text = to_csv(ds);
  detail::write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

// ---------------------------------------------------------------------------
// UDS1 dataset container

inline std::vector<std::uint8_t> encode_container(const Dataset& ds) {
  ds.validate();
  if (ds.num_classes > 256) throw DataError("container: labels must fit in one byte");
  const nlohmann::ordered_json header = {{"n", ds.size()}, {"d", ds.dim()}, {"k", ds.num_classes}};
  std::vector<std::uint8_t> out;
  detail::write_container_prefix(out, "UDS1", header.dump());
  for (double v : ds.features.values())
    detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  for (int y : ds.labels) out.push_back(static_cast<std::uint8_t>(y));
  return out;
}

inline Dataset decode_container(std::span<const std::uint8_t> bytes, const std::string& what = "UDS1") {
  detail::ByteReader r(bytes, what);
  const auto header = detail::read_container_prefix(r, "UDS1", what);
  const auto n = detail::header_uint<std::size_t>(header, "n", what);
  const auto d = detail::header_uint<std::size_t>(header, "d", what);
  const auto k = detail::header_uint<int>(header, "k", what);
  if (n == 0 || d == 0 || k == 0) throw ParseError(what + ": n, d and k must be positive");

  if (d > r.remaining() || n > r.remaining() / (4 * d + 1)) r.need(r.remaining() + 1, "payload");
  r.need(n * (4 * d + 1), "payload");
  std::vector<double> values(n * d);
  for (auto& v : values) v = static_cast<double>(std::bit_cast<float>(r.read<std::uint32_t>("features")));
  Dataset ds;
  ds.num_classes = k;
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t at = r.pos();
    const int y = r.read<std::uint8_t>("labels");
    if (y >= k) {
      throw ParseError(what + ": label " + std::to_string(y) + " at byte offset " + std::to_string(at) +
                       " is >= declared k=" + std::to_string(k));
    }
    ds.labels[i] = y;
  }
  if (r.remaining() != 0)
    throw ParseError(what + ": " + std::to_string(r.remaining()) + " trailing bytes at offset " +
                     std::to_string(r.pos()));
  ds.features = Tensor({n, d}, std::move(values));
  return ds;
}

inline void save_container(const Dataset& ds, const std::string& path) {
  detail::write_file_bytes(path, encode_container(ds));
}

inline Dataset load_container(const std::string& path) {
  return decode_container(detail::read_file_bytes(path), path);
}

/// Dispatches on extension: ".csv" is CSV, anything else is a UDS1 container.
inline Dataset load_dataset(const std::string& path) {
  if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0) return load_csv(path);
  return load_container(path);
}

// ---------------------------------------------------------------------------
// UCK1 checkpoint container

struct Checkpoint {
  MlpConfig config;
  ParamVector params;

  bool operator==(const Checkpoint&) const = default;
};

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  check_param_length(ckpt.params, ckpt.config);
  const nlohmann::ordered_json header = {{"layer_sizes", ckpt.config.layer_sizes},
                                 {"param_count", ckpt.params.size()}};
  std::vector<std::uint8_t> out;
  detail::write_container_prefix(out, "UCK1", header.dump());
  for (double v : ckpt.params) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& what = "UCK1") {
  detail::ByteReader r(bytes, what);
  const auto header = detail::read_container_prefix(r, "UCK1", what);
  Checkpoint ckpt;
  if (!header.contains("layer_sizes") || !header["layer_sizes"].is_array())
    throw ParseError(what + ": header field 'layer_sizes' missing");
  for (const auto& s : header["layer_sizes"]) {
    if (!s.is_number_unsigned()) throw ParseError(what + ": layer_sizes must be nonnegative integers");
    ckpt.config.layer_sizes.push_back(s.get<std::size_t>());
  }
  try {
    ckpt.config.validate();
  } catch (const ConfigError& e) {
    throw ParseError(what + ": " + e.what());
  }
  const auto count = detail::header_uint<std::size_t>(header, "param_count", what);
  if (count != param_count(ckpt.config))
    throw ParseError(what + ": param_count " + std::to_string(count) + " does not match layer_sizes");
  if (count > r.remaining() / 8) r.need(r.remaining() + 1, "parameters");
  ckpt.params.resize(count);
  for (auto& v : ckpt.params) v = std::bit_cast<double>(r.read<std::uint64_t>("parameters"));
  if (r.remaining() != 0)
    throw ParseError(what + ": " + std::to_string(r.remaining()) + " trailing bytes");
  return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  detail::write_file_bytes(path, encode_checkpoint(ckpt));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return decode_checkpoint(detail::read_file_bytes(path), path);
}

}  // namespace ulab
