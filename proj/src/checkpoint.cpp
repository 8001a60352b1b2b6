#include "srf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace srf {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <class T>
void put_raw(std::string& out, std::span<const T> values) {
  const auto* p = reinterpret_cast<const char*>(values.data());
  out.append(p, values.size() * sizeof(T));
}

std::string header_line(const std::string& name, DType dtype, const Shape& shape) {
  std::string line = name + "\t" + dtype_name(dtype) + "\t";
  for (std::size_t i = 0; i < shape.size(); ++i) line += (i ? "x" : "") + std::to_string(shape[i]);
  return line + "\n";
}

Shape parse_shape(const std::string& s, std::size_t offset) {
  Shape shape;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, 'x')) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(part, &used);
      if (used != part.size() || v <= 0) throw std::invalid_argument(part);
      shape.push_back(v);
    } catch (const std::exception&) {
      throw FormatError("bad shape '" + s + "' in checkpoint header", offset);
    }
  }
  if (shape.empty() || shape.size() > 4) throw FormatError("bad shape '" + s + "' in checkpoint header", offset);
  return shape;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParameterSet& params) {
  std::string header;
  for (const auto& [name, p] : params) header += header_line(name, p.value.dtype(), p.value.shape());
  std::string blob(kCheckpointMagic, 8);
  put_u64(blob, header.size());
  blob += header;
  for (const auto& [name, p] : params) {
    dispatch(p.value.dtype(), [&]<class T>() { put_raw<T>(blob, p.value.data<T>()); });
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw IoError("failed writing '" + path + "'");
}

std::vector<CheckpointEntry> read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  const std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (blob.size() < 16 || blob.compare(0, 8, kCheckpointMagic, 8) != 0) throw FormatError("missing SRFCKPT1 magic", 0);
  std::uint64_t header_len = 0;
  for (int i = 0; i < 8; ++i) header_len |= static_cast<std::uint64_t>(static_cast<unsigned char>(blob[8 + i])) << (8 * i);
  if (16 + header_len > blob.size()) throw FormatError("header length exceeds file size", 8);

  std::vector<CheckpointEntry> entries;
  std::size_t pos = 16;
  const std::size_t header_end = 16 + header_len;
  while (pos < header_end) {
    const std::size_t nl = blob.find('\n', pos);
    if (nl == std::string::npos || nl >= header_end) throw FormatError("unterminated header line", pos);
    const std::string line = blob.substr(pos, nl - pos);
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) throw FormatError("header line needs three tab-separated fields", pos);
    CheckpointEntry e;
    e.name = line.substr(0, t1);
    const std::string dt = line.substr(t1 + 1, t2 - t1 - 1);
    if (dt == "f32") {
      e.dtype = DType::f32;
    } else if (dt == "f64") {
      e.dtype = DType::f64;
    } else {
      throw FormatError("unknown dtype '" + dt + "'", pos + t1 + 1);
    }
    e.shape = parse_shape(line.substr(t2 + 1), pos + t2 + 1);
    entries.push_back(std::move(e));
    pos = nl + 1;
  }

  pos = header_end;
  for (auto& e : entries) {
    const auto n = static_cast<std::size_t>(shape_numel(e.shape));
    const std::size_t bytes = n * (e.dtype == DType::f32 ? 4 : 8);
    if (pos + bytes > blob.size()) throw FormatError("payload for '" + e.name + "' truncated", pos);
    e.values.resize(n);
    if (e.dtype == DType::f32) {
      std::vector<float> tmp(n);
      std::memcpy(tmp.data(), blob.data() + pos, bytes);
      std::copy(tmp.begin(), tmp.end(), e.values.begin());
    } else {
      std::memcpy(e.values.data(), blob.data() + pos, bytes);
    }
    pos += bytes;
  }
  if (pos != blob.size()) throw FormatError("trailing bytes after payloads", pos);
  return entries;
}

void load_checkpoint(const std::string& path, ParameterSet& params) {
  const auto entries = read_checkpoint(path);
  auto it = params.begin();
  std::size_t i = 0;
  // Walk both sorted sequences together so the first divergence is reported.
  for (; it != params.end() && i < entries.size(); ++it, ++i) {
    const auto& [name, p] = *it;
    const auto& e = entries[i];
    if (e.name != name) {
      const std::string& first = std::min(e.name, name);
      throw CheckpointMismatchError("checkpoint/network mismatch at parameter '" + first + "'", first);
    }
    if (e.dtype != p.value.dtype() || e.shape != p.value.shape()) {
      throw CheckpointMismatchError("parameter '" + name + "' is " + dtype_name(e.dtype) + shape_str(e.shape) +
                                        " in checkpoint but " + dtype_name(p.value.dtype()) +
                                        shape_str(p.value.shape()) + " in network",
                                    name);
    }
  }
  if (it != params.end()) throw CheckpointMismatchError("checkpoint lacks parameter '" + it->first + "'", it->first);
  if (i < entries.size()) {
    throw CheckpointMismatchError("checkpoint has extra parameter '" + entries[i].name + "'", entries[i].name);
  }
  i = 0;
  for (auto& [name, p] : params) {
    const auto& e = entries[i++];
    dispatch(p.value.dtype(), [&]<class T>() {
      auto dst = p.value.mutable_data<T>();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = static_cast<T>(e.values[k]);
    });
  }
}

}  // namespace srf
