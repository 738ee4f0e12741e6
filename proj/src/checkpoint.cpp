#include "must/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace must {

namespace {

constexpr char kMagic[8] = {'M', 'U', 'S', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u16(std::ostream& os, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint16_t get_u16(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  if (!is) throw FormatError("checkpoint: truncated");
  return std::uint16_t(b[0]) | (std::uint16_t(b[1]) << 8);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw FormatError("checkpoint: truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw FormatError("checkpoint: truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}

std::uint64_t element_bits(double v, int dtype_bytes) {
  if (dtype_bytes == 4) {
    const float f = float(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    return bits;
  }
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  return bits;
}

}  // namespace

void write_checkpoint_file(const std::string& path,
                           const CheckpointFile& ckpt) {
  if (ckpt.dtype_bytes != 4 && ckpt.dtype_bytes != 8)
    throw ConfigError("checkpoint: dtype must be 4 or 8 bytes");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  os.write(kMagic, 8);
  put_u32(os, kVersion);
  os.put(char(ckpt.dtype_bytes));
  const std::string meta = ckpt.meta.dump();
  put_u32(os, std::uint32_t(meta.size()));
  os.write(meta.data(), long(meta.size()));
  put_u32(os, std::uint32_t(ckpt.entries.size()));
  std::uint64_t offset = 0;
  for (const auto& e : ckpt.entries) {
    put_u16(os, std::uint16_t(e.name.size()));
    os.write(e.name.data(), long(e.name.size()));
    put_u32(os, std::uint32_t(e.rows));
    put_u32(os, std::uint32_t(e.cols));
    put_u64(os, offset);
    offset += e.rows * e.cols;
  }
  put_u64(os, offset);
  for (const auto& e : ckpt.entries) {
    for (double v : e.data) {
      const std::uint64_t bits = element_bits(v, ckpt.dtype_bytes);
      for (int i = 0; i < ckpt.dtype_bytes; ++i)
        os.put(char((bits >> (8 * i)) & 0xff));
    }
  }
  if (!os) throw IoError("write failed: " + path);
}

CheckpointFile read_checkpoint_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw FormatError("checkpoint: bad magic");
  const std::uint32_t version = get_u32(is);
  if (version != kVersion)
    throw FormatError("checkpoint: unsupported version " +
                      std::to_string(version));
  CheckpointFile ckpt;
  ckpt.dtype_bytes = is.get();
  if (ckpt.dtype_bytes != 4 && ckpt.dtype_bytes != 8)
    throw FormatError("checkpoint: bad dtype byte");
  const std::uint32_t meta_len = get_u32(is);
  std::string meta(meta_len, '\0');
  is.read(meta.data(), long(meta_len));
  if (!is) throw FormatError("checkpoint: truncated metadata");
  try {
    ckpt.meta = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception&) {
    throw FormatError("checkpoint: unparsable metadata");
  }
  const std::uint32_t n_entries = get_u32(is);
  std::vector<std::uint64_t> offsets;
  for (std::uint32_t i = 0; i < n_entries; ++i) {
    CheckpointFile::Entry e;
    const std::uint16_t name_len = get_u16(is);
    e.name.resize(name_len);
    is.read(e.name.data(), name_len);
    if (!is) throw FormatError("checkpoint: truncated entry name");
    e.rows = get_u32(is);
    e.cols = get_u32(is);
    offsets.push_back(get_u64(is));
    ckpt.entries.push_back(std::move(e));
  }
  const std::uint64_t total = get_u64(is);
  // Offsets must be contiguous and exhaustive.
  std::uint64_t expect = 0;
  for (std::uint32_t i = 0; i < n_entries; ++i) {
    if (offsets[i] != expect)
      throw FormatError("checkpoint: manifest offsets not contiguous");
    expect += ckpt.entries[i].rows * ckpt.entries[i].cols;
  }
  if (expect != total)
    throw FormatError("checkpoint: manifest does not cover payload");
  for (auto& e : ckpt.entries) {
    const std::uint64_t count = e.rows * e.cols;
    e.data.resize(count);
    for (std::uint64_t i = 0; i < count; ++i) {
      std::uint64_t bits = 0;
      for (int b = 0; b < ckpt.dtype_bytes; ++b) {
        const int byte = is.get();
        if (byte < 0) throw FormatError("checkpoint: truncated payload");
        bits |= std::uint64_t(byte) << (8 * b);
      }
      if (ckpt.dtype_bytes == 4) {
        float f;
        const std::uint32_t fb = std::uint32_t(bits);
        std::memcpy(&f, &fb, 4);
        e.data[i] = double(f);
      } else {
        double d;
        std::memcpy(&d, &bits, 8);
        e.data[i] = d;
      }
    }
  }
  is.peek();
  if (!is.eof()) throw FormatError("checkpoint: trailing bytes");
  return ckpt;
}

std::uint64_t checkpoint_payload_hash(const CheckpointFile& ckpt) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](std::uint64_t bits, int nbytes) {
    for (int i = 0; i < nbytes; ++i) {
      h ^= (bits >> (8 * i)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& e : ckpt.entries) {
    for (unsigned char c : e.name) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    for (double v : e.data) mix(element_bits(v, ckpt.dtype_bytes),
                                ckpt.dtype_bytes);
  }
  return h;
}

}  // namespace must
