#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "must/nn.hpp"
#include "must/optimizer.hpp"

namespace must {

/// In-memory form of a MUSTCKPT file. Element data is held as double, which
/// round-trips float32 payloads exactly; the on-disk element width follows
/// `dtype_bytes` (4 or 8).
struct CheckpointFile {
  int dtype_bytes = 8;
  nlohmann::json meta;

  struct Entry {
    std::string name;
    std::uint64_t rows = 0;
    std::uint64_t cols = 0;
    std::vector<double> data;
  };
  std::vector<Entry> entries;

  const Entry* find(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }
};

/// Binary layout: magic "MUSTCKPT", u32 version, u8 dtype, u32 meta length +
/// JSON bytes, u32 entry count, per-entry (u16 name length, name, u32 rows,
/// u32 cols, u64 element offset), u64 total elements, payload. Offsets are
/// validated contiguous and exhaustive on load.
void write_checkpoint_file(const std::string& path, const CheckpointFile& ckpt);
CheckpointFile read_checkpoint_file(const std::string& path);

/// FNV-1a over the on-disk payload bit pattern of the given entries; used to
/// pin a denoiser to the frozen main model it was trained against.
std::uint64_t checkpoint_payload_hash(const CheckpointFile& ckpt);

// ---------------------------------------------------------------------------
// Parameter store <-> checkpoint bridging
// ---------------------------------------------------------------------------

template <class T>
void append_params(CheckpointFile& ckpt, ParamStore<T>& store,
                   const std::string& prefix = "") {
  for (auto* p : store.all()) {
    CheckpointFile::Entry e;
    e.name = prefix + p->name;
    e.rows = p->rows();
    e.cols = p->cols();
    e.data.assign(p->values().begin(), p->values().end());
    ckpt.entries.push_back(std::move(e));
  }
}

template <class T>
void append_optimizer(CheckpointFile& ckpt, const AdamW<T>& opt,
                      const std::string& prefix) {
  for (const auto& [name, m] : opt.moments()) {
    CheckpointFile::Entry e1;
    e1.name = prefix + ".m1." + name;
    e1.rows = 1;
    e1.cols = m.m1.size();
    e1.data.assign(m.m1.begin(), m.m1.end());
    ckpt.entries.push_back(std::move(e1));
    CheckpointFile::Entry e2;
    e2.name = prefix + ".m2." + name;
    e2.rows = 1;
    e2.cols = m.m2.size();
    e2.data.assign(m.m2.begin(), m.m2.end());
    ckpt.entries.push_back(std::move(e2));
  }
}

template <class T>
void restore_params(const CheckpointFile& ckpt, ParamStore<T>& store,
                    const std::string& prefix = "") {
  for (auto* p : store.all()) {
    const auto* e = ckpt.find(prefix + p->name);
    if (!e) throw FormatError("checkpoint: missing parameter " + p->name);
    if (e->rows != p->rows() || e->cols != p->cols())
      throw FormatError("checkpoint: shape mismatch for " + p->name);
    for (std::size_t i = 0; i < e->data.size(); ++i)
      p->values()[i] = T(e->data[i]);
  }
}

template <class T>
void restore_optimizer(const CheckpointFile& ckpt, AdamW<T>& opt,
                       const std::string& prefix) {
  for (auto& [name, m] : opt.moments()) {
    const auto* e1 = ckpt.find(prefix + ".m1." + name);
    const auto* e2 = ckpt.find(prefix + ".m2." + name);
    if (!e1 || !e2)
      throw FormatError("checkpoint: missing optimizer state for " + name);
    if (e1->data.size() != m.m1.size() || e2->data.size() != m.m2.size())
      throw FormatError("checkpoint: optimizer state size mismatch for " + name);
    for (std::size_t i = 0; i < m.m1.size(); ++i) m.m1[i] = T(e1->data[i]);
    for (std::size_t i = 0; i < m.m2.size(); ++i) m.m2[i] = T(e2->data[i]);
  }
}

}  // namespace must
