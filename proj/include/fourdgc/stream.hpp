#pragma once

#include <fstream>

#include "fourdgc/range_coder.hpp"

namespace fourdgc {

// ---------------------------------------------------------------------------
// .4dgc container. A stream is a sequence of frame records:
//   magic "4DGC", version u8, frame_type u8 (0 key, 1 inter), frame_index u32,
//   block_count u8, blocks, crc32 u32 (over the record bytes before it).
// Coded blocks (id < 16): block_id u8, q f32, offset i32, SymbolTable,
//   payload_len u32, payload bytes. Element counts come from the meta block.
// Raw blocks (id >= 16): block_id u8, payload_len u32, f32 little-endian data.

inline constexpr uint8_t kStreamVersion = 1;
inline constexpr uint8_t kFrameKey = 0;
inline constexpr uint8_t kFrameInter = 1;

enum BlockId : uint8_t {
  kBlockMeta = 16,       // raw: frame metadata
  kBlockCodedGrid = 1,   // coded: motion grid symbols, all levels concatenated
  kBlockCodedSh = 2,     // coded: SH coefficients (keyframe set or delta set)
  kBlockRawAttrs = 17,   // raw: per-primitive center/rotation/log_scale/opacity
  kBlockRawMlp = 18,     // raw: shared motion MLP weights
};

struct Block {
  uint8_t id = 0;
  // coded payload
  float q = 1;
  int32_t offset = 0;
  SymbolTable table;
  std::vector<uint8_t> payload;
  // raw payload
  std::vector<uint8_t> raw;

  static bool coded_id(uint8_t id) { return id < 16; }
  bool is_coded() const { return coded_id(id); }
};

struct FrameBitstream {
  uint8_t version = kStreamVersion;
  uint8_t frame_type = kFrameKey;
  uint32_t frame_index = 1;
  std::vector<Block> blocks;

  const Block* find(uint8_t id) const {
    for (const auto& b : blocks)
      if (b.id == id) return &b;
    return nullptr;
  }

  const Block& require(uint8_t id) const {
    const Block* b = find(id);
    if (!b) throw FormatError("missing block id " + std::to_string(id));
    return *b;
  }
};

inline Block make_coded_block(uint8_t id, const CodedTensor& coded) {
  Block b;
  b.id = id;
  b.q = static_cast<float>(coded.q);
  b.offset = coded.offset;
  b.table = coded.table;
  b.payload = coded.payload;
  return b;
}

inline CodedTensor block_to_coded(const Block& b, uint32_t count) {
  CodedTensor c;
  c.q = b.q;
  c.offset = b.offset;
  c.count = count;
  c.table = b.table;
  c.payload = b.payload;
  return c;
}

inline Block make_raw_block(uint8_t id, std::span<const float> values) {
  Block b;
  b.id = id;
  ByteWriter w;
  for (float v : values) w.f32(v);
  b.raw = w.take();
  return b;
}

inline std::vector<float> raw_block_values(const Block& b) {
  if (b.raw.size() % 4 != 0) throw FormatError("raw block size not a multiple of 4");
  ByteReader r(b.raw.data(), b.raw.size());
  std::vector<float> out(b.raw.size() / 4);
  for (auto& v : out) v = r.f32();
  return out;
}

inline void write_frame(const FrameBitstream& frame, ByteWriter& w) {
  const size_t start = w.size();
  w.bytes(reinterpret_cast<const uint8_t*>("4DGC"), 4);
  w.u8(frame.version);
  w.u8(frame.frame_type);
  w.u32(frame.frame_index);
  if (frame.blocks.size() > 255) throw FormatError("too many blocks");
  w.u8(static_cast<uint8_t>(frame.blocks.size()));
  for (const auto& b : frame.blocks) {
    w.u8(b.id);
    if (b.is_coded()) {
      w.f32(b.q);
      w.i32(b.offset);
      b.table.write(w);
      w.u32(static_cast<uint32_t>(b.payload.size()));
      w.bytes(b.payload);
    } else {
      w.u32(static_cast<uint32_t>(b.raw.size()));
      w.bytes(b.raw);
    }
  }
  w.u32(crc32(w.data().data() + start, w.size() - start));
}

/// Parses one frame record from `data` at `pos`, validating the CRC.
inline FrameBitstream parse_frame(std::span<const uint8_t> data, size_t& pos) {
  ByteReader r(data.data() + pos, data.size() - pos);
  const auto magic = r.bytes(4);
  if (std::memcmp(magic.data(), "4DGC", 4) != 0) throw FormatError("bad stream magic");
  FrameBitstream f;
  f.version = r.u8();
  if (f.version != kStreamVersion) throw FormatError("unsupported stream version");
  f.frame_type = r.u8();
  if (f.frame_type != kFrameKey && f.frame_type != kFrameInter)
    throw FormatError("unknown frame type");
  f.frame_index = r.u32();
  const uint8_t count = r.u8();
  for (int i = 0; i < count; ++i) {
    Block b;
    b.id = r.u8();
    switch (b.id) {
      case kBlockMeta:
      case kBlockCodedGrid:
      case kBlockCodedSh:
      case kBlockRawAttrs:
      case kBlockRawMlp:
        break;
      default:
        throw FormatError("unknown block id " + std::to_string(b.id));
    }
    if (b.is_coded()) {
      b.q = r.f32();
      b.offset = r.i32();
      b.table = SymbolTable::read(r);
      const uint32_t len = r.u32();
      b.payload = r.bytes(len);
    } else {
      const uint32_t len = r.u32();
      b.raw = r.bytes(len);
    }
    f.blocks.push_back(std::move(b));
  }
  const size_t body = r.pos();
  const uint32_t stored = r.u32();
  if (crc32(data.data() + pos, body) != stored) throw FormatError("frame crc mismatch");
  pos += r.pos();
  return f;
}

inline std::vector<uint8_t> serialize_frame(const FrameBitstream& frame) {
  ByteWriter w;
  write_frame(frame, w);
  return w.take();
}

inline size_t frame_byte_size(const FrameBitstream& frame) {
  return serialize_frame(frame).size();
}

/// Writes a stream; the first frame must be a keyframe. Returns bytes written.
inline size_t write_stream(const std::vector<FrameBitstream>& frames, const std::string& path) {
  if (frames.empty() || frames.front().frame_type != kFrameKey)
    throw FormatError("stream must start with a keyframe");
  ByteWriter w;
  for (const auto& f : frames) write_frame(f, w);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for write: " + path);
  out.write(reinterpret_cast<const char*>(w.data().data()),
            static_cast<std::streamsize>(w.size()));
  if (!out) throw IoError("write failed: " + path);
  return w.size();
}

inline std::vector<FrameBitstream> read_stream_bytes(std::span<const uint8_t> data) {
  std::vector<FrameBitstream> frames;
  size_t pos = 0;
  while (pos < data.size()) frames.push_back(parse_frame(data, pos));
  if (frames.empty() || frames.front().frame_type != kFrameKey)
    throw FormatError("stream must start with a keyframe");
  return frames;
}

inline std::vector<FrameBitstream> read_stream(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::vector<uint8_t> data((std::istreambuf_iterator<char>(f)),
                            std::istreambuf_iterator<char>());
  return read_stream_bytes(data);
}

}  // namespace fourdgc
