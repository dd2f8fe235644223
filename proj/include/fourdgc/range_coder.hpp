#pragma once

#include <algorithm>

#include "fourdgc/entropy.hpp"

namespace fourdgc {

inline constexpr uint32_t kFreqTotal = 1u << 16;
inline constexpr uint32_t kMaxSpan = 1u << 15;

/// Empirical symbol-frequency table (the omega_t block on the wire).
/// Frequencies cover the contiguous span [min_symbol, min_symbol + span),
/// each >= 1, summing exactly to 2^16.
struct SymbolTable {
  int32_t min_symbol = 0;
  std::vector<uint32_t> freq;
  std::vector<uint32_t> cum;  // prefix sums, size span+1

  size_t span() const { return freq.size(); }

  void build_cum() {
    cum.assign(freq.size() + 1, 0);
    for (size_t i = 0; i < freq.size(); ++i) cum[i + 1] = cum[i] + freq[i];
  }

  void validate() const {
    if (freq.empty() || freq.size() > kMaxSpan) throw FormatError("symbol table span invalid");
    uint32_t sum = 0;
    for (uint32_t f : freq) {
      if (f < 1) throw FormatError("symbol table frequency below 1");
      sum += f;
    }
    if (sum != kFreqTotal) throw FormatError("symbol table frequencies must sum to 2^16");
  }

  /// Wire form: i32 min_symbol, u16 span, span x u16 (frequency - 1).
  void write(ByteWriter& w) const {
    w.i32(min_symbol);
    w.u16(static_cast<uint16_t>(freq.size()));
    for (uint32_t f : freq) w.u16(static_cast<uint16_t>(f - 1));
  }

  static SymbolTable read(ByteReader& r) {
    SymbolTable t;
    t.min_symbol = r.i32();
    const uint16_t span = r.u16();
    if (span == 0) throw FormatError("symbol table span is zero");
    t.freq.resize(span);
    for (auto& f : t.freq) f = static_cast<uint32_t>(r.u16()) + 1;
    t.validate();
    t.build_cum();
    return t;
  }
};

/// Histogram over [min, max] scaled to sum 2^16 by deterministic
/// largest-remainder rounding with a 1-count minimum per in-span symbol.
inline SymbolTable empirical_table(std::span<const int32_t> symbols) {
  if (symbols.empty()) throw std::invalid_argument("empirical_table: empty input");
  const auto [lo_it, hi_it] = std::minmax_element(symbols.begin(), symbols.end());
  const int64_t lo = *lo_it, hi = *hi_it;
  const uint64_t span = static_cast<uint64_t>(hi - lo + 1);
  if (span > kMaxSpan) throw FormatError("empirical_table: symbol span too large");

  std::vector<uint64_t> counts(span, 0);
  for (int32_t s : symbols) ++counts[static_cast<size_t>(s - lo)];

  SymbolTable t;
  t.min_symbol = static_cast<int32_t>(lo);
  t.freq.assign(span, 1);
  const uint64_t budget = kFreqTotal - span;
  const uint64_t n = symbols.size();
  uint64_t assigned = 0;
  std::vector<std::pair<uint64_t, size_t>> remainders;  // (remainder, index)
  remainders.reserve(span);
  for (size_t i = 0; i < span; ++i) {
    const uint64_t num = counts[i] * budget;
    const uint64_t fl = num / n;
    t.freq[i] += static_cast<uint32_t>(fl);
    assigned += fl;
    remainders.emplace_back(num % n, i);
  }
  uint64_t leftover = budget - assigned;
  std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (size_t k = 0; k < leftover; ++k) ++t.freq[remainders[k].second];
  t.validate();
  t.build_cum();
  return t;
}

// ---------------------------------------------------------------------------
// Integer range coder: 64-bit low with carry cache, 32-bit range, byte-wise
// renormalization. Cumulative frequencies always total 2^16.

class RangeEncoder {
 public:
  void encode(uint32_t cum, uint32_t freq) {
    const uint32_t r = range_ >> 16;
    low_ += static_cast<uint64_t>(r) * cum;
    if (cum + freq == kFreqTotal)
      range_ -= r * cum;  // last symbol absorbs the truncation remainder
    else
      range_ = r * freq;
    while (range_ < (1u << 24)) {
      shift_low();
      range_ <<= 8;
    }
  }

  std::vector<uint8_t> finish() {
    for (int i = 0; i < 5; ++i) shift_low();
    return std::move(out_);
  }

 private:
  void shift_low() {
    if (static_cast<uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
      const uint8_t carry = static_cast<uint8_t>(low_ >> 32);
      uint8_t b = cache_;
      do {
        out_.push_back(static_cast<uint8_t>(b + carry));
        b = 0xFF;
      } while (--cache_size_ != 0);
      cache_ = static_cast<uint8_t>(low_ >> 24);
    }
    ++cache_size_;
    low_ = (low_ & 0x00FFFFFFull) << 8;
  }

  std::vector<uint8_t> out_;
  uint64_t low_ = 0;
  uint32_t range_ = 0xFFFFFFFF;
  uint8_t cache_ = 0;
  uint64_t cache_size_ = 1;
};

class RangeDecoder {
 public:
  RangeDecoder(const uint8_t* data, size_t size) : p_(data), n_(size) {
    for (int i = 0; i < 5; ++i) code_ = (code_ << 8) | next();
  }

  /// Cumulative-frequency position of the next symbol.
  uint32_t decode_target() {
    r_ = range_ >> 16;
    const uint32_t v = code_ / r_;
    return std::min(v, kFreqTotal - 1);
  }

  void decode_update(uint32_t cum, uint32_t freq) {
    code_ -= cum * r_;
    if (cum + freq == kFreqTotal)
      range_ -= r_ * cum;
    else
      range_ = r_ * freq;
    while (range_ < (1u << 24)) {
      code_ = (code_ << 8) | next();
      range_ <<= 8;
    }
  }

 private:
  uint8_t next() {
    if (pos_ >= n_) throw FormatError("range decoder: truncated payload");
    return p_[pos_++];
  }

  const uint8_t* p_;
  size_t n_;
  size_t pos_ = 0;
  uint32_t range_ = 0xFFFFFFFF;
  uint32_t code_ = 0;
  uint32_t r_ = 0;
};

inline std::vector<uint8_t> range_encode(std::span<const int32_t> symbols,
                                         const SymbolTable& table) {
  RangeEncoder enc;
  for (int32_t s : symbols) {
    const int64_t idx = static_cast<int64_t>(s) - table.min_symbol;
    if (idx < 0 || idx >= static_cast<int64_t>(table.span()))
      throw FormatError("range_encode: symbol outside table span");
    enc.encode(table.cum[idx], table.freq[idx]);
  }
  return enc.finish();
}

inline std::vector<int32_t> range_decode(std::span<const uint8_t> bytes,
                                         const SymbolTable& table, size_t count) {
  std::vector<int32_t> out(count);
  RangeDecoder dec(bytes.data(), bytes.size());
  for (size_t i = 0; i < count; ++i) {
    const uint32_t target = dec.decode_target();
    // first cum[idx+1] > target
    const size_t idx = static_cast<size_t>(
        std::upper_bound(table.cum.begin() + 1, table.cum.end(), target) -
        (table.cum.begin() + 1));
    dec.decode_update(table.cum[idx], table.freq[idx]);
    out[i] = table.min_symbol + static_cast<int32_t>(idx);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tensor-level coding: hard quantization, empirical table, range coding.
// Decoding reproduces the encoder-side dequantized tensor bit-exactly.

struct CodedTensor {
  double q = 1;
  int32_t offset = 0;      // Q(min(x)); equals table.min_symbol
  uint32_t count = 0;
  SymbolTable table;
  std::vector<uint8_t> payload;
};

inline CodedTensor encode_quantized(const QuantizedTensor& qt) {
  CodedTensor out;
  out.q = qt.q;
  out.offset = qt.offset;
  out.count = static_cast<uint32_t>(qt.symbols.size());
  out.table = empirical_table(qt.symbols);
  out.payload = range_encode(qt.symbols, out.table);
  return out;
}

inline CodedTensor encode_tensor(std::span<const double> x, double q) {
  return encode_quantized(quantize_hard(x, q));
}

inline std::vector<double> decode_tensor(const CodedTensor& coded) {
  if (coded.offset != coded.table.min_symbol)
    throw FormatError("decode_tensor: header offset disagrees with table");
  const auto symbols = range_decode(coded.payload, coded.table, coded.count);
  std::vector<double> out(symbols.size());
  for (size_t i = 0; i < symbols.size(); ++i) out[i] = symbols[i] / coded.q;
  return out;
}

/// Dequantized values as the decoder will reproduce them.
inline std::vector<double> dequantize(const QuantizedTensor& qt) {
  std::vector<double> out(qt.symbols.size());
  for (size_t i = 0; i < qt.symbols.size(); ++i) out[i] = qt.symbols[i] / qt.q;
  return out;
}

/// Cross-entropy in bits of `symbols` under `table`.
inline double table_cross_entropy_bits(std::span<const int32_t> symbols,
                                       const SymbolTable& table) {
  double bits = 0;
  for (int32_t s : symbols) {
    const size_t idx = static_cast<size_t>(s - table.min_symbol);
    bits -= std::log2(table.freq[idx] / static_cast<double>(kFreqTotal));
  }
  return bits;
}

}  // namespace fourdgc
