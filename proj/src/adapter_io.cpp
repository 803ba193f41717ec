#include "ortha/adapter_io.h"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "ortha/error.h"

namespace ortha {

namespace {

constexpr std::uint8_t kMagic[4] = {'O', 'A', 'D', 'P'};

class ByteWriter {
 public:
  void bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint64_t v) {
    if (v > 0xFFFFFFFFULL) throw ValidationError("adapter encode: value " + std::to_string(v) + " exceeds u32");
    le(v, 4);
  }
  void u64(std::uint64_t v) { le(v, 8); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
  void matrix(const Matrix& m) {
    for (double v : m.values()) f64(v);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }
  const std::vector<std::uint8_t>& view() const { return out_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  double f64() { return std::bit_cast<double>(le(8)); }
  Matrix matrix(std::size_t rows, std::size_t cols) {
    need(rows * cols * 8);
    Matrix m(rows, cols);
    for (double& v : m.values()) v = f64();
    return m;
  }
  std::string text(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (n > remaining()) {
      throw CorruptLengthError("adapter decode: record needs " + std::to_string(n) + " bytes at offset " +
                               std::to_string(pos_) + " but only " + std::to_string(remaining()) + " remain");
    }
  }
  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(in_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

struct Header {
  std::uint32_t d_out;
  std::uint32_t d_in;
  std::uint32_t rank;
  std::uint8_t tag;
};

void write_header(ByteWriter& w, std::size_t d_out, std::size_t d_in, std::size_t rank, std::uint8_t tag) {
  w.bytes(kMagic);
  w.u16(kAdapterFormatVersion);
  w.u32(d_out);
  w.u32(d_in);
  w.u32(rank);
  w.u8(tag);
}

void write_trailer(ByteWriter& w, const nlohmann::json& meta) {
  const std::string text = meta.dump();
  w.u32(text.size());
  w.bytes({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
  w.u32(crc32_of(w.view()));
}

// Verifies magic, version and checksum; returns a reader positioned after
// the version field over the checksummed body.
ByteReader open_container(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw FormatError("adapter decode: missing OADP magic");
  }
  if (bytes.size() < 10) {
    throw ChecksumError("adapter decode: file too short to hold a checksum (" + std::to_string(bytes.size()) +
                        " bytes)");
  }
  const std::uint16_t version = static_cast<std::uint16_t>(bytes[4] | (bytes[5] << 8));
  if (version != kAdapterFormatVersion) {
    throw VersionMismatchError("adapter decode: format version " + std::to_string(version) + ", expected " +
                               std::to_string(kAdapterFormatVersion));
  }
  const auto body = bytes.first(bytes.size() - 4);
  const auto tail = bytes.last(4);
  const std::uint32_t stored = static_cast<std::uint32_t>(tail[0]) | (static_cast<std::uint32_t>(tail[1]) << 8) |
                               (static_cast<std::uint32_t>(tail[2]) << 16) | (static_cast<std::uint32_t>(tail[3]) << 24);
  const std::uint32_t actual = crc32_of(body);
  if (stored != actual) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "adapter decode: CRC-32 mismatch (stored %08x, computed %08x)", stored, actual);
    throw ChecksumError(buf);
  }
  ByteReader r(body);
  r.text(6);
  return r;
}

Header read_header(ByteReader& r) {
  Header h{};
  h.d_out = r.u32();
  h.d_in = r.u32();
  h.rank = r.u32();
  h.tag = r.u8();
  return h;
}

nlohmann::json read_meta(ByteReader& r) {
  const std::uint32_t len = r.u32();
  const std::string text = r.text(len);
  if (r.remaining() != 0) {
    throw CorruptLengthError("adapter decode: " + std::to_string(r.remaining()) + " trailing bytes after metadata");
  }
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("adapter decode: metadata is not valid JSON: ") + e.what());
  }
}

nlohmann::json meta_to_json(const Adapter& ad) {
  return {{"concept_id", ad.concept_id},  {"layer_id", ad.meta.layer_id}, {"seed", ad.meta.seed},
          {"task_seed", ad.meta.task_seed}, {"steps", ad.meta.steps},    {"final_loss", ad.meta.final_loss}};
}

void meta_from_json(const nlohmann::json& j, Adapter& ad) {
  ad.concept_id = j.value("concept_id", std::string{});
  ad.meta.layer_id = j.value("layer_id", std::string{});
  ad.meta.seed = j.value("seed", std::uint64_t{0});
  ad.meta.task_seed = j.value("task_seed", std::uint64_t{0});
  ad.meta.steps = j.value("steps", std::uint64_t{0});
  ad.meta.final_loss = j.value("final_loss", 0.0);
}

nlohmann::json matrix_to_json(const Matrix& m) {
  return nlohmann::json(std::vector<double>(m.values().begin(), m.values().end()));
}

Matrix matrix_from_json(const nlohmann::json& j, std::size_t rows, std::size_t cols, const char* field) {
  auto values = j.get<std::vector<double>>();
  if (values.size() != rows * cols) {
    throw CorruptLengthError(std::string("adapter json: field '") + field + "' has " + std::to_string(values.size()) +
                             " values, expected " + std::to_string(rows * cols));
  }
  return Matrix(rows, cols, std::move(values));
}

}  // namespace

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t offset = 0;
  while (offset < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - offset, 1u << 30));
    crc = crc32(crc, bytes.data() + offset, chunk);
    offset += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> encode_adapter(const Adapter& ad) {
  validate_adapter(ad);
  ByteWriter w;
  write_header(w, ad.d_out, ad.d_in, ad.rank, static_cast<std::uint8_t>(ad.mode.index()));
  if (const auto* s = std::get_if<SharedSubset>(&ad.mode)) {
    w.u64(s->subset.basis_seed);
    w.u32(s->subset.size());
    for (std::size_t idx : s->subset.indices) w.u32(idx);
  } else if (const auto* g = std::get_if<GaussianRandom>(&ad.mode)) {
    w.f64(g->sigma);
    w.u64(g->draw_seed);
  } else {
    w.u64(std::get<LearnedFree>(ad.mode).init_seed);
    w.matrix(ad.b);
  }
  w.matrix(ad.a);
  write_trailer(w, meta_to_json(ad));
  return w.take();
}

Adapter decode_adapter(std::span<const std::uint8_t> bytes) {
  ByteReader r = open_container(bytes);
  const Header h = read_header(r);
  if (h.tag == kDenseLayerTag) throw FormatError("adapter decode: file holds a dense merged layer, not an adapter");
  Adapter ad;
  ad.d_out = h.d_out;
  ad.d_in = h.d_in;
  ad.rank = h.rank;
  switch (h.tag) {
    case 0: {
      ColumnSubset subset;
      subset.basis_seed = r.u64();
      const std::uint32_t k = r.u32();
      if (k != h.rank) {
        throw CorruptLengthError("adapter decode: subset holds " + std::to_string(k) + " columns for rank " +
                                 std::to_string(h.rank));
      }
      subset.indices.resize(k);
      for (auto& idx : subset.indices) idx = r.u32();
      ad.mode = SharedSubset{std::move(subset)};
      break;
    }
    case 1: {
      GaussianRandom g;
      g.sigma = r.f64();
      g.draw_seed = r.u64();
      ad.mode = g;
      break;
    }
    case 2:
      ad.mode = LearnedFree{r.u64()};
      ad.b = r.matrix(h.d_in, h.rank);
      break;
    default:
      throw FormatError("adapter decode: unknown mode tag " + std::to_string(h.tag));
  }
  ad.a = r.matrix(h.d_out, h.rank);
  meta_from_json(read_meta(r), ad);
  if (is_frozen(ad.mode)) ad.b = initial_b(ad.mode, ad.d_in, ad.rank);
  validate_adapter(ad);
  return ad;
}

nlohmann::json adapter_to_json(const Adapter& ad) {
  validate_adapter(ad);
  nlohmann::json mode;
  if (const auto* s = std::get_if<SharedSubset>(&ad.mode)) {
    mode = {{"kind", "shared_subset"}, {"basis_seed", s->subset.basis_seed}, {"indices", s->subset.indices}};
  } else if (const auto* g = std::get_if<GaussianRandom>(&ad.mode)) {
    mode = {{"kind", "gaussian"}, {"sigma", g->sigma}, {"draw_seed", g->draw_seed}};
  } else {
    mode = {{"kind", "learned_free"}, {"init_seed", std::get<LearnedFree>(ad.mode).init_seed}, {"b", matrix_to_json(ad.b)}};
  }
  return {{"format", "OADP"}, {"version", kAdapterFormatVersion}, {"d_out", ad.d_out}, {"d_in", ad.d_in},
          {"rank", ad.rank},  {"mode", mode},                     {"a", matrix_to_json(ad.a)}, {"meta", meta_to_json(ad)}};
}

Adapter adapter_from_json(const nlohmann::json& j) {
  try {
    if (j.value("format", std::string{}) != "OADP") throw FormatError("adapter json: missing \"format\": \"OADP\"");
    const auto version = j.at("version").get<std::uint32_t>();
    if (version != kAdapterFormatVersion) {
      throw VersionMismatchError("adapter json: format version " + std::to_string(version) + ", expected " +
                                 std::to_string(kAdapterFormatVersion));
    }
    Adapter ad;
    ad.d_out = j.at("d_out").get<std::size_t>();
    ad.d_in = j.at("d_in").get<std::size_t>();
    ad.rank = j.at("rank").get<std::size_t>();
    const auto& mode = j.at("mode");
    const auto kind = parse_mode_kind(mode.at("kind").get<std::string>());
    if (kind == ModeKind::shared_subset) {
      ad.mode = SharedSubset{ColumnSubset{mode.at("basis_seed").get<std::uint64_t>(),
                                          mode.at("indices").get<std::vector<std::size_t>>()}};
    } else if (kind == ModeKind::gaussian) {
      ad.mode = GaussianRandom{mode.at("sigma").get<double>(), mode.at("draw_seed").get<std::uint64_t>()};
    } else {
      ad.mode = LearnedFree{mode.at("init_seed").get<std::uint64_t>()};
      ad.b = matrix_from_json(mode.at("b"), ad.d_in, ad.rank, "b");
    }
    ad.a = matrix_from_json(j.at("a"), ad.d_out, ad.rank, "a");
    meta_from_json(j.at("meta"), ad);
    if (is_frozen(ad.mode)) ad.b = initial_b(ad.mode, ad.d_in, ad.rank);
    validate_adapter(ad);
    return ad;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("adapter json: ") + e.what());
  }
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

void save_adapter(const Adapter& ad, const std::filesystem::path& path) { write_file_bytes(path, encode_adapter(ad)); }

void save_adapter_json(const Adapter& ad, const std::filesystem::path& path) {
  const std::string text = adapter_to_json(ad).dump(2) + "\n";
  write_file_bytes(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

Adapter load_adapter(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  auto first = std::find_if(bytes.begin(), bytes.end(), [](std::uint8_t c) { return !std::isspace(c); });
  if (first != bytes.end() && *first == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("'" + path.string() + "': invalid adapter JSON: " + e.what());
    }
    return adapter_from_json(j);
  }
  return decode_adapter(bytes);
}

std::string adapter_checksum(const Adapter& ad) {
  const auto bytes = encode_adapter(ad);
  const auto tail = std::span<const std::uint8_t>(bytes).last(4);
  const std::uint32_t crc = static_cast<std::uint32_t>(tail[0]) | (static_cast<std::uint32_t>(tail[1]) << 8) |
                            (static_cast<std::uint32_t>(tail[2]) << 16) | (static_cast<std::uint32_t>(tail[3]) << 24);
  char buf[9];
  std::snprintf(buf, sizeof(buf), "%08x", crc);
  return buf;
}

std::vector<std::uint8_t> encode_dense_layer(const DenseLayer& layer) {
  if (!all_finite(layer.w)) throw ValidationError("dense layer encode: non-finite weights");
  ByteWriter w;
  write_header(w, layer.w.rows(), layer.w.cols(), 0, kDenseLayerTag);
  w.matrix(layer.w);
  write_trailer(w, layer.meta);
  return w.take();
}

DenseLayer decode_dense_layer(std::span<const std::uint8_t> bytes) {
  ByteReader r = open_container(bytes);
  const Header h = read_header(r);
  if (h.tag != kDenseLayerTag) {
    throw FormatError("dense layer decode: mode tag " + std::to_string(h.tag) + " is not a dense merged layer");
  }
  if (h.rank != 0) throw CorruptLengthError("dense layer decode: rank field must be 0");
  DenseLayer layer;
  layer.w = r.matrix(h.d_out, h.d_in);
  layer.meta = read_meta(r);
  return layer;
}

void save_dense_layer(const DenseLayer& layer, const std::filesystem::path& path) {
  write_file_bytes(path, encode_dense_layer(layer));
}

DenseLayer load_dense_layer(const std::filesystem::path& path) { return decode_dense_layer(read_file_bytes(path)); }

}  // namespace ortha
