// Binary wire format for the inference service. All multi-byte integers and
// floats are little-endian. A message body starts with magic "BT", a kind
// byte and a version byte; on the stream each body is preceded by a u32
// length prefix.
//
// Inference request body layout after the 4 magic/version bytes:
//   u32 request_id, u32 batch, u32 seqlen, u32 prompt_kind,
//   u32 prompt_layers, u32 prompt_len, u32 prompt_dim, u32 label_words
// then payloads:
//   input_ids      batch*seqlen  u16
//   attention_mask batch*seqlen  u8
//   mask_positions batch         u16
//   label_word_ids label_words   u16
//   prompt         prompt_layers*prompt_len*prompt_dim  f32
// The three sizeable payloads (ids, mask, prompt floats) are what the
// traffic accounting attributes to data; everything else is header overhead.
#pragma once

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace bbt::wire {

constexpr uint8_t kMagic0 = 'B';
constexpr uint8_t kMagic1 = 'T';
constexpr uint8_t kVersion = 1;

enum class MsgKind : uint8_t {
  InferRequest = 1,
  InferResponse = 2,
  StatsRequest = 3,
  StatsResponse = 4,
  Error = 127,
};

enum class PromptKind : uint32_t { None = 0, Flat = 1, Deep = 2 };

struct WireError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TruncatedError : WireError {
  using WireError::WireError;
};
struct BadMagicError : WireError {
  using WireError::WireError;
};
struct VersionError : WireError {
  using WireError::WireError;
};

struct InferenceRequest {
  uint32_t request_id = 0;
  uint32_t batch = 0;
  uint32_t seqlen = 0;
  PromptKind prompt_kind = PromptKind::None;
  uint32_t prompt_layers = 0;
  uint32_t prompt_len = 0;  // prompt positions per layer
  uint32_t prompt_dim = 0;  // values per prompt position
  std::vector<uint16_t> input_ids;
  std::vector<uint8_t> attention_mask;
  std::vector<uint16_t> mask_positions;
  std::vector<uint16_t> label_words;
  std::vector<float> prompt;

  size_t ids_payload_bytes() const { return input_ids.size() * 2; }
  size_t mask_payload_bytes() const { return attention_mask.size(); }
  size_t prompt_payload_bytes() const { return prompt.size() * 4; }
  // magic/version + 8 header words + mask positions + label word ids
  size_t header_overhead_bytes() const {
    return 4 + 8 * 4 + mask_positions.size() * 2 + label_words.size() * 2;
  }
};

struct InferenceResponse {
  uint32_t request_id = 0;
  uint32_t batch = 0;
  uint32_t classes = 0;
  std::vector<float> logits;  // batch * classes

  size_t payload_bytes() const { return logits.size() * 4; }
  static constexpr size_t kHeaderBytes = 4 + 3 * 4;
};

struct StatsRequest {
  uint32_t request_id = 0;
  uint32_t batch = 0;
  uint32_t seqlen = 0;
  uint32_t clip_rounds = 5;
  std::vector<uint16_t> input_ids;
  std::vector<uint8_t> attention_mask;
};

struct StatsResponse {
  uint32_t request_id = 0;
  std::vector<std::pair<double, double>> layer_stats;  // (mu, sigma)
};

struct ErrorMsg {
  uint32_t request_id = 0;
  uint32_t code = 0;
  std::string message;
};

namespace detail {

class Writer {
 public:
  explicit Writer(std::vector<uint8_t>& out) : out_(out) {}
  void u8(uint8_t v) { out_.push_back(v); }
  void u16(uint16_t v) {
    out_.push_back(static_cast<uint8_t>(v));
    out_.push_back(static_cast<uint8_t>(v >> 8));
  }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void f32(float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
  void f64(double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<uint8_t>(bits >> (8 * i)));
  }

 private:
  std::vector<uint8_t>& out_;
};

class Reader {
 public:
  Reader(const uint8_t* data, size_t size) : data_(data), size_(size) {}
  uint8_t u8() {
    need(1);
    return data_[pos_++];
  }
  uint16_t u16() {
    need(2);
    uint16_t v = static_cast<uint16_t>(data_[pos_] | (data_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() {
    uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  double f64() {
    need(8);
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 8;
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  size_t remaining() const { return size_ - pos_; }
  void expect_end() const {
    if (pos_ != size_) throw WireError("trailing bytes in message");
  }

 private:
  void need(size_t n) const {
    if (pos_ + n > size_) throw TruncatedError("truncated message body");
  }
  const uint8_t* data_;
  size_t size_;
  size_t pos_ = 0;
};

inline void write_preamble(Writer& w, MsgKind kind) {
  w.u8(kMagic0);
  w.u8(kMagic1);
  w.u8(static_cast<uint8_t>(kind));
  w.u8(kVersion);
}

inline MsgKind read_preamble(Reader& r) {
  const uint8_t m0 = r.u8(), m1 = r.u8();
  if (m0 != kMagic0 || m1 != kMagic1) throw BadMagicError("bad magic bytes");
  const uint8_t kind = r.u8();
  const uint8_t ver = r.u8();
  if (ver != kVersion)
    throw VersionError("unsupported protocol version " + std::to_string(ver));
  return static_cast<MsgKind>(kind);
}

}  // namespace detail

inline MsgKind peek_kind(const std::vector<uint8_t>& body) {
  detail::Reader r(body.data(), body.size());
  return detail::read_preamble(r);
}

inline std::vector<uint8_t> encode_request(const InferenceRequest& req) {
  if (req.input_ids.size() != static_cast<size_t>(req.batch) * req.seqlen ||
      req.attention_mask.size() != req.input_ids.size() ||
      req.mask_positions.size() != req.batch)
    throw WireError("encode_request: inconsistent dimensions");
  const size_t want =
      static_cast<size_t>(req.prompt_layers) * req.prompt_len * req.prompt_dim;
  if (req.prompt.size() != want)
    throw WireError("encode_request: prompt size does not match header");
  std::vector<uint8_t> out;
  out.reserve(req.ids_payload_bytes() + req.mask_payload_bytes() +
              req.prompt_payload_bytes() + req.header_overhead_bytes());
  detail::Writer w(out);
  detail::write_preamble(w, MsgKind::InferRequest);
  w.u32(req.request_id);
  w.u32(req.batch);
  w.u32(req.seqlen);
  w.u32(static_cast<uint32_t>(req.prompt_kind));
  w.u32(req.prompt_layers);
  w.u32(req.prompt_len);
  w.u32(req.prompt_dim);
  w.u32(static_cast<uint32_t>(req.label_words.size()));
  for (auto v : req.input_ids) w.u16(v);
  for (auto v : req.attention_mask) w.u8(v);
  for (auto v : req.mask_positions) w.u16(v);
  for (auto v : req.label_words) w.u16(v);
  for (auto v : req.prompt) w.f32(v);
  return out;
}

inline InferenceRequest decode_request(const std::vector<uint8_t>& body) {
  detail::Reader r(body.data(), body.size());
  if (detail::read_preamble(r) != MsgKind::InferRequest)
    throw WireError("decode_request: not an inference request");
  InferenceRequest req;
  req.request_id = r.u32();
  req.batch = r.u32();
  req.seqlen = r.u32();
  req.prompt_kind = static_cast<PromptKind>(r.u32());
  req.prompt_layers = r.u32();
  req.prompt_len = r.u32();
  req.prompt_dim = r.u32();
  const uint32_t n_labels = r.u32();
  const size_t n = static_cast<size_t>(req.batch) * req.seqlen;
  req.input_ids.resize(n);
  for (auto& v : req.input_ids) v = r.u16();
  req.attention_mask.resize(n);
  for (auto& v : req.attention_mask) v = r.u8();
  req.mask_positions.resize(req.batch);
  for (auto& v : req.mask_positions) v = r.u16();
  req.label_words.resize(n_labels);
  for (auto& v : req.label_words) v = r.u16();
  req.prompt.resize(static_cast<size_t>(req.prompt_layers) * req.prompt_len *
                    req.prompt_dim);
  for (auto& v : req.prompt) v = r.f32();
  r.expect_end();
  return req;
}

inline std::vector<uint8_t> encode_response(const InferenceResponse& resp) {
  if (resp.logits.size() != static_cast<size_t>(resp.batch) * resp.classes)
    throw WireError("encode_response: inconsistent dimensions");
  std::vector<uint8_t> out;
  detail::Writer w(out);
  detail::write_preamble(w, MsgKind::InferResponse);
  w.u32(resp.request_id);
  w.u32(resp.batch);
  w.u32(resp.classes);
  for (auto v : resp.logits) w.f32(v);
  return out;
}

inline InferenceResponse decode_response(const std::vector<uint8_t>& body) {
  detail::Reader r(body.data(), body.size());
  if (detail::read_preamble(r) != MsgKind::InferResponse)
    throw WireError("decode_response: not an inference response");
  InferenceResponse resp;
  resp.request_id = r.u32();
  resp.batch = r.u32();
  resp.classes = r.u32();
  resp.logits.resize(static_cast<size_t>(resp.batch) * resp.classes);
  for (auto& v : resp.logits) v = r.f32();
  r.expect_end();
  return resp;
}

inline std::vector<uint8_t> encode_stats_request(const StatsRequest& req) {
  if (req.input_ids.size() != static_cast<size_t>(req.batch) * req.seqlen ||
      req.attention_mask.size() != req.input_ids.size())
    throw WireError("encode_stats_request: inconsistent dimensions");
  std::vector<uint8_t> out;
  detail::Writer w(out);
  detail::write_preamble(w, MsgKind::StatsRequest);
  w.u32(req.request_id);
  w.u32(req.batch);
  w.u32(req.seqlen);
  w.u32(req.clip_rounds);
  for (auto v : req.input_ids) w.u16(v);
  for (auto v : req.attention_mask) w.u8(v);
  return out;
}

inline StatsRequest decode_stats_request(const std::vector<uint8_t>& body) {
  detail::Reader r(body.data(), body.size());
  if (detail::read_preamble(r) != MsgKind::StatsRequest)
    throw WireError("decode_stats_request: not a stats request");
  StatsRequest req;
  req.request_id = r.u32();
  req.batch = r.u32();
  req.seqlen = r.u32();
  req.clip_rounds = r.u32();
  const size_t n = static_cast<size_t>(req.batch) * req.seqlen;
  req.input_ids.resize(n);
  for (auto& v : req.input_ids) v = r.u16();
  req.attention_mask.resize(n);
  for (auto& v : req.attention_mask) v = r.u8();
  r.expect_end();
  return req;
}

inline std::vector<uint8_t> encode_stats_response(const StatsResponse& resp) {
  std::vector<uint8_t> out;
  detail::Writer w(out);
  detail::write_preamble(w, MsgKind::StatsResponse);
  w.u32(resp.request_id);
  w.u32(static_cast<uint32_t>(resp.layer_stats.size()));
  for (const auto& [mu, sigma] : resp.layer_stats) {
    w.f64(mu);
    w.f64(sigma);
  }
  return out;
}

inline StatsResponse decode_stats_response(const std::vector<uint8_t>& body) {
  detail::Reader r(body.data(), body.size());
  if (detail::read_preamble(r) != MsgKind::StatsResponse)
    throw WireError("decode_stats_response: not a stats response");
  StatsResponse resp;
  resp.request_id = r.u32();
  const uint32_t n = r.u32();
  for (uint32_t i = 0; i < n; ++i) {
    const double mu = r.f64();
    const double sigma = r.f64();
    resp.layer_stats.emplace_back(mu, sigma);
  }
  r.expect_end();
  return resp;
}

inline std::vector<uint8_t> encode_error(const ErrorMsg& e) {
  std::vector<uint8_t> out;
  detail::Writer w(out);
  detail::write_preamble(w, MsgKind::Error);
  w.u32(e.request_id);
  w.u32(e.code);
  w.u16(static_cast<uint16_t>(e.message.size()));
  for (char c : e.message) w.u8(static_cast<uint8_t>(c));
  return out;
}

inline ErrorMsg decode_error(const std::vector<uint8_t>& body) {
  detail::Reader r(body.data(), body.size());
  if (detail::read_preamble(r) != MsgKind::Error)
    throw WireError("decode_error: not an error message");
  ErrorMsg e;
  e.request_id = r.u32();
  e.code = r.u32();
  const uint16_t len = r.u16();
  e.message.reserve(len);
  for (uint16_t i = 0; i < len; ++i) e.message.push_back(static_cast<char>(r.u8()));
  r.expect_end();
  return e;
}

}  // namespace bbt::wire
