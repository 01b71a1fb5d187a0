#include <doctest.h>

#include <random>

#include "bbt/wire.hpp"

using namespace bbt::wire;

namespace {

InferenceRequest random_request(uint64_t seed) {
  std::mt19937_64 rng(seed);
  InferenceRequest req;
  req.request_id = static_cast<uint32_t>(rng());
  req.batch = 1 + rng() % 8;
  req.seqlen = 1 + rng() % 16;
  req.prompt_kind = PromptKind::Deep;
  req.prompt_layers = 1 + rng() % 4;
  req.prompt_len = 1 + rng() % 5;
  req.prompt_dim = 1 + rng() % 8;
  const size_t n = static_cast<size_t>(req.batch) * req.seqlen;
  for (size_t i = 0; i < n; ++i) {
    req.input_ids.push_back(static_cast<uint16_t>(rng()));
    req.attention_mask.push_back(static_cast<uint8_t>(rng() % 2));
  }
  for (uint32_t e = 0; e < req.batch; ++e)
    req.mask_positions.push_back(static_cast<uint16_t>(rng() % req.seqlen));
  const int classes = 2 + rng() % 5;
  for (int c = 0; c < classes; ++c)
    req.label_words.push_back(static_cast<uint16_t>(rng()));
  std::normal_distribution<float> g;
  const size_t pn =
      static_cast<size_t>(req.prompt_layers) * req.prompt_len * req.prompt_dim;
  for (size_t i = 0; i < pn; ++i) req.prompt.push_back(g(rng));
  return req;
}

}  // namespace

TEST_CASE("inference request round-trips bitwise") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    const InferenceRequest req = random_request(seed);
    const auto body = encode_request(req);
    CHECK(peek_kind(body) == MsgKind::InferRequest);
    const InferenceRequest back = decode_request(body);
    CHECK(back.request_id == req.request_id);
    CHECK(back.batch == req.batch);
    CHECK(back.seqlen == req.seqlen);
    CHECK(back.prompt_kind == req.prompt_kind);
    CHECK(back.prompt_layers == req.prompt_layers);
    CHECK(back.prompt_len == req.prompt_len);
    CHECK(back.prompt_dim == req.prompt_dim);
    CHECK(back.input_ids == req.input_ids);
    CHECK(back.attention_mask == req.attention_mask);
    CHECK(back.mask_positions == req.mask_positions);
    CHECK(back.label_words == req.label_words);
    REQUIRE(back.prompt.size() == req.prompt.size());
    for (size_t i = 0; i < req.prompt.size(); ++i)
      CHECK(std::memcmp(&back.prompt[i], &req.prompt[i], 4) == 0);
    // encoding the decoded message reproduces the bytes exactly
    CHECK(encode_request(back) == body);
  }
}

TEST_CASE("response, stats and error messages round-trip") {
  std::mt19937_64 rng(7);
  InferenceResponse resp;
  resp.request_id = 9;
  resp.batch = 3;
  resp.classes = 4;
  std::normal_distribution<float> g;
  for (int i = 0; i < 12; ++i) resp.logits.push_back(g(rng));
  const auto rb = encode_response(resp);
  const auto r2 = decode_response(rb);
  CHECK(r2.request_id == 9);
  CHECK(r2.batch == 3);
  CHECK(r2.classes == 4);
  CHECK(encode_response(r2) == rb);

  StatsRequest sq;
  sq.request_id = 1;
  sq.batch = 2;
  sq.seqlen = 3;
  sq.clip_rounds = 5;
  sq.input_ids = {1, 2, 3, 4, 5, 6};
  sq.attention_mask = {1, 1, 1, 1, 1, 0};
  const auto sb = encode_stats_request(sq);
  CHECK(peek_kind(sb) == MsgKind::StatsRequest);
  const auto s2 = decode_stats_request(sb);
  CHECK(s2.input_ids == sq.input_ids);
  CHECK(s2.clip_rounds == 5);

  StatsResponse sr;
  sr.request_id = 2;
  sr.layer_stats = {{0.0, 0.02}, {-0.013, 0.041}, {0.5, 1.25}};
  const auto srb = encode_stats_response(sr);
  const auto sr2 = decode_stats_response(srb);
  CHECK(sr2.layer_stats == sr.layer_stats);

  ErrorMsg e;
  e.request_id = 3;
  e.code = 42;
  e.message = "bad prompt shape";
  const auto eb = encode_error(e);
  CHECK(peek_kind(eb) == MsgKind::Error);
  const auto e2 = decode_error(eb);
  CHECK(e2.code == 42);
  CHECK(e2.message == e.message);
}

TEST_CASE("payload accounting matches the documented service sizes") {
  // 32-example batch at the sentiment benchmark's padded length
  InferenceRequest req;
  req.batch = 32;
  req.seqlen = 47;
  req.prompt_kind = PromptKind::None;
  req.input_ids.assign(static_cast<size_t>(32) * 47, 0);
  req.attention_mask.assign(static_cast<size_t>(32) * 47, 1);
  req.mask_positions.assign(32, 46);
  req.label_words = {2, 3};
  CHECK(req.ids_payload_bytes() == 3008);
  CHECK(req.mask_payload_bytes() == 1504);
  CHECK(req.prompt_payload_bytes() == 0);

  // single-subspace upload: 500 float values
  req.prompt_kind = PromptKind::Flat;
  req.prompt_layers = 1;
  req.prompt_len = 1;
  req.prompt_dim = 500;
  req.prompt.assign(500, 0.0f);
  CHECK(req.prompt_payload_bytes() == 2000);

  // layerwise upload: 24 layers of 500 values each
  req.prompt_kind = PromptKind::Deep;
  req.prompt_layers = 24;
  req.prompt.assign(static_cast<size_t>(24) * 500, 0.0f);
  CHECK(req.prompt_payload_bytes() == 48000);

  const auto body = encode_request(req);
  CHECK(body.size() == req.ids_payload_bytes() + req.mask_payload_bytes() +
                           req.prompt_payload_bytes() +
                           req.header_overhead_bytes());

  InferenceResponse resp;
  resp.batch = 32;
  resp.classes = 2;
  resp.logits.assign(64, 0.0f);
  CHECK(resp.payload_bytes() == 256);
  CHECK(encode_response(resp).size() ==
        resp.payload_bytes() + InferenceResponse::kHeaderBytes);
}

TEST_CASE("decode failures raise distinct errors") {
  const auto body = encode_request(random_request(3));

  for (size_t cut : {size_t{1}, size_t{3}, size_t{20}, body.size() - 1}) {
    std::vector<uint8_t> trunc(body.begin(), body.begin() + cut);
    CHECK_THROWS_AS(decode_request(trunc), TruncatedError);
  }

  auto bad = body;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_request(bad), BadMagicError);

  auto ver = body;
  ver[3] = 9;
  CHECK_THROWS_AS(decode_request(ver), VersionError);

  auto trailing = body;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode_request(trailing), WireError);

  // wrong kind for the decoder in use
  InferenceResponse resp;
  resp.batch = 1;
  resp.classes = 1;
  resp.logits = {0.0f};
  CHECK_THROWS_AS(decode_request(encode_response(resp)), WireError);
}

TEST_CASE("encoders validate declared dimensions") {
  InferenceRequest req = random_request(11);
  req.input_ids.pop_back();
  CHECK_THROWS_AS(encode_request(req), WireError);

  req = random_request(11);
  req.prompt.push_back(0.0f);
  CHECK_THROWS_AS(encode_request(req), WireError);

  InferenceResponse resp;
  resp.batch = 2;
  resp.classes = 2;
  resp.logits = {1.0f};
  CHECK_THROWS_AS(encode_response(resp), WireError);
}

TEST_CASE("golden bytes: minimal inference request is pinned") {
  InferenceRequest req;
  req.request_id = 0x01020304;
  req.batch = 1;
  req.seqlen = 2;
  req.prompt_kind = PromptKind::None;
  req.input_ids = {0x0005, 0x0001};
  req.attention_mask = {1, 1};
  req.mask_positions = {1};
  req.label_words = {2, 3};
  const std::vector<uint8_t> expect = {
      'B',  'T',  1,    1,           // magic, kind, version
      0x04, 0x03, 0x02, 0x01,        // request id, little-endian
      1,    0,    0,    0,           // batch
      2,    0,    0,    0,           // seqlen
      0,    0,    0,    0,           // prompt kind: none
      0,    0,    0,    0,           // prompt layers
      0,    0,    0,    0,           // prompt len
      0,    0,    0,    0,           // prompt dim
      2,    0,    0,    0,           // label word count
      5,    0,    1,    0,           // input ids
      1,    1,                       // attention mask
      1,    0,                       // mask positions
      2,    0,    3,    0,           // label word ids
  };
  CHECK(encode_request(req) == expect);
}
