// SPDX-License-Identifier: Apache-2.0
#pragma once

// Protocol messages and their canonical JSON bodies. Object keys are emitted
// in sorted order, reals in shortest round-trip form, big integers as hex, so
// the same run always produces the same bytes.

#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedboost/bigint.hpp"
#include "fedboost/encrypted_gradient.hpp"
#include "fedboost/error.hpp"
#include "fedboost/model.hpp"
#include "fedboost/paillier.hpp"
#include "fedboost/transport.hpp"

namespace fedboost {

using json = nlohmann::json;

enum class MessageKind : std::uint8_t {
  KeyOffer = 1,
  KeyDeliver = 2,
  GlobalGradient = 3,
  TrainResult = 4,
  FusedGradient = 5,
  EvalResult = 6,
  MergedGradient = 7,
  FinalModelRequest = 8,
  FinalModel = 9,
  Abort = 10,
};

constexpr std::string_view to_string(MessageKind k) {
  switch (k) {
    case MessageKind::KeyOffer: return "KeyOffer";
    case MessageKind::KeyDeliver: return "KeyDeliver";
    case MessageKind::GlobalGradient: return "GlobalGradient";
    case MessageKind::TrainResult: return "TrainResult";
    case MessageKind::FusedGradient: return "FusedGradient";
    case MessageKind::EvalResult: return "EvalResult";
    case MessageKind::MergedGradient: return "MergedGradient";
    case MessageKind::FinalModelRequest: return "FinalModelRequest";
    case MessageKind::FinalModel: return "FinalModel";
    case MessageKind::Abort: return "Abort";
  }
  return "Unknown";
}

inline constexpr std::uint32_t kServerId = 0;

struct Message {
  MessageKind kind = MessageKind::Abort;
  std::uint32_t round = 0;
  std::uint32_t sender = kServerId;
  json payload = json::object();
};

inline transport::Frame to_frame(const Message& m) {
  json body = {{"payload", m.payload}, {"round", m.round}, {"sender", m.sender}};
  return {static_cast<std::uint8_t>(m.kind), body.dump()};
}

inline Message from_frame(const transport::Frame& f) {
  if (f.kind < 1 || f.kind > 10) fail(Errc::ProtocolViolation, "unknown message kind " + std::to_string(f.kind));
  try {
    const json body = json::parse(f.body);
    Message m;
    m.kind = static_cast<MessageKind>(f.kind);
    const auto& round = body.at("round");
    const auto& sender = body.at("sender");
    if (!round.is_number_unsigned() || !sender.is_number_unsigned() ||
        round.get<std::uint64_t>() > UINT32_MAX || sender.get<std::uint64_t>() > UINT32_MAX)
      fail(Errc::ProtocolViolation, "round and sender must be unsigned 32-bit integers");
    m.round = round.get<std::uint32_t>();
    m.sender = sender.get<std::uint32_t>();
    m.payload = body.at("payload");
    return m;
  } catch (const json::exception& e) {
    fail(Errc::ProtocolViolation, std::string("malformed message body: ") + e.what());
  }
}

// ---- payload pieces -------------------------------------------------------

inline json layout_to_json(const Layout& layout) {
  json out = json::array();
  for (const auto& l : layout.layers()) out.push_back({{"cols", l.cols}, {"rows", l.rows}});
  return out;
}

inline Layout layout_from_json(const json& j) {
  std::vector<DenseShape> layers;
  for (const auto& l : j) layers.push_back({l.at("rows").get<std::size_t>(), l.at("cols").get<std::size_t>()});
  return Layout(std::move(layers));
}

inline json params_to_json(const ModelParams& p) {
  return {{"layout", layout_to_json(p.layout)}, {"values", p.values}};
}

inline ModelParams params_from_json(const json& j) {
  ModelParams p{layout_from_json(j.at("layout")), j.at("values").get<std::vector<double>>()};
  p.validate();
  return p;
}

inline json public_key_to_json(const paillier::PublicKey& pk) {
  return {{"bits", pk.key_bits}, {"n", to_hex(pk.n)}};
}

inline paillier::PublicKey public_key_from_json(const json& j) {
  auto pk = paillier::PublicKey::from_modulus(from_hex(j.at("n").get<std::string>()));
  if (pk.key_bits != j.at("bits").get<unsigned>()) fail(Errc::ProtocolViolation, "key size does not match modulus");
  return pk;
}

inline json key_pair_to_json(const paillier::KeyPair& kp) {
  return {{"lambda", to_hex(kp.sec.lambda)}, {"mu", to_hex(kp.sec.mu)}, {"n", to_hex(kp.pub.n)}};
}

inline paillier::KeyPair key_pair_from_json(const json& j) {
  paillier::KeyPair kp;
  kp.pub = paillier::PublicKey::from_modulus(from_hex(j.at("n").get<std::string>()));
  kp.sec.lambda = from_hex(j.at("lambda").get<std::string>());
  kp.sec.mu = from_hex(j.at("mu").get<std::string>());
  return kp;
}

/// A gradient as it travels: plain reals, or Paillier ciphertexts.
using WireGradient = std::variant<GradientVector, EncryptedGradient>;

inline json gradient_to_json(const WireGradient& g) {
  if (const auto* plain = std::get_if<GradientVector>(&g)) return {{"encoding", "plain"}, {"values", *plain}};
  const auto& enc = std::get<EncryptedGradient>(g);
  json values = json::array();
  for (const auto& c : enc.values) values.push_back(to_hex(c.value));
  return {{"encoding", "paillier"},
          {"modulus", to_hex(enc.modulus)},
          {"pieces", enc.pieces},
          {"scale_exponent", enc.scale_exponent},
          {"values", std::move(values)}};
}

inline WireGradient gradient_from_json(const json& j) {
  const auto encoding = j.at("encoding").get<std::string>();
  if (encoding == "plain") return j.at("values").get<GradientVector>();
  if (encoding != "paillier") fail(Errc::ProtocolViolation, "unknown gradient encoding '" + encoding + "'");
  EncryptedGradient enc;
  enc.modulus = from_hex(j.at("modulus").get<std::string>());
  enc.pieces = j.at("pieces").get<int>();
  enc.scale_exponent = j.at("scale_exponent").get<int>();
  for (const auto& v : j.at("values")) enc.values.push_back({from_hex(v.get<std::string>())});
  return enc;
}

/// Wraps payload parsing so malformed bodies surface as ProtocolViolation.
template <typename F>
auto parse_payload(const Message& m, F&& f) -> decltype(f(m.payload)) {
  try {
    return f(m.payload);
  } catch (const json::exception& e) {
    fail(Errc::ProtocolViolation,
         std::string(to_string(m.kind)) + " payload is malformed: " + e.what());
  }
}

}  // namespace fedboost
