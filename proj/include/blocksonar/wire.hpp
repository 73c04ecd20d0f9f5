#pragma once

// Minimal Bitcoin wire subset: message framing (magic, 12-byte command,
// length, double-SHA-256 checksum), compact-size integers, and the
// version/verack/getaddr/addr/inv payload codecs plus the connection
// handshake. Enough to listen; nothing to serve.

#include <openssl/evp.h>

#include <array>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "blocksonar/util.hpp"

namespace blocksonar::wire {

constexpr uint32_t kMainnetMagic = 0xd9b4bef9;  // f9 be b4 d9 on the wire
constexpr uint32_t kSimMagic = 0x524e4f53;      // "SONR"; never collides with real networks

constexpr int32_t kDefaultProtocolVersion = 70012;
constexpr size_t kCommandSize = 12;
constexpr size_t kHeaderSize = 24;
constexpr size_t kMaxInvVectors = 50'000;
constexpr size_t kMaxAddrEntries = 1'000;
constexpr size_t kMaxUserAgent = 256;
constexpr uint32_t kDefaultMaxPayload = 32u * 1024 * 1024;

struct Limits {
  uint32_t max_payload = kDefaultMaxPayload;
};

class WireError : public std::runtime_error {
 public:
  enum Kind {
    Truncated,
    NonCanonical,
    BadMagic,
    BadChecksum,
    BadCommand,
    OversizedPayload,
    CommandTooLong,
    TooManyVectors,
    TooManyAddresses,
    UserAgentTooLong,
    BadVersionField,
    HandshakeTimeout,
    ProtocolViolation,
  };
  WireError(Kind k, const std::string& what) : std::runtime_error(what), kind(k) {}
  Kind kind;
};

// ---- hashing -----------------------------------------------------------------

inline std::array<uint8_t, 32> sha256(std::span<const uint8_t> data) {
  std::array<uint8_t, 32> out{};
  unsigned int n = 0;
  if (EVP_Digest(data.data(), data.size(), out.data(), &n, EVP_sha256(), nullptr) != 1 || n != 32)
    throw std::runtime_error("sha256 failed");
  return out;
}

inline std::array<uint8_t, 32> dsha256(std::span<const uint8_t> data) {
  auto first = sha256(data);
  return sha256(first);
}

// First 4 bytes of SHA-256(SHA-256(payload)).
inline std::array<uint8_t, 4> checksum(std::span<const uint8_t> payload) {
  auto d = dsha256(payload);
  return {d[0], d[1], d[2], d[3]};
}

// ---- byte cursor -------------------------------------------------------------

namespace detail {

struct Cursor {
  std::span<const uint8_t> data;
  size_t off = 0;

  size_t remaining() const { return data.size() - off; }
  void require(size_t n) const {
    if (remaining() < n) throw WireError(WireError::Truncated, "truncated input");
  }
  const uint8_t* take(size_t n) {
    require(n);
    const uint8_t* p = data.data() + off;
    off += n;
    return p;
  }
  uint8_t u8() { return *take(1); }
  uint16_t u16_le() {
    const uint8_t* p = take(2);
    return static_cast<uint16_t>(p[0] | p[1] << 8);
  }
  uint16_t u16_be() {
    const uint8_t* p = take(2);
    return static_cast<uint16_t>(p[0] << 8 | p[1]);
  }
  uint32_t u32_le() {
    const uint8_t* p = take(4);
    return static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
           static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
  }
  uint64_t u64_le() {
    uint64_t lo = u32_le();
    uint64_t hi = u32_le();
    return lo | hi << 32;
  }
};

inline void put_u16_le(bytes& b, uint16_t v) {
  b.push_back(static_cast<uint8_t>(v));
  b.push_back(static_cast<uint8_t>(v >> 8));
}
inline void put_u16_be(bytes& b, uint16_t v) {
  b.push_back(static_cast<uint8_t>(v >> 8));
  b.push_back(static_cast<uint8_t>(v));
}
inline void put_u32_le(bytes& b, uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<uint8_t>(v >> 8 * i));
}
inline void put_u64_le(bytes& b, uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<uint8_t>(v >> 8 * i));
}

}  // namespace detail

// ---- compact-size integers ---------------------------------------------------

inline void append_varint(bytes& out, uint64_t n) {
  if (n < 0xfd) {
    out.push_back(static_cast<uint8_t>(n));
  } else if (n <= 0xffff) {
    out.push_back(0xfd);
    detail::put_u16_le(out, static_cast<uint16_t>(n));
  } else if (n <= 0xffffffffull) {
    out.push_back(0xfe);
    detail::put_u32_le(out, static_cast<uint32_t>(n));
  } else {
    out.push_back(0xff);
    detail::put_u64_le(out, n);
  }
}

inline bytes encode_varint(uint64_t n) {
  bytes out;
  append_varint(out, n);
  return out;
}

// Returns (value, bytes consumed); rejects non-minimal encodings.
inline std::pair<uint64_t, size_t> decode_varint(std::span<const uint8_t> in) {
  detail::Cursor c{in};
  uint8_t tag = c.u8();
  if (tag < 0xfd) return {tag, 1};
  uint64_t v;
  if (tag == 0xfd) {
    v = c.u16_le();
    if (v < 0xfd) throw WireError(WireError::NonCanonical, "non-minimal varint");
    return {v, 3};
  }
  if (tag == 0xfe) {
    v = c.u32_le();
    if (v <= 0xffff) throw WireError(WireError::NonCanonical, "non-minimal varint");
    return {v, 5};
  }
  v = c.u64_le();
  if (v <= 0xffffffffull) throw WireError(WireError::NonCanonical, "non-minimal varint");
  return {v, 9};
}

inline uint64_t read_varint(detail::Cursor& c) {
  auto [v, n] = decode_varint(c.data.subspan(c.off));
  c.off += n;
  return v;
}

// ---- domain types ------------------------------------------------------------

struct NetAddress {
  uint64_t services = 0;
  std::array<uint8_t, 16> ip{};  // IPv4-mapped-IPv6 or opaque (onion ranges pass through)
  uint16_t port = 0;             // big-endian on the wire

  static NetAddress ipv4(uint8_t a, uint8_t b, uint8_t c, uint8_t d, uint16_t port,
                         uint64_t services = 0) {
    NetAddress n;
    n.services = services;
    n.ip = {0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0xff, 0xff, a, b, c, d};
    n.port = port;
    return n;
  }

  bool is_ipv4_mapped() const {
    for (int i = 0; i < 10; ++i)
      if (ip[i] != 0) return false;
    return ip[10] == 0xff && ip[11] == 0xff;
  }

  // "a.b.c.d:port" for mapped IPv4, "[hex:groups]:port" otherwise.
  std::string to_string() const {
    std::string s;
    if (is_ipv4_mapped()) {
      s = std::to_string(ip[12]) + "." + std::to_string(ip[13]) + "." + std::to_string(ip[14]) +
          "." + std::to_string(ip[15]);
    } else {
      s = "[";
      static constexpr char digits[] = "0123456789abcdef";
      for (int g = 0; g < 8; ++g) {
        if (g) s.push_back(':');
        uint16_t v = static_cast<uint16_t>(ip[2 * g] << 8 | ip[2 * g + 1]);
        bool lead = true;
        for (int shift = 12; shift >= 0; shift -= 4) {
          int nib = v >> shift & 0xf;
          if (nib == 0 && lead && shift != 0) continue;
          lead = false;
          s.push_back(digits[nib]);
        }
      }
      s.push_back(']');
    }
    return s + ":" + std::to_string(port);
  }

  bool operator==(const NetAddress&) const = default;
};

struct TimestampedAddress {
  uint32_t last_seen = 0;  // unix seconds, addr payload entries only
  NetAddress addr;
  bool operator==(const TimestampedAddress&) const = default;
};

struct VersionInfo {
  int32_t protocol_version = kDefaultProtocolVersion;
  uint64_t services = 0;
  int64_t timestamp = 0;  // unix seconds
  std::string user_agent;
  int32_t start_height = 0;
  uint64_t nonce = 0;
  bool relay = true;
  bool operator==(const VersionInfo&) const = default;
};

constexpr uint32_t kInvTx = 1;
constexpr uint32_t kInvBlock = 2;

struct InvVector {
  uint32_t object_kind = 0;
  std::array<uint8_t, 32> hash{};

  bool known_kind() const { return object_kind == kInvTx || object_kind == kInvBlock; }
  std::string hash_hex() const { return to_hex(hash); }
  bool operator==(const InvVector&) const = default;
};

struct MessageHeader {
  uint32_t magic = 0;
  std::string command;
  uint32_t payload_length = 0;
  std::array<uint8_t, 4> stored_checksum{};
};

// ---- payload codecs ----------------------------------------------------------

inline bytes encode_inv(std::span<const InvVector> vectors) {
  if (vectors.size() > kMaxInvVectors)
    throw WireError(WireError::TooManyVectors, "inv with more than 50000 vectors");
  bytes out;
  out.reserve(1 + vectors.size() * 36);
  append_varint(out, vectors.size());
  for (const auto& v : vectors) {
    detail::put_u32_le(out, v.object_kind);
    out.insert(out.end(), v.hash.begin(), v.hash.end());
  }
  return out;
}

inline std::vector<InvVector> decode_inv(std::span<const uint8_t> payload) {
  detail::Cursor c{payload};
  uint64_t count = read_varint(c);
  if (count > kMaxInvVectors)
    throw WireError(WireError::TooManyVectors, "inv with more than 50000 vectors");
  std::vector<InvVector> out(count);
  for (auto& v : out) {
    v.object_kind = c.u32_le();
    std::memcpy(v.hash.data(), c.take(32), 32);
  }
  return out;
}

inline bytes encode_addr(std::span<const TimestampedAddress> entries) {
  if (entries.size() > kMaxAddrEntries)
    throw WireError(WireError::TooManyAddresses, "addr with more than 1000 entries");
  bytes out;
  out.reserve(1 + entries.size() * 30);
  append_varint(out, entries.size());
  for (const auto& e : entries) {
    detail::put_u32_le(out, e.last_seen);
    detail::put_u64_le(out, e.addr.services);
    out.insert(out.end(), e.addr.ip.begin(), e.addr.ip.end());
    detail::put_u16_be(out, e.addr.port);
  }
  return out;
}

inline std::vector<TimestampedAddress> decode_addr(std::span<const uint8_t> payload) {
  detail::Cursor c{payload};
  uint64_t count = read_varint(c);
  if (count > kMaxAddrEntries)
    throw WireError(WireError::TooManyAddresses, "addr with more than 1000 entries");
  std::vector<TimestampedAddress> out(count);
  for (auto& e : out) {
    e.last_seen = c.u32_le();
    e.addr.services = c.u64_le();
    std::memcpy(e.addr.ip.data(), c.take(16), 16);
    e.addr.port = c.u16_be();
  }
  return out;
}

namespace detail {

inline void put_bare_netaddr(bytes& out, const NetAddress& a) {
  put_u64_le(out, a.services);
  out.insert(out.end(), a.ip.begin(), a.ip.end());
  put_u16_be(out, a.port);
}

}  // namespace detail

inline bytes encode_version(const VersionInfo& v) {
  if (v.protocol_version <= 0)
    throw WireError(WireError::BadVersionField, "protocol version must be positive");
  if (v.user_agent.size() > kMaxUserAgent)
    throw WireError(WireError::UserAgentTooLong, "user agent longer than 256 bytes");
  bytes out;
  detail::put_u32_le(out, static_cast<uint32_t>(v.protocol_version));
  detail::put_u64_le(out, v.services);
  detail::put_u64_le(out, static_cast<uint64_t>(v.timestamp));
  detail::put_bare_netaddr(out, NetAddress{});  // addr_recv: unused by a listener
  detail::put_bare_netaddr(out, NetAddress{});  // addr_from
  detail::put_u64_le(out, v.nonce);
  append_varint(out, v.user_agent.size());
  out.insert(out.end(), v.user_agent.begin(), v.user_agent.end());
  detail::put_u32_le(out, static_cast<uint32_t>(v.start_height));
  out.push_back(v.relay ? 1 : 0);
  return out;
}

inline VersionInfo decode_version(std::span<const uint8_t> payload) {
  detail::Cursor c{payload};
  VersionInfo v;
  v.protocol_version = static_cast<int32_t>(c.u32_le());
  if (v.protocol_version <= 0)
    throw WireError(WireError::BadVersionField, "protocol version must be positive");
  v.services = c.u64_le();
  v.timestamp = static_cast<int64_t>(c.u64_le());
  c.take(26);  // addr_recv
  c.take(26);  // addr_from
  v.nonce = c.u64_le();
  uint64_t ua_len = read_varint(c);
  if (ua_len > kMaxUserAgent)
    throw WireError(WireError::UserAgentTooLong, "user agent longer than 256 bytes");
  const uint8_t* ua = c.take(ua_len);
  v.user_agent.assign(reinterpret_cast<const char*>(ua), ua_len);
  v.start_height = static_cast<int32_t>(c.u32_le());
  v.relay = c.remaining() > 0 ? c.u8() != 0 : true;
  return v;
}

// ---- framing -----------------------------------------------------------------

namespace detail {

inline bool command_ok(std::string_view cmd) {
  if (cmd.empty() || cmd.size() > kCommandSize) return false;
  for (char ch : cmd)
    if (ch < 0x20 || ch > 0x7e) return false;
  return true;
}

}  // namespace detail

// header ∥ payload with length and checksum filled in.
inline bytes encode_message(uint32_t magic, std::string_view command,
                            std::span<const uint8_t> payload) {
  if (command.size() > kCommandSize)
    throw WireError(WireError::CommandTooLong, "command longer than 12 bytes");
  if (!detail::command_ok(command))
    throw WireError(WireError::BadCommand, "command must be printable ascii");
  bytes out;
  out.reserve(kHeaderSize + payload.size());
  detail::put_u32_le(out, magic);
  for (size_t i = 0; i < kCommandSize; ++i)
    out.push_back(i < command.size() ? static_cast<uint8_t>(command[i]) : 0);
  detail::put_u32_le(out, static_cast<uint32_t>(payload.size()));
  auto ck = checksum(payload);
  out.insert(out.end(), ck.begin(), ck.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

struct DecodedMessage {
  std::string command;
  bytes payload;
  size_t consumed = 0;  // always kHeaderSize + payload_length
};

inline MessageHeader decode_header(std::span<const uint8_t> hdr, uint32_t expected_magic,
                                   const Limits& limits = {}) {
  detail::Cursor c{hdr};
  MessageHeader h;
  h.magic = c.u32_le();
  if (h.magic != expected_magic) throw WireError(WireError::BadMagic, "unexpected network magic");
  const uint8_t* cmd = c.take(kCommandSize);
  size_t len = 0;
  while (len < kCommandSize && cmd[len] != 0) ++len;
  h.command.assign(reinterpret_cast<const char*>(cmd), len);
  for (size_t i = len; i < kCommandSize; ++i)
    if (cmd[i] != 0) throw WireError(WireError::BadCommand, "command padding not zero");
  if (!detail::command_ok(h.command))
    throw WireError(WireError::BadCommand, "command must be printable ascii");
  h.payload_length = c.u32_le();
  if (h.payload_length > limits.max_payload)
    throw WireError(WireError::OversizedPayload, "payload exceeds size cap");
  std::memcpy(h.stored_checksum.data(), c.take(4), 4);
  return h;
}

// Unknown commands are returned, not rejected; the caller decides what to skip.
inline DecodedMessage decode_message(std::span<const uint8_t> in, uint32_t expected_magic,
                                     const Limits& limits = {}) {
  if (in.size() < kHeaderSize) throw WireError(WireError::Truncated, "truncated header");
  MessageHeader h = decode_header(in.first(kHeaderSize), expected_magic, limits);
  if (in.size() - kHeaderSize < h.payload_length)
    throw WireError(WireError::Truncated, "truncated payload");
  DecodedMessage m;
  m.command = h.command;
  m.payload.assign(in.begin() + kHeaderSize, in.begin() + kHeaderSize + h.payload_length);
  if (checksum(m.payload) != h.stored_checksum)
    throw WireError(WireError::BadChecksum, "checksum mismatch");
  m.consumed = kHeaderSize + h.payload_length;
  return m;
}

// ---- duplex channel + handshake ---------------------------------------------

class ChannelError : public std::runtime_error {
 public:
  enum Kind { Io, Timeout, Closed };
  ChannelError(Kind k, const std::string& what) : std::runtime_error(what), kind(k) {}
  Kind kind;
};

// Duplex byte channel. read_some returns 0 on orderly EOF and throws
// ChannelError{Timeout} when nothing arrives within timeout_ms.
class Channel {
 public:
  virtual ~Channel() = default;
  virtual size_t read_some(uint8_t* buf, size_t n, int timeout_ms) = 0;
  virtual void write_all(std::span<const uint8_t> data) = 0;
  virtual void shutdown() = 0;
};

namespace detail {

inline void read_exact(Channel& ch, uint8_t* buf, size_t n, uint64_t deadline_ms) {
  size_t got = 0;
  while (got < n) {
    uint64_t now = steady_ms();
    if (now >= deadline_ms) throw ChannelError(ChannelError::Timeout, "read deadline");
    size_t r = ch.read_some(buf + got, n - got, static_cast<int>(deadline_ms - now));
    if (r == 0) throw WireError(WireError::Truncated, "connection closed mid-frame");
    got += r;
  }
}

}  // namespace detail

// Reads one full frame. An idle timeout before any byte arrives surfaces as
// ChannelError{Timeout}; a timeout or EOF mid-frame is Truncated.
inline DecodedMessage read_message(Channel& ch, uint32_t expected_magic, int timeout_ms,
                                   const Limits& limits = {}) {
  uint64_t deadline = steady_ms() + static_cast<uint64_t>(timeout_ms);
  uint8_t hdr[kHeaderSize];
  size_t got = ch.read_some(hdr, kHeaderSize, timeout_ms);  // idle timeout passes through
  if (got == 0) throw WireError(WireError::Truncated, "connection closed");
  detail::read_exact(ch, hdr + got, kHeaderSize - got, deadline);
  MessageHeader h = decode_header({hdr, kHeaderSize}, expected_magic, limits);
  DecodedMessage m;
  m.command = h.command;
  m.payload.resize(h.payload_length);
  if (h.payload_length > 0) detail::read_exact(ch, m.payload.data(), h.payload_length, deadline);
  if (checksum(m.payload) != h.stored_checksum)
    throw WireError(WireError::BadChecksum, "checksum mismatch");
  m.consumed = kHeaderSize + h.payload_length;
  return m;
}

inline void send_message(Channel& ch, uint32_t magic, std::string_view command,
                         std::span<const uint8_t> payload) {
  ch.write_all(encode_message(magic, command, payload));
}

// Initiator side: send version, await peer version + verack, send verack.
// The connection is established once this returns.
inline VersionInfo handshake(Channel& ch, const VersionInfo& self, uint32_t magic,
                             int timeout_ms = 10'000, const Limits& limits = {}) {
  uint64_t deadline = steady_ms() + static_cast<uint64_t>(timeout_ms);
  send_message(ch, magic, "version", encode_version(self));
  std::optional<VersionInfo> peer;
  bool verack = false;
  while (!peer || !verack) {
    uint64_t now = steady_ms();
    if (now >= deadline) throw WireError(WireError::HandshakeTimeout, "handshake timed out");
    DecodedMessage m;
    try {
      m = read_message(ch, magic, static_cast<int>(deadline - now), limits);
    } catch (const ChannelError& e) {
      if (e.kind == ChannelError::Timeout)
        throw WireError(WireError::HandshakeTimeout, "handshake timed out");
      throw;
    }
    if (m.command == "version") {
      try {
        peer = decode_version(m.payload);
      } catch (const WireError&) {
        throw WireError(WireError::ProtocolViolation, "malformed version payload");
      }
      send_message(ch, magic, "verack", {});
    } else if (m.command == "verack") {
      if (!peer) throw WireError(WireError::ProtocolViolation, "verack before version");
      verack = true;
    }
    // anything else this early is ignored; heterogeneous clients send extras
  }
  return *peer;
}

// Acceptor side of the same exchange.
inline VersionInfo handshake_accept(Channel& ch, const VersionInfo& self, uint32_t magic,
                                    int timeout_ms = 10'000, const Limits& limits = {}) {
  uint64_t deadline = steady_ms() + static_cast<uint64_t>(timeout_ms);
  std::optional<VersionInfo> peer;
  bool verack = false;
  while (!peer || !verack) {
    uint64_t now = steady_ms();
    if (now >= deadline) throw WireError(WireError::HandshakeTimeout, "handshake timed out");
    DecodedMessage m;
    try {
      m = read_message(ch, magic, static_cast<int>(deadline - now), limits);
    } catch (const ChannelError& e) {
      if (e.kind == ChannelError::Timeout)
        throw WireError(WireError::HandshakeTimeout, "handshake timed out");
      throw;
    }
    if (m.command == "version") {
      try {
        peer = decode_version(m.payload);
      } catch (const WireError&) {
        throw WireError(WireError::ProtocolViolation, "malformed version payload");
      }
      send_message(ch, magic, "version", encode_version(self));
      send_message(ch, magic, "verack", {});
    } else if (m.command == "verack") {
      if (!peer) throw WireError(WireError::ProtocolViolation, "verack before version");
      verack = true;
    }
  }
  return *peer;
}

}  // namespace blocksonar::wire
