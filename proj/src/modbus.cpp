#include "scadatb/modbus.hpp"

#include <algorithm>

namespace scadatb::modbus {

namespace {

constexpr std::uint16_t kCoilOn = 0xFF00;
constexpr std::uint16_t kCoilOff = 0x0000;

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    out_.push_back(static_cast<std::uint8_t>(v >> 8));
    out_.push_back(static_cast<std::uint8_t>(v & 0xFF));
  }
  void bytes(std::span<const std::uint8_t> v) { out_.insert(out_.end(), v.begin(), v.end()); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::size_t remaining() const { return in_.size() - pos_; }
  bool u8(std::uint8_t& v) {
    if (remaining() < 1) return false;
    v = in_[pos_++];
    return true;
  }
  bool u16(std::uint16_t& v) {
    if (remaining() < 2) return false;
    v = static_cast<std::uint16_t>((in_[pos_] << 8) | in_[pos_ + 1]);
    pos_ += 2;
    return true;
  }
  bool bytes(std::size_t n, std::span<const std::uint8_t>& out) {
    if (remaining() < n) return false;
    out = in_.subspan(pos_, n);
    pos_ += n;
    return true;
  }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

bool is_bit_read(FunctionCode fc) {
  return fc == FunctionCode::ReadCoils || fc == FunctionCode::ReadDiscreteInputs;
}

bool is_register_read(FunctionCode fc) {
  return fc == FunctionCode::ReadHoldingRegisters || fc == FunctionCode::ReadInputRegisters;
}

bool is_supported(std::uint8_t fc) {
  return (fc >= 0x01 && fc <= 0x06) || fc == 0x2B;
}

[[noreturn]] void fail(EncodeError e, const std::string& what) { throw EncodeException(e, what); }

struct PduEncoder {
  Writer& w;

  void operator()(const ReadRequest& r) const {
    const auto max_qty = is_bit_read(r.function)        ? kMaxReadBits
                         : is_register_read(r.function) ? kMaxReadRegisters
                                                        : 0;
    if (max_qty == 0) fail(EncodeError::InvalidPdu, "read request with non-read function code");
    if (r.quantity < 1 || r.quantity > max_qty) {
      fail(EncodeError::QuantityOutOfRange, "read quantity " + std::to_string(r.quantity) +
                                                " outside 1.." + std::to_string(max_qty));
    }
    w.u8(static_cast<std::uint8_t>(r.function));
    w.u16(r.start);
    w.u16(r.quantity);
  }
  void operator()(const WriteSingleCoil& r) const {
    w.u8(0x05);
    w.u16(r.address);
    w.u16(r.on ? kCoilOn : kCoilOff);
  }
  void operator()(const WriteSingleRegister& r) const {
    w.u8(0x06);
    w.u16(r.address);
    w.u16(r.value);
  }
  void operator()(const ReadDeviceIdRequest& r) const {
    w.u8(0x2B);
    w.u8(kMeiReadDeviceId);
    w.u8(static_cast<std::uint8_t>(r.category));
    w.u8(r.object_id);
  }
  void operator()(const BitsResponse& r) const {
    if (!is_bit_read(r.function)) fail(EncodeError::InvalidPdu, "bit response with wrong function code");
    if (r.packed.empty() || r.packed.size() > kMaxReadBits / 8) {
      fail(EncodeError::QuantityOutOfRange, "bit response byte count out of range");
    }
    w.u8(static_cast<std::uint8_t>(r.function));
    w.u8(static_cast<std::uint8_t>(r.packed.size()));
    w.bytes(r.packed);
  }
  void operator()(const RegistersResponse& r) const {
    if (!is_register_read(r.function)) {
      fail(EncodeError::InvalidPdu, "register response with wrong function code");
    }
    if (r.values.empty() || r.values.size() > kMaxReadRegisters) {
      fail(EncodeError::QuantityOutOfRange, "register response count out of range");
    }
    w.u8(static_cast<std::uint8_t>(r.function));
    w.u8(static_cast<std::uint8_t>(r.values.size() * 2));
    for (auto v : r.values) w.u16(v);
  }
  void operator()(const DeviceIdResponse& r) const {
    if (r.objects.size() > 0xFF) fail(EncodeError::BodyTooLong, "too many device objects");
    w.u8(0x2B);
    w.u8(kMeiReadDeviceId);
    w.u8(static_cast<std::uint8_t>(r.category));
    w.u8(r.conformity);
    w.u8(r.more_follows ? 0xFF : 0x00);
    w.u8(r.next_object_id);
    w.u8(static_cast<std::uint8_t>(r.objects.size()));
    for (const auto& obj : r.objects) {
      if (obj.value.size() > 0xFF) fail(EncodeError::BodyTooLong, "device object value too long");
      w.u8(obj.id);
      w.u8(static_cast<std::uint8_t>(obj.value.size()));
      for (char c : obj.value) w.u8(static_cast<std::uint8_t>(c));
    }
  }
  void operator()(const ExceptionResponse& r) const {
    if (r.function == 0 || r.function >= 0x80) fail(EncodeError::InvalidPdu, "bad exception function");
    w.u8(static_cast<std::uint8_t>(r.function | 0x80));
    w.u8(static_cast<std::uint8_t>(r.code));
  }
};

std::optional<Pdu> decode_request(std::uint8_t fc, Reader& r) {
  switch (fc) {
    case 0x01:
    case 0x02:
    case 0x03:
    case 0x04: {
      ReadRequest req;
      req.function = static_cast<FunctionCode>(fc);
      if (!r.u16(req.start) || !r.u16(req.quantity)) return std::nullopt;
      const auto max_qty = fc <= 0x02 ? kMaxReadBits : kMaxReadRegisters;
      if (req.quantity < 1 || req.quantity > max_qty) return std::nullopt;
      return req;
    }
    case 0x05: {
      WriteSingleCoil req;
      std::uint16_t value = 0;
      if (!r.u16(req.address) || !r.u16(value)) return std::nullopt;
      if (value != kCoilOn && value != kCoilOff) return std::nullopt;
      req.on = value == kCoilOn;
      return req;
    }
    case 0x06: {
      WriteSingleRegister req;
      if (!r.u16(req.address) || !r.u16(req.value)) return std::nullopt;
      return req;
    }
    default:
      return std::nullopt;
  }
}

std::optional<Pdu> decode_response(std::uint8_t fc, Reader& r) {
  switch (fc) {
    case 0x01:
    case 0x02: {
      BitsResponse resp;
      resp.function = static_cast<FunctionCode>(fc);
      std::uint8_t count = 0;
      std::span<const std::uint8_t> data;
      if (!r.u8(count) || count == 0 || count > kMaxReadBits / 8 || !r.bytes(count, data)) {
        return std::nullopt;
      }
      resp.packed.assign(data.begin(), data.end());
      return resp;
    }
    case 0x03:
    case 0x04: {
      RegistersResponse resp;
      resp.function = static_cast<FunctionCode>(fc);
      std::uint8_t count = 0;
      if (!r.u8(count) || count == 0 || count % 2 != 0 || count / 2 > kMaxReadRegisters) {
        return std::nullopt;
      }
      resp.values.resize(count / 2);
      for (auto& v : resp.values) {
        if (!r.u16(v)) return std::nullopt;
      }
      return resp;
    }
    case 0x05:
    case 0x06:
      // write responses echo the request
      return decode_request(fc, r);
    default:
      return std::nullopt;
  }
}

std::optional<Pdu> decode_device_id(Direction direction, Reader& r) {
  std::uint8_t category = 0;
  if (!r.u8(category) || category < 0x01 || category > 0x04) return std::nullopt;
  if (direction == Direction::Request) {
    ReadDeviceIdRequest req;
    req.category = static_cast<DeviceIdCategory>(category);
    if (!r.u8(req.object_id)) return std::nullopt;
    return req;
  }
  DeviceIdResponse resp;
  resp.category = static_cast<DeviceIdCategory>(category);
  std::uint8_t more = 0;
  std::uint8_t count = 0;
  if (!r.u8(resp.conformity) || !r.u8(more) || !r.u8(resp.next_object_id) || !r.u8(count)) {
    return std::nullopt;
  }
  if (more != 0x00 && more != 0xFF) return std::nullopt;
  resp.more_follows = more == 0xFF;
  resp.objects.reserve(count);
  for (std::uint8_t i = 0; i < count; ++i) {
    DeviceObject obj;
    std::uint8_t len = 0;
    std::span<const std::uint8_t> data;
    if (!r.u8(obj.id) || !r.u8(len) || !r.bytes(len, data)) return std::nullopt;
    obj.value.assign(data.begin(), data.end());
    resp.objects.push_back(std::move(obj));
  }
  return resp;
}

}  // namespace

std::uint8_t function_code(const Pdu& pdu) {
  struct Visitor {
    std::uint8_t operator()(const ReadRequest& r) const { return static_cast<std::uint8_t>(r.function); }
    std::uint8_t operator()(const WriteSingleCoil&) const { return 0x05; }
    std::uint8_t operator()(const WriteSingleRegister&) const { return 0x06; }
    std::uint8_t operator()(const ReadDeviceIdRequest&) const { return 0x2B; }
    std::uint8_t operator()(const BitsResponse& r) const { return static_cast<std::uint8_t>(r.function); }
    std::uint8_t operator()(const RegistersResponse& r) const {
      return static_cast<std::uint8_t>(r.function);
    }
    std::uint8_t operator()(const DeviceIdResponse&) const { return 0x2B; }
    std::uint8_t operator()(const ExceptionResponse& r) const {
      return static_cast<std::uint8_t>(r.function | 0x80);
    }
  };
  return std::visit(Visitor{}, pdu);
}

const char* to_string(DecodeError error) {
  switch (error) {
    case DecodeError::TruncatedHeader: return "truncated-header";
    case DecodeError::LengthMismatch: return "length-mismatch";
    case DecodeError::ProtocolIdNonzero: return "protocol-id-nonzero";
    case DecodeError::UnknownFunctionCode: return "unknown-function-code";
    case DecodeError::MalformedPdu: return "malformed-pdu";
  }
  return "unknown";
}

std::vector<std::uint8_t> encode_pdu(const Pdu& pdu) {
  Writer w;
  std::visit(PduEncoder{w}, pdu);
  auto out = w.take();
  if (out.size() > kMaxPduSize) {
    fail(EncodeError::BodyTooLong, "PDU of " + std::to_string(out.size()) + " bytes exceeds 253");
  }
  return out;
}

std::vector<std::uint8_t> encode_frame(const Frame& frame) {
  const auto pdu = encode_pdu(frame.pdu);
  Writer w;
  w.u16(frame.transaction_id);
  w.u16(0);
  w.u16(static_cast<std::uint16_t>(pdu.size() + 1));
  w.u8(frame.unit_id);
  w.bytes(pdu);
  return w.take();
}

std::size_t encoded_size(const Frame& frame) { return kMbapHeaderSize + encode_pdu(frame.pdu).size(); }

DecodeResult decode_frame(std::span<const std::uint8_t> bytes, Direction direction) {
  Reader r(bytes);
  Frame frame;
  std::uint16_t protocol_id = 0;
  std::uint16_t length = 0;
  if (!r.u16(frame.transaction_id) || !r.u16(protocol_id) || !r.u16(length) || !r.u8(frame.unit_id)) {
    return DecodeError::TruncatedHeader;
  }
  if (protocol_id != 0) return DecodeError::ProtocolIdNonzero;
  if (static_cast<std::size_t>(length) + 6 != bytes.size()) return DecodeError::LengthMismatch;

  std::uint8_t fc = 0;
  if (!r.u8(fc)) return DecodeError::MalformedPdu;

  std::optional<Pdu> pdu;
  if (fc & 0x80) {
    const std::uint8_t original = fc & 0x7F;
    if (direction == Direction::Request || !is_supported(original)) {
      return DecodeError::UnknownFunctionCode;
    }
    std::uint8_t code = 0;
    if (r.u8(code) && code >= 0x01 && code <= 0x04) {
      pdu = ExceptionResponse{original, static_cast<ExceptionCode>(code)};
    }
  } else if (!is_supported(fc)) {
    return DecodeError::UnknownFunctionCode;
  } else if (fc == 0x2B) {
    std::uint8_t mei = 0;
    if (!r.u8(mei)) return DecodeError::MalformedPdu;
    if (mei != kMeiReadDeviceId) return DecodeError::UnknownFunctionCode;
    pdu = decode_device_id(direction, r);
  } else {
    pdu = direction == Direction::Request ? decode_request(fc, r) : decode_response(fc, r);
  }

  if (!pdu || r.remaining() != 0) return DecodeError::MalformedPdu;
  frame.pdu = std::move(*pdu);
  return frame;
}

ExceptionResponse make_exception(const Pdu& request, ExceptionCode code) {
  return ExceptionResponse{static_cast<std::uint8_t>(function_code(request) & 0x7F), code};
}

std::vector<std::uint8_t> pack_bits(const std::vector<bool>& bits) {
  std::vector<std::uint8_t> packed((bits.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i]) packed[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  }
  return packed;
}

std::vector<bool> unpack_bits(std::span<const std::uint8_t> packed, std::size_t count) {
  std::vector<bool> bits(std::min(count, packed.size() * 8));
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = (packed[i / 8] >> (i % 8)) & 1u;
  return bits;
}

const char* to_string(Table table) {
  switch (table) {
    case Table::Coils: return "coils";
    case Table::DiscreteInputs: return "discrete-inputs";
    case Table::InputRegisters: return "input-registers";
    case Table::HoldingRegisters: return "holding-registers";
  }
  return "unknown";
}

ReferenceAddress resolve_reference(int reference) {
  const int block = reference / 10000;
  const int within = reference % 10000;
  if (reference < 1 || within == 0 || reference > 49999) {
    throw std::out_of_range("reference " + std::to_string(reference) + " is outside the data tables");
  }
  Table table;
  switch (block) {
    case 0: table = Table::Coils; break;
    case 1: table = Table::DiscreteInputs; break;
    case 3: table = Table::InputRegisters; break;
    case 4: table = Table::HoldingRegisters; break;
    default:
      throw std::out_of_range("reference " + std::to_string(reference) + " falls between data tables");
  }
  return ReferenceAddress{reference, table, static_cast<std::uint16_t>(within - 1)};
}

int to_reference(Table table, std::uint16_t offset) {
  if (offset > 9998) throw std::out_of_range("offset beyond 9999-point table");
  const int base = table == Table::Coils            ? 0
                   : table == Table::DiscreteInputs ? 10000
                   : table == Table::InputRegisters ? 30000
                                                    : 40000;
  return base + offset + 1;
}

}  // namespace scadatb::modbus
