#pragma once

// Modbus/TCP application data units: MBAP framing, the PDUs the testbed
// speaks, and the one-based data-reference tables.

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace scadatb::modbus {

inline constexpr std::size_t kMbapHeaderSize = 7;
inline constexpr std::size_t kMaxPduSize = 253;
inline constexpr std::uint16_t kMaxReadBits = 2000;
inline constexpr std::uint16_t kMaxReadRegisters = 125;
inline constexpr std::uint8_t kMeiReadDeviceId = 0x0E;

enum class FunctionCode : std::uint8_t {
  ReadCoils = 0x01,
  ReadDiscreteInputs = 0x02,
  ReadHoldingRegisters = 0x03,
  ReadInputRegisters = 0x04,
  WriteSingleCoil = 0x05,
  WriteSingleRegister = 0x06,
  EncapsulatedInterface = 0x2B,
};

enum class ExceptionCode : std::uint8_t {
  IllegalFunction = 0x01,
  IllegalDataAddress = 0x02,
  IllegalDataValue = 0x03,
  ServerDeviceFailure = 0x04,
};

// Device identification read codes (MEI type 0x0E).
enum class DeviceIdCategory : std::uint8_t {
  Basic = 0x01,
  Regular = 0x02,
  Extended = 0x03,
  Specific = 0x04,
};

// Requests ------------------------------------------------------------------

// fc 0x01..0x04
struct ReadRequest {
  FunctionCode function = FunctionCode::ReadCoils;
  std::uint16_t start = 0;
  std::uint16_t quantity = 1;
  bool operator==(const ReadRequest&) const = default;
};

// fc 0x05; the response echoes the request so the same type serves both.
struct WriteSingleCoil {
  std::uint16_t address = 0;
  bool on = false;
  bool operator==(const WriteSingleCoil&) const = default;
};

// fc 0x06; echoed like WriteSingleCoil.
struct WriteSingleRegister {
  std::uint16_t address = 0;
  std::uint16_t value = 0;
  bool operator==(const WriteSingleRegister&) const = default;
};

struct ReadDeviceIdRequest {
  DeviceIdCategory category = DeviceIdCategory::Basic;
  std::uint8_t object_id = 0;
  bool operator==(const ReadDeviceIdRequest&) const = default;
};

// Responses -----------------------------------------------------------------

// fc 0x01/0x02. Bits are kept packed (LSB first) because the wire carries a
// byte count, not a bit count.
struct BitsResponse {
  FunctionCode function = FunctionCode::ReadCoils;
  std::vector<std::uint8_t> packed;
  bool operator==(const BitsResponse&) const = default;
};

// fc 0x03/0x04
struct RegistersResponse {
  FunctionCode function = FunctionCode::ReadHoldingRegisters;
  std::vector<std::uint16_t> values;
  bool operator==(const RegistersResponse&) const = default;
};

struct DeviceObject {
  std::uint8_t id = 0;
  std::string value;
  bool operator==(const DeviceObject&) const = default;
};

struct DeviceIdResponse {
  DeviceIdCategory category = DeviceIdCategory::Basic;
  std::uint8_t conformity = 0x83;
  bool more_follows = false;
  std::uint8_t next_object_id = 0;
  std::vector<DeviceObject> objects;
  bool operator==(const DeviceIdResponse&) const = default;
};

// `function` is the original request code; the wire carries function | 0x80.
struct ExceptionResponse {
  std::uint8_t function = 0;
  ExceptionCode code = ExceptionCode::IllegalFunction;
  bool operator==(const ExceptionResponse&) const = default;
};

using Pdu = std::variant<ReadRequest, WriteSingleCoil, WriteSingleRegister, ReadDeviceIdRequest,
                         BitsResponse, RegistersResponse, DeviceIdResponse, ExceptionResponse>;

// Function code as it appears on the wire.
std::uint8_t function_code(const Pdu& pdu);

// One MBAP-framed ADU. protocol_id is always 0 and the length field is derived
// from the PDU, so neither is stored.
struct Frame {
  std::uint16_t transaction_id = 0;
  std::uint8_t unit_id = 0;
  Pdu pdu;

  bool operator==(const Frame&) const = default;
};

// PDUs with the same function code are laid out differently for requests and
// responses, so decoding needs to know which side of the exchange it is on.
enum class Direction { Request, Response };

enum class EncodeError { QuantityOutOfRange, BodyTooLong, InvalidPdu };

class EncodeException : public std::invalid_argument {
 public:
  EncodeException(EncodeError error, const std::string& what)
      : std::invalid_argument(what), error_(error) {}
  EncodeError error() const noexcept { return error_; }

 private:
  EncodeError error_;
};

enum class DecodeError {
  TruncatedHeader,
  LengthMismatch,
  ProtocolIdNonzero,
  UnknownFunctionCode,
  MalformedPdu,
};

const char* to_string(DecodeError error);

// Frame or decode error. Decoding never throws.
class DecodeResult {
 public:
  DecodeResult(Frame frame) : frame_(std::move(frame)) {}
  DecodeResult(DecodeError error) : error_(error) {}

  bool ok() const noexcept { return frame_.has_value(); }
  explicit operator bool() const noexcept { return ok(); }
  const Frame& frame() const { return frame_.value(); }
  DecodeError error() const noexcept { return error_; }

 private:
  std::optional<Frame> frame_;
  DecodeError error_ = DecodeError::MalformedPdu;
};

std::vector<std::uint8_t> encode_pdu(const Pdu& pdu);
std::vector<std::uint8_t> encode_frame(const Frame& frame);
DecodeResult decode_frame(std::span<const std::uint8_t> bytes, Direction direction);

// Encoded size without building the buffer.
std::size_t encoded_size(const Frame& frame);

ExceptionResponse make_exception(const Pdu& request, ExceptionCode code);

// Bit packing helpers (LSB of the first byte is the first point).
std::vector<std::uint8_t> pack_bits(const std::vector<bool>& bits);
std::vector<bool> unpack_bits(std::span<const std::uint8_t> packed, std::size_t count);

// Data reference tables ------------------------------------------------------

enum class Table { Coils, DiscreteInputs, InputRegisters, HoldingRegisters };

const char* to_string(Table table);

struct ReferenceAddress {
  int reference = 0;
  Table table = Table::Coils;
  std::uint16_t offset = 0;
  bool operator==(const ReferenceAddress&) const = default;
};

// 00001-09999 coils, 10001-19999 discrete inputs, 30001-39999 input
// registers, 40001-49999 holding registers; offset = (reference % 10000) - 1.
// Throws std::out_of_range for anything else.
ReferenceAddress resolve_reference(int reference);

int to_reference(Table table, std::uint16_t offset);

}  // namespace scadatb::modbus
