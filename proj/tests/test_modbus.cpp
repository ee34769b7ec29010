#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "scadatb/modbus.hpp"
#include "support/generators.hpp"

using namespace scadatb;
using namespace scadatb::modbus;
using Bytes = std::vector<std::uint8_t>;

TEST_CASE("golden: read coils request frame") {
  const Frame f{1, 1, ReadRequest{FunctionCode::ReadCoils, 0, 8}};
  CHECK(encode_frame(f) == Bytes{0x00, 0x01, 0x00, 0x00, 0x00, 0x06, 0x01, 0x01, 0x00, 0x00, 0x00, 0x08});
  CHECK(encoded_size(f) == 12);
}

TEST_CASE("golden: write single coil pdu") {
  CHECK(encode_pdu(WriteSingleCoil{2, true}) == Bytes{0x05, 0x00, 0x02, 0xFF, 0x00});
  CHECK(encode_pdu(WriteSingleCoil{2, false}) == Bytes{0x05, 0x00, 0x02, 0x00, 0x00});
}

TEST_CASE("golden: illegal data address exception") {
  const auto ex = make_exception(ReadRequest{FunctionCode::ReadCoils, 100, 1}, ExceptionCode::IllegalDataAddress);
  CHECK(encode_pdu(ex) == Bytes{0x81, 0x02});
  const Frame f{7, 1, ex};
  const auto bytes = encode_frame(f);
  CHECK(bytes == Bytes{0x00, 0x07, 0x00, 0x00, 0x00, 0x03, 0x01, 0x81, 0x02});
  const auto back = decode_frame(bytes, Direction::Response);
  REQUIRE(back.ok());
  CHECK(back.frame() == f);
}

TEST_CASE("read responses carry byte counts") {
  CHECK(encode_pdu(BitsResponse{FunctionCode::ReadCoils, pack_bits({true, false, true})}) == Bytes{0x01, 0x01, 0x05});
  CHECK(encode_pdu(RegistersResponse{FunctionCode::ReadInputRegisters, {500}}) == Bytes{0x04, 0x02, 0x01, 0xF4});
}

TEST_CASE("device identification request layout") {
  CHECK(encode_pdu(ReadDeviceIdRequest{DeviceIdCategory::Basic, 0}) == Bytes{0x2B, 0x0E, 0x01, 0x00});
}

TEST_CASE("bit packing is lsb first and round-trips") {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    std::vector<bool> bits(rng.uniform_int(1, 70));
    for (std::size_t j = 0; j < bits.size(); ++j) bits[j] = testing::coin(rng);
    const auto packed = pack_bits(bits);
    CHECK(packed.size() == (bits.size() + 7) / 8);
    CHECK(unpack_bits(packed, bits.size()) == bits);
  }
  CHECK(pack_bits({false, true}) == Bytes{0x02});
}

TEST_CASE("property: decode(encode(f)) == f") {
  Rng rng(0xC0FFEE);
  for (int i = 0; i < 10'000; ++i) {
    const auto [frame, dir] = testing::random_frame(rng);
    const auto bytes = encode_frame(frame);
    CHECK(bytes.size() == encoded_size(frame));
    const auto back = decode_frame(bytes, dir);
    REQUIRE_MESSAGE(back.ok(), "decode failed: ", to_string(back.error()));
    CHECK(back.frame() == frame);
  }
}

TEST_CASE("property: decoder survives random blobs") {
  Rng rng(99);
  std::size_t accepted = 0;
  for (int i = 0; i < 100'000; ++i) {
    const auto blob = testing::random_blob(rng);
    for (auto dir : {Direction::Request, Direction::Response}) {
      const auto r = decode_frame(blob, dir);
      if (r.ok()) {
        ++accepted;
        CHECK(encode_frame(r.frame()) == blob);
      }
    }
  }
  CHECK(accepted > 0);
}

TEST_CASE("decode errors") {
  SUBCASE("truncated header") {
    CHECK(decode_frame(Bytes{0x00, 0x01, 0x00}, Direction::Request).error() == DecodeError::TruncatedHeader);
  }
  SUBCASE("length mismatch") {
    auto bytes = encode_frame(Frame{1, 1, ReadRequest{}});
    bytes.push_back(0);
    CHECK(decode_frame(bytes, Direction::Request).error() == DecodeError::LengthMismatch);
  }
  SUBCASE("protocol id") {
    auto bytes = encode_frame(Frame{1, 1, ReadRequest{}});
    bytes[3] = 1;
    CHECK(decode_frame(bytes, Direction::Request).error() == DecodeError::ProtocolIdNonzero);
  }
  SUBCASE("unknown function code") {
    const Bytes bytes{0x00, 0x01, 0x00, 0x00, 0x00, 0x02, 0x01, 0x10};
    CHECK(decode_frame(bytes, Direction::Request).error() == DecodeError::UnknownFunctionCode);
  }
  SUBCASE("exception code in a request") {
    const Bytes bytes{0x00, 0x01, 0x00, 0x00, 0x00, 0x03, 0x01, 0x81, 0x02};
    CHECK(decode_frame(bytes, Direction::Request).error() == DecodeError::UnknownFunctionCode);
  }
  SUBCASE("quantity zero") {
    const Bytes bytes{0x00, 0x01, 0x00, 0x00, 0x00, 0x06, 0x01, 0x01, 0x00, 0x00, 0x00, 0x00};
    CHECK(decode_frame(bytes, Direction::Request).error() == DecodeError::MalformedPdu);
  }
  SUBCASE("coil value other than FF00/0000") {
    const Bytes bytes{0x00, 0x01, 0x00, 0x00, 0x00, 0x06, 0x01, 0x05, 0x00, 0x02, 0x12, 0x34};
    CHECK(decode_frame(bytes, Direction::Request).error() == DecodeError::MalformedPdu);
  }
}

TEST_CASE("encode errors") {
  auto error_of = [](const Pdu& p) {
    try {
      encode_pdu(p);
    } catch (const EncodeException& e) {
      return std::optional(e.error());
    }
    return std::optional<EncodeError>{};
  };
  CHECK(error_of(ReadRequest{FunctionCode::ReadCoils, 0, 0}) == EncodeError::QuantityOutOfRange);
  CHECK(error_of(ReadRequest{FunctionCode::ReadHoldingRegisters, 0, 126}) == EncodeError::QuantityOutOfRange);
  CHECK(error_of(ReadRequest{FunctionCode::ReadCoils, 0, 2000}) == std::nullopt);
  CHECK(error_of(ReadRequest{FunctionCode::WriteSingleCoil, 0, 1}) == EncodeError::InvalidPdu);

  DeviceIdResponse big;
  for (int i = 0; i < 4; ++i) big.objects.push_back(DeviceObject{static_cast<std::uint8_t>(i), std::string(80, 'x')});
  CHECK(error_of(big) == EncodeError::BodyTooLong);
}

TEST_CASE("function codes on the wire") {
  CHECK(function_code(ReadRequest{FunctionCode::ReadInputRegisters, 0, 1}) == 0x04);
  CHECK(function_code(ReadDeviceIdRequest{}) == 0x2B);
  CHECK(function_code(ExceptionResponse{0x03, ExceptionCode::IllegalDataValue}) == 0x83);
  CHECK(make_exception(WriteSingleRegister{}, ExceptionCode::IllegalFunction).function == 0x06);
}

TEST_CASE("reference addressing is one-based") {
  CHECK(resolve_reference(1) == ReferenceAddress{1, Table::Coils, 0});
  CHECK(resolve_reference(10003) == ReferenceAddress{10003, Table::DiscreteInputs, 2});
  CHECK(resolve_reference(30001) == ReferenceAddress{30001, Table::InputRegisters, 0});
  CHECK(resolve_reference(40002) == ReferenceAddress{40002, Table::HoldingRegisters, 1});
  CHECK_THROWS_AS(resolve_reference(0), std::out_of_range);
  CHECK_THROWS_AS(resolve_reference(20001), std::out_of_range);
  CHECK_THROWS_AS(resolve_reference(10000), std::out_of_range);
  for (auto t : {Table::Coils, Table::DiscreteInputs, Table::InputRegisters, Table::HoldingRegisters}) {
    for (std::uint16_t off : {0, 1, 42, 9998}) CHECK(resolve_reference(to_reference(t, off)).offset == off);
  }
}
