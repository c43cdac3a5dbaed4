#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string_view>

// Little-endian binary stream helpers shared by the clip, checkpoint, bank
// and feature file formats. All readers throw DataError on truncation or
// mismatch; writers throw DataError if the stream goes bad.
namespace iic::bin {

static_assert(std::endian::native == std::endian::little,
              "file formats assume a little-endian host");

void write_bytes(std::ostream& os, const void* src, std::size_t n);
void read_bytes(std::istream& is, void* dst, std::size_t n, const char* what);

void write_magic(std::ostream& os, std::string_view magic);
void expect_magic(std::istream& is, std::string_view magic, const char* what);

void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
std::uint32_t read_u32(std::istream& is, const char* what);
std::uint64_t read_u64(std::istream& is, const char* what);

// Sequences convert between the in-memory double representation and the
// on-disk width. f32 variants truncate to single precision on write.
void write_f32_seq(std::ostream& os, const double* src, std::size_t n);
void read_f32_seq(std::istream& is, double* dst, std::size_t n,
                  const char* what);
void write_f64_seq(std::ostream& os, const double* src, std::size_t n);
void read_f64_seq(std::istream& is, double* dst, std::size_t n,
                  const char* what);

// Throws DataError unless the stream is positioned exactly at EOF.
void expect_eof(std::istream& is, const char* what);

}  // namespace iic::bin
