#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <string_view>

namespace vidq {

/// Hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

/// SHA-256 of a file's bytes; throws vidq::Error if unreadable.
std::string sha256_file(const std::string& path);

std::uint64_t splitmix64(std::uint64_t x);

/// Order-sensitive mix of several integers into one 64-bit key.
std::uint64_t mix_keys(std::initializer_list<std::uint64_t> keys);

/// Deterministic uniform draw in [0,1) addressed by (seed, keys...). Used for
/// error injection so a decision depends only on its coordinates, never on
/// evaluation order.
double seeded_uniform(std::uint64_t seed, std::initializer_list<std::uint64_t> keys);

}  // namespace vidq
