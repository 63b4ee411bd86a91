// Copyright (C) 2026 The lsgg Authors
// SPDX-License-Identifier: Apache-2.0

// Line-oriented text helpers shared by the file formats.

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace lsgg::text {

std::vector<std::string_view> split_ws(std::string_view line);

// Parse helpers throw Error(kParse) naming `context` (usually "file:line").
double parse_double(std::string_view tok, const std::string& context);
std::int64_t parse_int(std::string_view tok, const std::string& context);
std::uint64_t parse_uint(std::string_view tok, const std::string& context);

// Shortest "%.17g" form; parses back to the identical double.
std::string format_exact(double v);
// C99 hex-float ("%a"); used by the binary-faithful container formats.
std::string format_hex(double v);

void append_values(std::string& out, std::span<const double> values, bool hex);

std::ifstream open_in(const std::filesystem::path& path);
std::ofstream open_out(const std::filesystem::path& path);

// Reads a whole file; throws kIo when missing.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& contents);

std::string trim(std::string_view s);

}  // namespace lsgg::text
