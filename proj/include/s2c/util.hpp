#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace s2c {

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

std::string trim(const std::string& s);
std::vector<std::string> split(const std::string& s, char sep);
std::vector<std::string> split_ws(const std::string& s);
std::pair<std::string, std::string> split_kv(const std::string& item, const std::string& where);

int parse_int(const std::string& s, const std::string& where);
unsigned long long parse_uint(const std::string& s, const std::string& where);
double parse_double(const std::string& s, const std::string& where);

void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

/// Runs body(0..n-1) on up to `jobs` threads. Rethrows the first exception.
void parallel_for(int n, int jobs, const std::function<void(int)>& body);

}  // namespace s2c
