#include "s2c/util.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <charconv>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "s2c/error.hpp"

namespace s2c {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

std::pair<std::string, std::string> split_kv(const std::string& item, const std::string& where) {
  const auto eq = item.find('=');
  if (eq == std::string::npos) fail(ErrorKind::format, where + ": expected key=value, got '" + item + "'");
  return {trim(item.substr(0, eq)), trim(item.substr(eq + 1))};
}

namespace {

template <class T>
T parse_number(const std::string& raw, const std::string& where, const char* what) {
  const std::string s = trim(raw);
  T v{};
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || s.empty())
    fail(ErrorKind::usage, where + ": '" + raw + "' is not a valid " + what);
  return v;
}

}  // namespace

int parse_int(const std::string& s, const std::string& where) { return parse_number<int>(s, where, "integer"); }

unsigned long long parse_uint(const std::string& s, const std::string& where) {
  return parse_number<unsigned long long>(s, where, "unsigned integer");
}

double parse_double(const std::string& s, const std::string& where) {
  return parse_number<double>(s, where, "number");
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot open for writing: " + path.string());
  out << text;
  if (!out) fail(ErrorKind::io, "write failed: " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open for reading: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void parallel_for(int n, int jobs, const std::function<void(int)>& body) {
  jobs = std::clamp(jobs, 1, std::max(1, n));
  if (jobs == 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first;
  std::mutex mu;
  {
    std::vector<std::jthread> workers;
    for (int j = 0; j < jobs; ++j) {
      workers.emplace_back([&] {
        for (int i = next++; i < n; i = next++) {
          try {
            body(i);
          } catch (...) {
            std::lock_guard lock(mu);
            if (!first) first = std::current_exception();
            next = n;
          }
        }
      });
    }
  }
  if (first) std::rethrow_exception(first);
}

}  // namespace s2c
