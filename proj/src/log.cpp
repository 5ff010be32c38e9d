#include "rfp/log.hpp"

#include <charconv>
#include <cstdlib>
#include <iostream>

namespace rfp::log {

Level level_from_env() {
  const char* v = std::getenv("RFPSEG_LOG");
  if (!v) return Level::info;
  const std::string_view s(v);
  if (s == "quiet") return Level::quiet;
  if (s == "debug") return Level::debug;
  return Level::info;
}

Record& Record::add(std::string_view key, std::string_view value) {
  if (!line_.empty()) line_ += ' ';
  line_.append(key);
  line_ += '=';
  line_.append(value);
  return *this;
}

Record& Record::add(std::string_view key, double value) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, value);
  return add(key, std::string_view(buf, std::size_t(r.ptr - buf)));
}

Record& Record::add(std::string_view key, std::size_t value) { return add(key, std::to_string(value)); }

Logger::Logger(Level level) : level_(level) {}

Logger::Logger(const std::string& path, Level level)
    : level_(level), file_(std::make_unique<std::ofstream>(path, std::ios::app)) {
  if (!*file_) throw std::runtime_error("cannot open log file " + path);
}

void Logger::write(const Record& r, Level at) {
  if (file_) {
    *file_ << r.line() << '\n';
    file_->flush();
  }
  if (level_ >= at) std::cerr << r.line() << '\n';
}

void Logger::message(std::string_view text, Level at) {
  if (level_ >= at) std::cerr << text << '\n';
}

}  // namespace rfp::log
