#pragma once

// Line-oriented key=value records. Records go to an optional log file and,
// depending on the RFPSEG_LOG level (quiet, info, debug; default info), to
// stderr.

#include <fstream>
#include <memory>
#include <string>
#include <string_view>

namespace rfp::log {

enum class Level { quiet = 0, info = 1, debug = 2 };

/// Reads RFPSEG_LOG; unknown values fall back to info.
Level level_from_env();

class Record {
 public:
  explicit Record(std::string_view kind) { add("record", kind); }

  Record& add(std::string_view key, std::string_view value);
  Record& add(std::string_view key, const char* value) { return add(key, std::string_view(value)); }
  Record& add(std::string_view key, const std::string& value) { return add(key, std::string_view(value)); }
  /// Shortest round-tripping decimal form.
  Record& add(std::string_view key, double value);
  Record& add(std::string_view key, std::size_t value);

  const std::string& line() const { return line_; }

 private:
  std::string line_;
};

class Logger {
 public:
  /// No file: stderr only.
  explicit Logger(Level level = level_from_env());
  /// Appends to `path`.
  Logger(const std::string& path, Level level);

  void write(const Record& r, Level at = Level::info);
  void message(std::string_view text, Level at = Level::info);

 private:
  Level level_;
  std::unique_ptr<std::ofstream> file_;
};

}  // namespace rfp::log
