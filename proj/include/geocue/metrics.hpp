#pragma once

#include <string>
#include <vector>

#include "geocue/io.hpp"

#include <json.hpp>

namespace geocue {

/// Line-delimited JSON record sink. Records accumulate in memory and the
/// whole stream is written atomically on flush; no timestamps are emitted,
/// so identical runs produce byte-identical files.
class MetricsWriter {
 public:
  MetricsWriter() = default;
  explicit MetricsWriter(std::string path) : path_(std::move(path)) {}

  void add(const nlohmann::ordered_json& record) {
    lines_ += record.dump();
    lines_ += '\n';
  }

  void flush() {
    if (!path_.empty()) atomic_write_file(path_, lines_);
  }

  const std::string& text() const { return lines_; }

 private:
  std::string path_;
  std::string lines_;
};

inline std::vector<nlohmann::json> parse_metrics(const std::string& text) {
  std::vector<nlohmann::json> records;
  size_t pos = 0;
  while (pos < text.size()) {
    size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    const std::string line = text.substr(pos, nl - pos);
    if (!line.empty()) records.push_back(nlohmann::json::parse(line));
    pos = nl + 1;
  }
  return records;
}

}  // namespace geocue
