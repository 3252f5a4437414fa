#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fssuavl/modality.hpp"

namespace fssuavl {

struct MetricsRecord {
  double timestamp = 0.0;  // seconds since the Unix epoch
  int round = 0;
  std::string phase;
  std::optional<int> client;
  std::optional<Modality> modality;
  std::string metric;
  double value = 0.0;

  // One JSON object, no trailing newline.
  std::string to_json() const;
  bool operator==(const MetricsRecord&) const = default;
};

double unix_now();

// Append-only JSONL file. Each record goes out as one write of a complete line
// followed by a flush.
class MetricsLog {
 public:
  explicit MetricsLog(std::filesystem::path path);
  void append(const MetricsRecord& r);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path);

}  // namespace fssuavl
