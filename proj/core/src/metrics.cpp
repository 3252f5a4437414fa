#include "fssuavl/metrics.hpp"

#include <chrono>
#include <fstream>
#include <nlohmann/json.hpp>

#include "fssuavl/error.hpp"

namespace fssuavl {

using json = nlohmann::json;

double unix_now() {
  return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
}

std::string MetricsRecord::to_json() const {
  json j = {{"timestamp", timestamp}, {"round", round}, {"phase", phase}, {"metric", metric}, {"value", value}};
  if (client) j["client"] = *client;
  if (modality) j["modality"] = to_string(*modality);
  return j.dump();
}

MetricsLog::MetricsLog(std::filesystem::path path) : path_(std::move(path)) {
  std::ofstream f(path_, std::ios::app);
  if (!f) throw Error("metrics: cannot open " + path_.string() + " for appending");
}

void MetricsLog::append(const MetricsRecord& r) {
  const std::string line = r.to_json() + "\n";
  std::ofstream f(path_, std::ios::app | std::ios::binary);
  f.write(line.data(), static_cast<std::streamsize>(line.size()));
  f.flush();
  if (!f) throw Error("metrics: write to " + path_.string() + " failed");
}

std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path.string(), 0, "cannot open metrics file");
  std::vector<MetricsRecord> out;
  std::string line;
  std::uint64_t offset = 0;
  while (std::getline(in, line)) {
    try {
      const json j = json::parse(line);
      MetricsRecord r;
      r.timestamp = j.at("timestamp").get<double>();
      r.round = j.at("round").get<int>();
      r.phase = j.at("phase").get<std::string>();
      r.metric = j.at("metric").get<std::string>();
      r.value = j.at("value").get<double>();
      if (j.contains("client")) r.client = j["client"].get<int>();
      if (j.contains("modality")) r.modality = modality_from_string(j["modality"].get<std::string>());
      out.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw FormatError(path.string(), offset, std::string("bad metrics line: ") + e.what());
    }
    offset += line.size() + 1;
  }
  return out;
}

}  // namespace fssuavl
