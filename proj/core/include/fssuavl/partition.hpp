#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace fssuavl {

// Fractions of clients that keep only audio, only images, or both.
struct ModalityProfile {
  double audio_only = 0.0;
  double image_only = 0.0;
  double both = 1.0;

  bool operator==(const ModalityProfile&) const = default;
};

struct PartitionConfig {
  int n_clients = 100;
  double alpha = 0.1;
  ModalityProfile profile;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const PartitionConfig&) const = default;
};

// One simulated client. Indices point into the image and audio datasets.
struct ClientShard {
  int client_id = 0;
  std::vector<std::size_t> image_indices;
  std::vector<std::size_t> audio_indices;

  std::size_t size() const { return image_indices.size() + audio_indices.size(); }
  bool operator==(const ClientShard&) const = default;
};

struct Partition {
  PartitionConfig config;
  std::vector<ClientShard> clients;

  bool operator==(const Partition&) const = default;
};

// Label-skew split: for every class, proportions p ~ Dir(alpha·1) over the
// shards, largest-remainder rounding, then empty shards take one sample from
// the current largest shard. Shard contents are sorted ascending.
std::vector<std::vector<std::size_t>> dirichlet_partition(const std::vector<int>& labels, int n_shards, double alpha,
                                                          std::uint64_t seed);

// Pairs image shard i with audio shard i, then drops one modality from a random
// subset of clients according to the profile. Client counts are floored and the
// remainder handed out by largest fractional part (ties: audio-only, image-only,
// both).
std::vector<ClientShard> combine_modalities(const std::vector<std::vector<std::size_t>>& image_shards,
                                            const std::vector<std::vector<std::size_t>>& audio_shards,
                                            const ModalityProfile& profile, std::uint64_t seed);

// Client counts (audio-only, image-only, both) the profile yields for k clients.
std::array<int, 3> profile_counts(const ModalityProfile& profile, int k);

// Both Dirichlet splits (independent seed streams) followed by the profile.
Partition make_partition(const PartitionConfig& config, const std::vector<int>& image_labels,
                         const std::vector<int>& audio_labels);

struct ClientStats {
  int client_id = 0;
  std::size_t n_images = 0;
  std::size_t n_audio = 0;
  double audio_ratio = 0.0;  // J / (J + N)
  std::vector<int> image_hist;
  std::vector<int> audio_hist;
};

struct HeterogeneityReport {
  std::vector<ClientStats> clients;
  // Mean over (client, modality) pairs with data of max_c n_c / n.
  double mean_max_class_proportion = 0.0;
  std::size_t min_client_size = 0;
  std::size_t median_client_size = 0;
  std::size_t max_client_size = 0;

  std::string to_json() const;
};

HeterogeneityReport heterogeneity_stats(const std::vector<ClientShard>& clients, const std::vector<int>& image_labels,
                                        const std::vector<int>& audio_labels);

// JSON text with the config echo and, per client, its two index lists.
std::string partition_to_json(const Partition& p);
Partition partition_from_json(const std::string& text, const std::string& origin = "<partition>");
void save_partition(const Partition& p, const std::filesystem::path& path);
Partition load_partition(const std::filesystem::path& path);

}  // namespace fssuavl
