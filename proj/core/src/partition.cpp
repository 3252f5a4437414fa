#include "fssuavl/partition.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>

#include "fssuavl/error.hpp"
#include "fssuavl/rng.hpp"

namespace fssuavl {

using json = nlohmann::json;

void PartitionConfig::validate() const {
  std::vector<std::string> bad;
  if (n_clients < 2) bad.push_back("n_clients must be >= 2");
  if (!(alpha > 0)) bad.push_back("alpha must be > 0");
  const auto& p = profile;
  if (!(p.audio_only >= 0 && p.image_only >= 0 && p.both >= 0))
    bad.push_back("profile fractions must be non-negative");
  else if (std::abs(p.audio_only + p.image_only + p.both - 1.0) > 1e-9)
    bad.push_back("profile fractions must sum to 1");
  if (bad.empty()) return;
  std::string msg = "invalid partition config:";
  for (const auto& b : bad) msg += " partition." + b + ";";
  throw ConfigError(msg);
}

namespace {

// Largest-remainder apportionment of `total` items by `weights` (sum > 0).
// Ties go to the lower index.
std::vector<std::size_t> apportion(std::size_t total, const std::vector<double>& weights) {
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<std::size_t> counts(weights.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = total * weights[i] / sum;
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[i];
    rem.emplace_back(exact - counts[i], i);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < total; ++k, ++assigned) ++counts[rem[k % rem.size()].second];
  return counts;
}

}  // namespace

std::vector<std::vector<std::size_t>> dirichlet_partition(const std::vector<int>& labels, int n_shards, double alpha,
                                                          std::uint64_t seed) {
  if (n_shards < 1) throw ContractError("dirichlet_partition: n_shards must be >= 1");
  if (!(alpha > 0)) throw ContractError("dirichlet_partition: alpha must be > 0");
  if (labels.size() < static_cast<std::size_t>(n_shards))
    throw ContractError("dirichlet_partition: " + std::to_string(labels.size()) + " samples cannot fill " +
                        std::to_string(n_shards) + " shards");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);

  Rng rng(seed);
  std::vector<std::vector<std::size_t>> shards(n_shards);
  for (auto& [label, members] : by_class) {
    rng.shuffle(members);
    std::vector<double> p(n_shards);
    for (auto& v : p) v = rng.gamma(alpha);
    if (std::accumulate(p.begin(), p.end(), 0.0) <= 0) {
      // Every draw underflowed (tiny alpha): the whole class goes to one shard.
      std::fill(p.begin(), p.end(), 0.0);
      p[rng.index(n_shards)] = 1.0;
    }
    const auto counts = apportion(members.size(), p);
    std::size_t at = 0;
    for (int s = 0; s < n_shards; ++s)
      for (std::size_t k = 0; k < counts[s]; ++k) shards[s].push_back(members[at++]);
  }
  for (auto& s : shards) std::sort(s.begin(), s.end());

  for (auto& target : shards) {
    if (!target.empty()) continue;
    auto donor = std::max_element(shards.begin(), shards.end(),
                                  [](const auto& a, const auto& b) { return a.size() < b.size(); });
    target.push_back(donor->back());
    donor->pop_back();
  }
  return shards;
}

std::array<int, 3> profile_counts(const ModalityProfile& profile, int k) {
  const auto c = apportion(static_cast<std::size_t>(k), {profile.audio_only, profile.image_only, profile.both});
  return {static_cast<int>(c[0]), static_cast<int>(c[1]), static_cast<int>(c[2])};
}

std::vector<ClientShard> combine_modalities(const std::vector<std::vector<std::size_t>>& image_shards,
                                            const std::vector<std::vector<std::size_t>>& audio_shards,
                                            const ModalityProfile& profile, std::uint64_t seed) {
  if (image_shards.size() != audio_shards.size())
    throw ContractError("combine_modalities: " + std::to_string(image_shards.size()) + " image shards vs " +
                        std::to_string(audio_shards.size()) + " audio shards");
  const int K = static_cast<int>(image_shards.size());
  const auto [n_audio_only, n_image_only, n_both] = profile_counts(profile, K);
  (void)n_both;
  std::vector<int> order(K);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);

  std::vector<ClientShard> clients(K);
  for (int k = 0; k < K; ++k) {
    clients[k].client_id = k;
    clients[k].image_indices = image_shards[k];
    clients[k].audio_indices = audio_shards[k];
  }
  for (int r = 0; r < K; ++r) {
    auto& c = clients[order[r]];
    if (r < n_audio_only)
      c.image_indices.clear();
    else if (r < n_audio_only + n_image_only)
      c.audio_indices.clear();
  }
  return clients;
}

Partition make_partition(const PartitionConfig& config, const std::vector<int>& image_labels,
                         const std::vector<int>& audio_labels) {
  config.validate();
  Partition p;
  p.config = config;
  const auto img = dirichlet_partition(image_labels, config.n_clients, config.alpha, derive_seed(config.seed, {1}));
  const auto aud = dirichlet_partition(audio_labels, config.n_clients, config.alpha, derive_seed(config.seed, {2}));
  p.clients = combine_modalities(img, aud, config.profile, derive_seed(config.seed, {3}));
  return p;
}

HeterogeneityReport heterogeneity_stats(const std::vector<ClientShard>& clients, const std::vector<int>& image_labels,
                                        const std::vector<int>& audio_labels) {
  auto n_classes = [](const std::vector<int>& labels) {
    return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  };
  const int ci = n_classes(image_labels), ca = n_classes(audio_labels);
  HeterogeneityReport r;
  double max_prop_sum = 0;
  int max_prop_n = 0;
  std::vector<std::size_t> sizes;
  auto hist = [&](const std::vector<std::size_t>& idx, const std::vector<int>& labels, int classes) {
    std::vector<int> h(classes, 0);
    for (auto i : idx) ++h.at(labels.at(i));
    if (!idx.empty()) {
      max_prop_sum += static_cast<double>(*std::max_element(h.begin(), h.end())) / idx.size();
      ++max_prop_n;
    }
    return h;
  };
  for (const auto& c : clients) {
    ClientStats s;
    s.client_id = c.client_id;
    s.n_images = c.image_indices.size();
    s.n_audio = c.audio_indices.size();
    s.audio_ratio = c.size() ? static_cast<double>(s.n_audio) / c.size() : 0.0;
    s.image_hist = hist(c.image_indices, image_labels, ci);
    s.audio_hist = hist(c.audio_indices, audio_labels, ca);
    r.clients.push_back(std::move(s));
    sizes.push_back(c.size());
  }
  r.mean_max_class_proportion = max_prop_n ? max_prop_sum / max_prop_n : 0.0;
  if (!sizes.empty()) {
    std::sort(sizes.begin(), sizes.end());
    r.min_client_size = sizes.front();
    r.median_client_size = sizes[sizes.size() / 2];
    r.max_client_size = sizes.back();
  }
  return r;
}

std::string HeterogeneityReport::to_json() const {
  json j;
  j["mean_max_class_proportion"] = mean_max_class_proportion;
  j["client_size"] = {{"min", min_client_size}, {"median", median_client_size}, {"max", max_client_size}};
  json cs = json::array();
  for (const auto& c : clients)
    cs.push_back({{"id", c.client_id},
                  {"n_images", c.n_images},
                  {"n_audio", c.n_audio},
                  {"audio_ratio", c.audio_ratio},
                  {"image_hist", c.image_hist},
                  {"audio_hist", c.audio_hist}});
  j["clients"] = std::move(cs);
  return j.dump(1) + "\n";
}

std::string partition_to_json(const Partition& p) {
  json j;
  j["format"] = "fssuavl-partition";
  j["version"] = 1;
  j["config"] = {{"n_clients", p.config.n_clients},
                 {"alpha", p.config.alpha},
                 {"seed", p.config.seed},
                 {"profile",
                  {{"audio_only", p.config.profile.audio_only},
                   {"image_only", p.config.profile.image_only},
                   {"both", p.config.profile.both}}}};
  json cs = json::array();
  for (const auto& c : p.clients) cs.push_back({{"id", c.client_id}, {"image", c.image_indices}, {"audio", c.audio_indices}});
  j["clients"] = std::move(cs);
  return j.dump() + "\n";
}

Partition partition_from_json(const std::string& text, const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(origin, e.byte, std::string("invalid JSON: ") + e.what());
  }
  try {
    if (j.at("format") != "fssuavl-partition" || j.at("version") != 1)
      throw FormatError(origin, 0, "not a version-1 partition file");
    Partition p;
    const auto& c = j.at("config");
    p.config.n_clients = c.at("n_clients");
    p.config.alpha = c.at("alpha");
    p.config.seed = c.at("seed");
    p.config.profile.audio_only = c.at("profile").at("audio_only");
    p.config.profile.image_only = c.at("profile").at("image_only");
    p.config.profile.both = c.at("profile").at("both");
    for (const auto& e : j.at("clients")) {
      ClientShard s;
      s.client_id = e.at("id");
      s.image_indices = e.at("image").get<std::vector<std::size_t>>();
      s.audio_indices = e.at("audio").get<std::vector<std::size_t>>();
      p.clients.push_back(std::move(s));
    }
    return p;
  } catch (const json::exception& e) {
    throw FormatError(origin, 0, std::string("malformed partition: ") + e.what());
  }
}

void save_partition(const Partition& p, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << partition_to_json(p);
  if (!out) throw Error("cannot write " + path.string());
}

Partition load_partition(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path.string(), 0, "cannot open partition file");
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return partition_from_json(text, path.string());
}

}  // namespace fssuavl
