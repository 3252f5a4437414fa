#pragma once

#include "fssuavl/orchestrator.hpp"

namespace fssuavl::test {

// Small enough that a whole federation runs in a second or two.
inline PretrainConfig tiny_pretrain(std::uint64_t seed) {
  PretrainConfig cfg;
  cfg.encoder.width = 8;
  cfg.encoder.depth = 2;
  cfg.encoder.input_side = 32;
  cfg.encoder.proj_dim = 16;
  cfg.featurize.side = 32;
  cfg.featurize.max_freq_mask = cfg.featurize.max_time_mask = 4;
  cfg.ssl.batch_size = 8;
  cfg.ssl.local_epochs = 1;
  cfg.federation.participation_fraction = 1.0;
  cfg.federation.rounds = 2;
  cfg.seed = seed;
  return cfg;
}

struct TinyCorpus {
  Dataset images;
  Dataset audio;

  TinyCorpus(int classes, int per_class, std::uint64_t seed)
      : images(gen_synthetic_corpus(Modality::image, classes, per_class, seed)),
        audio(gen_synthetic_corpus(Modality::audio, classes, per_class, seed + 1)) {}

  Partition partition(int k, ModalityProfile profile, std::uint64_t seed, double alpha = 1.0) const {
    PartitionConfig pc;
    pc.n_clients = k;
    pc.alpha = alpha;
    pc.profile = profile;
    pc.seed = seed;
    return make_partition(pc, images.labels(), audio.labels());
  }
};

}  // namespace fssuavl::test
