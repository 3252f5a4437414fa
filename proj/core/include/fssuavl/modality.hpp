#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fssuavl/rng.hpp"
#include "fssuavl/tensor.hpp"

namespace fssuavl {

enum class Modality { image, audio };

std::string to_string(Modality m);
Modality modality_from_string(const std::string& s);

// Interleaved H×W×C 8-bit pixels.
struct ImageSample {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;
  int label = 0;

  bool operator==(const ImageSample&) const = default;
};

struct AudioSample {
  std::vector<float> waveform;  // values in [-1, 1]
  int sample_rate = 16000;
  int label = 0;

  bool operator==(const AudioSample&) const = default;
};

// A labeled single-modality corpus. Exactly one of images/audio is populated,
// matching `modality`.
struct Dataset {
  Modality modality = Modality::image;
  std::vector<std::string> classes;
  std::vector<std::string> ids;
  std::vector<ImageSample> images;
  std::vector<AudioSample> audio;

  std::size_t size() const { return modality == Modality::image ? images.size() : audio.size(); }
  int n_classes() const { return static_cast<int>(classes.size()); }
  int label(std::size_t i) const { return modality == Modality::image ? images[i].label : audio[i].label; }
  std::vector<int> labels() const;
  // Subset in the given order.
  Dataset select(const std::vector<std::size_t>& indices) const;

  bool operator==(const Dataset&) const = default;
};

// Throws ContractError when a sample breaks the type invariants
// (image side < 32, channels not 1/3, audio shorter than 2 s or out of range,
// label outside the class list).
void validate(const Dataset& d);

// ---------------------------------------------------------------------------
// Audio front end.

double hz_to_mel(double hz);  // HTK: 2595·log10(1 + f/700)
double mel_to_hz(double mel);

// [n_mels × (n_fft/2+1)] triangular filters on n_mels+2 mel-spaced edges
// between 0 and sr/2. Throws ConfigError when a filter covers no FFT bin.
Tensor mel_filterbank(int n_mels, int n_fft, int sample_rate);

// Centre frequencies (Hz) of the filters above, lowest first.
std::vector<double> mel_centers(int n_mels, int sample_rate);

struct FeaturizeConfig {
  int side = 128;  // output is 1×side×side; also the number of mel bins

  // image views
  bool augment = true;
  double crop_scale_min = 0.4;
  double crop_scale_max = 1.0;
  double crop_ratio_min = 3.0 / 4.0;
  double crop_ratio_max = 4.0 / 3.0;
  double flip_prob = 0.5;
  double brightness = 0.4;
  double contrast = 0.4;

  // audio views
  int sample_rate = 16000;
  double crop_seconds = 2.0;
  int n_fft = 1024;
  int hop = 250;
  int max_time_mask = 16;
  int max_freq_mask = 16;

  static constexpr double kLogOffset = 1e-6;
  static constexpr double kStdEps = 1e-6;

  int crop_samples() const { return static_cast<int>(crop_seconds * sample_rate); }
  int n_frames() const { return crop_samples() / hop; }

  // No augmentation: views are deterministic resizes / centred crops.
  static FeaturizeConfig identity();

  void validate() const;
  bool operator==(const FeaturizeConfig&) const = default;
};

// Exactly crop_samples() samples -> [1×side×side], rows = mel bins (lowest
// frequency first), columns = time. Power STFT, mel, log, linear time
// resampling to `side` frames, then per-sample standardization.
Tensor log_mel_spectrogram(const std::vector<float>& crop, const FeaturizeConfig& cfg);

// In-place per-sample standardization: mean 0, std 1 (std clamped below at
// kStdEps so constant inputs map to zeros).
void standardize(std::vector<float>& values);

struct ViewPair {
  Tensor view_a;
  Tensor view_b;
  Modality modality = Modality::image;
};

ViewPair image_views(const ImageSample& sample, const FeaturizeConfig& cfg, Rng& rng);
ViewPair audio_views(const AudioSample& sample, const FeaturizeConfig& cfg, Rng& rng);

// Deterministic single view for evaluation: standardized full-frame resize for
// images, centred crop without masks for audio.
Tensor eval_view(const Dataset& d, std::size_t index, const FeaturizeConfig& cfg);
// Stacked eval views of the given samples, [n×1×side×side].
Tensor eval_batch(const Dataset& d, const std::vector<std::size_t>& indices, const FeaturizeConfig& cfg);

// Bilinear resize of the region [x0, x0+w) × [y0, y0+h) of one channel plane to
// side×side (pixel centres aligned).
std::vector<float> resize_bilinear(const std::vector<float>& plane, int height, int width, double x0, double y0,
                                   double w, double h, int side);

// ---------------------------------------------------------------------------
// Synthetic corpora and on-disk format.

struct SynthConfig {
  int image_side = 64;
  double audio_seconds = 2.5;
  int sample_rate = 16000;
  double image_noise = 0.06;
  double audio_noise = 0.05;
};

// Images: oriented gratings with class-specific angle and frequency over a
// class-specific smooth pattern, plus pixel noise. Audio: class-specific tone
// mixtures (even classes) or chirps (odd classes), plus noise. Labels are
// balanced and sample order is class-major.
Dataset gen_synthetic_corpus(Modality modality, int n_classes, int n_per_class, std::uint64_t seed,
                             const SynthConfig& cfg = {});

// Layout: <dir>/manifest.json and <dir>/samples/<id>.{pgm,ppm,wav}.
void save_dataset(const Dataset& d, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

// Single-file codecs, exposed for tests and tools.
std::vector<std::uint8_t> encode_pnm(const ImageSample& s);
ImageSample decode_pnm(const std::vector<std::uint8_t>& bytes, const std::string& path);
std::vector<std::uint8_t> encode_wav(const AudioSample& s);
AudioSample decode_wav(const std::vector<std::uint8_t>& bytes, const std::string& path);

}  // namespace fssuavl
