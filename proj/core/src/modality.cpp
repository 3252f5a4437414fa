#include "fssuavl/modality.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <deque>
#include <cmath>
#include <fstream>
#include <memory>
#include <numbers>
#include <nlohmann/json.hpp>

#include "fssuavl/error.hpp"

namespace fssuavl {

using json = nlohmann::json;

std::string to_string(Modality m) { return m == Modality::image ? "image" : "audio"; }

Modality modality_from_string(const std::string& s) {
  if (s == "image") return Modality::image;
  if (s == "audio") return Modality::audio;
  throw ConfigError("unknown modality '" + s + "'");
}

std::vector<int> Dataset::labels() const {
  std::vector<int> out(size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = label(i);
  return out;
}

Dataset Dataset::select(const std::vector<std::size_t>& indices) const {
  Dataset out;
  out.modality = modality;
  out.classes = classes;
  for (auto i : indices) {
    out.ids.push_back(ids.at(i));
    if (modality == Modality::image)
      out.images.push_back(images.at(i));
    else
      out.audio.push_back(audio.at(i));
  }
  return out;
}

void validate(const Dataset& d) {
  if (d.ids.size() != d.size()) throw ContractError("dataset: id count does not match sample count");
  if ((d.modality == Modality::image && !d.audio.empty()) || (d.modality == Modality::audio && !d.images.empty()))
    throw ContractError("dataset: samples of the wrong modality present");
  for (std::size_t i = 0; i < d.size(); ++i) {
    const std::string where = "dataset sample '" + d.ids[i] + "': ";
    const int label = d.label(i);
    if (label < 0 || label >= d.n_classes())
      throw ContractError(where + "label " + std::to_string(label) + " outside " + std::to_string(d.n_classes()) +
                          " classes");
    if (d.modality == Modality::image) {
      const auto& s = d.images[i];
      if (s.height < 32 || s.width < 32) throw ContractError(where + "image sides must be >= 32");
      if (s.channels != 1 && s.channels != 3) throw ContractError(where + "channels must be 1 or 3");
      if (s.pixels.size() != static_cast<std::size_t>(s.height) * s.width * s.channels)
        throw ContractError(where + "pixel buffer size mismatch");
    } else {
      const auto& s = d.audio[i];
      if (s.sample_rate <= 0) throw ContractError(where + "sample rate must be positive");
      if (s.waveform.size() < 2 * static_cast<std::size_t>(s.sample_rate))
        throw ContractError(where + "audio shorter than 2 seconds");
      for (float v : s.waveform)
        if (!(v >= -1.0f && v <= 1.0f)) throw ContractError(where + "audio sample outside [-1, 1]");
    }
  }
}

// ---------------------------------------------------------------------------

double hz_to_mel(double hz) {
  if (!(hz >= 0)) throw ContractError("hz_to_mel: frequency must be non-negative, got " + std::to_string(hz));
  return 2595.0 * std::log10(1.0 + hz / 700.0);
}

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {

// n_mels + 2 edge frequencies, evenly spaced in mel.
std::vector<double> mel_edges(int n_mels, int sample_rate) {
  const double top = hz_to_mel(sample_rate / 2.0);
  std::vector<double> e(n_mels + 2);
  for (int i = 0; i < n_mels + 2; ++i) e[i] = mel_to_hz(top * i / (n_mels + 1));
  return e;
}

}  // namespace

std::vector<double> mel_centers(int n_mels, int sample_rate) {
  auto e = mel_edges(n_mels, sample_rate);
  return {e.begin() + 1, e.end() - 1};
}

Tensor mel_filterbank(int n_mels, int n_fft, int sample_rate) {
  if (n_mels < 1) throw ConfigError("mel_filterbank: n_mels must be >= 1");
  if (n_fft < 2 || (n_fft & (n_fft - 1)) != 0) throw ConfigError("mel_filterbank: n_fft must be a power of two");
  if (sample_rate <= 0) throw ConfigError("mel_filterbank: sample rate must be positive");
  const int bins = n_fft / 2 + 1;
  const auto e = mel_edges(n_mels, sample_rate);
  Tensor fb({n_mels, bins});
  for (int m = 0; m < n_mels; ++m) {
    const double lo = e[m], mid = e[m + 1], hi = e[m + 2];
    double total = 0;
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / n_fft;
      const double w = std::max(0.0, std::min((f - lo) / (mid - lo), (hi - f) / (hi - mid)));
      fb.data[static_cast<std::size_t>(m) * bins + k] = static_cast<float>(w);
      total += w;
    }
    if (total <= 0)
      throw ConfigError("mel_filterbank: filter " + std::to_string(m) + " covers no FFT bin (n_mels=" +
                        std::to_string(n_mels) + ", n_fft=" + std::to_string(n_fft) +
                        ", sample_rate=" + std::to_string(sample_rate) + ")");
  }
  return fb;
}

FeaturizeConfig FeaturizeConfig::identity() {
  FeaturizeConfig c;
  c.augment = false;
  return c;
}

void FeaturizeConfig::validate() const {
  std::vector<std::string> bad;
  if (side < 8) bad.push_back("side must be >= 8");
  if (!(crop_scale_min > 0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1))
    bad.push_back("crop scale range must satisfy 0 < min <= max <= 1");
  if (!(crop_ratio_min > 0 && crop_ratio_min <= crop_ratio_max)) bad.push_back("crop ratio range invalid");
  if (!(flip_prob >= 0 && flip_prob <= 1)) bad.push_back("flip_prob must be in [0, 1]");
  if (!(brightness >= 0 && brightness < 1)) bad.push_back("brightness must be in [0, 1)");
  if (!(contrast >= 0 && contrast < 1)) bad.push_back("contrast must be in [0, 1)");
  if (sample_rate <= 0) bad.push_back("sample_rate must be positive");
  if (n_fft < 2 || (n_fft & (n_fft - 1)) != 0) bad.push_back("n_fft must be a power of two");
  if (hop < 1) bad.push_back("hop must be >= 1");
  if (!(crop_seconds > 0)) bad.push_back("crop_seconds must be positive");
  else if (hop >= 1 && n_frames() < 2) bad.push_back("crop must span at least 2 hops");
  if (max_time_mask < 0 || max_freq_mask < 0) bad.push_back("mask widths must be >= 0");
  if (bad.empty()) return;
  std::string msg = "invalid featurize config:";
  for (const auto& b : bad) msg += " featurize." + b + ";";
  throw ConfigError(msg);
}

void standardize(std::vector<float>& values) {
  double mean = 0;
  for (float v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0;
  for (float v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(values.size());
  const double sd = std::max(std::sqrt(var), FeaturizeConfig::kStdEps);
  for (auto& v : values) v = static_cast<float>((v - mean) / sd);
}

namespace {

// Reusable real-to-complex FFTW plan for one transform size.
class Fft {
 public:
  explicit Fft(int n) : n_(n) {
    in_ = fftw_alloc_real(n);
    out_ = fftw_alloc_complex(n / 2 + 1);
    plan_ = fftw_plan_dft_r2c_1d(n, in_, out_, FFTW_ESTIMATE);
  }
  ~Fft() {
    fftw_destroy_plan(plan_);
    fftw_free(in_);
    fftw_free(out_);
  }
  Fft(const Fft&) = delete;
  Fft& operator=(const Fft&) = delete;

  int size() const { return n_; }
  double* input() { return in_; }
  // |X_k|² for k = 0..n/2.
  void power(std::vector<double>& out) {
    fftw_execute(plan_);
    out.resize(n_ / 2 + 1);
    for (int k = 0; k <= n_ / 2; ++k) out[k] = out_[k][0] * out_[k][0] + out_[k][1] * out_[k][1];
  }

 private:
  int n_;
  double* in_;
  fftw_complex* out_;
  fftw_plan plan_;
};

Fft& fft_for(int n) {
  thread_local std::vector<std::unique_ptr<Fft>> cache;
  for (auto& f : cache)
    if (f->size() == n) return *f;
  cache.push_back(std::make_unique<Fft>(n));
  return *cache.back();
}

const Tensor& filterbank_for(int n_mels, int n_fft, int sr) {
  struct Entry {
    int n_mels, n_fft, sr;
    Tensor fb;
  };
  thread_local std::deque<Entry> cache;
  for (auto& e : cache)
    if (e.n_mels == n_mels && e.n_fft == n_fft && e.sr == sr) return e.fb;
  cache.push_back({n_mels, n_fft, sr, mel_filterbank(n_mels, n_fft, sr)});
  return cache.back().fb;
}

// Linear resampling of the columns of a rows×n matrix to rows×m, pixel
// centres aligned.
std::vector<float> resample_columns(const std::vector<float>& x, int rows, int n, int m) {
  if (n == m) return x;
  std::vector<float> out(static_cast<std::size_t>(rows) * m);
  for (int j = 0; j < m; ++j) {
    const double s = std::clamp((j + 0.5) * n / m - 0.5, 0.0, static_cast<double>(n - 1));
    const int lo = static_cast<int>(s), hi = std::min(lo + 1, n - 1);
    const double f = s - lo;
    for (int r = 0; r < rows; ++r)
      out[static_cast<std::size_t>(r) * m + j] =
          static_cast<float>((1 - f) * x[static_cast<std::size_t>(r) * n + lo] + f * x[static_cast<std::size_t>(r) * n + hi]);
  }
  return out;
}

}  // namespace

Tensor log_mel_spectrogram(const std::vector<float>& crop, const FeaturizeConfig& cfg) {
  if (static_cast<int>(crop.size()) != cfg.crop_samples())
    throw ContractError("log_mel_spectrogram: crop must be exactly " + std::to_string(cfg.crop_samples()) +
                        " samples, got " + std::to_string(crop.size()));
  const int N = cfg.n_fft, bins = N / 2 + 1, frames = cfg.n_frames(), mels = cfg.side;
  const Tensor& fb = filterbank_for(mels, N, cfg.sample_rate);
  Fft& fft = fft_for(N);

  std::vector<double> window(N);
  for (int i = 0; i < N; ++i) window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / N);

  // Nonzero span of each triangle; skipping exact zeros leaves every sum unchanged.
  std::vector<std::pair<int, int>> span(mels, {0, 0});
  for (int m = 0; m < mels; ++m) {
    const float* row = fb.data.data() + static_cast<std::size_t>(m) * bins;
    int lo = 0, hi = bins;
    while (lo < hi && row[lo] == 0.0f) ++lo;
    while (hi > lo && row[hi - 1] == 0.0f) --hi;
    span[m] = {lo, hi};
  }

  std::vector<float> spec(static_cast<std::size_t>(mels) * frames);
  std::vector<double> power;
  const auto len = static_cast<std::int64_t>(crop.size());
  for (int t = 0; t < frames; ++t) {
    // Frame t is centred at t·hop + hop/2; samples outside the crop are zero.
    const std::int64_t start = static_cast<std::int64_t>(t) * cfg.hop + cfg.hop / 2 - N / 2;
    double* in = fft.input();
    for (int i = 0; i < N; ++i) {
      const std::int64_t s = start + i;
      in[i] = (s >= 0 && s < len) ? crop[s] * window[i] : 0.0;
    }
    fft.power(power);
    for (int m = 0; m < mels; ++m) {
      const float* row = fb.data.data() + static_cast<std::size_t>(m) * bins;
      double e = 0;
      for (int k = span[m].first; k < span[m].second; ++k) e += row[k] * power[k];
      spec[static_cast<std::size_t>(m) * frames + t] = static_cast<float>(std::log(e + FeaturizeConfig::kLogOffset));
    }
  }
  std::vector<float> out = resample_columns(spec, mels, frames, cfg.side);
  standardize(out);
  return Tensor({1, cfg.side, cfg.side}, std::move(out));
}

std::vector<float> resize_bilinear(const std::vector<float>& plane, int height, int width, double x0, double y0,
                                   double w, double h, int side) {
  std::vector<float> out(static_cast<std::size_t>(side) * side);
  auto coord = [](int i, double origin, double extent, int side_, int limit, int& lo, int& hi, double& f) {
    const double s = std::clamp(origin + (i + 0.5) * extent / side_ - 0.5, 0.0, static_cast<double>(limit - 1));
    lo = static_cast<int>(s);
    hi = std::min(lo + 1, limit - 1);
    f = s - lo;
  };
  for (int i = 0; i < side; ++i) {
    int ylo, yhi;
    double fy;
    coord(i, y0, h, side, height, ylo, yhi, fy);
    for (int j = 0; j < side; ++j) {
      int xlo, xhi;
      double fx;
      coord(j, x0, w, side, width, xlo, xhi, fx);
      const double top = (1 - fx) * plane[static_cast<std::size_t>(ylo) * width + xlo] +
                         fx * plane[static_cast<std::size_t>(ylo) * width + xhi];
      const double bot = (1 - fx) * plane[static_cast<std::size_t>(yhi) * width + xlo] +
                         fx * plane[static_cast<std::size_t>(yhi) * width + xhi];
      out[static_cast<std::size_t>(i) * side + j] = static_cast<float>((1 - fy) * top + fy * bot);
    }
  }
  return out;
}

namespace {

Tensor image_view(const ImageSample& s, const FeaturizeConfig& cfg, Rng* rng) {
  const int H = s.height, W = s.width, C = s.channels, S = cfg.side;
  double x0 = 0, y0 = 0, w = W, h = H;
  if (rng) {
    // Random resized crop: area fraction and log-uniform aspect ratio, with a
    // full-frame fallback when no attempt fits.
    for (int attempt = 0; attempt < 10; ++attempt) {
      const double area = H * W * rng->uniform(cfg.crop_scale_min, cfg.crop_scale_max);
      const double ratio = std::exp(rng->uniform(std::log(cfg.crop_ratio_min), std::log(cfg.crop_ratio_max)));
      const int cw = static_cast<int>(std::lround(std::sqrt(area * ratio)));
      const int ch = static_cast<int>(std::lround(std::sqrt(area / ratio)));
      if (cw > 0 && cw <= W && ch > 0 && ch <= H) {
        x0 = static_cast<double>(rng->index(W - cw + 1));
        y0 = static_cast<double>(rng->index(H - ch + 1));
        w = cw;
        h = ch;
        break;
      }
    }
  }
  std::vector<std::vector<float>> planes(C);
  std::vector<float> plane(static_cast<std::size_t>(H) * W);
  for (int c = 0; c < C; ++c) {
    for (std::size_t p = 0; p < plane.size(); ++p) plane[p] = s.pixels[p * C + c] / 255.0f;
    planes[c] = resize_bilinear(plane, H, W, x0, y0, w, h, S);
  }
  if (rng) {
    if (rng->bernoulli(cfg.flip_prob))
      for (auto& pl : planes)
        for (int i = 0; i < S; ++i) std::reverse(pl.begin() + static_cast<std::ptrdiff_t>(i) * S, pl.begin() + static_cast<std::ptrdiff_t>(i + 1) * S);
    const double b = rng->uniform(1 - cfg.brightness, 1 + cfg.brightness);
    const double k = rng->uniform(1 - cfg.contrast, 1 + cfg.contrast);
    double mean = 0;
    for (auto& pl : planes)
      for (auto& v : pl) {
        v = static_cast<float>(std::clamp(v * b, 0.0, 1.0));
        mean += v;
      }
    mean /= static_cast<double>(C) * S * S;
    for (auto& pl : planes)
      for (auto& v : pl) v = static_cast<float>(std::clamp((v - mean) * k + mean, 0.0, 1.0));
  }
  std::vector<float> gray(static_cast<std::size_t>(S) * S, 0.0f);
  for (auto& pl : planes)
    for (std::size_t p = 0; p < gray.size(); ++p) gray[p] += pl[p];
  for (auto& v : gray) v /= static_cast<float>(C);
  standardize(gray);
  return Tensor({1, S, S}, std::move(gray));
}

Tensor audio_view(const AudioSample& s, const FeaturizeConfig& cfg, Rng* rng) {
  const int n = cfg.crop_samples();
  if (static_cast<int>(s.waveform.size()) < n)
    throw ContractError("audio_views: clip of " + std::to_string(s.waveform.size()) + " samples is shorter than " +
                        std::to_string(n));
  if (s.sample_rate != cfg.sample_rate)
    throw ContractError("audio_views: clip sample rate " + std::to_string(s.sample_rate) + " differs from " +
                        std::to_string(cfg.sample_rate));
  const std::size_t slack = s.waveform.size() - n;
  const std::size_t start = rng ? rng->index(slack + 1) : slack / 2;
  Tensor t = log_mel_spectrogram({s.waveform.begin() + start, s.waveform.begin() + start + n}, cfg);
  if (rng) {
    const int S = cfg.side;
    if (int tmax = std::min(cfg.max_time_mask, S); tmax > 0) {
      const int w = 1 + static_cast<int>(rng->index(tmax));
      const int t0 = static_cast<int>(rng->index(S - w + 1));
      for (int r = 0; r < S; ++r)
        for (int c = t0; c < t0 + w; ++c) t.data[static_cast<std::size_t>(r) * S + c] = 0.0f;
    }
    if (int fmax = std::min(cfg.max_freq_mask, S); fmax > 0) {
      const int w = 1 + static_cast<int>(rng->index(fmax));
      const int f0 = static_cast<int>(rng->index(S - w + 1));
      std::fill(t.data.begin() + static_cast<std::ptrdiff_t>(f0) * S,
                t.data.begin() + static_cast<std::ptrdiff_t>(f0 + w) * S, 0.0f);
    }
  }
  return t;
}

}  // namespace

ViewPair image_views(const ImageSample& sample, const FeaturizeConfig& cfg, Rng& rng) {
  ViewPair p;
  p.modality = Modality::image;
  p.view_a = image_view(sample, cfg, cfg.augment ? &rng : nullptr);
  p.view_b = image_view(sample, cfg, cfg.augment ? &rng : nullptr);
  return p;
}

ViewPair audio_views(const AudioSample& sample, const FeaturizeConfig& cfg, Rng& rng) {
  ViewPair p;
  p.modality = Modality::audio;
  p.view_a = audio_view(sample, cfg, cfg.augment ? &rng : nullptr);
  p.view_b = audio_view(sample, cfg, cfg.augment ? &rng : nullptr);
  return p;
}

Tensor eval_view(const Dataset& d, std::size_t index, const FeaturizeConfig& cfg) {
  return d.modality == Modality::image ? image_view(d.images.at(index), cfg, nullptr)
                                       : audio_view(d.audio.at(index), cfg, nullptr);
}

Tensor eval_batch(const Dataset& d, const std::vector<std::size_t>& indices, const FeaturizeConfig& cfg) {
  const std::size_t per = static_cast<std::size_t>(cfg.side) * cfg.side;
  Tensor out({static_cast<std::int64_t>(indices.size()), 1, cfg.side, cfg.side});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Tensor v = eval_view(d, indices[i], cfg);
    std::copy(v.data.begin(), v.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::uint64_t kImageTag = 0x1A;
constexpr std::uint64_t kAudioTag = 0xA0;

ImageSample synth_image(int label, int n_classes, std::uint64_t seed, std::uint64_t index, const SynthConfig& cfg) {
  const int S = cfg.image_side;
  const double pi = std::numbers::pi;
  // Per-class constants: tint and a smooth pattern built from three cosines.
  Rng cls(derive_seed(seed, {kImageTag, 0xC1A55, static_cast<std::uint64_t>(label)}));
  double tint[3];
  for (double& t : tint) t = cls.uniform(0.75, 1.0);
  double pf[3][2], pp[3];
  for (int i = 0; i < 3; ++i) {
    pf[i][0] = cls.uniform(-2.5, 2.5);
    pf[i][1] = cls.uniform(-2.5, 2.5);
    pp[i] = cls.uniform(0, 2 * pi);
  }

  Rng rng(derive_seed(seed, {kImageTag, index}));
  const double angle = pi / 2 * label / n_classes + rng.uniform(-0.05, 0.05);
  const double cycles = 3.0 + 2.0 * (label % 3);
  const double phase = rng.uniform(0, 2 * pi);
  const double ca = std::cos(angle), sa = std::sin(angle);

  ImageSample s;
  s.height = s.width = S;
  s.channels = 3;
  s.label = label;
  s.pixels.resize(static_cast<std::size_t>(S) * S * 3);
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      const double u = static_cast<double>(x) / S, v = static_cast<double>(y) / S;
      const double grating = std::sin(2 * pi * cycles * (u * ca + v * sa) + phase);
      double pattern = 0;
      for (int i = 0; i < 3; ++i) pattern += std::cos(2 * pi * (pf[i][0] * u + pf[i][1] * v) + pp[i]) / 3;
      const double base = 0.5 + 0.22 * grating + 0.15 * pattern;
      for (int c = 0; c < 3; ++c) {
        const double val = std::clamp(tint[c] * base + rng.normal(0, cfg.image_noise), 0.0, 1.0);
        s.pixels[(static_cast<std::size_t>(y) * S + x) * 3 + c] = static_cast<std::uint8_t>(std::lround(val * 255));
      }
    }
  return s;
}

AudioSample synth_audio(int label, int n_classes, std::uint64_t seed, std::uint64_t index, const SynthConfig& cfg) {
  const double pi = std::numbers::pi;
  Rng rng(derive_seed(seed, {kAudioTag, index}));
  const double base = 200.0 * std::pow(20.0, n_classes > 1 ? static_cast<double>(label) / (n_classes - 1) : 0.0);
  const double f = base * (1 + rng.uniform(-0.02, 0.02));
  const double gain = rng.uniform(0.5, 0.9);
  const double p1 = rng.uniform(0, 2 * pi), p2 = rng.uniform(0, 2 * pi);
  const int n = static_cast<int>(cfg.audio_seconds * cfg.sample_rate);
  const double dur = static_cast<double>(n) / cfg.sample_rate;

  AudioSample s;
  s.sample_rate = cfg.sample_rate;
  s.label = label;
  s.waveform.resize(n);
  for (int i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / cfg.sample_rate;
    double x;
    if (label % 2 == 0) {
      x = 0.6 * std::sin(2 * pi * f * t + p1) + 0.3 * std::sin(2 * pi * 1.5 * f * t + p2);
    } else {
      // Linear chirp f -> 1.25 f; phase is the integral of the instantaneous frequency.
      const double ph = 2 * pi * (f * t + 0.125 * f * t * t / dur);
      x = 0.7 * std::sin(ph + p1) + 0.2 * std::sin(2 * ph + p2);
    }
    x = std::clamp(gain * x + rng.normal(0, cfg.audio_noise), -0.98, 0.98);
    // Snap to the 16-bit grid so the WAV round trip is exact.
    s.waveform[i] = static_cast<float>(std::lround(x * 32768.0) / 32768.0);
  }
  return s;
}

}  // namespace

Dataset gen_synthetic_corpus(Modality modality, int n_classes, int n_per_class, std::uint64_t seed,
                             const SynthConfig& cfg) {
  if (n_classes < 2) throw ContractError("gen_synthetic_corpus: n_classes must be >= 2");
  if (n_per_class < 1) throw ContractError("gen_synthetic_corpus: n_per_class must be >= 1");
  if (cfg.image_side < 32) throw ContractError("gen_synthetic_corpus: image_side must be >= 32");
  if (cfg.audio_seconds < 2.0) throw ContractError("gen_synthetic_corpus: audio must be at least 2 seconds");
  Dataset d;
  d.modality = modality;
  for (int c = 0; c < n_classes; ++c) d.classes.push_back("class" + std::to_string(c));
  const char* prefix = modality == Modality::image ? "img_" : "aud_";
  std::uint64_t index = 0;
  for (int c = 0; c < n_classes; ++c)
    for (int k = 0; k < n_per_class; ++k, ++index) {
      char id[32];
      std::snprintf(id, sizeof id, "%s%05llu", prefix, static_cast<unsigned long long>(index));
      d.ids.emplace_back(id);
      if (modality == Modality::image)
        d.images.push_back(synth_image(c, n_classes, seed, index, cfg));
      else
        d.audio.push_back(synth_audio(c, n_classes, seed, index, cfg));
    }
  return d;
}

// ---------------------------------------------------------------------------
// Codecs.

std::vector<std::uint8_t> encode_pnm(const ImageSample& s) {
  const std::string header = std::string(s.channels == 1 ? "P5" : "P6") + "\n" + std::to_string(s.width) + " " +
                             std::to_string(s.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), s.pixels.begin(), s.pixels.end());
  return out;
}

ImageSample decode_pnm(const std::vector<std::uint8_t>& b, const std::string& path) {
  std::size_t pos = 0;
  auto fail = [&](const std::string& what) { throw FormatError(path, pos, what); };
  if (b.size() < 2 || b[0] != 'P' || (b[1] != '5' && b[1] != '6')) fail("not a binary PGM/PPM (expected P5 or P6)");
  const int channels = b[1] == '5' ? 1 : 3;
  pos = 2;
  auto skip_space = [&] {
    while (pos < b.size()) {
      if (b[pos] == '#') {
        while (pos < b.size() && b[pos] != '\n') ++pos;
      } else if (std::isspace(b[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&] {
    skip_space();
    if (pos >= b.size() || !std::isdigit(b[pos])) fail("expected a decimal header field");
    long v = 0;
    while (pos < b.size() && std::isdigit(b[pos])) {
      v = v * 10 + (b[pos++] - '0');
      if (v > 1 << 20) fail("header field too large");
    }
    return static_cast<int>(v);
  };
  ImageSample s;
  s.channels = channels;
  s.width = number();
  s.height = number();
  if (number() != 255) fail("only maxval 255 is supported");
  if (pos >= b.size() || !std::isspace(b[pos])) fail("missing whitespace after header");
  ++pos;
  const std::size_t need = static_cast<std::size_t>(s.width) * s.height * channels;
  if (b.size() - pos < need) {
    pos = b.size();
    fail("truncated pixel data: expected " + std::to_string(need) + " bytes");
  }
  s.pixels.assign(b.begin() + static_cast<std::ptrdiff_t>(pos), b.begin() + static_cast<std::ptrdiff_t>(pos + need));
  return s;
}

namespace {

void put_u32(std::vector<std::uint8_t>& o, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) o.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u16(std::vector<std::uint8_t>& o, std::uint16_t v) {
  o.push_back(static_cast<std::uint8_t>(v));
  o.push_back(static_cast<std::uint8_t>(v >> 8));
}
std::uint32_t get_u32(const std::vector<std::uint8_t>& b, std::size_t p) {
  return b[p] | (b[p + 1] << 8) | (b[p + 2] << 16) | (static_cast<std::uint32_t>(b[p + 3]) << 24);
}
std::uint16_t get_u16(const std::vector<std::uint8_t>& b, std::size_t p) {
  return static_cast<std::uint16_t>(b[p] | (b[p + 1] << 8));
}

}  // namespace

std::vector<std::uint8_t> encode_wav(const AudioSample& s) {
  const auto data_bytes = static_cast<std::uint32_t>(s.waveform.size() * 2);
  std::vector<std::uint8_t> o;
  o.reserve(44 + data_bytes);
  o.insert(o.end(), {'R', 'I', 'F', 'F'});
  put_u32(o, 36 + data_bytes);
  o.insert(o.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(o, 16);
  put_u16(o, 1);  // PCM
  put_u16(o, 1);  // mono
  put_u32(o, static_cast<std::uint32_t>(s.sample_rate));
  put_u32(o, static_cast<std::uint32_t>(s.sample_rate) * 2);
  put_u16(o, 2);
  put_u16(o, 16);
  o.insert(o.end(), {'d', 'a', 't', 'a'});
  put_u32(o, data_bytes);
  for (float x : s.waveform) {
    const long q = std::clamp(std::lround(static_cast<double>(x) * 32768.0), -32768L, 32767L);
    put_u16(o, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  return o;
}

AudioSample decode_wav(const std::vector<std::uint8_t>& b, const std::string& path) {
  std::size_t pos = 0;
  auto fail = [&](const std::string& what) { throw FormatError(path, pos, what); };
  if (b.size() < 12 || std::string(b.begin(), b.begin() + 4) != "RIFF" ||
      std::string(b.begin() + 8, b.begin() + 12) != "WAVE")
    fail("not a RIFF/WAVE file");
  pos = 12;
  AudioSample s;
  bool have_fmt = false;
  while (true) {
    if (b.size() - pos < 8) fail(have_fmt ? "missing data chunk" : "missing fmt chunk");
    const std::string id(b.begin() + static_cast<std::ptrdiff_t>(pos), b.begin() + static_cast<std::ptrdiff_t>(pos + 4));
    const std::uint32_t len = get_u32(b, pos + 4);
    const std::size_t body = pos + 8;
    if (id == "fmt ") {
      if (len < 16 || b.size() - body < 16) fail("fmt chunk too short");
      pos = body;
      if (get_u16(b, body) != 1) fail("only PCM audio is supported");
      if (get_u16(b, body + 2) != 1) fail("only mono audio is supported");
      if (get_u16(b, body + 14) != 16) fail("only 16-bit samples are supported");
      s.sample_rate = static_cast<int>(get_u32(b, body + 4));
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) fail("data chunk before fmt chunk");
      if (len % 2 != 0) fail("odd data chunk length");
      if (b.size() - body < len) {
        pos = b.size();
        fail("truncated sample data: expected " + std::to_string(len) + " bytes");
      }
      s.waveform.resize(len / 2);
      for (std::size_t i = 0; i < s.waveform.size(); ++i)
        s.waveform[i] = static_cast<float>(static_cast<std::int16_t>(get_u16(b, body + 2 * i)) / 32768.0);
      return s;
    }
    pos = body + len + (len & 1);
    if (pos > b.size()) fail("chunk '" + id + "' overruns the file");
  }
}

// ---------------------------------------------------------------------------
// Directory format.

namespace {

constexpr const char* kFormat = "fssuavl-dataset";
constexpr int kVersion = 1;

std::vector<std::uint8_t> read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw FormatError(p.string(), 0, "cannot open file");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("cannot write " + p.string());
}

}  // namespace

void save_dataset(const Dataset& d, const std::filesystem::path& dir) {
  validate(d);
  std::filesystem::create_directories(dir / "samples");
  json manifest;
  manifest["format"] = kFormat;
  manifest["version"] = kVersion;
  manifest["modality"] = to_string(d.modality);
  manifest["classes"] = d.classes;
  if (d.modality == Modality::audio && d.size() > 0) manifest["sample_rate"] = d.audio.front().sample_rate;
  json samples = json::array();
  for (std::size_t i = 0; i < d.size(); ++i) {
    std::string file;
    if (d.modality == Modality::image) {
      const auto& s = d.images[i];
      file = "samples/" + d.ids[i] + (s.channels == 1 ? ".pgm" : ".ppm");
      write_file(dir / file, encode_pnm(s));
    } else {
      file = "samples/" + d.ids[i] + ".wav";
      write_file(dir / file, encode_wav(d.audio[i]));
    }
    samples.push_back({{"id", d.ids[i]}, {"file", file}, {"label", d.label(i)}});
  }
  manifest["samples"] = std::move(samples);
  const std::string text = manifest.dump(1) + "\n";
  write_file(dir / "manifest.json", {text.begin(), text.end()});
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto mpath = dir / "manifest.json";
  if (!std::filesystem::exists(mpath)) throw FormatError(mpath.string(), 0, "missing manifest.json");
  const auto bytes = read_file(mpath);
  json m;
  try {
    m = json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    throw FormatError(mpath.string(), e.byte, std::string("invalid JSON: ") + e.what());
  }
  auto bad = [&](const std::string& what) { throw FormatError(mpath.string(), 0, what); };
  try {
    if (m.value("format", "") != kFormat) bad("format field must be '" + std::string(kFormat) + "'");
    if (m.value("version", 0) != kVersion) bad("unsupported version");
    Dataset d;
    d.modality = modality_from_string(m.at("modality").get<std::string>());
    d.classes = m.at("classes").get<std::vector<std::string>>();
    if (d.classes.size() < 2) bad("at least 2 classes required");
    for (const auto& e : m.at("samples")) {
      const std::string id = e.at("id").get<std::string>();
      const std::string file = e.at("file").get<std::string>();
      const int label = e.at("label").get<int>();
      if (label < 0 || label >= d.n_classes())
        bad("sample '" + id + "': label " + std::to_string(label) + " outside " + std::to_string(d.n_classes()) +
            " classes");
      const auto path = dir / file;
      const auto data = read_file(path);
      d.ids.push_back(id);
      if (d.modality == Modality::image) {
        d.images.push_back(decode_pnm(data, path.string()));
        d.images.back().label = label;
      } else {
        d.audio.push_back(decode_wav(data, path.string()));
        d.audio.back().label = label;
        if (m.contains("sample_rate") && d.audio.back().sample_rate != m["sample_rate"].get<int>())
          throw FormatError(path.string(), 24, "sample rate disagrees with manifest");
      }
    }
    validate(d);
    return d;
  } catch (const json::exception& e) {
    bad(std::string("malformed manifest: ") + e.what());
  } catch (const ContractError& e) {
    bad(e.what());
  } catch (const ConfigError& e) {
    bad(e.what());
  }
  return {};
}

}  // namespace fssuavl
