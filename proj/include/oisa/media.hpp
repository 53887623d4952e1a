#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace oisa::media {

inline constexpr int kSampleRate = 16000;

// 8-bit RGB image, row-major HWC. Stored losslessly as binary PPM.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, 0) {}

  std::uint8_t& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  bool operator==(const Image&) const = default;
};

// Mono 16-bit linear PCM.
struct Waveform {
  int sample_rate = kSampleRate;
  std::vector<std::int16_t> samples;

  double value(std::size_t i) const { return samples[i] / 32768.0; }
  std::size_t size() const { return samples.size(); }
  double seconds() const { return static_cast<double>(samples.size()) / sample_rate; }
  bool operator==(const Waveform&) const = default;
};

// Quantizes [-1, 1] floats to 16-bit PCM.
Waveform quantize(const std::vector<double>& signal, int sample_rate = kSampleRate);

void write_ppm(const std::filesystem::path& path, const Image& image);
Image read_ppm(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const Waveform& wave);
Waveform read_wav(const std::filesystem::path& path);

}  // namespace oisa::media
