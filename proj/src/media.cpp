#include "oisa/media.hpp"

#include "oisa/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace oisa::media {

namespace {

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  return value;
}

}  // namespace

Waveform quantize(const std::vector<double>& signal, int sample_rate) {
  Waveform w;
  w.sample_rate = sample_rate;
  w.samples.reserve(signal.size());
  for (double s : signal) {
    const double v = std::clamp(std::round(s * 32767.0), -32768.0, 32767.0);
    w.samples.push_back(static_cast<std::int16_t>(v));
  }
  return w;
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write image " + path.string());
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read image " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255) throw DataError("not an 8-bit P6 image: " + path.string());
  in.get();
  Image img(h, w);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw DataError("truncated image " + path.string());
  return img;
}

void write_wav(const std::filesystem::path& path, const Waveform& wave) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write audio " + path.string());
  const auto data_bytes = static_cast<std::uint32_t>(wave.samples.size() * 2);
  out.write("RIFF", 4);
  put<std::uint32_t>(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  put<std::uint32_t>(out, 16);
  put<std::uint16_t>(out, 1);  // PCM
  put<std::uint16_t>(out, 1);  // mono
  put<std::uint32_t>(out, static_cast<std::uint32_t>(wave.sample_rate));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(wave.sample_rate * 2));
  put<std::uint16_t>(out, 2);
  put<std::uint16_t>(out, 16);
  out.write("data", 4);
  put<std::uint32_t>(out, data_bytes);
  out.write(reinterpret_cast<const char*>(wave.samples.data()), static_cast<std::streamsize>(data_bytes));
}

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read audio " + path.string());
  char tag[4];
  in.read(tag, 4);
  if (std::memcmp(tag, "RIFF", 4) != 0) throw DataError("not a RIFF file: " + path.string());
  get<std::uint32_t>(in);
  in.read(tag, 4);
  if (std::memcmp(tag, "WAVE", 4) != 0) throw DataError("not a WAVE file: " + path.string());
  Waveform w;
  bool have_fmt = false;
  while (in.read(tag, 4)) {
    const auto size = get<std::uint32_t>(in);
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      const auto format = get<std::uint16_t>(in);
      const auto channels = get<std::uint16_t>(in);
      w.sample_rate = static_cast<int>(get<std::uint32_t>(in));
      get<std::uint32_t>(in);
      get<std::uint16_t>(in);
      const auto bits = get<std::uint16_t>(in);
      if (format != 1 || channels != 1 || bits != 16)
        throw DataError("only mono 16-bit PCM is supported: " + path.string());
      in.seekg(size - 16, std::ios::cur);
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      if (!have_fmt) throw DataError("data chunk before fmt: " + path.string());
      w.samples.resize(size / 2);
      in.read(reinterpret_cast<char*>(w.samples.data()), static_cast<std::streamsize>(size));
      if (in.gcount() != static_cast<std::streamsize>(size)) throw DataError("truncated audio " + path.string());
      return w;
    } else {
      in.seekg(size, std::ios::cur);
    }
  }
  throw DataError("no data chunk in " + path.string());
}

}  // namespace oisa::media
