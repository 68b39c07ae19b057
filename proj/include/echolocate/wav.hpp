#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace echolocate {

// Interleaved multi-channel audio in [-1, 1].
struct AudioClip {
    int channels = 1;
    int sample_rate = 16000;
    std::vector<float> samples;  // frame-major: samples[frame * channels + ch]

    int frames() const { return channels ? int(samples.size()) / channels : 0; }
};

namespace detail {
template <typename T>
void put_le(std::ofstream& f, T v) {
    unsigned char b[sizeof(T)];
    for (size_t i = 0; i < sizeof(T); ++i) b[i] = (unsigned char)((uint64_t(v) >> (8 * i)) & 0xff);
    f.write(reinterpret_cast<const char*>(b), sizeof(T));
}
template <typename T>
T get_le(std::ifstream& f) {
    unsigned char b[sizeof(T)];
    f.read(reinterpret_cast<char*>(b), sizeof(T));
    uint64_t v = 0;
    for (size_t i = 0; i < sizeof(T); ++i) v |= uint64_t(b[i]) << (8 * i);
    return T(v);
}
}  // namespace detail

// 16-bit PCM writer.
inline void write_wav(const std::string& path, const AudioClip& clip) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    uint32_t n = uint32_t(clip.samples.size());
    uint32_t data_bytes = n * 2;
    uint16_t ch = uint16_t(clip.channels);
    uint32_t sr = uint32_t(clip.sample_rate);
    f.write("RIFF", 4);
    detail::put_le<uint32_t>(f, 36 + data_bytes);
    f.write("WAVE", 4);
    f.write("fmt ", 4);
    detail::put_le<uint32_t>(f, 16);
    detail::put_le<uint16_t>(f, 1);  // PCM
    detail::put_le<uint16_t>(f, ch);
    detail::put_le<uint32_t>(f, sr);
    detail::put_le<uint32_t>(f, sr * ch * 2);
    detail::put_le<uint16_t>(f, ch * 2);
    detail::put_le<uint16_t>(f, 16);
    f.write("data", 4);
    detail::put_le<uint32_t>(f, data_bytes);
    for (float s : clip.samples) {
        double v = std::clamp(double(s), -1.0, 1.0);
        auto q = int16_t(std::lrint(v * 32767.0));
        detail::put_le<int16_t>(f, q);
    }
}

inline AudioClip read_wav(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + path);
    char tag[5] = {0};
    f.read(tag, 4);
    if (std::string(tag, 4) != "RIFF") throw std::runtime_error("not a RIFF file: " + path);
    detail::get_le<uint32_t>(f);
    f.read(tag, 4);
    if (std::string(tag, 4) != "WAVE") throw std::runtime_error("not a WAV file: " + path);
    AudioClip clip;
    uint16_t bits = 0, fmt = 0;
    bool have_fmt = false;
    while (f.read(tag, 4)) {
        uint32_t sz = detail::get_le<uint32_t>(f);
        std::string id(tag, 4);
        if (id == "fmt ") {
            fmt = detail::get_le<uint16_t>(f);
            clip.channels = detail::get_le<uint16_t>(f);
            clip.sample_rate = int(detail::get_le<uint32_t>(f));
            detail::get_le<uint32_t>(f);
            detail::get_le<uint16_t>(f);
            bits = detail::get_le<uint16_t>(f);
            if (sz > 16) f.seekg(sz - 16, std::ios::cur);
            have_fmt = true;
        } else if (id == "data") {
            if (!have_fmt) throw std::runtime_error("wav: data before fmt chunk");
            if (fmt != 1 || bits != 16)
                throw std::runtime_error("wav: only 16-bit PCM is supported");
            uint32_t n = sz / 2;
            clip.samples.resize(n);
            for (uint32_t i = 0; i < n; ++i)
                clip.samples[i] = float(detail::get_le<int16_t>(f)) / 32767.0f;
            return clip;
        } else {
            f.seekg(sz + (sz & 1), std::ios::cur);
        }
    }
    throw std::runtime_error("wav: no data chunk in " + path);
}

}  // namespace echolocate
